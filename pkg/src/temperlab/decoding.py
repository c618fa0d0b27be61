"""Greedy and beam search over any model exposing encode / decode_step.

A decoder model only needs two methods: `encode(source) -> encoded` and
`decode_step(encoded, prefix) -> logits vector`, with the shared reserved
token ids (PAD=0, BOS=1, EOS=2). Hypothesis scores divide the summed log
probability by a length penalty ((5 + len) / 6) ** alpha, where len counts
tokens after BOS (EOS included).

Beam search expands one hypothesis per decode_step call; the batched
greedy helper is an optimisation for corpus evaluation and is excluded
from timing comparisons.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import BOS_ID, EOS_ID, PAD_ID
from .errors import ConfigError, ContractError

Array = np.ndarray


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 4
    length_penalty_alpha: float = 1.0
    max_length: int = 32

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError(f"beam_size must be at least 1, got {self.beam_size}")
        if self.length_penalty_alpha < 0.0:
            raise ConfigError(f"length_penalty_alpha must be >= 0, got {self.length_penalty_alpha}")
        if self.max_length < 1:
            raise ConfigError(f"max_length must be at least 1, got {self.max_length}")


@dataclass
class Hypothesis:
    """Decoded sequence (BOS ... [EOS]) with its cumulative log probability
    and length-penalised score."""

    tokens: tuple[int, ...]
    log_prob: float
    score: float
    finished: bool

    def surface(self) -> tuple[int, ...]:
        """Token ids without BOS/EOS/PAD, i.e. the text that is scored by BLEU."""
        return tuple(t for t in self.tokens if t not in (PAD_ID, BOS_ID, EOS_ID))


def length_penalty(length: int, alpha: float) -> float:
    if length < 1:
        raise ContractError(f"length penalty needs length >= 1, got {length}")
    return ((5.0 + length) / 6.0) ** alpha


def _score(log_prob: float, tokens_after_bos: int, alpha: float) -> float:
    return log_prob / length_penalty(max(1, tokens_after_bos), alpha)


def _log_softmax(logits: Array) -> Array:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def greedy_decode(model, source, max_length: int) -> Hypothesis:
    """Argmax decoding; stops at EOS or after max_length generated tokens."""
    encoded = model.encode(np.asarray(source, dtype=np.int64))
    tokens = [BOS_ID]
    log_prob = 0.0
    finished = False
    for _ in range(max_length):
        logits = model.decode_step(encoded, np.asarray(tokens, dtype=np.int64))
        nxt = int(np.argmax(logits))
        log_prob += float(_log_softmax(logits)[nxt])
        tokens.append(nxt)
        if nxt == EOS_ID:
            finished = True
            break
    return Hypothesis(
        tokens=tuple(tokens),
        log_prob=log_prob,
        score=_score(log_prob, len(tokens) - 1, 0.0),
        finished=finished,
    )


@dataclass
class _Live:
    tokens: tuple[int, ...]
    log_prob: float
    order: int  # insertion index, the deterministic tie-breaker


def beam_decode(model, source, cfg: BeamConfig) -> list[Hypothesis]:
    """Standard beam search with a retired pool of finished hypotheses.

    Returns finished hypotheses sorted by score descending (ties broken by
    insertion order). If nothing finishes within max_length, the best
    unfinished hypothesis is returned, flagged unfinished.
    """
    alpha = cfg.length_penalty_alpha
    encoded = model.encode(np.asarray(source, dtype=np.int64))
    live: list[_Live] = [_Live(tokens=(BOS_ID,), log_prob=0.0, order=0)]
    completed: list[Hypothesis] = []
    counter = 1

    for _ in range(cfg.max_length):
        candidates: list[_Live] = []
        for hyp in live:
            logits = model.decode_step(encoded, np.asarray(hyp.tokens, dtype=np.int64))
            logp = _log_softmax(logits)
            k = min(cfg.beam_size, logp.shape[0])
            top = np.argpartition(-logp, k - 1)[:k]
            top = top[np.lexsort((top, -logp[top]))]  # prob desc, then lowest id
            for tok in top:
                candidates.append(
                    _Live(
                        tokens=hyp.tokens + (int(tok),),
                        log_prob=hyp.log_prob + float(logp[tok]),
                        order=counter,
                    )
                )
                counter += 1
        candidates.sort(key=lambda c: (-_score(c.log_prob, len(c.tokens) - 1, alpha), c.order))
        live = []
        for cand in candidates:
            score = _score(cand.log_prob, len(cand.tokens) - 1, alpha)
            if cand.tokens[-1] == EOS_ID:
                completed.append(
                    Hypothesis(tokens=cand.tokens, log_prob=cand.log_prob, score=score, finished=True)
                )
            elif len(live) < cfg.beam_size:
                live.append(cand)
        completed.sort(key=lambda h: -h.score)
        completed = completed[: cfg.beam_size]
        if not live:
            break
        if len(completed) >= cfg.beam_size:
            # optimistic bound: log_prob can only fall, the penalty divisor can
            # only grow to its max_length value, so for log_prob <= 0 no live
            # hypothesis can beat `bound` later
            worst = completed[-1].score
            bound = max(
                _score(h.log_prob, cfg.max_length, alpha) if h.log_prob < 0.0 else 0.0
                for h in live
            )
            if bound <= worst:
                break

    if completed:
        return completed
    best = live[0]
    return [
        Hypothesis(
            tokens=best.tokens,
            log_prob=best.log_prob,
            score=_score(best.log_prob, len(best.tokens) - 1, alpha),
            finished=False,
        )
    ]


def greedy_decode_batch(model, sources: list[Array], max_length: int) -> list[Hypothesis]:
    """Batched greedy decoding over many sentences at once.

    Produces the same token sequences as per-sentence `greedy_decode`; used
    for corpus evaluation where per-sentence timing does not matter. The
    model must provide `encode_batch` and `decode_step_batch`.
    """
    if not sources:
        return []
    n = len(sources)
    s_len = max(len(s) for s in sources)
    padded = np.full((n, s_len), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sources):
        padded[i, : len(s)] = s
    encoded = model.encode_batch(padded)

    prefixes = np.full((n, 1), BOS_ID, dtype=np.int64)
    log_probs = np.zeros(n)
    finished = np.zeros(n, dtype=bool)
    for _ in range(max_length):
        logits = model.decode_step_batch(encoded, prefixes)
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        nxt = np.argmax(logits, axis=-1)
        log_probs = np.where(finished, log_probs, log_probs + logp[np.arange(n), nxt])
        prefixes = np.concatenate([prefixes, nxt[:, None]], axis=1)
        finished = finished | (nxt == EOS_ID)
        if finished.all():
            break

    out = []
    for i in range(n):
        row = prefixes[i].tolist()
        if EOS_ID in row[1:]:
            row = row[: row.index(EOS_ID, 1) + 1]
            done = True
        else:
            done = False
        lp = float(log_probs[i])
        out.append(
            Hypothesis(tokens=tuple(row), log_prob=lp, score=_score(lp, len(row) - 1, 0.0), finished=done)
        )
    return out


@dataclass
class SentenceTiming:
    score: float
    log_prob: float
    length: int
    wall_ns: int


def decode_corpus(
    model,
    sources: list[Array],
    mode: str,
    beam_cfg: BeamConfig,
) -> tuple[list[Hypothesis], list[SentenceTiming]]:
    """Decode one sentence at a time, recording per-sentence wall time.

    `mode` is "greedy" or "beam"; greedy ignores the beam size and penalty
    but honours max_length.
    """
    if mode not in ("greedy", "beam"):
        raise ContractError(f"unknown decode mode {mode!r}")
    hyps: list[Hypothesis] = []
    timings: list[SentenceTiming] = []
    for src in sources:
        t0 = time.perf_counter_ns()
        if mode == "greedy":
            hyp = greedy_decode(model, src, beam_cfg.max_length)
        else:
            hyp = beam_decode(model, src, beam_cfg)[0]
        ns = time.perf_counter_ns() - t0
        hyps.append(hyp)
        timings.append(
            SentenceTiming(
                score=hyp.score,
                log_prob=hyp.log_prob,
                length=len(hyp.surface()),
                wall_ns=ns,
            )
        )
    return hyps, timings
