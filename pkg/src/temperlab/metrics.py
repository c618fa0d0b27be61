"""Corpus BLEU, paired bootstrap resampling, and output-similarity BLEU.

Single-reference, corpus-level BLEU over whitespace tokens: clipped n-gram
counts (n = 1..4) are pooled over the corpus before the precisions are
taken, combined by geometric mean and multiplied by the brevity penalty
exp(min(0, 1 - ref_len / hyp_len)). If the pooled hypothesis has no
n-grams at some order, that order is dropped from the geometric mean; a
pooled precision of zero at any remaining order gives a score of 0. No
smoothing.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

Array = np.ndarray

MAX_ORDER = 4

Sentence = "tuple | list"  # token sequences; any hashable tokens work


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hypothesis, reference) -> Array:
    """Sufficient statistics for one sentence pair: clipped matches and
    totals per order, then hypothesis and reference length (10 ints)."""
    stats = np.zeros(2 * MAX_ORDER + 2, dtype=np.int64)
    for n in range(1, MAX_ORDER + 1):
        hyp_counts = _ngrams(hypothesis, n)
        ref_counts = _ngrams(reference, n)
        stats[n - 1] = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        stats[MAX_ORDER + n - 1] = max(len(hypothesis) - n + 1, 0)
    stats[-2] = len(hypothesis)
    stats[-1] = len(reference)
    return stats


def _score_from_pooled(pooled: Array) -> float:
    hyp_len = int(pooled[-2])
    ref_len = int(pooled[-1])
    if hyp_len == 0:
        return 0.0
    logs = []
    for n in range(1, MAX_ORDER + 1):
        total = int(pooled[MAX_ORDER + n - 1])
        if total == 0:
            continue  # order truncation for short corpora
        matched = int(pooled[n - 1])
        if matched == 0:
            return 0.0
        logs.append(math.log(matched / total))
    precision = math.exp(math.fsum(logs) / len(logs))
    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * brevity * precision


def corpus_stats(hypotheses, references) -> Array:
    if len(hypotheses) != len(references):
        raise ContractError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise ContractError("BLEU over an empty corpus is undefined")
    return np.stack([sentence_stats(h, r) for h, r in zip(hypotheses, references)])


def corpus_bleu(hypotheses, references) -> float:
    """Corpus-level BLEU in [0, 100]; one reference per hypothesis."""
    return _score_from_pooled(corpus_stats(hypotheses, references).sum(axis=0))


def output_similarity_bleu(greedy_outputs, beam_outputs) -> float:
    """How close beam outputs are to greedy outputs, as BLEU with the greedy
    outputs standing in for references."""
    return corpus_bleu(beam_outputs, greedy_outputs)


@dataclass(frozen=True)
class BootstrapResult:
    bleu_a: float
    bleu_b: float
    p_value: float  # fraction of resamples where system b scored >= system a
    tie_fraction: float
    resamples: int
    seed: int


def paired_bootstrap(hyp_a, hyp_b, refs, resamples: int = 1000, seed: int = 0) -> BootstrapResult:
    """Paired bootstrap over sentence indices (with replacement, resample
    size = corpus size). Deterministic under `seed`.

    A small p_value means system a beat system b in nearly every resample.
    """
    if resamples < 100:
        raise ContractError(f"need at least 100 resamples, got {resamples}")
    stats_a = corpus_stats(hyp_a, refs)
    stats_b = corpus_stats(hyp_b, refs)
    if len(stats_a) != len(stats_b):
        raise ContractError("hypothesis lists are not aligned")
    n = len(stats_a)
    rng = np.random.default_rng(seed)
    b_at_least = 0
    ties = 0
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        score_a = _score_from_pooled(stats_a[idx].sum(axis=0))
        score_b = _score_from_pooled(stats_b[idx].sum(axis=0))
        if score_b >= score_a:
            b_at_least += 1
        if score_b == score_a:
            ties += 1
    return BootstrapResult(
        bleu_a=_score_from_pooled(stats_a.sum(axis=0)),
        bleu_b=_score_from_pooled(stats_b.sum(axis=0)),
        p_value=b_at_least / resamples,
        tie_fraction=ties / resamples,
        resamples=resamples,
        seed=seed,
    )
