"""Temperature-scaled softmax training loss and its diagnostics.

The training-time prediction divides logits by a temperature T before the
softmax, which smooths the distribution; the cross-entropy against the
(optionally label-smoothed) reference is then multiplied by T so gradient
magnitudes at the logit level are preserved. Decoding never applies the
temperature. Everything here is pure numpy on plain vectors, except
`tempered_loss`, which builds the batched loss out of tape primitives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ContractError

Array = np.ndarray

PAD_ID = 0


@dataclass(frozen=True)
class TemperingConfig:
    """Training-loss hyper-parameters: temperature, loss rescaling, smoothing."""

    temperature: float = 1.0
    rescale_loss: bool = True
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")


@dataclass(frozen=True)
class LabelDistribution:
    """Smoothed reference distribution: 1-eps at the target id, eps spread
    uniformly over the other vocab_size-1 entries."""

    target_id: int
    vocab_size: int
    smoothing: float = 0.0

    def __post_init__(self):
        if not 0 <= self.target_id < self.vocab_size:
            raise ContractError(
                f"target id {self.target_id} outside vocabulary of size {self.vocab_size}"
            )
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError(f"smoothing must be in [0, 1), got {self.smoothing}")
        if self.smoothing > 0.0 and self.vocab_size < 2:
            raise ConfigError("smoothing needs a vocabulary of at least 2 tokens")

    def vector(self) -> Array:
        out = np.full(
            self.vocab_size,
            self.smoothing / (self.vocab_size - 1) if self.smoothing > 0.0 else 0.0,
        )
        out[self.target_id] = 1.0 - self.smoothing
        return out


def tempered_softmax(logits: Array, temperature: float) -> Array:
    """softmax(logits / T); argmax is identical to argmax(logits) for any T > 0."""
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    x = np.asarray(logits, dtype=np.float64) / temperature
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_tempered_softmax(logits: Array, temperature: float) -> Array:
    x = np.asarray(logits, dtype=np.float64) / temperature
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def tempered_cross_entropy(logits: Array, label: LabelDistribution, cfg: TemperingConfig) -> float:
    """Cross-entropy of the temperature-scaled prediction against `label`,
    multiplied by the temperature when `cfg.rescale_loss` is set.

    Computed via log-softmax directly, never as log of a softmax output.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (label.vocab_size,):
        raise ContractError(
            f"logits shape {logits.shape} does not match vocabulary size {label.vocab_size}"
        )
    logp = _log_tempered_softmax(logits, cfg.temperature)
    loss = -float(np.dot(logp, label.vector()))
    if cfg.rescale_loss:
        loss *= cfg.temperature
    return loss


def analytic_logit_gradient(logits: Array, label: LabelDistribution, cfg: TemperingConfig) -> Array:
    """Closed-form gradient of `tempered_cross_entropy` w.r.t. the logits.

    With rescaling on this is exactly p_temp - label: the loss multiplier T
    cancels the 1/T from the chain rule through the scaled logits. With
    rescaling off it is (p_temp - label) / T.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (label.vocab_size,):
        raise ContractError(
            f"logits shape {logits.shape} does not match vocabulary size {label.vocab_size}"
        )
    diff = tempered_softmax(logits, cfg.temperature) - label.vector()
    if cfg.rescale_loss:
        return diff
    return diff / cfg.temperature


def shannon_entropy(p: Array) -> float:
    """Entropy in nats, with 0 * log 0 = 0. Input must be a distribution."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
        raise ContractError("shannon_entropy input is not a probability distribution")
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


# ---------------------------------------------------------------------------
# batched forms used by the training loop


def smoothed_label_array(
    target_ids: Array, vocab_size: int, smoothing: float, pad_id: int = PAD_ID
) -> Array:
    """Dense [..., vocab] reference distributions; rows at pad positions are
    all-zero so they contribute nothing to the loss."""
    ids = np.asarray(target_ids)
    out = np.zeros(ids.shape + (vocab_size,), dtype=np.float64)
    valid = ids != pad_id
    if smoothing > 0.0:
        out[valid] = smoothing / (vocab_size - 1)
    flat = out.reshape(-1, vocab_size)
    flat_ids = ids.reshape(-1)
    rows = np.nonzero(valid.reshape(-1))[0]
    flat[rows, flat_ids[rows]] = 1.0 - smoothing
    return out


def tempered_loss(logits: tt.Tensor, labels: Array, token_count: int, cfg: TemperingConfig) -> tt.Tensor:
    """Per-token mean tempered cross-entropy over a batch, built on the tape.

    `labels` is a dense [..., vocab] array (zero rows at padding) and
    `token_count` the number of non-pad target positions.
    """
    if logits.shape != labels.shape:
        raise ContractError(f"logits {logits.shape} and labels {labels.shape} differ")
    if token_count < 1:
        raise ContractError("loss needs at least one non-pad target token")
    scaled = tt.scale(logits, 1.0 / cfg.temperature)
    logp = tt.log_row_softmax(scaled)
    picked = tt.mul(logp, tt.Tensor(labels))
    total = tt.sum_all(picked)
    factor = -1.0 / token_count
    if cfg.rescale_loss:
        factor *= cfg.temperature
    return tt.scale(total, factor)


def entropy_views(logits: Array, token_mask: Array, temperature: float) -> tuple[float, float]:
    """Mean per-token entropy of the temperature-scaled and unscaled softmax.

    Averaged over positions where `token_mask` is true; returns
    (tempered_entropy, raw_entropy) in nats.
    """
    mask = np.asarray(token_mask, dtype=bool)
    if not mask.any():
        raise ContractError("entropy_views needs at least one unmasked position")
    rows = np.asarray(logits, dtype=np.float64)[mask]
    tempered = _entropy_rows(rows / temperature)
    raw = _entropy_rows(rows)
    return float(tempered.mean()), float(raw.mean())


def _entropy_rows(rows: Array) -> Array:
    z = rows - rows.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=-1, keepdims=True)
    p = e / s
    logp = z - np.log(s)
    return -(p * logp).sum(axis=-1)
