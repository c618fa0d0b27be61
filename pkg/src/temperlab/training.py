"""Training loop: Adam with inverse-square-root warmup schedule, dev-BLEU
early stopping, checkpoint averaging, and per-step diagnostics.

Each step records the per-token loss, the mean entropy of the
temperature-scaled softmax (the distribution the loss sees) and of the
unscaled softmax (the distribution decoding would see), and the global L2
norm over all parameter gradients. Gradient clipping is off by default so
the recorded norm curves are unclipped.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .data import PAD_ID, Batch, Pair, Vocabulary, encode_pairs, make_batches
from .decoding import greedy_decode_batch
from .errors import ConfigError, ContractError, NumericError
from .metrics import corpus_bleu
from .model import ModelConfig, TransformerModel
from .tempering import TemperingConfig, entropy_views, smoothed_label_array, tempered_loss
from .tensor import GradientTape, Tensor, backward

Array = np.ndarray


@dataclass(frozen=True)
class TrainerConfig:
    lr_scale: float = 0.05
    warmup_steps: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    batch_size: int = 32
    eval_interval: int = 200  # steps between dev evaluations / checkpoints
    patience: int = 10  # consecutive evaluations forming the stopping window
    min_delta: float = 0.1  # BLEU band width that counts as "not varying"
    max_steps: int = 1500
    checkpoint_keep: int = 10
    clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.eval_interval < 1:
            raise ConfigError(f"eval_interval must be >= 1, got {self.eval_interval}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.min_delta < 0.0:
            raise ConfigError(f"min_delta must be >= 0, got {self.min_delta}")
        if self.max_steps < 1 or self.batch_size < 1 or self.checkpoint_keep < 1:
            raise ConfigError("max_steps, batch_size and checkpoint_keep must be positive")
        if self.lr_scale <= 0.0 or self.warmup_steps < 1:
            raise ConfigError("lr_scale must be positive and warmup_steps >= 1")


def learning_rate(step: int, cfg: TrainerConfig) -> float:
    """lr_scale * min(step * warmup^-1.5, step^-0.5); both branches meet at
    step == warmup_steps."""
    if step < 1:
        raise ContractError(f"schedule is defined for steps >= 1, got {step}")
    return cfg.lr_scale * min(step * cfg.warmup_steps**-1.5, step**-0.5)


@dataclass
class StepRecord:
    step: int
    loss: float
    tempered_entropy: float
    raw_entropy: float
    grad_norm: float
    wall_s: float


@dataclass
class EvalRecord:
    step: int
    dev_bleu: float
    checkpoint_id: str


@dataclass
class ExperimentRecord:
    """Per-step and per-evaluation diagnostics for one training run."""

    steps: list[StepRecord] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.steps:
                fh.write(json.dumps({"kind": "step", **dataclasses.asdict(rec)}) + "\n")
            for rec in self.evals:
                fh.write(json.dumps({"kind": "eval", **dataclasses.asdict(rec)}) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "ExperimentRecord":
        out = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                row = json.loads(line)
                kind = row.pop("kind")
                if kind == "step":
                    out.steps.append(StepRecord(**row))
                elif kind == "eval":
                    out.evals.append(EvalRecord(**row))
        return out


@dataclass
class Checkpoint:
    """Copied parameter snapshot; `source_steps` lists the constituent steps
    when the snapshot is an average of several."""

    params: dict[str, Array]
    config: ModelConfig
    step: int
    source_steps: tuple[int, ...] = ()

    @property
    def checkpoint_id(self) -> str:
        return f"step{self.step:06d}"


def snapshot(model: TransformerModel, step: int) -> Checkpoint:
    return Checkpoint(
        params={name: p.array.copy() for name, p in model.params.items()},
        config=model.config,
        step=step,
        source_steps=(step,),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> TransformerModel:
    params = {name: Tensor(arr.copy(), tracked=True) for name, arr in ckpt.params.items()}
    return TransformerModel(ckpt.config, params)


def average_checkpoints(checkpoints: list[Checkpoint]) -> Checkpoint:
    """Arithmetic mean per parameter over snapshots sharing names/shapes."""
    if not checkpoints:
        raise ContractError("cannot average an empty checkpoint list")
    names = list(checkpoints[0].params.keys())
    for ck in checkpoints[1:]:
        if list(ck.params.keys()) != names:
            raise ContractError("checkpoints disagree on parameter names")
        for name in names:
            if ck.params[name].shape != checkpoints[0].params[name].shape:
                raise ContractError(f"checkpoints disagree on the shape of {name}")
    # anchored mean: bitwise identity for identical snapshots (deltas are 0),
    # and a better-conditioned sum in general
    averaged = {}
    for name in names:
        first = checkpoints[0].params[name]
        deltas = np.mean([ck.params[name] - first for ck in checkpoints], axis=0)
        averaged[name] = first + deltas
    return Checkpoint(
        params=averaged,
        config=checkpoints[0].config,
        step=max(ck.step for ck in checkpoints),
        source_steps=tuple(ck.step for ck in checkpoints),
    )


def should_stop(history: list[float], patience: int, min_delta: float) -> bool:
    """True once the last `patience` dev scores all lie within a band of
    width `min_delta` (windowed range)."""
    if len(history) < patience:
        return False
    window = history[-patience:]
    return max(window) - min(window) <= min_delta


def global_gradient_norm(grads: dict[str, Array]) -> float:
    """L2 norm over the concatenation of all parameter gradients."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return float(np.sqrt(total))


class AdamState:
    def __init__(self, params: dict[str, Tensor]):
        self.m = {name: np.zeros_like(p.array) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.array) for name, p in params.items()}
        self.t = 0

    def update(
        self, params: dict[str, Tensor], grads: dict[str, Array], lr: float, cfg: TrainerConfig
    ) -> dict[str, Tensor]:
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        out: dict[str, Tensor] = {}
        for name, p in params.items():
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            mhat = self.m[name] / (1.0 - b1**self.t)
            vhat = self.v[name] / (1.0 - b2**self.t)
            out[name] = Tensor(p.array - lr * mhat / (np.sqrt(vhat) + cfg.adam_eps), tracked=True)
        return out


@dataclass
class TaskData:
    """Corpora plus vocabularies bundled for the trainer."""

    train: list[Pair]
    dev: list[Pair]
    test: list[Pair]
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    decode_max_length: int = 32


@dataclass
class TrainResult:
    model: TransformerModel
    checkpoints: list[Checkpoint]
    record: ExperimentRecord


def train_step(
    model: TransformerModel,
    batch: Batch,
    tempering: TemperingConfig,
    trainer: TrainerConfig,
    adam: AdamState,
    step: int,
    rng: np.random.Generator,
) -> tuple[TransformerModel, StepRecord]:
    """One optimisation step; returns the updated model and its record."""
    t0 = time.perf_counter()
    try:
        with GradientTape() as tape:
            logits = model.forward_teacher_forced(batch.source, batch.target_in, train=True, rng=rng)
            labels = smoothed_label_array(
                batch.target_out, model.config.target_vocab, tempering.label_smoothing, PAD_ID
            )
            loss = tempered_loss(logits, labels, batch.token_count, tempering)
        loss_value = loss.item()
    except NumericError as exc:
        raise NumericError(f"step {step} batch {batch.index}: {exc}") from exc
    if not np.isfinite(loss_value):
        raise NumericError(f"non-finite loss at step {step} batch {batch.index}")
    grad_map = backward(tape, loss)
    grads = {
        name: grad_map.get(p, np.zeros_like(p.array)) for name, p in model.params.items()
    }
    norm = global_gradient_norm(grads)
    if trainer.clip_norm is not None and norm > trainer.clip_norm:
        scale = trainer.clip_norm / norm
        grads = {name: g * scale for name, g in grads.items()}
    new_params = adam.update(model.params, grads, learning_rate(step, trainer), trainer)
    tempered_h, raw_h = entropy_views(logits.array, batch.target_mask, tempering.temperature)
    record = StepRecord(
        step=step,
        loss=loss_value,
        tempered_entropy=tempered_h,
        raw_entropy=raw_h,
        grad_norm=norm,
        wall_s=time.perf_counter() - t0,
    )
    return TransformerModel(model.config, new_params), record


def evaluate_checkpoint(model: TransformerModel, data: TaskData, split: str = "dev") -> float:
    """Greedy corpus BLEU on a held-out split; no temperature at decode time."""
    pairs = getattr(data, split)
    sources = [data.src_vocab.encode(src) for src, _ in pairs]
    hyps = greedy_decode_batch(model, sources, data.decode_max_length)
    hyp_tokens = [data.tgt_vocab.decode(h.surface(), strip_special=False) for h in hyps]
    refs = [tgt for _, tgt in pairs]
    return corpus_bleu(hyp_tokens, refs)


def train(
    model: TransformerModel,
    data: TaskData,
    tempering: TemperingConfig,
    trainer: TrainerConfig,
    checkpoint_dir=None,
) -> TrainResult:
    """Run the optimisation loop until max_steps or the dev-BLEU stopping
    rule fires. Deterministic under fixed seeds."""
    from .model import save_checkpoint  # local import to keep module deps one-way

    encoded = encode_pairs(data.train, data.src_vocab, data.tgt_vocab)
    adam = AdamState(model.params)
    record = ExperimentRecord()
    checkpoints: list[Checkpoint] = []
    history: list[float] = []
    dropout_rng = np.random.default_rng(np.random.SeedSequence((trainer.seed, 1)))

    step = 0
    epoch = 0
    stopped = False
    while step < trainer.max_steps and not stopped:
        epoch_seed = int(np.random.SeedSequence((trainer.seed, 2, epoch)).generate_state(1)[0])
        batches = make_batches(encoded, trainer.batch_size, seed=epoch_seed)
        epoch += 1
        for batch in batches:
            step += 1
            model, step_rec = train_step(model, batch, tempering, trainer, adam, step, dropout_rng)
            record.steps.append(step_rec)
            if step % trainer.eval_interval == 0:
                ckpt = snapshot(model, step)
                checkpoints.append(ckpt)
                if len(checkpoints) > trainer.checkpoint_keep:
                    checkpoints.pop(0)
                if checkpoint_dir is not None:
                    save_checkpoint(f"{checkpoint_dir}/{ckpt.checkpoint_id}.npz", model, step)
                dev_bleu = evaluate_checkpoint(model, data, "dev")
                record.evals.append(
                    EvalRecord(step=step, dev_bleu=dev_bleu, checkpoint_id=ckpt.checkpoint_id)
                )
                history.append(dev_bleu)
                if should_stop(history, trainer.patience, trainer.min_delta):
                    stopped = True
            if step >= trainer.max_steps or stopped:
                break
    return TrainResult(model=model, checkpoints=checkpoints, record=record)
