"""Experiment orchestration: single runs, temperature sweeps, analysis.

A single declarative config fully determines a run; re-running any command
with the same config and seeds reproduces all numeric outputs exactly
(wall-clock fields excepted). Every emitted CSV row and JSON report
carries the hash of the config that produced it.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    SyntheticTaskSpec,
    build_vocabulary,
    generate_multilingual_corpus,
    generate_synthetic_corpus,
)
from .decoding import BeamConfig, beam_decode, decode_corpus, greedy_decode_batch
from .errors import ConfigError, TemperlabError
from .metrics import corpus_bleu, output_similarity_bleu, paired_bootstrap
from .model import ModelConfig, init_parameters, load_checkpoint, save_checkpoint
from .tempering import TemperingConfig, entropy_views, smoothed_label_array
from .training import (
    TaskData,
    TrainerConfig,
    average_checkpoints,
    evaluate_checkpoint,
    model_from_checkpoint,
    train,
)

Array = np.ndarray

DEFAULT_TEMPERATURES = (1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 3.0, 4.0, 5.0, 10.0)


@dataclass(frozen=True)
class SeedConfig:
    model: int = 0
    train: int = 0


@dataclass(frozen=True)
class BeamGridConfig:
    beam_sizes: tuple[int, ...] = (2, 4, 6, 8, 10, 12)
    length_penalties: tuple[float, ...] = (0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4)
    max_length: int = 32

    def __post_init__(self):
        if not self.beam_sizes or not self.length_penalties:
            raise ConfigError("beam grid must contain at least one beam size and penalty")


@dataclass(frozen=True)
class ExperimentConfig:
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    tempering: TemperingConfig = field(default_factory=TemperingConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    beam_grid: BeamGridConfig = field(default_factory=BeamGridConfig)
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    multilingual: bool = False
    output_dir: str = "runs/exp"
    seeds: SeedConfig = field(default_factory=SeedConfig)


def default_config() -> ExperimentConfig:
    """Desk-scale defaults: noisy copy task, 2-layer dim-64 model."""
    return ExperimentConfig()


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


_SECTIONS = {
    "task": SyntheticTaskSpec,
    "model": ModelConfig,
    "tempering": TemperingConfig,
    "trainer": TrainerConfig,
    "beam_grid": BeamGridConfig,
    "seeds": SeedConfig,
}


def _build_section(cls, raw: dict, section: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in config section {section!r}")
    kwargs = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw: dict) -> ExperimentConfig:
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        elif key == "temperatures":
            kwargs[key] = tuple(float(t) for t in value)
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.key=value` overrides; values parse as JSON literals,
    falling back to strings."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} traverses a non-object key")
        node[parts[-1]] = value
    return raw


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable short hash over everything that affects the numbers (the
    output directory is excluded)."""
    payload = config_to_dict(cfg)
    payload.pop("output_dir", None)
    canon = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# building the task


def build_task_data(cfg: ExperimentConfig) -> tuple[TaskData, tuple[str, ...]]:
    if cfg.multilingual:
        corpus, tags = generate_multilingual_corpus(cfg.task)
    else:
        corpus, tags = generate_synthetic_corpus(cfg.task), ()
    src_vocab = build_vocabulary(corpus.train, "source", tags=tags)
    tgt_vocab = build_vocabulary(corpus.train, "target")
    data = TaskData(
        train=corpus.train,
        dev=corpus.dev,
        test=corpus.test,
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        decode_max_length=cfg.beam_grid.max_length,
    )
    longest_src = max(len(s) for s, _ in corpus.train + corpus.dev + corpus.test)
    longest_tgt = max(len(t) for _, t in corpus.train + corpus.dev + corpus.test)
    needed = max(longest_src, longest_tgt + 1, cfg.beam_grid.max_length + 1)
    if needed > cfg.model.max_positions:
        raise ConfigError(
            f"max_positions {cfg.model.max_positions} is too small for sequences "
            f"of length {needed}; raise model.max_positions"
        )
    return data, tags


def resolve_model_config(cfg: ExperimentConfig, data: TaskData) -> ModelConfig:
    return cfg.model.with_vocabs(len(data.src_vocab), len(data.tgt_vocab))


# ---------------------------------------------------------------------------
# single run


@dataclass
class RunResult:
    temperature: float
    dev_bleu: float
    steps_trained: int
    run_dir: str
    record: "object"
    decode_model: "object"
    data: TaskData


def run_experiment(cfg: ExperimentConfig, temperature: float, run_dir) -> RunResult:
    """Train one model at `temperature`, average the retained checkpoints,
    and persist the run artifacts. Test data is not touched here."""
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    data, _tags = build_task_data(cfg)
    mcfg = resolve_model_config(cfg, data)
    model = init_parameters(mcfg, cfg.seeds.model)
    trainer = dataclasses.replace(cfg.trainer, seed=cfg.seeds.train)
    tempering = dataclasses.replace(cfg.tempering, temperature=temperature)

    result = train(model, data, tempering, trainer, checkpoint_dir=run_dir / "checkpoints")
    averaged = average_checkpoints(result.checkpoints) if result.checkpoints else None
    decode_model = model_from_checkpoint(averaged) if averaged else result.model
    dev_bleu = evaluate_checkpoint(decode_model, data, "dev")

    result.record.save_jsonl(run_dir / "record.jsonl")
    save_checkpoint(run_dir / "average.npz", decode_model, result.record.steps[-1].step)
    data.src_vocab.save(run_dir / "src_vocab.txt")
    data.tgt_vocab.save(run_dir / "tgt_vocab.txt")
    h = config_hash(cfg)
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"config": config_to_dict(cfg), "temperature": temperature, "config_hash": h},
            fh,
            indent=2,
        )
    with open(run_dir / "result.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "metric": "dev_greedy_bleu",
                "value": dev_bleu,
                "n_sentences": len(data.dev),
                "temperature": temperature,
                "steps_trained": result.record.steps[-1].step,
                "config_hash": h,
            },
            fh,
            indent=2,
        )
    return RunResult(
        temperature=temperature,
        dev_bleu=dev_bleu,
        steps_trained=result.record.steps[-1].step,
        run_dir=str(run_dir),
        record=result.record,
        decode_model=decode_model,
        data=data,
    )


def _format_t(t: float) -> str:
    return f"T{t:g}"


def write_hypotheses(path, token_lines: list[tuple[str, ...]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tokens in token_lines:
            fh.write(" ".join(tokens) + "\n")


def write_sidecar(path, hyps, timings) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for hyp, tm in zip(hyps, timings):
            fh.write(
                json.dumps(
                    {
                        "score": hyp.score,
                        "log_prob": hyp.log_prob,
                        "length": len(hyp.surface()),
                        "wall_ns": tm.wall_ns,
                    }
                )
                + "\n"
            )


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepRow:
    temperature: float
    status: str
    dev_bleu: float | None = None
    test_greedy_bleu: float | None = None
    oracle_beam_bleu: float | None = None
    oracle_beam_size: int | None = None
    oracle_alpha: float | None = None


@dataclass
class SweepReport:
    rows: list[SweepRow]
    t_opt: float | None
    out_dir: str


def test_greedy_outputs(run: RunResult) -> list[tuple[str, ...]]:
    sources = [run.data.src_vocab.encode(s) for s, _ in run.data.test]
    hyps = greedy_decode_batch(run.decode_model, sources, run.data.decode_max_length)
    return [run.data.tgt_vocab.decode(h.surface(), strip_special=False) for h in hyps]


def oracle_beam_search(run: RunResult, grid: BeamGridConfig) -> tuple[float, int, float]:
    """Best test BLEU over the whole beam-size x penalty grid.

    This reproduces a test-set-selected ("oracle") number: it is a harness
    for studying curves, not a deployable selection procedure.
    """
    sources = [run.data.src_vocab.encode(s) for s, _ in run.data.test]
    refs = [t for _, t in run.data.test]
    best = (-1.0, 0, 0.0)
    for beam in grid.beam_sizes:
        for alpha in grid.length_penalties:
            cfg = BeamConfig(beam_size=beam, length_penalty_alpha=alpha, max_length=grid.max_length)
            hyps = [beam_decode(run.decode_model, src, cfg)[0] for src in sources]
            tokens = [run.data.tgt_vocab.decode(h.surface(), strip_special=False) for h in hyps]
            score = corpus_bleu(tokens, refs)
            if score > best[0]:
                best = (score, beam, alpha)
    return best


def run_sweep(cfg: ExperimentConfig, out_dir=None) -> SweepReport:
    """Train one model per temperature, pick the best on dev greedy BLEU,
    then evaluate test greedy and the oracle beam grid for every
    temperature. Selection happens strictly before any test decoding."""
    if not cfg.temperatures:
        raise ConfigError("sweep needs at least one temperature")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"config": config_to_dict(cfg), "config_hash": h}, fh, indent=2)

    runs: dict[float, RunResult] = {}
    rows: list[SweepRow] = []
    for t in cfg.temperatures:
        try:
            runs[t] = run_experiment(cfg, t, out / "runs" / _format_t(t))
            rows.append(SweepRow(temperature=t, status="ok", dev_bleu=runs[t].dev_bleu))
        except TemperlabError as exc:
            rows.append(SweepRow(temperature=t, status=f"failed: {exc}"))

    ok_rows = [r for r in rows if r.status == "ok"]
    t_opt = max(ok_rows, key=lambda r: r.dev_bleu).temperature if ok_rows else None

    # test decoding strictly after dev-based selection
    greedy_outputs: dict[float, list] = {}
    for row in rows:
        if row.status != "ok":
            continue
        run = runs[row.temperature]
        outputs = test_greedy_outputs(run)
        greedy_outputs[row.temperature] = outputs
        refs = [t for _, t in run.data.test]
        row.test_greedy_bleu = corpus_bleu(outputs, refs)
        write_hypotheses(out / f"test_greedy_{_format_t(row.temperature)}.txt", outputs)
        row.oracle_beam_bleu, row.oracle_beam_size, row.oracle_alpha = oracle_beam_search(
            run, cfg.beam_grid
        )

    if t_opt is not None and t_opt != 1.0 and 1.0 in greedy_outputs:
        refs = [t for _, t in runs[t_opt].data.test]
        boot = paired_bootstrap(
            greedy_outputs[t_opt], greedy_outputs[1.0], refs, resamples=1000, seed=0
        )
        with open(out / "significance.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "metric": "paired_bootstrap_greedy_t_opt_vs_baseline",
                    "value": boot.p_value,
                    "bleu_t_opt": boot.bleu_a,
                    "bleu_baseline": boot.bleu_b,
                    "p_value": boot.p_value,
                    "tie_fraction": boot.tie_fraction,
                    "resamples": boot.resamples,
                    "seed": boot.seed,
                    "n_sentences": len(refs),
                    "config_hash": h,
                },
                fh,
                indent=2,
            )

    _write_csv(
        out / "sweep.csv",
        [
            "temperature",
            "status",
            "dev_greedy_bleu",
            "test_greedy_bleu",
            "oracle_beam_bleu",
            "oracle_beam_size",
            "oracle_alpha",
            "is_t_opt",
            "config_hash",
        ],
        [
            [
                r.temperature,
                r.status,
                r.dev_bleu,
                r.test_greedy_bleu,
                r.oracle_beam_bleu,
                r.oracle_beam_size,
                r.oracle_alpha,
                int(r.temperature == t_opt),
                h,
            ]
            for r in rows
        ],
    )
    _write_csv(
        out / "curve.csv",
        ["temperature", "greedy_bleu", "oracle_beam_bleu", "config_hash"],
        [
            [r.temperature, r.test_greedy_bleu, r.oracle_beam_bleu, h]
            for r in rows
            if r.status == "ok"
        ],
    )
    return SweepReport(rows=rows, t_opt=t_opt, out_dir=str(out))


# ---------------------------------------------------------------------------
# analysis


def entropy_probe(model, data: TaskData, temperature: float, split: str = "dev", batch_size: int = 64) -> tuple[float, float]:
    """Evaluation-mode teacher-forced entropies on a held-out split:
    (tempered view, raw view), token-weighted means."""
    from .data import encode_pairs, make_batches

    pairs = getattr(data, split)
    encoded = encode_pairs(pairs, data.src_vocab, data.tgt_vocab)
    batches = make_batches(encoded, batch_size, seed=0)
    tempered_sum = raw_sum = total = 0.0
    for b in batches:
        logits = model.forward_teacher_forced(b.source, b.target_in, train=False)
        t_h, r_h = entropy_views(logits.array, b.target_mask, temperature)
        n = b.token_count
        tempered_sum += t_h * n
        raw_sum += r_h * n
        total += n
    return tempered_sum / total, raw_sum / total


def time_decoding(
    model,
    sources: list[Array],
    max_length: int,
    beam_sizes: tuple[int, ...] = (4, 10),
    alpha: float = 1.0,
    passes: int = 3,
    warmup: int = 5,
) -> list[dict]:
    """Wall-clock comparison of greedy vs beam decoding, one sentence at a
    time, median over `passes` passes after a short warmup."""
    modes: list[tuple[str, BeamConfig]] = [
        ("greedy", BeamConfig(beam_size=1, length_penalty_alpha=0.0, max_length=max_length))
    ]
    for b in beam_sizes:
        modes.append((f"beam{b}", BeamConfig(beam_size=b, length_penalty_alpha=alpha, max_length=max_length)))

    for src in sources[:warmup]:  # warm caches and code paths
        decode_corpus(model, [src], "greedy", modes[0][1])

    results = []
    greedy_median = None
    for name, bc in modes:
        mode = "greedy" if name == "greedy" else "beam"
        totals = []
        for _ in range(passes):
            t0 = time.perf_counter()
            decode_corpus(model, sources, mode, bc)
            totals.append(time.perf_counter() - t0)
        med = statistics.median(totals)
        if name == "greedy":
            greedy_median = med
        results.append(
            {
                "mode": name,
                "beam_size": bc.beam_size if mode == "beam" else 1,
                "alpha": bc.length_penalty_alpha if mode == "beam" else 0.0,
                "median_wall_s": med,
                "slowdown_vs_greedy": med / greedy_median if greedy_median else None,
            }
        )
    return results


@dataclass
class AnalysisReport:
    out_dir: str
    gaps: list[str]


def run_analysis(run_dirs: list, out_dir, with_timing: bool = True, with_similarity: bool = True) -> AnalysisReport:
    """Cross-run report: entropy and gradient-norm curves per temperature,
    greedy-vs-beam similarity, and decoding speed ratios."""
    from .training import ExperimentRecord

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gaps: list[str] = []
    entropy_rows: list[list] = []
    grad_rows: list[list] = []
    sim_rows: list[list] = []
    timing_rows: list[list] = []
    summary: list[str] = []

    loaded = []
    for rd in run_dirs:
        rd = Path(rd)
        try:
            with open(rd / "config.json", encoding="utf-8") as fh:
                meta = json.load(fh)
            record = ExperimentRecord.load_jsonl(rd / "record.jsonl")
            loaded.append((rd, meta, record))
        except (OSError, json.JSONDecodeError) as exc:
            gaps.append(f"run {rd}: unreadable ({exc})")
    if not loaded:
        raise ConfigError("analysis needs at least one readable run directory")

    for rd, meta, record in loaded:
        t = meta["temperature"]
        h = meta["config_hash"]
        if not record.steps:
            gaps.append(f"run {rd}: record has no step entries")
        for s in record.steps:
            entropy_rows.append([t, s.step, s.tempered_entropy, s.raw_entropy, h])
            grad_rows.append([t, s.step, s.grad_norm, h])

    _write_csv(
        out / "entropy_curves.csv",
        ["temperature", "step", "tempered_entropy", "raw_entropy", "config_hash"],
        entropy_rows,
    )
    _write_csv(
        out / "gradnorm_curves.csv",
        ["temperature", "step", "grad_norm", "config_hash"],
        grad_rows,
    )

    for rd, meta, record in loaded:
        if record.steps:
            tail = record.steps[len(record.steps) * 3 // 4 :]
            mean_norm = float(np.mean([s.grad_norm for s in tail]))
            summary.append(
                f"T={meta['temperature']:g}: final-quarter mean grad norm {mean_norm:.4f}, "
                f"final raw-view entropy {record.steps[-1].raw_entropy:.4f} nats"
            )

    if with_similarity or with_timing:
        models = {}
        for rd, meta, _ in loaded:
            try:
                mdl, _step = load_checkpoint(rd / "average.npz")
                cfg = config_from_dict(meta["config"])
                data, _ = build_task_data(cfg)
                models[rd] = (mdl, data, meta)
            except (OSError, KeyError, TemperlabError) as exc:
                gaps.append(f"run {rd}: cannot rebuild decode model ({exc})")

        if with_similarity:
            for rd, (mdl, data, meta) in models.items():
                sources = [data.src_vocab.encode(s) for s, _ in data.test]
                greedy = greedy_decode_batch(mdl, sources, data.decode_max_length)
                bc = BeamConfig(beam_size=4, length_penalty_alpha=1.0, max_length=data.decode_max_length)
                beam = [beam_decode(mdl, src, bc)[0] for src in sources]
                g_tok = [data.tgt_vocab.decode(hh.surface(), strip_special=False) for hh in greedy]
                b_tok = [data.tgt_vocab.decode(hh.surface(), strip_special=False) for hh in beam]
                sim = output_similarity_bleu(g_tok, b_tok)
                sim_rows.append([meta["temperature"], sim, meta["config_hash"]])
                summary.append(f"T={meta['temperature']:g}: greedy-beam4 similarity BLEU {sim:.2f}")
            _write_csv(
                out / "similarity.csv",
                ["temperature", "similarity_bleu", "config_hash"],
                sorted(sim_rows),
            )

        if with_timing and models:
            rd0 = next(iter(models))
            mdl, data, meta = models[rd0]
            sources = [data.src_vocab.encode(s) for s, _ in data.test]
            for row in time_decoding(mdl, sources, data.decode_max_length):
                timing_rows.append(
                    [
                        row["mode"],
                        row["beam_size"],
                        row["alpha"],
                        row["median_wall_s"],
                        row["slowdown_vs_greedy"],
                        meta["config_hash"],
                    ]
                )
                if row["mode"] != "greedy":
                    summary.append(
                        f"greedy is {row['slowdown_vs_greedy']:.2f}x faster than {row['mode']}"
                    )
            _write_csv(
                out / "timing.csv",
                ["mode", "beam_size", "alpha", "median_wall_s", "slowdown_vs_greedy", "config_hash"],
                timing_rows,
            )

    with open(out / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write("analysis summary\n================\n")
        for line in summary:
            fh.write(line + "\n")
        if gaps:
            fh.write("\ngaps\n----\n")
            for g in gaps:
                fh.write(g + "\n")
    return AnalysisReport(out_dir=str(out), gaps=gaps)
