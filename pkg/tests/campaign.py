"""Shared training campaign backing the trend-level acceptance criteria.

Twelve desk-scale runs (temperatures {1, 2, 3, 5} x three seeds) on the
noisy copy task. Runs are deterministic, so finished results are cached on
disk keyed by the campaign fingerprint; delete the cache directory to
force retraining.
"""

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from temperlab.data import SyntheticTaskSpec
from temperlab.decoding import BeamConfig, beam_decode, greedy_decode_batch
from temperlab.experiments import entropy_probe
from temperlab.metrics import corpus_bleu, output_similarity_bleu
from temperlab.model import ModelConfig, init_parameters, load_checkpoint, save_checkpoint
from temperlab.tempering import TemperingConfig
from temperlab.training import (
    TaskData,
    TrainerConfig,
    average_checkpoints,
    evaluate_checkpoint,
    model_from_checkpoint,
    train,
)

CAMPAIGN_VERSION = 2
TEMPERATURES = (1.0, 2.0, 3.0, 5.0)
SEEDS = (0, 1, 2)

TASK = SyntheticTaskSpec(
    kind="copy",
    alphabet_size=64,
    length_range=(5, 20),
    corpus_sizes=(2000, 200, 200),
    noise_rate=0.1,
    seed=0,
)
MODEL = ModelConfig()  # desk defaults: 2 layers, dim 64, 4 heads, ff 128
TRAINER = TrainerConfig(
    lr_scale=0.05,
    warmup_steps=200,
    batch_size=32,
    eval_interval=200,
    patience=10,
    min_delta=0.1,
    max_steps=1000,
    checkpoint_keep=10,
)
DECODE_MAX_LENGTH = 25
BEAM4 = BeamConfig(beam_size=4, length_penalty_alpha=1.0, max_length=DECODE_MAX_LENGTH)


def cache_dir() -> Path:
    root = os.environ.get("TEMPERLAB_CAMPAIGN_CACHE", "/tmp/temperlab_campaign")
    return Path(root) / campaign_fingerprint()


def campaign_fingerprint() -> str:
    payload = json.dumps(
        {
            "version": CAMPAIGN_VERSION,
            "task": dataclasses.asdict(TASK),
            "model": dataclasses.asdict(MODEL),
            "trainer": dataclasses.asdict(TRAINER),
            "temperatures": TEMPERATURES,
            "seeds": SEEDS,
            "max_len": DECODE_MAX_LENGTH,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class CampaignRun:
    temperature: float
    seed: int
    steps: int
    train_wall_s: float
    dev_bleu: float
    test_greedy_bleu: float
    test_beam4_bleu: float
    similarity_bleu: float
    tempered_entropy: float
    raw_entropy: float
    tail_grad_norm: float  # mean over the final quarter of training steps
    grad_norms: list
    model_path: str


def build_task_data() -> TaskData:
    from temperlab.data import build_vocabulary, generate_synthetic_corpus

    corpus = generate_synthetic_corpus(TASK)
    return TaskData(
        train=corpus.train,
        dev=corpus.dev,
        test=corpus.test,
        src_vocab=build_vocabulary(corpus.train, "source"),
        tgt_vocab=build_vocabulary(corpus.train, "target"),
        decode_max_length=DECODE_MAX_LENGTH,
    )


def _run_one(data: TaskData, temperature: float, seed: int, out: Path) -> CampaignRun:
    mcfg = MODEL.with_vocabs(len(data.src_vocab), len(data.tgt_vocab))
    model = init_parameters(mcfg, 100 + seed)
    trainer = dataclasses.replace(TRAINER, seed=200 + seed)
    tempering = TemperingConfig(temperature=temperature, rescale_loss=True, label_smoothing=0.1)
    t0 = time.perf_counter()
    result = train(model, data, tempering, trainer)
    train_wall_s = time.perf_counter() - t0
    averaged = average_checkpoints(result.checkpoints)
    decode_model = model_from_checkpoint(averaged)

    dev_bleu = evaluate_checkpoint(decode_model, data, "dev")
    sources = [data.src_vocab.encode(s) for s, _ in data.test]
    refs = [t for _, t in data.test]
    greedy = greedy_decode_batch(decode_model, sources, DECODE_MAX_LENGTH)
    g_tok = [data.tgt_vocab.decode(h.surface(), strip_special=False) for h in greedy]
    beam = [beam_decode(decode_model, s, BEAM4)[0] for s in sources]
    b_tok = [data.tgt_vocab.decode(h.surface(), strip_special=False) for h in beam]

    tempered_h, raw_h = entropy_probe(decode_model, data, temperature, split="dev")
    tail = result.record.steps[len(result.record.steps) * 3 // 4 :]
    grad_norms = [s.grad_norm for s in result.record.steps]

    model_path = out / f"model_T{temperature:g}_s{seed}.npz"
    save_checkpoint(model_path, decode_model, result.record.steps[-1].step)
    return CampaignRun(
        temperature=temperature,
        seed=seed,
        steps=result.record.steps[-1].step,
        train_wall_s=train_wall_s,
        dev_bleu=dev_bleu,
        test_greedy_bleu=corpus_bleu(g_tok, refs),
        test_beam4_bleu=corpus_bleu(b_tok, refs),
        similarity_bleu=output_similarity_bleu(g_tok, b_tok),
        tempered_entropy=tempered_h,
        raw_entropy=raw_h,
        tail_grad_norm=float(np.mean([s.grad_norm for s in tail])),
        grad_norms=grad_norms,
        model_path=str(model_path),
    )


def run_campaign(verbose: bool = False) -> dict[tuple[float, int], CampaignRun]:
    out = cache_dir()
    out.mkdir(parents=True, exist_ok=True)
    data = None
    runs: dict[tuple[float, int], CampaignRun] = {}
    for seed in SEEDS:
        for temperature in TEMPERATURES:
            key = out / f"run_T{temperature:g}_s{seed}.json"
            if key.exists():
                with open(key, encoding="utf-8") as fh:
                    runs[(temperature, seed)] = CampaignRun(**json.load(fh))
                continue
            if data is None:
                data = build_task_data()
            run = _run_one(data, temperature, seed, out)
            with open(key, "w", encoding="utf-8") as fh:
                json.dump(dataclasses.asdict(run), fh)
            runs[(temperature, seed)] = run
            if verbose:
                print(
                    f"T={temperature:g} seed={seed}: dev {run.dev_bleu:.2f} "
                    f"test {run.test_greedy_bleu:.2f} beam4 {run.test_beam4_bleu:.2f} "
                    f"sim {run.similarity_bleu:.2f} rawH {run.raw_entropy:.3f} "
                    f"gnorm {run.tail_grad_norm:.3f}",
                    flush=True,
                )
    return runs


def load_campaign_model(run: CampaignRun):
    model, _ = load_checkpoint(run.model_path)
    return model


if __name__ == "__main__":
    run_campaign(verbose=True)
