#!/usr/bin/env python3
"""Train a baseline (T=1) and a tempered model on the noisy copy task, then
emit the analysis bundle: entropy-vs-step curves for both softmax views,
gradient-norm curves, greedy-vs-beam similarity, and decoding speed ratios.
"""

import argparse
import dataclasses
from pathlib import Path

from temperlab.experiments import default_config, run_analysis, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/trends")
    ap.add_argument("--temperatures", type=float, nargs="+", default=[1.0, 5.0])
    ap.add_argument("--max-steps", type=int, default=1000)
    ap.add_argument("--no-timing", action="store_true")
    args = ap.parse_args()

    cfg = default_config()
    cfg = dataclasses.replace(
        cfg, trainer=dataclasses.replace(cfg.trainer, max_steps=args.max_steps)
    )
    out = Path(args.out)
    run_dirs = []
    for t in args.temperatures:
        rd = out / f"T{t:g}"
        print(f"training T={t:g} ...", flush=True)
        run = run_experiment(cfg, t, rd)
        print(f"  dev greedy BLEU {run.dev_bleu:.2f} after {run.steps_trained} steps")
        run_dirs.append(rd)

    report = run_analysis(run_dirs, out / "analysis", with_timing=not args.no_timing)
    print(f"analysis in {report.out_dir}")
    print((Path(report.out_dir) / "summary.txt").read_text())


if __name__ == "__main__":
    main()
