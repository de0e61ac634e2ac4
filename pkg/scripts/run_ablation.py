"""Desk-scale ablation: paired-seed closed-loop trials for every method variant.

Writes metrics.csv, ablation.csv and ablation.md to ``--out`` and prints the
markdown table plus the certificate audit totals.

    python scripts/run_ablation.py --trials 100 --out results/ablation
"""

from __future__ import annotations

import argparse
import time

from pdik import bundled_model
from pdik.bench import TrialConfig, ablation_markdown, run_ablation

DEFAULT_VARIANTS = (
    "global_sqp:1",
    "monolithic:1",
    "distributed:1",
    "parallel_dist_cert:1:0.0005",
    "parallel_dist_cert:64:0.0005",
    "parallel_dist_cert:256:0.0005",
    "parallel_dist_cert:256:0.005",
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--trials", type=int, default=100)
    parser.add_argument("--variants", default=",".join(DEFAULT_VARIANTS))
    parser.add_argument("--generator", default="near_cbf_boundary")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="results/ablation")
    args = parser.parse_args()

    model = bundled_model("desk_dual_arm")
    base = TrialConfig(seed=args.seed, target_generator=args.generator)
    variants = [v for v in args.variants.split(",") if v.strip()]
    t0 = time.perf_counter()
    rows, metrics = run_ablation(model, args.trials, variants, base, args.out, progress=print)
    print(ablation_markdown(rows))
    print(f"certificate violations: {sum(m.certificate_violations for m in metrics)}")
    print(f"maximality violations: {sum(m.maximality_violations for m in metrics)}")
    print(f"elapsed: {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
