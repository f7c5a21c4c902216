"""Lee-Ready accuracy against matched signs on a synthetic feed, next to the model curve.

The feed is matched with M3 and the matched signs serve as the reference, the same
way the `sign` command works on real files.

    python3 scripts/lag_sweep.py --horizon 3600 --lag uniform
"""
from __future__ import annotations

import argparse

import numpy as np

from lobflow.lob import quotes_to_eventflow
from lobflow.matcher import match3
from lobflow.signer import sweep
from lobflow.skellam import LagDensity, SkellamParams, p_expected
from lobflow.synthgen import ArtifactConfig, FlowParams, render, simulate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=3600.0)
    ap.add_argument("--lag", choices=("dirac", "uniform"), default="uniform")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sp = SkellamParams(1.0, 1.0, 1.5, 1.5, 0.6)
    density = LagDensity.dirac(0.1) if args.lag == "dirac" else LagDensity.uniform(0.05, 0.15)
    fp = FlowParams.from_skellam(sp, horizon=args.horizon, depth=5, noise_rate=1.0, seed=args.seed)
    feed = render(simulate(fp), ArtifactConfig(lag_density=density, split_max=3, split_jitter=0.002),
                  seed=args.seed)
    flow = quotes_to_eventflow(feed.quotes, 5)
    res = match3(feed.trades, flow)
    grid = np.round(np.arange(-0.2, 0.4001, 0.025), 3)

    print(f"{len(feed.trades)} lines, {res.matched_trades} matched")
    print(f"{'lag':>7} {'accuracy':>9} {'model':>7} {'n':>7}")
    for p in sweep(feed.trades, flow.tops, res, grid):
        acc = "" if p.accuracy is None else f"{p.accuracy:.4f}"
        print(f"{p.lag:7.3f} {acc:>9} {p_expected(sp, density, p.lag):7.4f} {p.evaluated:7d}")


if __name__ == "__main__":
    main()
