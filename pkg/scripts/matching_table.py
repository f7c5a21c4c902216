"""Matched fraction of M1, M2 and M3 on synthetic feeds with growing split counts.

    python3 scripts/matching_table.py --seeds 5 --horizon 600
"""
from __future__ import annotations

import argparse

import numpy as np

from lobflow.lob import quotes_to_eventflow
from lobflow.matcher import match1, match2, match3
from lobflow.skellam import LagDensity
from lobflow.synthgen import ArtifactConfig, FlowParams, render, simulate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--horizon", type=float, default=600.0)
    ap.add_argument("--jitter", type=float, default=0.003)
    args = ap.parse_args()

    print(f"{'split_max':>9} {'lines':>7} {'M1':>7} {'M2':>7} {'M3':>7}")
    for split_max in (1, 2, 3, 5):
        fr = {"M1": [], "M2": [], "M3": []}
        lines = 0
        for seed in range(args.seeds):
            fp = FlowParams(horizon=args.horizon, depth=5, noise_rate=1.0, seed=seed)
            art = ArtifactConfig(lag_density=LagDensity.uniform(0.05, 0.15), split_max=split_max,
                                 split_jitter=args.jitter)
            feed = render(simulate(fp), art, seed=seed)
            flow = quotes_to_eventflow(feed.quotes, 5)
            n = len(feed.trades)
            lines += n
            fr["M1"].append(match1(feed.trades, flow).matched_trades / n)
            fr["M2"].append(match2(feed.trades, flow).matched_trades / n)
            fr["M3"].append(match3(feed.trades, flow).matched_trades / n)
        cells = " ".join(f"{np.mean(v):7.4f}" for v in fr.values())
        print(f"{split_max:>9} {lines // args.seeds:>7} {cells}")


if __name__ == "__main__":
    main()
