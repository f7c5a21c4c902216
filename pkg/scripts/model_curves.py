"""Model signing accuracy for a deterministic, a Gaussian and a uniform lag.

Writes one CSV per density into --out and prints a coarse table.

    python3 scripts/model_curves.py --out curves
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from lobflow.skellam import LagDensity, SkellamParams, model_curve, write_curve


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("curves"))
    args = ap.parse_args()

    params = SkellamParams(5.0, 5.0, 1.0, 1.0, 0.6)
    densities = {
        "dirac": LagDensity.dirac(1.0),
        "gaussian": LagDensity.gaussian(1.0, 0.1),
        "uniform": LagDensity.uniform(0.5, 1.5),
    }
    grid = np.round(np.linspace(-1.0, 3.0, 401), 4)
    args.out.mkdir(parents=True, exist_ok=True)
    curves = {}
    for name, f in densities.items():
        curves[name] = model_curve(params, f, grid)
        (args.out / f"{name}.csv").write_bytes(write_curve(curves[name]))

    print(f"{'lag':>6} " + " ".join(f"{n:>9}" for n in densities))
    for i in range(0, len(grid), 25):
        print(f"{grid[i]:6.2f} " + " ".join(f"{curves[n][i][1]:9.4f}" for n in densities))


if __name__ == "__main__":
    main()
