"""Training loss against communication rounds for all four methods on label-skewed logistic regression."""

import argparse
from pathlib import Path

from fafedsim.engine import RunConfig, grid_search
from fafedsim.optimizers import HyperParams
from fafedsim.plotting import emit_plot
from fafedsim.problems import make_logistic
from fafedsim.results import compare_runs, write_csv

GRIDS = {
    "fafed": (HyperParams(), {"rho_hbar": [0.3, 1.0], "c": [0.1, 1.0]}),
    "fedavg": (HyperParams(eta_mode="constant"), {"eta": [0.01, 0.02, 0.05, 0.1]}),
    "fedadam": (HyperParams(eta_mode="constant"), {"eta": [0.01, 0.05, 0.1], "eta_global": [0.01, 0.0316]}),
    "naive-adaptive": (HyperParams(eta_mode="constant"), {"eta": [0.001, 0.01, 0.02, 0.05]}),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="results/logistic")
    args = ap.parse_args()
    out = Path(args.out_dir)

    problem = make_logistic(8, 20, samples_per_client=200, label_skew=0.8, seed=args.seed)
    paths = []
    for name, (hp, grid) in GRIDS.items():
        cfg = RunConfig(name, problem, hp, args.steps, seed=args.seed, record_every=10)
        res = grid_search(cfg, grid)
        print(f"{name:>15}: best {res.best_params}")
        paths.append(write_csv(res.best, out / f"{name}.csv"))
    emit_plot(paths, "loss", out / "loss_vs_comms.svg", x_axis="comms")
    print(compare_runs(paths, 1e-2))


if __name__ == "__main__":
    main()
