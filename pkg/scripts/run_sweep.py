"""lambda1 sensitivity curve; pre-training is shared across grid points per seed."""

import argparse

from adast.cli import sweep
from adast.config import load_config


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--grid", help="comma-separated lambda1 values (default: run.sweep_grid)")
    args = p.parse_args()

    overrides = {"run.seeds": args.seeds}
    if args.grid:
        overrides["run.sweep_grid"] = args.grid
    cfg = load_config(args.config, overrides)
    rows = sweep(cfg)
    best = max(rows, key=lambda r: r[2])
    for value, n, acc, acc_std, mf1, mf1_std in rows:
        mark = "  <- best" if value == best[0] else ""
        print(f"lambda1={value:<8g} acc {100 * acc:.2f} ± {100 * acc_std:.2f}  "
              f"MF1 {100 * mf1:.2f} ± {100 * mf1_std:.2f}{mark}")


if __name__ == "__main__":
    main()
