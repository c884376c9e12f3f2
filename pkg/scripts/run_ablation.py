"""Ablation table (attention / dual classifiers / self-training) over several seeds."""

import argparse

import numpy as np

from adast.config import load_config
from adast.trainer import ABLATION_VARIANTS, prepare_data, run_ablation


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config")
    p.add_argument("--seeds", default="0,1,2,3,4")
    args = p.parse_args()

    cfg = load_config(args.config)
    data = prepare_data(cfg)
    accs = {v.name: [] for v in ABLATION_VARIANTS}
    for seed in (int(s) for s in args.seeds.split(",")):
        for name, result in run_ablation(cfg, seed, data).items():
            accs[name].append(result.test_acc)
            print(f"seed {seed} {name:>10}: acc {100 * result.test_acc:.2f}", flush=True)
    print(f"{'variant':>10}  att dc st  acc")
    for v in ABLATION_VARIANTS:
        a = 100 * np.array(accs[v.name])
        flags = "  ".join("x" if on else "-" for on in
                          (v.use_attention, v.use_dual_classifiers, v.use_self_training))
        print(f"{v.name:>10}   {flags}   {a.mean():.2f} ± {a.std():.2f}")


if __name__ == "__main__":
    main()
