"""Command-line entry point: ``adast <command> [options]``.

Commands: gen-data, train, eval, ablation, sweep, dump-embeddings.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .data import generate_synthetic, load_dataset, save_dataset
from .errors import AdastError, CompatibilityError, ConfigError
from .losses import LossReport
from .metrics import class_names, evaluate, report_csv, report_text
from .model import load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad
from .trainer import (ABLATION_VARIANTS, DomainPair, RunResult, prepare_data,
                      run_adast, run_source_only)

log = logging.getLogger("adast")


# -- small output helpers ------------------------------------------------
def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def mean_std(values) -> tuple[float, float]:
    """Seed mean and population standard deviation."""
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std())


def format_pm(values, scale: float = 100.0) -> str:
    m, s = mean_std(values)
    return f"{scale * m:.2f} ± {scale * s:.2f}"


# -- config handling -----------------------------------------------------
def _parse_set(items) -> dict[str, str]:
    pairs = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def config_from_args(args) -> ExperimentConfig:
    overrides = _parse_set(args.set)
    if args.seeds is not None:
        overrides["run.seeds"] = args.seeds
    if args.seed is not None:
        overrides["run.seeds"] = str(args.seed)
    if args.mode is not None:
        overrides["run.mode"] = args.mode
    if args.out is not None:
        overrides["run.out_dir"] = args.out
    if args.parallel_seeds is not None:
        overrides["run.parallel_seeds"] = str(args.parallel_seeds)
    overrides.update(_command_overrides(args))
    cfg = load_config(args.config, overrides)
    # generating files only depends on the generator settings
    problems = cfg.synth.validate() if args.command == "gen-data" else cfg.validate()
    if problems:
        raise ConfigError("\n".join(problems))
    return cfg


def _command_overrides(args) -> dict[str, str]:
    if args.command != "gen-data":
        return {}
    flags = {
        "gen_seed": "synth.seed", "subjects": "synth.n_subjects",
        "epochs_per_subject": "synth.epochs_per_subject", "t": "synth.epoch_len",
        "shift_scale": "synth.amplitude_scale", "shift_freq": "synth.frequency_offset_hz",
        "shift_noise": "synth.noise_sigma", "resample": "synth.resample_factor",
    }
    out = {key: str(getattr(args, flag)) for flag, key in flags.items()
           if getattr(args, flag) is not None}
    return out


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # the full configuration lands next to the results before anything runs
    cfg.save(out / "config.txt")
    return out


# -- per-seed work -------------------------------------------------------
def write_run(result: RunResult, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(run_dir / "losses.csv", LossReport.CSV_HEADER,
               (r.csv_row(step) for step, r in result.losses))
    _write_csv(run_dir / "history.csv", ("epoch", "split", "acc", "mf1"),
               ((e, s, repr(a), repr(f)) for e, s, a, f in result.history))
    save_checkpoint(result.model, run_dir / "model.ckpt")
    (run_dir / "report.txt").write_text(
        report_text(result.test_cm, f"{result.mode} seed {result.seed} target test "
                                    f"(best epoch {result.best_epoch})") + "\n")
    (run_dir / "report.csv").write_text(report_csv(result.test_cm))


def _train_one(job) -> dict:
    cfg, seed, mode, toggles, run_dir = job
    data = prepare_data(cfg)
    if mode == "source-only":
        result = run_source_only(cfg, seed, data)
    else:
        result = run_adast(cfg, seed, data, toggles)
    if run_dir is not None:
        write_run(result, Path(run_dir))
    return result.summary()


def _fan_out(jobs, workers: int) -> list[dict]:
    if workers > 1 and len(jobs) > 1:
        with Pool(min(workers, len(jobs))) as pool:
            return pool.map(_train_one, jobs)
    return [_train_one(j) for j in jobs]


def summary_rows(summaries: list[dict]) -> list:
    accs = [s["acc"] for s in summaries]
    mf1s = [s["mf1"] for s in summaries]
    return [len(summaries), *mean_std(accs), *mean_std(mf1s)]


SUMMARY_HEADER = ("n_seeds", "acc_mean", "acc_std", "mf1_mean", "mf1_std")


# -- commands ------------------------------------------------------------
def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for role in ("source", "target"):
        ds = generate_synthetic(cfg.synth, role)
        path = out / f"{role}.adst"
        save_dataset(ds, path)
        hist = ds.class_histogram()
        names = class_names(ds.n_classes)
        print(f"{role}: {path}  n={len(ds)} T={ds.epoch_len} K={ds.n_classes} "
              f"subjects={len(ds.subjects)}")
        print("  " + "  ".join(f"{n}={int(c)}" for n, c in zip(names, hist)))
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    mode = cfg.run.mode
    jobs = [(cfg, s, mode, cfg.ablation, str(out / f"seed_{s}")) for s in cfg.run.seeds]
    summaries = _fan_out(jobs, cfg.run.parallel_seeds)
    _write_csv(out / "results.csv", ("seed", "acc", "mf1", "best_epoch", "source_acc"),
               ((s["seed"], repr(s["acc"]), repr(s["mf1"]), s["best_epoch"], repr(s["source_acc"]))
                for s in summaries))
    _write_csv(out / "summary.csv", ("mode", *SUMMARY_HEADER), [[mode, *summary_rows(summaries)]])
    text = (f"{mode} over {len(summaries)} seed(s): "
            f"ACC {format_pm([s['acc'] for s in summaries])}  "
            f"MF1 {format_pm([s['mf1'] for s in summaries])}")
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    model = load_checkpoint(args.checkpoint)
    data = prepare_data(cfg)
    ds = data.target if args.domain == "target" else data.source
    if ds.epoch_len != model.arch.epoch_len:
        raise CompatibilityError(f"dataset T={ds.epoch_len} but checkpoint expects T={model.arch.epoch_len}")
    acc, mf1, cm = evaluate(model, ds, args.split, args.domain)
    print(report_text(cm, f"{args.domain} {args.split}"))
    if args.out is not None:
        out = Path(cfg.run.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{args.domain}_{args.split}.csv").write_text(report_csv(cm))
    return 0


def cmd_ablation(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    rows = []
    for variant in ABLATION_VARIANTS:
        jobs = [(cfg, s, "adast", variant, str(out / variant.name / f"seed_{s}"))
                for s in cfg.run.seeds]
        summaries = _fan_out(jobs, cfg.run.parallel_seeds)
        rows.append([variant.name, int(variant.use_attention), int(variant.use_dual_classifiers),
                     int(variant.use_self_training), *summary_rows(summaries)])
        print(f"{variant.name:>10}: ACC {format_pm([s['acc'] for s in summaries])}  "
              f"MF1 {format_pm([s['mf1'] for s in summaries])}")
    _write_csv(out / "ablation.csv", ("variant", "att", "dc", "st", *SUMMARY_HEADER), rows)
    return 0


def sweep(cfg: ExperimentConfig, data: DomainPair | None = None) -> list[list]:
    """One full training per (grid point, seed); rows of (value, n, acc mean/std, mf1 mean/std).

    For a lambda1 sweep every grid point shares the pre-training stage,
    which lambda1 cannot influence, so it is computed once per seed.
    """
    data = data or prepare_data(cfg)
    param = cfg.run.sweep_param
    per_point: dict[float, list[dict]] = {v: [] for v in cfg.run.sweep_grid}
    for seed in cfg.run.seeds:
        snap = None
        for value in cfg.run.sweep_grid:
            point = replace(cfg, loss=replace(cfg.loss, **{param: value}))
            result = run_adast(point, seed, data, resume=snap if param == "lambda1" else None)
            snap = result.first_stage
            per_point[value].append(result.summary())
            log.info("sweep %s=%g seed=%d acc=%.4f", param, value, seed, result.test_acc)
    return [[value, *summary_rows(s)] for value, s in per_point.items()]


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    rows = sweep(cfg)
    _write_csv(out / f"sweep_{cfg.run.sweep_param}.csv", (cfg.run.sweep_param, *SUMMARY_HEADER),
               ([repr(r[0]), r[1], *(repr(v) for v in r[2:])] for r in rows))
    for r in rows:
        print(f"{cfg.run.sweep_param}={r[0]:g}: ACC {100 * r[2]:.2f} ± {100 * r[3]:.2f}")
    return 0


def embedding_rows(model, ds, domain: str):
    """(domain, true, pred, *features) per record, features taken after the
    domain's attention module and flattened to d*l values."""
    if ds.epoch_len != model.arch.epoch_len:
        raise CompatibilityError(
            f"{domain} dataset has T={ds.epoch_len}, checkpoint expects T={model.arch.epoch_len}")
    if ds.n_classes != model.arch.n_classes:
        raise CompatibilityError(
            f"{domain} dataset has K={ds.n_classes}, checkpoint expects K={model.arch.n_classes}")
    forward = model.forward_target if domain == "target" else model.forward_source
    model.eval()
    with no_grad():
        for start in range(0, len(ds), 256):
            x = ds.signals[start:start + 256].astype(np.float64)[:, None, :]
            feat, p = forward(Tensor(x))
            flat = feat.data.reshape(len(x), -1)
            pred = np.argmax(p.data, axis=1)
            for i in range(len(x)):
                yield [domain, int(ds.stages[start + i]), int(pred[i]), *map(repr, flat[i].tolist())]


def cmd_dump_embeddings(cfg: ExperimentConfig, args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.source or args.target:
        sets = [(role, load_dataset(path, role)) for role, path in
                (("source", args.source), ("target", args.target)) if path]
    else:
        data = prepare_data(cfg)
        sets = [("source", data.source), ("target", data.target)]
    d, l = model.arch.feature_shape()
    out = Path(args.file)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ["domain", "true", "pred", *(f"f{i}" for i in range(d * l))]
    rows = (row for role, ds in sets for row in embedding_rows(model, ds, role))
    _write_csv(out, header, rows)
    print(f"wrote {sum(len(ds) for _, ds in sets)} rows x {d * l} features to {out}")
    return 0


# -- argument parsing ----------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out", help="output directory (run.out_dir)")
    common.add_argument("--seed", type=int, help="single seed")
    common.add_argument("--seeds", help="comma-separated seeds")
    common.add_argument("--mode", choices=("adast", "source-only"))
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    common.add_argument("--parallel-seeds", type=int, help="worker processes for seed replicas")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="adast", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write synthetic source/target epoch files")
    g.add_argument("--gen-seed", type=int, help="generator seed (synth.seed)")
    g.add_argument("--subjects", type=int)
    g.add_argument("--epochs-per-subject", type=int)
    g.add_argument("--t", type=int, help="samples per epoch")
    g.add_argument("--shift-scale", type=float, help="target amplitude scale")
    g.add_argument("--shift-freq", type=float, help="target frequency offset in Hz")
    g.add_argument("--shift-noise", type=float, help="extra target noise sigma")
    g.add_argument("--resample", type=float, help="target resampling factor")

    sub.add_parser("train", parents=[common], help="train one model per seed")
    e = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    e.add_argument("--domain", default="target", choices=("source", "target"))
    sub.add_parser("ablation", parents=[common], help="train every ablation variant")
    sub.add_parser("sweep", parents=[common], help="grid over run.sweep_param")
    d = sub.add_parser("dump-embeddings", parents=[common], help="write post-attention features as CSV")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--file", required=True, help="CSV to write")
    d.add_argument("--source", help="source epoch file (default: from config)")
    d.add_argument("--target", help="target epoch file (default: from config)")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
    "ablation": cmd_ablation, "sweep": cmd_sweep, "dump-embeddings": cmd_dump_embeddings,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg, args)
    except AdastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
