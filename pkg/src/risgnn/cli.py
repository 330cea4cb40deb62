"""Command-line experiment runner: generate, train, eval, sweep.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical abort.
Outputs default to $RISGNN_OUT (or ./results) when --out is not given.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import baselines, datasets
from . import hetgnn as hg
from .config import InvalidArgument, SystemConfig, load_config
from .training import NumericalAbort, TrainConfig, evaluate, train, train_arrays, evaluate_arrays

log = logging.getLogger("risgnn")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4
CSV_COLUMNS = ("sweep_var", "method", "seed", "mean_wsr", "std_wsr")
OUT_ENV = "RISGNN_OUT"


class UsageError(Exception):
    pass


def output_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "results"))


def profile_path(name: str) -> Path:
    return Path(str(resources.files("risgnn") / "profiles" / name))


def resolve_config(path, default: str, what: str) -> Path:
    """A file path, or the name of a bundled profile such as desk.yaml."""
    if path is None:
        return profile_path(default)
    path = Path(path)
    if path.exists():
        return path
    if path.parent == Path(".") and profile_path(path.name).exists():
        return profile_path(path.name)
    raise UsageError(f"{what} not found: {path}")


def read_system_config(path) -> SystemConfig:
    return load_config(resolve_config(path, "system.yaml", "config file"))


def read_train_config(path) -> tuple[TrainConfig, hg.ModelConfig]:
    path = resolve_config(path, "train.yaml", "training config")
    with open(path) as fh:
        d = yaml.safe_load(fh) or {}
    model = d.pop("model", {}) or {}
    return TrainConfig.from_dict(d), hg.ModelConfig(**model)


def positive(flag: str, value: int) -> int:
    if value < 1:
        raise UsageError(f"{flag} must be >= 1, got {value}")
    return value


# -- CSV ---------------------------------------------------------------------------


def write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["sweep_var"] = float(row["sweep_var"])
        row["seed"] = int(row["seed"])
        row["mean_wsr"] = float(row["mean_wsr"])
        row["std_wsr"] = float(row["std_wsr"])
    return rows


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def plot_rows(rows: list[dict], xlabel: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for method in dict.fromkeys(r["method"] for r in rows):
        pts = sorted((r["sweep_var"], r["mean_wsr"]) for r in rows if r["method"] == method)
        xs = sorted({x for x, _ in pts})
        ys = [np.mean([y for x2, y in pts if x2 == x]) for x in xs]
        ax.plot(xs, ys, marker="o", label=method)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("weighted sum rate (bit/s/Hz)")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- commands -----------------------------------------------------------------------


def cmd_generate(args) -> int:
    n = positive("--samples", args.samples)
    cfg = read_system_config(args.config)
    out = Path(args.out) if args.out else output_dir() / "dataset.mrds"
    out.parent.mkdir(parents=True, exist_ok=True)
    datasets.generate(cfg, n, args.seed, out, n_val=args.validation)
    print(json.dumps({"path": str(out), "count": n, "config": cfg.to_dict()}, indent=2))
    return 0


def _make_model(cfg, args, mcfg, seed):
    if args.kind == "flat":
        return hg.build_model(cfg, "flat", seed, widths=tuple(args.widths))
    return hg.build_model(cfg, "hetgnn", seed, mcfg, fixed_ris=args.fixed_ris)


def cmd_train(args) -> int:
    ds = datasets.load(args.data)
    tcfg, mcfg = read_train_config(args.train_config)
    overrides = {k: getattr(args, k) for k in ("epochs", "seed") if getattr(args, k) is not None}
    if overrides:
        tcfg = TrainConfig.from_dict({**tcfg.to_dict(), **overrides})
    if args.resume:
        model, _ = hg.load_checkpoint(args.resume)
    else:
        model = _make_model(ds.cfg, args, mcfg, tcfg.seed)
    out = Path(args.out) if args.out else output_dir() / "model.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".jsonl")
    log_path.unlink(missing_ok=True)
    model, history = train(ds, model, tcfg, log_path, n_train=args.n_train)
    metrics = evaluate(ds.validation if len(ds.validation) else ds.train, model)
    hg.save_checkpoint(model, out, extra={"train": tcfg.to_dict(), "val_wsr": metrics.wsr_hard})
    print(json.dumps({"checkpoint": str(out), "log": str(log_path), **metrics.as_dict()}, indent=2))
    return 0


def cmd_eval(args) -> int:
    model, _ = hg.load_checkpoint(args.checkpoint)
    ds = datasets.load(args.data, model.cfg)
    split = ds.validation if len(ds.validation) else ds.train
    metrics = evaluate(split, model)
    report = {"method": model.kind, **metrics.as_dict()}
    if args.oracle:
        report.update(oracle_report(model, split, min(args.oracle_samples, len(split))))
    rows = [{"sweep_var": 0.0, "method": model.kind, "seed": 0,
             "mean_wsr": metrics.wsr_hard, "std_wsr": metrics.wsr_hard_std}]
    if args.out:
        write_rows(Path(args.out), rows)
    print(json.dumps(report, indent=2))
    return 0


def oracle_report(model, split, n: int) -> dict:
    """Association-optimality gap of the hardened network association on n samples."""
    import torch

    cfg = model.cfg
    H = split.H_cas()[:n]
    with torch.no_grad():
        out = model(hg.as_tensor(H))
    theta = out.theta.numpy()
    U = out.U_hard.numpy()
    own, best = [], []
    for s in range(n):
        a, b = baselines.association_gap(split[s], theta[s], U[s], cfg)
        own.append(a)
        best.append(b)
    own, best = np.array(own), np.array(best)
    return {"oracle_samples": n, "association_wsr": float(own.mean()), "oracle_wsr": float(best.mean()),
            "oracle_ratio": float(own.mean() / best.mean()),
            "oracle_gap_nonnegative": float(np.mean(best - own >= -1e-12 * np.abs(best)))}


# -- sweeps -------------------------------------------------------------------------


def _sweep_point(job: dict) -> list[dict]:
    """One grid point: train/evaluate every method on shared data. Runs in a worker."""
    cfg = SystemConfig.from_dict(job["config"])
    tcfg = TrainConfig.from_dict(job["train"])
    mcfg = hg.ModelConfig(**job["model"])
    seed, var, kind = job["seed"], job["sweep_var"], job["kind"]
    H_tr, D_tr, H_val, D_val = job["data"]
    rows = []

    def add(method, values):
        rows.append({"sweep_var": var, "method": method, "seed": seed,
                     "mean_wsr": float(np.mean(values)), "std_wsr": float(np.std(values, ddof=1))})

    add("random-wmmse", baselines.random_phase_wsr(H_val, D_val, cfg, seed))
    gnn = hg.build_model(cfg, "hetgnn", seed, mcfg)
    gnn, _ = train_arrays(gnn, tcfg, H_tr, D_tr, H_val, D_val, p0_wsr=job.get("p0_wsr"))
    add("gnn", evaluate_arrays(gnn, H_val, D_val).per_sample)
    if kind == "antennas":
        fixed = hg.build_model(cfg, "hetgnn", seed, mcfg, fixed_ris=0)
        fixed, _ = train_arrays(fixed, tcfg, H_tr, D_tr, H_val, D_val)
        add("fixed-ris", evaluate_arrays(fixed, H_val, D_val).per_sample)
    if kind == "samples":
        for size, widths in baselines.FLAT_SIZES.items():
            flat = hg.build_model(cfg, "flat", seed, widths=widths)
            flat, _ = train_arrays(flat, tcfg, H_tr, D_tr, H_val, D_val)
            add(f"flat-{size}", evaluate_arrays(flat, H_val, D_val).per_sample)
    return rows


def _arrays(cfg: SystemConfig, n_train: int, n_val: int, seed: int):
    """Train/validation channel arrays drawn with the dataset seeding rule."""
    reals = [datasets.sample(cfg, seed, i) for i in range(n_train + n_val)]
    H = np.stack([r.H_cas for r in reals])
    D = np.stack([r.distances for r in reals])
    return H[:n_train], D[:n_train], H[n_train:], D[n_train:]


def sweep_jobs(kind: str, base: SystemConfig, grid: list[float], tcfg: TrainConfig, mcfg: hg.ModelConfig,
               seeds: list[int], n_train: int, n_val: int) -> list[dict]:
    jobs = []
    for seed in seeds:
        tjob = {**tcfg.to_dict(), "seed": seed}
        if kind == "power":
            data = _arrays(base, n_train, n_val, seed)  # channels do not depend on power
            for p in grid:
                jobs.append({"kind": kind, "sweep_var": float(p), "seed": seed, "data": data,
                             "config": base.with_power_dbm(p).to_dict(), "train": tjob, "model": vars(mcfg)})
        elif kind == "antennas":
            for n_t in grid:
                cfg = base.replace(n_t=int(n_t))
                jobs.append({"kind": kind, "sweep_var": float(n_t), "seed": seed,
                             "data": _arrays(cfg, n_train, n_val, seed),
                             "config": cfg.to_dict(), "train": tjob, "model": vars(mcfg)})
        elif kind == "samples":
            H_tr, D_tr, H_val, D_val = _arrays(base, int(max(grid)), n_val, seed)
            for n in grid:
                n = int(n)
                jobs.append({"kind": kind, "sweep_var": float(n), "seed": seed,
                             "data": (H_tr[:n], D_tr[:n], H_val, D_val),
                             "config": base.to_dict(), "train": tjob, "model": vars(mcfg)})
    return jobs


def cmd_sweep(args) -> int:
    if not args.grid:
        raise UsageError("--grid must name at least one value")
    base = read_system_config(args.config)
    tcfg, mcfg = read_train_config(args.train_config)
    if args.epochs is not None:
        tcfg = TrainConfig.from_dict({**tcfg.to_dict(), "epochs": args.epochs,
                                      "pretrain_epochs": min(tcfg.stage1_epochs, args.epochs)})
    positive("--samples", args.samples)
    positive("--validation", args.validation)
    positive("--jobs", args.jobs)
    elements = args.elements or [base.n_elements]
    rows: list[dict] = []
    for m in elements:
        cfg = base.with_elements(m) if m != base.n_elements else base
        jobs = sweep_jobs(args.kind, cfg, args.grid, tcfg, mcfg, args.seeds, args.samples, args.validation)
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                results = list(pool.map(_sweep_point, jobs))
        else:
            results = [_sweep_point(job) for job in jobs]
        for part in results:
            for row in part:
                if len(elements) > 1:
                    row["method"] = f"{row['method']}[M={m}]"
                rows.append(row)
    out = Path(args.out) if args.out else output_dir() / f"sweep_{args.kind}.csv"
    write_rows(out, rows)
    xlabel = {"power": "P_max (dBm)", "antennas": "BS antennas N_t", "samples": "training samples"}[args.kind]
    plot_rows(rows, xlabel, out.with_suffix(".png"))
    print(json.dumps({"csv": str(out), "plot": str(out.with_suffix(".png")), "rows": len(rows)}))
    return 0


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="risgnn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a channel dataset")
    g.add_argument("--config", required=True, help="system config YAML or bundled profile name")
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--validation", type=int, default=None, help="validation count (default n // 11)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output .mrds path")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--train-config", help="training YAML (default: bundled desk profile)")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--log", help="JSONL training log path (default: next to the checkpoint)")
    t.add_argument("--kind", choices=("hetgnn", "flat"), default="hetgnn")
    t.add_argument("--widths", type=int, nargs="+", default=[64, 64], help="flat network hidden widths")
    t.add_argument("--fixed-ris", type=int, default=None, help="pin every user to this RIS")
    t.add_argument("--n-train", type=int, default=None, help="use only the first N training samples")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--resume", help="start from this checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--oracle", action="store_true", help="also run the exhaustive association oracle")
    e.add_argument("--oracle-samples", type=int, default=256)
    e.add_argument("--out", help="CSV report path")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run a parameter sweep and write CSV + plot")
    s.add_argument("kind", choices=("power", "antennas", "samples"))
    s.add_argument("--config", help="base system config YAML (default: bundled profile)")
    s.add_argument("--train-config")
    s.add_argument("--grid", type=float, nargs="*", required=True)
    s.add_argument("--elements", type=int, nargs="+", help="RIS sizes M (power sweep), one curve each")
    s.add_argument("--seeds", type=int, nargs="+", default=[0])
    s.add_argument("--samples", type=int, default=10000, help="training samples per grid point")
    s.add_argument("--validation", type=int, default=1000)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="CSV path")
    s.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidArgument) as exc:
        print(f"risgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except datasets.DatasetError as exc:
        print(f"risgnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(f"risgnn: numerical abort: {exc}", file=sys.stderr)
        print(json.dumps(exc.snapshot, indent=2, default=str), file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
