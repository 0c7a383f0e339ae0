"""Batch experiment driver.

Subcommands: gen-data (synthesize a channel dataset), train (fit a learned
pipeline and write a checkpoint + history CSV), eval (mean SE of selected
methods on the test split), sweep (eval across transmit power or feedback
budget), plot (render a results CSV to a vector figure).

Results CSVs always carry the columns (method, axis_value, mean_se, stderr,
n); powers are dBm at this boundary and linear milliwatts everywhere inside.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .channel import ClusterParams, generate_dataset, load_dataset, save_dataset
from .config import (
    ConfigError,
    SystemConfig,
    dbm_to_mw,
    mw_to_dbm,
    noise_power_from_psd,
    validate,
)
from .trainer import (
    evaluate,
    evaluate_baseline,
    load_checkpoint,
    save_checkpoint,
    split_dataset,
    train,
)

__all__ = ["main", "run_subcommand", "select_codebook", "cache_dir"]

METHODS = ("gnn", "mlp", "mo_pcsi", "mo_omp", "fully_digital")
LEARNED = ("gnn", "mlp")
CSV_COLUMNS = ("method", "axis_value", "mean_se", "stderr", "n")

# Quantizer geometries from the reference configuration (Kp=16, NRFr=2,
# L=16, i.e. 1024 real entries): budget -> (codebook size, codeword length).
REFERENCE_CODEBOOKS = {
    32: (2, 32), 64: (4, 32), 96: (8, 32), 128: (4, 16), 192: (8, 16),
    256: (16, 16), 512: (16, 8), 768: (8, 4), 1024: (16, 4),
}


class CliError(Exception):
    """Fatal CLI problem; message goes to stderr, exit code is 1."""


def cache_dir() -> Path:
    """Dataset cache directory (override with FDBEAM_CACHE_DIR)."""
    env = os.environ.get("FDBEAM_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "fdbeam"


def select_codebook(total_entries: int, budget: int) -> tuple[int, int]:
    """Pick (D, V) so that (total/V) * log2(D) == budget.

    Uses the reference table when the dimensions match it; otherwise prefers
    a 16-word codebook, falling back to smaller then larger power-of-two
    sizes.
    """
    if total_entries == 1024 and budget in REFERENCE_CODEBOOKS:
        return REFERENCE_CODEBOOKS[budget]
    for d in (16, 8, 4, 2, 32, 64, 128, 256):
        bits = d.bit_length() - 1
        if (total_entries * bits) % budget != 0:
            continue
        v = total_entries * bits // budget
        if v >= 1 and total_entries % v == 0:
            return d, v
    raise CliError(
        f"no power-of-two codebook realizes {budget} bits over {total_entries} entries"
    )


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, required=True, help="JSON config file")
    for f in SystemConfig.__dataclass_fields__.values():
        kind = float if f.type == "float" else int
        p.add_argument(f"--{f.name.lower().replace('_', '-')}", dest=f"cfg_{f.name}",
                       type=kind, default=None, help=f"override config field {f.name}")
    p.add_argument("--rho-dbm", type=float, default=None,
                   help="data transmit power in dBm (overrides rho)")
    p.add_argument("--rho-p-dbm", type=float, default=None,
                   help="pilot transmit power in dBm (overrides rho_p)")
    p.add_argument("--noise-psd-dbm-per-hz", type=float, default=None,
                   help="noise PSD; with --bandwidth-hz sets sigma_n2 per subchannel")
    p.add_argument("--bandwidth-hz", type=float, default=None)


def _load_config(args) -> SystemConfig:
    path: Path = args.config
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CliError(f"config file {path} is not valid JSON: {e}") from e
    try:
        cfg = SystemConfig.from_dict(raw)
    except (ConfigError, TypeError) as e:
        raise CliError(f"bad config: {e}") from e
    overrides = {
        name: getattr(args, f"cfg_{name}")
        for name in SystemConfig.__dataclass_fields__
        if getattr(args, f"cfg_{name}", None) is not None
    }
    if args.rho_dbm is not None:
        overrides["rho"] = dbm_to_mw(args.rho_dbm)
    if args.rho_p_dbm is not None:
        overrides["rho_p"] = dbm_to_mw(args.rho_p_dbm)
    if args.noise_psd_dbm_per_hz is not None:
        if args.bandwidth_hz is None:
            raise CliError("--noise-psd-dbm-per-hz requires --bandwidth-hz")
        k = overrides.get("K", raw.get("K", SystemConfig.K))
        overrides["sigma_n2"] = dbm_to_mw(
            noise_power_from_psd(args.noise_psd_dbm_per_hz, args.bandwidth_hz, k)
        )
    if overrides:
        cfg = cfg.replace(**overrides)
    try:
        return validate(cfg)
    except ConfigError as e:
        raise CliError(f"invalid config: {e}") from e


def _resolve_data(path: Path) -> Path:
    if path.exists():
        return path
    cached = cache_dir() / path
    if cached.exists():
        return cached
    raise CliError(f"dataset not found: {path} (also looked in {cache_dir()})")


def _write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def _cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    params = ClusterParams(
        num_clusters=args.clusters,
        rays_per_cluster=args.rays,
        angle_spread_deg=args.angle_spread_deg,
        max_delay_s=args.max_delay_ns * 1e-9,
        bandwidth_hz=args.bandwidth_hz or 100e6,
    )
    data = generate_dataset(cfg, params, args.samples)
    out = args.out if args.out is not None else cache_dir() / "channels.bin"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, data)
    print(f"wrote {args.samples} realizations to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    data = load_dataset(_resolve_data(args.data), cfg)
    state, history = train(
        cfg, data, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        arch=args.arch, assert_constraints=args.assert_constraints,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, args.out)
    if args.history is not None:
        args.history.parent.mkdir(parents=True, exist_ok=True)
        with open(args.history, "w", newline="") as f:
            writer = csv.DictWriter(
                f, fieldnames=["epoch", "train_loss", "train_lv", "train_rate", "val_se"]
            )
            writer.writeheader()
            writer.writerows(history)
    print(
        f"trained {args.arch} for {args.epochs} epochs; "
        f"best validation SE {state.best_val_se:.4f} -> {args.out}"
    )
    return 0


def _method_rows(method, cfg, data, split, rho_mw_list, ckpt_state, args):
    if method in LEARNED:
        if ckpt_state is None:
            raise CliError(f"method {method} needs --checkpoint")
        if ckpt_state.arch != method:
            raise CliError(
                f"checkpoint holds a {ckpt_state.arch!r} model, not {method!r}"
            )
        pipeline = ckpt_state.best_pipeline()
        return evaluate(pipeline, data, split.test, rho_mw_list, cfg)
    pipeline = ckpt_state.best_pipeline() if ckpt_state is not None else None
    if method == "mo_omp" and pipeline is None:
        raise CliError("method mo_omp needs --checkpoint for its pilot stage")
    return evaluate_baseline(
        method, data, split.test, rho_mw_list, cfg, pipeline=pipeline,
        mo_iters=args.mo_iters, n_paths=args.n_paths,
    )


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    data = load_dataset(_resolve_data(args.data), cfg)
    split = split_dataset(data.shape[0], cfg.seed)
    methods = _parse_methods(args.methods)
    ckpt_state = load_checkpoint(args.checkpoint, cfg) if args.checkpoint else None
    rows = []
    for method in methods:
        for r in _method_rows(method, cfg, data, split, [cfg.rho], ckpt_state, args):
            rows.append({
                "method": method, "axis_value": mw_to_dbm(r["rho"]),
                "mean_se": r["mean_se"], "stderr": r["stderr"], "n": r["n"],
            })
    _write_rows(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _parse_methods(spec: str) -> list[str]:
    methods = [m.strip() for m in spec.split(",") if m.strip()]
    if not methods:
        raise CliError("no methods given")
    for m in methods:
        if m not in METHODS:
            raise CliError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    return methods


def _sweep_point(method, value, args):
    """One (method, axis value) sweep cell; returns result rows."""
    cfg = _load_config(args)
    if args.axis == "transmit_power_dbm":
        data = load_dataset(_resolve_data(args.data), cfg)
        split = split_dataset(data.shape[0], cfg.seed)
        ckpt_state = load_checkpoint(args.checkpoint, cfg) if args.checkpoint else None
        rho_mw = dbm_to_mw(value)
        rows = _method_rows(method, cfg, data, split, [rho_mw], ckpt_state, args)
        return [{
            "method": method, "axis_value": value, "mean_se": r["mean_se"],
            "stderr": r["stderr"], "n": r["n"],
        } for r in rows]

    # feedback_bits axis: re-derive the quantizer geometry, retrain learned
    # methods at this budget, reuse classical ones unchanged
    budget = int(value)
    total = 2 * cfg.Kp * cfg.NRFr * cfg.L
    d, v = select_codebook(total, budget)
    try:
        cfg = validate(cfg.replace(B=budget, D=d, V=v))
    except ConfigError as e:
        raise CliError(f"feedback budget {budget} is infeasible: {e}") from e
    data = load_dataset(_resolve_data(args.data), cfg)
    split = split_dataset(data.shape[0], cfg.seed)
    if method in LEARNED:
        state, _ = train(
            cfg, data, epochs=args.epochs, batch_size=args.batch_size,
            lr=args.lr, arch=method,
        )
        pipeline = state.best_pipeline()
        rows = evaluate(pipeline, data, split.test, [cfg.rho], cfg)
    else:
        ckpt_state = load_checkpoint(args.checkpoint, cfg) if args.checkpoint else None
        pipeline = ckpt_state.best_pipeline() if ckpt_state is not None else None
        if method == "mo_omp" and pipeline is None:
            raise CliError("method mo_omp needs --checkpoint for its pilot stage")
        rows = evaluate_baseline(
            method, data, split.test, [cfg.rho], cfg, pipeline=pipeline,
            mo_iters=args.mo_iters, n_paths=args.n_paths,
        )
    return [{
        "method": method, "axis_value": budget, "mean_se": r["mean_se"],
        "stderr": r["stderr"], "n": r["n"],
    } for r in rows]


def _cmd_sweep(args) -> int:
    methods = _parse_methods(args.methods)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("no sweep values given")
    points = [(m, v) for m in methods for v in values]
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_cell, [(m, v, args) for m, v in points]))
    else:
        results = [_sweep_point(m, v, args) for m, v in points]
    rows = [row for cell in results for row in cell]
    _write_rows(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _sweep_cell(mv_args):
    method, value, args = mv_args
    return _sweep_point(method, value, args)


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not args.results.exists():
        raise CliError(f"results file not found: {args.results}")
    with open(args.results, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise CliError(f"results file {args.results} is empty")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    methods = sorted({r["method"] for r in rows})
    for method in methods:
        pts = sorted(
            ((float(r["axis_value"]), float(r["mean_se"]), float(r["stderr"]))
             for r in rows if r["method"] == method)
        )
        x, se, err = zip(*pts)
        ax.errorbar(x, se, yerr=err, marker="o", capsize=2, label=method)
    ax.set_xlabel(args.xlabel)
    ax.set_ylabel("Spectral efficiency (bits/s/Hz)")
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(args.out)
    print(f"wrote figure to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdbeam",
        description="Learned pilot/feedback/hybrid-beamforming experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic channel dataset")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, default=None,
                   help="output dataset path (default: cache dir)")
    p.add_argument("--samples", type=int, default=4000)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--rays", type=int, default=5)
    p.add_argument("--angle-spread-deg", type=float, default=7.5)
    p.add_argument("--max-delay-ns", type=float, default=100.0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a learned pipeline")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--history", type=Path, default=None, help="history CSV path")
    p.add_argument("--arch", choices=LEARNED, default="gnn")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--assert-constraints", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate methods on the test split")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--methods", default="gnn")
    p.add_argument("--out", type=Path, required=True, help="results CSV path")
    p.add_argument("--mo-iters", type=int, default=200)
    p.add_argument("--n-paths", type=int, default=8)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="sweep transmit power or feedback budget")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--axis", choices=("transmit_power_dbm", "feedback_bits"),
                   required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--methods", default="gnn")
    p.add_argument("--out", type=Path, required=True, help="results CSV path")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--mo-iters", type=int, default=200)
    p.add_argument("--n-paths", type=int, default=8)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", help="render a results CSV to a vector figure")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="figure path (.pdf/.svg)")
    p.add_argument("--xlabel", default="Axis value")
    p.set_defaults(func=_cmd_plot)
    return parser


def run_subcommand(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_subcommand(sys.argv[1:]))
