"""Command-line interface.

Exit codes: 0 success, 2 validation error (bad arguments, malformed inputs),
1 runtime failure.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .config import ExperimentConfig, config_from_mapping, describe_defaults, load_config
from .dynamics import AbcParams, HymodParams, NashParams, simulate
from .experiments import run_experiment_a, run_experiment_b, run_experiment_c
from .info import (
    DiscretizationSpec,
    conditional_mi,
    entropy,
    joint_histogram,
    mutual_information,
    transfer_entropy,
)
from .io import ForcingFormatError, load_forcing_csv, write_csv
from .synthetic import generate_synthetic_forcing

log = logging.getLogger(__name__)

DEFAULT_PARAMS = {
    "hymod": {"c_max": 150.0, "b_exp": 1.5, "alpha": 0.65, "k_quick": 0.4,
              "k_slow": 0.05, "n_quick": 3, "n_slow": 3},
    "nash": {"k1": 0.4, "k2": 0.4, "k3": 0.4},
    "abc": {"a": 0.4, "b": 0.2, "c": 0.1},
}


def _build_params(model: str, overrides: dict):
    values = dict(DEFAULT_PARAMS[model])
    for key, raw in overrides.items():
        if key not in values:
            raise ValueError(f"unknown {model} parameter {key!r}; choices: {sorted(values)}")
        values[key] = type(values[key])(raw)
    if model == "hymod":
        return HymodParams(**values)
    if model == "nash":
        return NashParams(np.array([values["k1"], values["k2"], values["k3"]]))
    return AbcParams(**values)


def _parse_overrides(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--param expects name=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        out[key.strip()] = raw.strip()
    return out


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_mapping({})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.scale is not None:
        cfg.scale = args.scale
    if args.out is not None:
        cfg.out_dir = args.out
    if args.forcing is not None:
        cfg.forcing_csv = args.forcing
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.__post_init__()
    return cfg


def cmd_simulate(args) -> int:
    params = _build_params(args.model, _parse_overrides(args.param))
    if args.forcing:
        forcing = load_forcing_csv(args.forcing)
    else:
        forcing = generate_synthetic_forcing(args.seed or 0, args.days)
    result = simulate(args.model, params, forcing, warmup=args.warmup)
    out_dir = args.out or "out"
    path = write_csv(os.path.join(out_dir, "streamflow.csv"), ["day", "flow_mm"],
                     [(d, result.streamflow.values[d]) for d in range(forcing.n_days)])
    print(f"wrote {path} ({forcing.n_days} days, max residual "
          f"{np.abs(result.mass_residual).max():.3g} mm)")
    return 0


def _load_column(path, name):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        cols = [h.strip() for h in header]
        if name not in cols:
            raise ValueError(f"{path}: no column {name!r}; available: {cols}")
        idx = cols.index(name)
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                values.append(float(row[idx]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return np.asarray(values)


def cmd_info(args) -> int:
    spec = DiscretizationSpec(scheme=args.scheme, bins=args.bins)
    x = _load_column(args.data, args.x)
    rows = []

    def add(name, value):
        rows.append((name, value.value, spec.scheme, spec.bins, value.n_samples))

    h_x = entropy(joint_histogram([x], spec))
    add(f"entropy[{args.x}]", h_x)
    if args.y:
        y = _load_column(args.data, args.y)
        add(f"entropy[{args.y}]", entropy(joint_histogram([y], spec)))
        add(f"mutual_information[{args.x};{args.y}]", mutual_information(x, y, spec))
        if args.z:
            z = _load_column(args.data, args.z)
            add(f"conditional_mi[{args.x};{args.y}|{args.z}]", conditional_mi(x, y, z, spec))
        if args.lag:
            add(f"transfer_entropy[{args.x}->{args.y}, lag={args.lag}]",
                transfer_entropy(x, y, args.lag, spec))
    header = ["statistic", "value_nats", "scheme", "bins", "n_samples"]
    if args.out:
        path = write_csv(os.path.join(args.out, "info_report.csv"), header, rows)
        print(f"wrote {path}")
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(str(v) for v in row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infobench",
        description="Information-theoretic benchmarking of rainfall-runoff models",
        epilog="Config file keys (defaults):\n" + describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one model over a forcing record")
    sim.add_argument("--model", choices=("hymod", "nash", "abc"), required=True)
    sim.add_argument("--forcing", help="forcing CSV (day,precip_mm,pet_mm)")
    sim.add_argument("--days", type=int, default=1000,
                     help="synthetic forcing length when no file is given")
    sim.add_argument("--seed", type=int, help="synthetic forcing seed")
    sim.add_argument("--warmup", type=int, default=0)
    sim.add_argument("--param", action="append", metavar="NAME=VALUE",
                     help="model parameter override (repeatable)")
    sim.add_argument("--out", help="output directory (default: out)")
    sim.set_defaults(func=cmd_simulate)

    for name, runner in (("experiment-a", run_experiment_a),
                         ("experiment-b", run_experiment_b),
                         ("experiment-c", run_experiment_c)):
        sp = sub.add_parser(name, help=f"run {name.replace('-', ' ')}")
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--scale", choices=("desk", "full"))
        sp.add_argument("--out")
        sp.add_argument("--forcing")
        sp.add_argument("--workers", type=int)
        sp.set_defaults(func=lambda args, r=runner: _run_experiment(args, r))

    info = sub.add_parser("info", help="information statistics between CSV columns")
    info.add_argument("--data", required=True, help="CSV file with a header row")
    info.add_argument("--x", required=True, help="column name")
    info.add_argument("--y", help="second column name")
    info.add_argument("--z", help="conditioning column name")
    info.add_argument("--lag", type=int, default=0,
                      help="transfer-entropy lag x->y (0: skip)")
    info.add_argument("--bins", type=int, default=20)
    info.add_argument("--scheme", choices=("quantile", "fixed_width"), default="quantile")
    info.add_argument("--out", help="write info_report.csv here instead of stdout")
    info.set_defaults(func=cmd_info)
    return parser


def _run_experiment(args, runner) -> int:
    cfg = _experiment_config(args)
    runner(cfg)
    print(f"experiment complete; outputs in {cfg.out_dir}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ForcingFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.exception("experiment failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
