#!/usr/bin/env python3
"""
Script name: detsum.py

Inverse determinant sums, DMT bounds and simulations for matrix lattice codes.

Verbs:
- construct   build a code and report its geometry (rank, covolume, NVD scan)
- enumerate   count lattice points in balls
- sum         evaluate one sum family at a radius or over a radius grid
- fit         fit K M^s (log M)^t to a sum curve CSV
- envelope    W_i envelope exponents from an s(l) table
- dmt         DMT lower-bound lines and envelopes on an r grid
- threshold   SNR threshold exponent (t + d)/d
- simulate    Monte Carlo block error rate
- run         full experiment from a preset or config file

Usage:
    python scripts/detsum.py dmt --a 8 --b 4 --k 8 --T 2 --grid 0:2:0.5
    python scripts/detsum.py threshold --d 8 --t 4
    python scripts/detsum.py sum --code gaussian-diagonal --n 1 --family shifted --m 2 --c 0 --M 1
    python scripts/detsum.py run --preset golden --param.runtime.threads=4

Exit codes: 0 success, 1 computation error, 2 usage error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

# Add project root to path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.bounds import (
    dmt_envelope, dmt_ml_bound, dmt_naive_bound, growth_fit, snr_threshold, wi_envelope,
)
from src.channel import ChannelConfig, simulate
from src.codes import CODE_KINDS, NORMALIZATIONS, CodeSpec, nvd_scan
from src.config import load_config, preset_path
from src.detsum import FAMILIES, SumCurve, SumSpec, evaluate, sum_curve
from src.errors import DetsumError, stage
from src.lattice import DEFAULT_BUDGET, save_basis_json
from src.pipeline import ExperimentConfig, run
from src.utils import parse_geometric_grid, parse_linear_grid, setup_logging


logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad flag combination detected after parsing"""


def emit(value, args, table: bool = False):
    """Write a scalar/dict as JSON or a DataFrame as CSV to --out or stdout"""
    fmt = args.format or ("csv" if table else "json")
    if isinstance(value, pd.DataFrame):
        text = value.to_csv(index=False, float_format="%.17g", lineterminator="\n") if fmt == "csv" \
            else json.dumps(value.to_dict(orient="records"), sort_keys=True) + "\n"
    elif fmt == "csv":
        if isinstance(value, dict):
            text = pd.DataFrame([value]).to_csv(index=False, float_format="%.17g", lineterminator="\n")
        else:
            text = f"value\n{value!r}\n" if isinstance(value, float) else f"value\n{value}\n"
    else:
        text = json.dumps(value, sort_keys=True, default=str) + "\n"

    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8", newline="\n")
        logger.info(f"Output written to {out}")
    else:
        sys.stdout.write(text)


def code_from_args(args):
    params = {}
    if args.n is not None:
        params["n"] = args.n
    if args.basis:
        params["path"] = args.basis
    spec = CodeSpec(kind=args.code, params=params, normalization=args.normalization)
    return spec.resolve()


def radii_from_args(args) -> Optional[List[float]]:
    if getattr(args, "radii", None):
        return parse_geometric_grid(args.radii)
    return None


# ----------------------------------------------------------------------
# verbs
# ----------------------------------------------------------------------

def cmd_construct(args):
    lattice = code_from_args(args)
    summary = {
        "name": lattice.name, "n": lattice.n, "T": lattice.T, "k": lattice.k,
        "covolume": lattice.covolume, "min_norm_sq": lattice.min_norm_sq,
    }
    if args.nvd_radius:
        scan = nvd_scan(lattice, args.nvd_radius, budget=args.budget)
        summary.update({"min_abs_det": scan.min_abs_det, "nvd_argmin": list(scan.argmin),
                        "nvd_points": scan.points, "nvd_attained_by": scan.attained_by})
    if args.save_basis:
        save_basis_json(lattice, args.save_basis)
    emit(summary, args)


def cmd_enumerate(args):
    lattice = code_from_args(args)
    radii = radii_from_args(args) or [args.M]
    counts = lattice.shell_counts(radii, budget=args.budget)
    if len(radii) == 1 and not args.radii:
        emit(counts[0], args)
    else:
        emit(pd.DataFrame({"M": radii, "count": counts}), args, table=True)


def cmd_sum(args):
    lattice = code_from_args(args)
    spec = SumSpec(family=args.family, m=args.m, c=args.c, i=args.i, M=args.M or 1.0,
                   dedup_signs=args.dedup_signs, skip_singular=args.skip_singular)
    radii = radii_from_args(args)
    if radii:
        curve = sum_curve(lattice, spec, radii, threads=args.threads, budget=args.budget)
        emit(curve.to_frame(), args, table=True)
        return
    if args.M is None:
        raise UsageError("sum needs --M or --radii")
    result = evaluate(lattice, spec, threads=args.threads, budget=args.budget)
    emit(result.value, args)


def cmd_fit(args):
    df = pd.read_csv(args.curve)
    if "curve" in df.columns and args.label:
        df = df[df["curve"] == args.label]
    fit = growth_fit(SumCurve.from_frame(df), log_term=not args.no_log_term)
    emit(fit.to_json(), args)


def _parse_s_items(items: List[str]) -> dict:
    table = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--s expects l=value, got '{item}'")
        l, s = item.split("=", 1)
        table[int(l)] = float(s)
    return table


def cmd_envelope(args):
    env = wi_envelope(args.n, args.k, args.m, _parse_s_items(args.s), indices=args.indices)
    if (args.format or "json") == "csv":
        emit(env.to_frame(), args, table=True)
    else:
        emit(env.to_json(), args)


def cmd_dmt(args):
    curves = []
    lines = args.line or []
    if not lines:
        if args.a is None:
            raise UsageError("dmt needs --a (or one or more --line a,b)")
        lines = [f"{args.a},{args.b}"]
    for line in lines:
        parts = line.split(",")
        a = float(parts[0])
        b = float(parts[1]) if len(parts) > 1 else 0.0
        if args.naive:
            curves.append(dmt_naive_bound(a, args.k, args.T, r_max=args.r_max))
        else:
            curves.append(dmt_ml_bound(a, b, args.k, args.T, r_max=args.r_max))
    curve = dmt_envelope(curves)
    if (args.format or "csv") == "json" and not args.grid:
        emit(curve.to_json(), args)
        return
    grid = parse_linear_grid(args.grid or f"0:{float(curve.r_max)}:0.1")
    emit(curve.to_frame(grid), args, table=True)


def cmd_threshold(args):
    exponent, value = snr_threshold(args.d, args.t, args.M if args.M is not None else 1.0)
    if args.M is None:
        emit(float(exponent), args)
    else:
        emit({"exponent": str(exponent), "exponent_value": float(exponent), "M": args.M,
              "threshold": value}, args)


def cmd_simulate(args):
    if args.preset or args.config:
        raw = load_config(str(preset_path(args.preset)) if args.preset else args.config)
        spec = CodeSpec.from_dict(raw["code"])
        lattice = spec.resolve()
        channel = dict((raw.get("simulation") or {}).get("channel") or {})
        channel.setdefault("seed", int((raw.get("experiment") or {}).get("seed", 0)))
        cfg = ChannelConfig.from_dict(channel)
    else:
        lattice = code_from_args(args)
        if not args.snr:
            raise UsageError("simulate needs --snr start:stop:step (or --preset/--config)")
        cfg = ChannelConfig(
            n_t=lattice.n, n_r=args.n_r, T=lattice.T, snr_grid_db=parse_linear_grid(args.snr),
            trials_per_point=args.trials, seed=args.seed, decoder=args.decoder,
            r=args.r, radius=args.radius if args.r is None else None,
        )
    cfg.threads = args.threads
    result = simulate(lattice, cfg, show_progress=args.progress, budget=args.budget)
    emit(result.to_frame(), args, table=True)


def cmd_run(args, overrides: List[str]):
    if not (args.preset or args.config):
        raise UsageError("run needs --preset or --config")
    path = str(preset_path(args.preset)) if args.preset else args.config
    config = ExperimentConfig.from_file(path, overrides)
    log_cfg = config.raw.get("logging") or {}
    setup_logging(level=log_cfg.get("level", args.log_level), log_file=log_cfg.get("file"),
                  log_format=log_cfg.get("format"))
    if args.threads > 1:
        config.threads = args.threads
    config.progress = config.progress or args.progress
    report = run(config, output_dir=args.output or config.output_dir)
    emit({"report_dir": str(report.report_dir), "config_hash": report.config_hash}, args)


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["json", "csv"], default=None, help="machine output format")
    common.add_argument("--out", default=None, help="write output to this file instead of stdout")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--progress", action="store_true", help="progress counter on stderr")
    common.add_argument("--budget", type=float, default=DEFAULT_BUDGET, help="enumeration point budget")
    common.add_argument("--log-level", default="WARNING", help="logging level")

    code = argparse.ArgumentParser(add_help=False)
    code.add_argument("--code", choices=CODE_KINDS, default="golden", help="code construction")
    code.add_argument("--n", type=int, default=None, help="matrix size for diagonal codes")
    code.add_argument("--basis", default=None, help="basis JSON file for --code custom")
    code.add_argument("--normalization", choices=NORMALIZATIONS, default="raw")

    parser = argparse.ArgumentParser(
        description="Inverse determinant sums and DMT bounds for matrix lattice codes",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("construct", parents=[common, code], help="build a code")
    p.add_argument("--nvd-radius", type=float, default=0.0, help="scan min |det| over L(M)")
    p.add_argument("--save-basis", default=None, help="write the basis as JSON")

    p = sub.add_parser("enumerate", parents=[common, code], help="count lattice points")
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--radii", default=None, help="geometric grid start:factor:count")

    p = sub.add_parser("sum", parents=[common, code], help="evaluate a sum family")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--i", type=int, default=0)
    p.add_argument("--M", type=float, default=None)
    p.add_argument("--radii", default=None, help="geometric grid start:factor:count")
    p.add_argument("--dedup-signs", action="store_true")
    p.add_argument("--skip-singular", action="store_true")

    p = sub.add_parser("fit", parents=[common], help="growth fit of a curve CSV")
    p.add_argument("--curve", required=True, help="CSV with columns M, value (, pointCount)")
    p.add_argument("--label", default=None, help="curve label when the CSV holds several")
    p.add_argument("--no-log-term", action="store_true")

    p = sub.add_parser("envelope", parents=[common], help="W_i envelope")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--s", action="append", help="exponent s(l) as l=value, repeatable")
    p.add_argument("--indices", type=int, nargs="+", default=None)

    p = sub.add_parser("dmt", parents=[common], help="DMT lower bounds")
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--line", action="append", help="extra line 'a,b' for an envelope, repeatable")
    p.add_argument("--naive", action="store_true", help="naive lattice decoding bound")
    p.add_argument("--r-max", type=float, default=None)
    p.add_argument("--grid", default=None, help="linear grid start:stop:step")

    p = sub.add_parser("threshold", parents=[common], help="SNR threshold exponent")
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--M", type=float, default=None)

    p = sub.add_parser("simulate", parents=[common, code], help="Monte Carlo simulation")
    p.add_argument("--preset", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--n-r", type=int, default=2)
    p.add_argument("--snr", default=None, help="linear dB grid start:stop:step")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decoder", choices=["ml-exhaustive", "naive-lattice"], default="ml-exhaustive")
    p.add_argument("--r", type=float, default=None, help="multiplexing gain (scheme mode)")
    p.add_argument("--radius", type=float, default=1.0, help="fixed code radius")

    p = sub.add_parser("run", parents=[common], help="full experiment")
    p.add_argument("--preset", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--output", default=None, help="output directory (default: config, then $DETSUM_OUTPUT_DIR)")

    return parser


COMMANDS = {
    "construct": cmd_construct,
    "enumerate": cmd_enumerate,
    "sum": cmd_sum,
    "fit": cmd_fit,
    "envelope": cmd_envelope,
    "dmt": cmd_dmt,
    "threshold": cmd_threshold,
    "simulate": cmd_simulate,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        overrides = [x for x in extra if x.startswith("--param.")]
        unknown = [x for x in extra if not x.startswith("--param.")]
        if unknown:
            parser.error(f"unrecognized arguments: {' '.join(unknown)}")
        if overrides and args.verb != "run":
            parser.error(f"--param. overrides apply to 'run' only: {' '.join(overrides)}")
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(level=args.log_level)

    try:
        with stage(args.verb):
            if args.verb == "run":
                cmd_run(args, overrides)
            else:
                COMMANDS[args.verb](args)
    except UsageError as e:
        sys.stderr.write(f"usage error: {e}\n")
        return 2
    except DetsumError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except ValueError as e:
        # malformed grids and similar flag values
        sys.stderr.write(f"usage error: {e}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
