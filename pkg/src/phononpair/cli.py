"""Command-line front end: ``phononpair {run,sweep,analyze,report,preset}``."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .config import ConfigError, ExperimentConfig, SweepSpec, load_config, preset
from .protocol import ProtocolError
from .runner import BundleError, RunError, analyze_bundle, columns_help, report_bundle, run_experiment

WORKERS_ENV = "PHONONPAIR_WORKERS"

EPILOG = f"""\
The worker count defaults to min(cpu count, 8) and is overridden by the
{WORKERS_ENV} environment variable. Results do not depend on it.

Output files (all times in seconds):
{columns_help()}
"""


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def parse_sweep(text: str) -> SweepSpec:
    """``AXIS=START:STEP:END`` with END included (within half a step)."""
    try:
        axis, rng = text.split("=", 1)
        start, step, end = (float(x) for x in rng.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AXIS=START:STEP:END, got {text!r}") from None
    if step <= 0 or end < start:
        raise argparse.ArgumentTypeError("need STEP > 0 and END >= START")
    n = int((end - start) / step + 0.5) + 1
    values = tuple(round(start + k * step, 15) for k in range(n))
    try:
        return SweepSpec(axis=axis, values=values)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc).splitlines()[-1]) from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML configuration; missing keys take the preset values")
    p.add_argument("--seed", type=_u64, metavar="U64", help="base seed (overrides the config)")
    p.add_argument("--trials", type=_positive_int, metavar="N", help="trials per run (overrides the config)")
    p.add_argument("--mode", choices=["amplitude", "master-equation"], help="simulation fidelity")
    p.add_argument("--out", metavar="DIR", required=True, help="bundle directory")
    p.add_argument("--records", choices=["keep", "drop"], default="drop", help="store click records in the bundle")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phononpair",
        description="Simulate the pulsed photon-phonon pair protocol and analyze its photon statistics.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter
    p = sub.add_parser("run", help="simulate one configuration", epilog=EPILOG, formatter_class=fmt)
    _common(p)
    p = sub.add_parser(
        "sweep", help="simulate along one axis", epilog=EPILOG, formatter_class=fmt,
        description="Axes: delta_T, tau_f, pump_delay (s) and drive_power (scale factor).",
    )
    _common(p)
    p.add_argument("--sweep", type=parse_sweep, metavar="AXIS=START:STEP:END", required=True)
    p = sub.add_parser("analyze", help="recompute tables from records kept in a bundle", epilog=EPILOG, formatter_class=fmt)
    p.add_argument("bundle", metavar="DIR")
    p.add_argument("--out", metavar="DIR", help="write tables here instead of into the bundle")
    p = sub.add_parser("report", help="print a summary of a bundle")
    p.add_argument("bundle", metavar="DIR")
    p = sub.add_parser("preset", help="write the device preset configuration")
    p.add_argument("--out", metavar="PATH", help="file to write (default: stdout)")
    return parser


def _config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else preset()
    update = {}
    if args.seed is not None:
        update["base_seed"] = args.seed
    if args.trials is not None:
        update["trials"] = args.trials
    if args.mode is not None:
        update["mode"] = args.mode
    if getattr(args, "sweep", None) is not None:
        update["sweep"] = args.sweep
    if update:
        try:
            config = config.replace(**update)
        except ValueError as exc:
            raise ConfigError(f"invalid option: {exc}") from None
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("run", "sweep"):
            config = _config(args)
            manifest = run_experiment(config, args.out, keep_records=args.records == "keep")
            print(f"wrote {args.out} ({len(manifest['files'])} files, {manifest['wall_time_s']:.1f} s)")
            for f in manifest["failures"]:
                print(f"warning: {f}", file=sys.stderr)
            return 0
        if args.command == "analyze":
            res = analyze_bundle(args.bundle, args.out)
            print(f"wrote {', '.join(sorted(res['files']))}")
            return 0 if not res["failures"] else 1
        if args.command == "report":
            text, complete = report_bundle(args.bundle)
            print(text)
            return 0 if complete else 1
        if args.command == "preset":
            text = preset().to_toml()
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return 0
    except (ConfigError, RunError, BundleError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 2
    return 2
