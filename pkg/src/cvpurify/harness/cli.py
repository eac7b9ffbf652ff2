"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 internal consistency failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, ConsistencyError, InvalidArgument
from .config import MonteCarloConfig, load_config, validate_config
from .runner import run_single, run_spectra, run_sweep, write_report, write_spectra

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CONSISTENCY = 0, 2, 3, 4

log = logging.getLogger("cvpurify")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer: {text}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 2:
        raise argparse.ArgumentTypeError(f"need at least 2 samples, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvpurify", description="Coherent-state purification experiments."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("sweep", "fidelity curves over a (lambda, N) grid"),
        ("single", "full pipeline for one lambda and N"),
        ("spectra", "simulated sideband power spectra"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, help="output directory (overrides output_path)")
        p.add_argument("--seed", type=_u64)
        p.add_argument("--samples", type=_positive, help="enable/override Monte Carlo sample count")
        p.add_argument("--format", choices=("csv", "json"), help="write only this format")
    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("--config", required=True, type=Path)
    return parser


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.seed = args.seed
        if cfg.monte_carlo is not None:
            cfg.monte_carlo = dataclasses.replace(cfg.monte_carlo, seed=None)
    if args.samples is not None:
        mc = cfg.monte_carlo or MonteCarloConfig()
        cfg.monte_carlo = dataclasses.replace(mc, n_samples=args.samples)
    if cfg.mode != args.command:
        log.info("config mode %r overridden by subcommand %r", cfg.mode, args.command)
        cfg.mode = args.command
    return cfg


def _validate(path: Path) -> int:
    try:
        diags = validate_config(path)
    except OSError as exc:
        print(f"{path}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    for d in diags:
        print(f"{path}:{d}", file=sys.stderr)
    if diags:
        return EXIT_CONFIG
    print(f"{path}: ok")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return _validate(args.config)

    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out_dir = args.out or Path(cfg.output_path)
        formats = (args.format,) if args.format else ("csv", "json")
        if args.command == "spectra":
            report = run_spectra(cfg)
            written = write_spectra(report, out_dir, formats)
            for name, s in report.spectra.items():
                print(f"{name:10s} floor {s.floor_db:7.3f} dB  peak {s.peak_db:7.3f} dB")
        else:
            report = run_sweep(cfg) if args.command == "sweep" else run_single(cfg)
            written = write_report(report, out_dir, args.command, formats)
            for c in report.cells:
                extra = "" if c.f_ave is None else f" f_ave={c.f_ave:.4f}"
                print(f"lambda={c.lam:g} N={c.n_copies} {c.method.value}: var_after={c.variance_after:.4f} "
                      f"f_before={c.f_before:.4f} f_after={c.f_after:.4f} f_classical={c.f_classical:.4f}{extra}")
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"{args.config}:{d}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidArgument as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConsistencyError as exc:
        print(f"internal consistency failure: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in written:
        log.info("wrote %s", p)
    return EXIT_OK
