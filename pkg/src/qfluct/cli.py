"""Command-line interface.

Every subcommand runs one pipeline stage (``pipeline`` runs the configured
set) from a JSON config file plus ``--set key=value`` overrides; flags win
over the file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .io import DataError
from .pipeline import STAGES, ConfigError, PipelineConfig, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="JSON config file (defaults: `qfluct config init`)")
    p.add_argument("-o", "--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set average.width=3 (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true", help="print nothing on success")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qfluct", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qfluct {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    cfg = sub.add_parser("config", help="configuration helpers")
    cfg_sub = cfg.add_subparsers(dest="action", required=True)
    init = cfg_sub.add_parser("init", help="print the default configuration")
    init.add_argument("-o", "--output", help="write to this file instead of stdout")

    helps = {
        "emulate": "draw synthetic measurement records",
        "ingest": "validate a records file and rebuild timestamps",
        "average": "moving-average outcome probabilities",
        "fit": "fit noise parameters per repetition",
        "segment": "run the RTN hierarchy on the detuning trace",
        "rates": "switching rates per hierarchy level",
        "psd": "power spectra of the fitted traces",
        "physics": "charge-dispersion and TLS model report",
        "report": "consolidated report",
    }
    for name in STAGES:
        p = sub.add_parser(name, help=helps[name])
        _common(p)
        if name in ("ingest", "average"):
            p.add_argument("--records", help="records CSV (default: emulate output)")
            p.add_argument("--meta", help="plan metadata JSON (default: <records>.meta.json)")
        if name == "average":
            p.add_argument("--width", type=float, help="kernel width in repetitions")
            p.add_argument("--kind", choices=("gaussian", "fixed"))
        if name in ("segment", "psd"):
            p.add_argument("--trace", help="noise trace CSV; '{qubit}' is replaced by the qubit index")
    p = sub.add_parser("pipeline", help="run the configured stages in order")
    _common(p)
    p.add_argument("--stages", help="comma-separated subset of stages")
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig.defaults()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), _parse_value(v))
    if args.out:
        cfg.set("output_dir", args.out)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if getattr(args, "records", None):
        cfg.set("ingest.records", args.records)
    if getattr(args, "meta", None):
        cfg.set("ingest.meta", args.meta)
    if getattr(args, "width", None) is not None:
        cfg.set("average.width", args.width)
    if getattr(args, "kind", None):
        cfg.set("average.kind", args.kind)
    if getattr(args, "trace", None):
        cfg.set("hdfa.trace", args.trace)
    if args.command == "pipeline":
        if args.stages is not None:
            cfg.set("stages", [s for s in args.stages.split(",") if s])
    else:
        cfg.set("stages", [args.command])
    cfg.validate()
    return cfg


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, FileNotFoundError)):
        return EXIT_DATA
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        text = PipelineConfig.defaults().to_json()
        if args.output:
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = run_pipeline(cfg)
    if manifest.error is not None:
        failed = next(s for s in manifest.stages if s.status == "failed")
        print(f"stage '{failed.name}' failed: {failed.error}", file=sys.stderr)
        return _exit_code(manifest.error)
    if not args.quiet:
        for s in manifest.stages:
            print(f"{s.name:8s} {s.status:7s} {s.wall_s:8.2f} s  {len(s.outputs)} outputs")
        print(f"outputs in {cfg.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
