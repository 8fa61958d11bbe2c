"""Command-line entry point: ``pdmgraph <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PipelineConfig
from .errors import ConfigError, DataError, IoError, PdmError, ValidationError
from .ingest import serialize_table
from .pipeline import STAGES, compare_datasets, run_pipeline, run_stage
from .serialize import dumps, read_json, write_json, write_text
from .synthetic import SyntheticSpec, generate_synthetic

EXIT_OK, EXIT_VALIDATION, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
STOCHASTIC = {"simdata", "communities", "sample", "train", "explain", "run", "compare"}

logger = logging.getLogger("pdmgraph")


def _add_pipeline_flags(p: argparse.ArgumentParser, seed_required: bool) -> None:
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--seed", type=int, required=seed_required, help="random seed (overrides the config)")
    p.add_argument("--input", help="input CSV (overrides the config)")
    p.add_argument("--output-dir", dest="output_dir", help="artifact directory (overrides the config)")
    p.add_argument("--targets", nargs="+", help="target alarm columns (overrides the config)")
    p.add_argument("--horizon", type=int, help="label horizon in seconds (overrides the config)")
    p.add_argument("--top-k", dest="top_k", type=int, help="features kept per community (overrides the config)")
    p.add_argument("--max-workers", dest="max_workers", type=int, help="parallel workers; results do not depend on it")
    p.add_argument("--resume", action="store_true", help="skip stages whose inputs and outputs are unchanged")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdmgraph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simdata", help="write seeded synthetic telemetry and its ground-truth manifest")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--spec", help="SyntheticSpec JSON; defaults apply to missing keys")
    p.add_argument("--rows", type=int, help="override n_rows")

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_pipeline_flags(p, stage in STOCHASTIC)
    p = sub.add_parser("run", help="run every stage in order")
    _add_pipeline_flags(p, True)

    p = sub.add_parser("compare", help="spectral similarity of two saved graphs")
    p.add_argument("graph_a")
    p.add_argument("graph_b")
    p.add_argument("--sweep-a", dest="sweep_a", help="saved community sweep for graph_a")
    p.add_argument("--sweep-b", dest="sweep_b", help="saved community sweep for graph_b")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="write the report here instead of stdout")
    return parser


def _config(args) -> PipelineConfig:
    overrides = {
        k: getattr(args, k)
        for k in ("seed", "input", "output_dir", "targets", "horizon", "top_k", "max_workers")
        if getattr(args, k, None) is not None
    }
    if args.config:
        return PipelineConfig.load(args.config, overrides)
    missing = [k for k in ("input", "targets", "seed") if k not in overrides]
    if missing:
        raise ConfigError(f"without --config these flags are required: {', '.join('--' + m for m in missing)}")
    return PipelineConfig.from_dict(overrides)


def _simdata(args) -> None:
    data = read_json(args.spec) if args.spec else {}
    if args.rows is not None:
        data["n_rows"] = args.rows
    spec = SyntheticSpec.from_json(data)
    table, manifest = generate_synthetic(spec, args.seed)
    out = Path(args.out)
    write_text(out / "telemetry.csv", serialize_table(table))
    write_json(out / "manifest.json", manifest)
    print(out / "telemetry.csv")


def dispatch(args) -> None:
    if args.command == "simdata":
        _simdata(args)
    elif args.command == "compare":
        report = compare_datasets(args.graph_a, args.graph_b, args.sweep_a, args.sweep_b, seed=args.seed)
        if args.out:
            write_json(args.out, report)
        else:
            sys.stdout.write(dumps(report))
    elif args.command == "run":
        out = run_pipeline(_config(args), resume=args.resume)
        print(out)
    else:
        ran = run_stage(_config(args), args.command, resume=args.resume)
        print(f"{args.command}: {'done' if ran else 'up to date'}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, IoError) as exc:
        stage = getattr(exc, "stage", None)
        print(f"error{f' in stage {stage}' if stage else ''}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PdmError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the documented exit code
        logger.debug("unhandled", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
