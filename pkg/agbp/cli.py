"""Command line: generate, run, sweep, analyze and dynamic.

Exit codes: 0 on success, 1 on configuration or usage errors (bad flags,
missing or invalid files), 2 on runtime failures.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import BaseModel, ValidationError

from agbp.config import configure_logging, get_logger
from agbp.errors import AgbpError, ConfigError, ModelValidationError
from agbp.experiments import run_sweep, write_sweep
from agbp.generator import GeneratorSpec, generate_model
from agbp.graph import build_factor_graph, classify_factors
from agbp.model import ClusterPartition
from agbp.schemas import AnalyzeRequest, DynamicConfig, ExperimentConfig, RunRequest
from agbp.storage import (
    load_events,
    load_model,
    load_partition,
    save_classification,
    save_model,
    save_partition,
    write_json,
)
from agbp.workflows import analyze_model, execute_dynamic, execute_run, resolve_model

logger = get_logger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def load_config(path: Optional[str], schema: type[BaseModel], overrides: Optional[dict] = None) -> BaseModel:
    """Read a JSON config file (or ``{}`` without one) and validate it against ``schema``."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        return schema.model_validate(data)
    except ValidationError as e:
        where = path or "command line"
        raise ConfigError(f"{where}: {e}") from None


def _emit(payload, out: Optional[str], name: str) -> None:
    print(json.dumps(payload, indent=2))
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_json(payload, Path(out) / name)


def _seeded(source, seed: Optional[int]):
    if seed is not None and source.generator is not None:
        source.generator = source.generator.model_copy(update={"seed": seed})
    return source


def _model_from_files(args):
    model = load_model(args.matrix, args.observations)
    partition = load_partition(args.partition) if args.partition else None
    return model, partition


def cmd_generate(args) -> None:
    spec = load_config(args.config, GeneratorSpec, {"seed": args.seed})
    model, partition = generate_model(spec)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.mtx", out / "observations.csv")
    save_partition(partition, out / "partition.csv")
    graph = build_factor_graph(model)
    save_classification(graph, classify_factors(graph, partition), out / "classification.csv")
    logger.info("wrote %dx%d model (%d nonzeros) to %s", model.rows, model.cols, model.nnz, out)


def cmd_run(args) -> None:
    request = _seeded(load_config(args.config, RunRequest, {"tolerance": args.tol}), args.seed)
    if args.matrix:
        model, partition = _model_from_files(args)
        seed = args.seed
    else:
        model, partition, seed = resolve_model(request)
    result = execute_run(model, partition, request, seed, trace_path=args.trace)
    _emit(result.summary(), args.out, "run_summary.json")


def cmd_sweep(args) -> None:
    config = load_config(args.config, ExperimentConfig,
                         {"base_seed": args.seed, "tolerance": args.tol, "output_dir": args.out})
    result = run_sweep(config)
    for path in write_sweep(result, config.output_dir):
        logger.info("wrote %s", path)


def cmd_analyze(args) -> None:
    request = _seeded(load_config(args.config, AnalyzeRequest), args.seed)
    if args.matrix:
        model, _ = _model_from_files(args)
    else:
        model, _, _ = resolve_model(request)
    report = analyze_model(model, request.method)
    _emit(report.model_dump(), args.out, "analysis.json")


def cmd_dynamic(args) -> None:
    config = load_config(args.config, DynamicConfig, {"tolerance": args.tol})
    model, partition = _model_from_files(args)
    events = load_events(args.events) if args.events else []
    results = execute_dynamic(model, partition, events, config)
    _emit([r.summary() for r in results], args.out, "dynamic_results.json")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="override the generator / base seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tol", type=float, help="convergence tolerance")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    files = _Parser(add_help=False)
    files.add_argument("--matrix", help="Matrix Market file with H")
    files.add_argument("--observations", help="CSV file row,z,v")
    files.add_argument("--partition", help="CSV file variable,cluster")

    parser = _Parser(prog="agbp", description="Alternating Gaussian belief propagation toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="generate a clustered model")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", parents=[common, files], help="run GBP on one model")
    p.add_argument("--trace", help="write a per-iteration message trace CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", parents=[common, files], help="spectral convergence analysis")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("dynamic", parents=[common, files], help="runs across observation events")
    p.add_argument("--events", help="CSV file time,factor,z,v")
    p.set_defaults(func=cmd_dynamic)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help
        return 0 if e.code in (0, None) else 1

    configure_logging("WARNING" if args.quiet else None)
    if getattr(args, "matrix", None) and not args.observations:
        print("agbp: error: --matrix needs --observations", file=sys.stderr)
        return 1
    if args.command == "dynamic" and not args.matrix:
        print("agbp: error: dynamic needs --matrix and --observations", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except (ConfigError, ModelValidationError, FileNotFoundError) as e:
        print(f"agbp: error: {e}", file=sys.stderr)
        return 1
    except AgbpError as e:
        print(f"agbp: failed: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception("unexpected failure")
        print(f"agbp: failed: {e}", file=sys.stderr)
        return 2
    return 0
