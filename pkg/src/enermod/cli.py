"""Command-line orchestration of the full pipeline.

Subcommands: gen-bench, oracle, fit, reduce, estimate, validate, sweep-noc,
sweep-imem, explore, report.  Artifacts land in
<outdir>/{benchmarks,traces,ledgers,models,reports}/ with manifest-driven
names; reruns with identical inputs and seed reproduce byte-identical
artifacts (timestamps are confined to provenance fields and only appear
when ENERMOD_BUILD_DATE is set).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import data_path
from .benchgen import (
    benchmark_filename,
    center_window,
    gen_comm_benchmarks,
    gen_position_benchmarks,
    instruction_campaign,
    manifest_csv,
    parse_manifest_csv,
)
from .dse import (
    GraphError,
    InfeasibleError,
    anneal_restarts,
    load_graph,
    partition_to_json,
)
from .estimator import estimate
from .modelfit import (
    FitError,
    REDUCER_LINEAR,
    REDUCER_STAIRCASE,
    fit_packet_reducers,
    load_model,
    reduce_noc_model,
    save_model,
)
from .pipeline import (
    build_simplified_model,
    run_campaign,
    validate_applications,
)
from .refsim import (
    BundleOp,
    OracleParams,
    ParamError,
    Program,
    ProgramError,
    bundle_energy,
    load_oracle_params,
    program_from_json,
    program_to_json,
    run_program,
)
from .statetrace import (
    ModelFunctionError,
    TraceError,
    builtin_function,
    load_function,
    trace_from_lines,
)
from .sysconfig import (
    ConfigError,
    IsaError,
    group_by_label,
    load_api,
    load_config,
    load_isa,
    parse_coord,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_INVARIANT = 4
EXIT_DATA = 5

_EPILOG = """\
exit codes:
  0  success
  2  usage error (unknown flag or subcommand)
  3  referenced file missing
  4  configuration or invariant violation
  5  malformed data file
  1  internal error
environment:
  ENERMOD_OUTDIR      default for --out
  ENERMOD_BUILD_DATE  stamped into model provenance when set
"""


class CliError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise CliError(EXIT_MISSING_FILE, f"missing file: {path}")
    return path


def _outdir(args) -> str:
    out = args.out or os.environ.get("ENERMOD_OUTDIR") or "enermod-out"
    os.makedirs(out, exist_ok=True)
    return out


def _subdir(out: str, name: str) -> str:
    path = os.path.join(out, name)
    os.makedirs(path, exist_ok=True)
    return path


def _load_inputs(args, need_api: bool = False):
    config = load_config(_require(args.config))
    isa = load_isa(_require(args.isa))
    api = load_api(_require(args.api)) if need_api else None
    return config, isa, api


def _load_params(args) -> OracleParams:
    return load_oracle_params(_require(args.params))


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_json(path: str, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_bench(args) -> int:
    config, isa, api = _load_inputs(args, need_api=(args.kind == "comm"))
    out = _outdir(args)
    bench_dir = _subdir(out, "benchmarks")
    if args.kind == "instr":
        benchmarks = instruction_campaign(isa, config, reps=args.reps)
    elif args.kind == "imem":
        group = group_by_label(isa, config.vliw_slots, args.group)
        benchmarks = gen_position_benchmarks(config, group, args.lo, args.hi,
                                             reps=args.reps)
    elif args.kind == "comm":
        sizes = None
        if args.min is not None:
            step = args.step or 4
            sizes = list(range(args.min, args.max + 1, step))
        benchmarks = gen_comm_benchmarks(api, config,
                                         parse_coord(args.src),
                                         parse_coord(args.dst),
                                         sizes=sizes, reps=args.reps)
        if args.center_window:
            benchmarks = center_window(benchmarks, args.center_window)
    else:
        raise CliError(EXIT_USAGE, f"unknown benchmark kind {args.kind!r}")
    for bench in benchmarks:
        _write_json(os.path.join(bench_dir, benchmark_filename(bench.name)),
                    program_to_json(bench.program))
    _write(os.path.join(bench_dir, "manifest.csv"), manifest_csv(benchmarks))
    print(f"wrote {len(benchmarks)} benchmarks to {bench_dir}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    config, isa, _ = _load_inputs(args)
    params = _load_params(args)
    out = _outdir(args)
    bench_dir = os.path.join(out, "benchmarks")
    manifest = _require(os.path.join(bench_dir, "manifest.csv"))
    with open(manifest, "r", encoding="utf-8") as fh:
        rows = parse_manifest_csv(fh.read())
    programs = []
    for name, filename in rows:
        with open(_require(os.path.join(bench_dir, filename)), "r",
                  encoding="utf-8") as fh:
            programs.append((name, program_from_json(json.load(fh), isa)))

    from .benchgen import Microbenchmark

    benches = [Microbenchmark(name=n, program=p, swept=(), reps=0)
               for n, p in programs]
    runs = run_campaign(benches, config, params, workers=args.workers)

    trace_dir = _subdir(out, "traces")
    ledger_dir = _subdir(out, "ledgers")
    summary = ["name,total_pj,duration_cycles"]
    for run in sorted(runs, key=lambda r: r.benchmark.name):
        stem = benchmark_filename(run.benchmark.name).rsplit(".", 1)[0]
        _write(os.path.join(trace_dir, stem + ".tsv"),
               "\n".join(run.trace.to_lines()) + "\n")
        _write(os.path.join(ledger_dir, stem + ".csv"), run.ledger.to_csv())
        summary.append(f"{run.benchmark.name},{run.ledger.total_pj!r},"
                       f"{run.trace.duration}")
    _write(os.path.join(ledger_dir, "results.csv"), "\n".join(summary) + "\n")
    print(f"ran {len(runs)} benchmarks; traces in {trace_dir}")
    return EXIT_OK


def cmd_fit(args) -> int:
    config, isa, _ = _load_inputs(args)
    params = _load_params(args)
    out = _outdir(args)
    bench_dir = os.path.join(out, "benchmarks")
    manifest = _require(os.path.join(bench_dir, "manifest.csv"))
    with open(manifest, "r", encoding="utf-8") as fh:
        rows = parse_manifest_csv(fh.read())
    if args.function_file:
        function = load_function(_require(args.function_file))
    else:
        function = builtin_function(args.function)

    from .refsim import ledger_from_csv
    from .statetrace import abstract_trace

    observations = []
    for name, filename in rows:
        stem = filename.rsplit(".", 1)[0]
        trace_path = _require(os.path.join(out, "traces", stem + ".tsv"))
        ledger_path = _require(os.path.join(out, "ledgers", stem + ".csv"))
        with open(trace_path, "r", encoding="utf-8") as fh:
            trace = trace_from_lines(fh)
        with open(ledger_path, "r", encoding="utf-8") as fh:
            total = ledger_from_csv(fh.read())["total"]
        observations.append((abstract_trace(trace, function), total))

    from .modelfit import fit_constants

    model, report = fit_constants(observations, function)
    model.provenance["clock_hz"] = config.clock_hz
    model_dir = _subdir(out, "models")
    report_dir = _subdir(out, "reports")
    save_model(model, os.path.join(model_dir, args.name + ".json"),
               clock_hz=config.clock_hz)
    residuals = ["observation,residual_pj"]
    residuals.extend(f"{rows[i][0]},{r!r}" for i, r in enumerate(report.residuals))
    _write(os.path.join(report_dir, f"fit_{args.name}_residuals.csv"),
           "\n".join(residuals) + "\n")
    _write_json(os.path.join(report_dir, f"fit_{args.name}.json"), report.summary())
    print(f"fitted {len(model.constants)} constants "
          f"(rank {report.rank}/{report.n_unknowns}) -> {args.name}.json")
    return EXIT_OK


def cmd_reduce(args) -> int:
    model = load_model(_require(args.model))
    config = load_config(_require(args.config))
    if args.kind == "hops":
        model = reduce_noc_model(model)
    elif args.kind == "staircase":
        model = fit_packet_reducers(model, REDUCER_STAIRCASE,
                                    config.flit_payload_bytes)
    elif args.kind == "linear":
        model = fit_packet_reducers(model, REDUCER_LINEAR)
    else:
        raise CliError(EXIT_USAGE, f"unknown reduction {args.kind!r}")
    save_model(model, args.output, clock_hz=config.clock_hz)
    print(f"reduced model written to {args.output}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    model = load_model(_require(args.model))
    with open(_require(args.trace), "r", encoding="utf-8") as fh:
        trace = trace_from_lines(fh)
    result = estimate(trace, model)
    doc = {
        "total_pj": result.total_pj,
        "breakdown": result.breakdown,
        "coverage": result.coverage,
        "missing_keys": result.missing_keys,
        "contributions": {k: {"count": c, "energy_pj": e}
                          for k, (c, e) in sorted(result.contributions.items())},
    }
    if args.output:
        _write_json(args.output, doc)
    print(json.dumps({"total_pj": result.total_pj, "coverage": result.coverage}))
    return EXIT_OK


def cmd_validate(args) -> int:
    config, isa, api = _load_inputs(args, need_api=True)
    params = _load_params(args)
    out = _outdir(args)
    if args.model:
        model = load_model(_require(args.model))
    else:
        model, _reports = build_simplified_model(config, isa, api, params,
                                                 workers=args.workers)
        save_model(model, os.path.join(_subdir(out, "models"), "simplified.json"),
                   clock_hz=config.clock_hz)
    report = validate_applications(model, config, isa, params, seed=args.seed)
    report_dir = _subdir(out, "reports")
    _write(os.path.join(report_dir, "validation.csv"), report.to_csv())
    _write_json(os.path.join(report_dir, "validation_summary.json"),
                report.summary())
    print(json.dumps(report.summary()))
    return EXIT_OK


def cmd_sweep_noc(args) -> int:
    config = load_config(_require(args.config))
    params = _load_params(args)
    out = _outdir(args)
    src = parse_coord(args.src)
    dst = parse_coord(args.dst)
    src_cpu = config.cpu_id(src, 0)
    dst_cpu = config.cpu_id(dst, 0) if src != dst else config.cpu_id(dst, 1)
    sizes = list(range(args.min, args.max + 1, args.step))

    from .refsim import SendOp, n_flits, packet_energy

    lines = ["size_bytes,flits,total_pj,dynamic_packet_pj,sync_pj,ni_pj,"
             "router_pj,unclassified_pj,bus_pj,static_pj"]
    for size in sizes:
        program = Program.from_dict(
            {src_cpu: [SendOp(dst_cpu=dst_cpu, size_bytes=size)]})
        _trace, ledger = run_program(config, params, program)
        b = ledger.breakdown_dict()
        dynamic = packet_energy(params, config, src, dst, size)
        lines.append(
            f"{size},{n_flits(size, config.flit_payload_bytes)},"
            f"{ledger.total_pj!r},{dynamic!r},{b['sync']!r},{b['ni']!r},"
            f"{b['router']!r},{b['unclassified']!r},{b['bus']!r},{b['static']!r}")
    path = os.path.join(_subdir(out, "reports"), "sweep_noc.csv")
    _write(path, "\n".join(lines) + "\n")
    print(f"wrote {len(sizes)} sweep points to {path}")
    return EXIT_OK


def cmd_sweep_imem(args) -> int:
    config, isa, _ = _load_inputs(args)
    params = _load_params(args)
    out = _outdir(args)

    nops = [i for i in isa if i.iclass == "NOP"]
    if not nops:
        raise CliError(EXIT_INVARIANT, "sweep-imem needs a NOP instruction")
    nop = sorted(nops, key=lambda i: i.mnemonic)[0]

    from .sysconfig import InstructionGroup

    single = InstructionGroup(slots=(nop,) + (None,) * (config.vliw_slots - 1))
    full = InstructionGroup(slots=(nop,) * config.vliw_slots)
    lines = ["address,popcount,compressed_pj,uncompressed_pj"]
    for addr in range(args.lo, args.hi + 1):
        row = [str(addr), str(bin(addr % config.bank_words).count("1"))]
        for group in (single, full):
            op = BundleOp(group=group, addr=addr, pattern="zeros")
            row.append(repr(bundle_energy(params, config, op)))
        lines.append(",".join(row))
    path = os.path.join(_subdir(out, "reports"), "sweep_imem.csv")
    _write(path, "\n".join(lines) + "\n")
    print(f"wrote {args.hi - args.lo + 1} sweep points to {path}")
    return EXIT_OK


def cmd_explore(args) -> int:
    config = load_config(_require(args.config))
    model = load_model(_require(args.model))
    graph = load_graph(_require(args.graph))
    out = _outdir(args)
    seeds = [args.seed + i for i in range(args.chains)]
    result = anneal_restarts(graph, config, model, seeds, steps=args.steps,
                             initial_temp=args.temp, cooling=args.cooling,
                             w_energy=args.w_energy,
                             w_throughput=args.w_throughput)
    _write_json(os.path.join(_subdir(out, "models"), "partition.json"),
                partition_to_json(result.best_partition, result.best_score))
    _write(os.path.join(_subdir(out, "reports"), "explore_history.csv"),
           result.history_csv())
    print(json.dumps({"best_cost": result.best_score.cost(args.w_energy,
                                                          args.w_throughput),
                      "energy_pj": result.best_score.energy_pj,
                      "feasible": result.best_score.feasible}))
    return EXIT_OK


def cmd_report(args) -> int:
    out = _outdir(args)
    summary: dict = {"outdir": out, "reports": {}}
    report_dir = os.path.join(out, "reports")
    if os.path.isdir(report_dir):
        for name in sorted(os.listdir(report_dir)):
            if name.endswith(".json"):
                with open(os.path.join(report_dir, name), encoding="utf-8") as fh:
                    summary["reports"][name] = json.load(fh)
    model_dir = os.path.join(out, "models")
    if os.path.isdir(model_dir):
        summary["models"] = sorted(os.listdir(model_dir))
    _write_json(os.path.join(out, "summary.json"), summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser, api: bool = False,
                params: bool = True) -> None:
    parser.add_argument("--config", default=data_path("default_config.json"))
    parser.add_argument("--isa", default=data_path("isa.json"))
    if api:
        parser.add_argument("--api", default=data_path("api.json"))
    if params:
        parser.add_argument("--params", default=data_path("oracle_params.json"))
    parser.add_argument("--out", default=None,
                        help="output directory (default $ENERMOD_OUTDIR)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enermod",
        description="Energy-model toolkit for configurable many-core systems",
        epilog=_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-bench", help="generate microbenchmark programs")
    _add_common(p, api=True, params=False)
    p.add_argument("--kind", choices=["instr", "imem", "comm"], default="instr")
    p.add_argument("--reps", type=int, default=64)
    p.add_argument("--group", default="nop+nop", help="imem sweep group label")
    p.add_argument("--lo", type=int, default=0)
    p.add_argument("--hi", type=int, default=799)
    p.add_argument("--min", type=int, default=None, help="comm size minimum")
    p.add_argument("--max", type=int, default=1024)
    p.add_argument("--step", type=int, default=4)
    p.add_argument("--src", default="0,0")
    p.add_argument("--dst", default="1,1")
    p.add_argument("--center-window", type=int, default=0,
                   help="keep only the N sweep points around the center")
    p.set_defaults(func=cmd_gen_bench)

    p = sub.add_parser("oracle", help="run a benchmark campaign on the oracle")
    _add_common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("fit", help="fit model constants from a campaign")
    _add_common(p)
    p.add_argument("--function", default="instruction-fine",
                   help="builtin model function name")
    p.add_argument("--function-file", default=None,
                   help="JSON rule file overriding --function")
    p.add_argument("--name", default="model")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reduce", help="apply hop/linear/staircase reducers")
    p.add_argument("--model", required=True)
    p.add_argument("--config", default=data_path("default_config.json"))
    p.add_argument("--kind", choices=["hops", "staircase", "linear"],
                   default="staircase")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("estimate", help="estimate a trace with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("validate",
                       help="validate a model against the oracle on the "
                            "held-out applications")
    _add_common(p, api=True)
    p.add_argument("--model", default=None,
                   help="model file (default: fit the simplified model)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep-noc", help="packet-size sweep CSV")
    _add_common(p)
    p.add_argument("--src", default="0,0")
    p.add_argument("--dst", default="1,1")
    p.add_argument("--min", type=int, default=4)
    p.add_argument("--max", type=int, default=1024)
    p.add_argument("--step", type=int, default=4)
    p.set_defaults(func=cmd_sweep_noc)

    p = sub.add_parser("sweep-imem", help="instruction-position sweep CSV")
    _add_common(p)
    p.add_argument("--lo", type=int, default=0)
    p.add_argument("--hi", type=int, default=799)
    p.set_defaults(func=cmd_sweep_imem)

    p = sub.add_parser("explore", help="annealing-based task mapping")
    p.add_argument("--graph", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config", default=data_path("default_config.json"))
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--temp", type=float, default=500.0)
    p.add_argument("--cooling", type=float, default=0.999)
    p.add_argument("--w-energy", type=float, default=1.0)
    p.add_argument("--w-throughput", type=float, default=0.0)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("report", help="aggregate summaries in an outdir")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error:{exc.code}:{exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error:{EXIT_MISSING_FILE}:missing file: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ConfigError, IsaError, ProgramError, ParamError, GraphError,
            InfeasibleError) as exc:
        print(f"error:{EXIT_INVARIANT}:{exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (TraceError, ModelFunctionError, FitError, json.JSONDecodeError,
            KeyError) as exc:
        print(f"error:{EXIT_DATA}:{exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
