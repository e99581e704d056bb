"""Campaign orchestration: run benchmark sets against the oracle, turn the
results into observations, and assemble the standard fitted models.

Campaign runs are independent, so they fan out across worker processes;
aggregation is order-stable, making results identical for any worker count.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass

from .benchgen import (
    Microbenchmark,
    gen_comm_benchmarks,
    gen_local_comm_benchmarks,
    instruction_campaign,
    make_baseline,
    make_idle_benchmark,
    make_sync_benchmark,
)
from .estimator import ErrorReport, validate
from .modelfit import (
    EnergyModel,
    FitReport,
    REDUCER_STAIRCASE,
    fit_constants,
    fit_packet_reducers,
)
from .refsim import EnergyLedger, OracleParams, Program, run_program
from .statetrace import (
    ModelFunction,
    StateCountVector,
    Trace,
    abstract_trace,
    instruction_model_function,
    noc_hop_function,
)
from .sysconfig import ApiDescription, Coord, SystemConfig, manhattan

DEFAULT_COMM_SIZES = [8, 16, 32, 64, 128, 256, 512, 1024]


@dataclass
class CampaignRun:
    benchmark: Microbenchmark
    trace: Trace
    ledger: EnergyLedger


_WORKER_STATE: dict = {}


def _worker_init(config: SystemConfig, params: OracleParams) -> None:
    _WORKER_STATE["config"] = config
    _WORKER_STATE["params"] = params


def _worker_run(item: tuple[int, Program]) -> tuple[int, Trace, EnergyLedger]:
    index, program = item
    trace, ledger = run_program(_WORKER_STATE["config"], _WORKER_STATE["params"], program)
    return index, trace, ledger


def run_campaign(benchmarks: list[Microbenchmark], config: SystemConfig,
                 params: OracleParams, workers: int = 1) -> list[CampaignRun]:
    """Run every benchmark; result order follows the input list regardless
    of worker count."""
    if workers <= 1 or len(benchmarks) < 2:
        results = []
        for bench in benchmarks:
            trace, ledger = run_program(config, params, bench.program)
            results.append(CampaignRun(benchmark=bench, trace=trace, ledger=ledger))
        return results
    items = [(i, b.program) for i, b in enumerate(benchmarks)]
    with multiprocessing.Pool(workers, initializer=_worker_init,
                              initargs=(config, params)) as pool:
        done = pool.map(_worker_run, items)
    done.sort(key=lambda r: r[0])
    return [CampaignRun(benchmark=benchmarks[i], trace=t, ledger=l)
            for i, t, l in done]


def observations(runs: list[CampaignRun],
                 function: ModelFunction) -> list[tuple[StateCountVector, float]]:
    return [(abstract_trace(run.trace, function), run.ledger.total_pj)
            for run in runs]


def fit_campaign(runs: list[CampaignRun], function: ModelFunction,
                 fit_static: bool = True) -> tuple[EnergyModel, FitReport]:
    model, report = fit_constants(observations(runs, function), function,
                                  fit_static=fit_static)
    return model, report


def cluster_at_distance(config: SystemConfig, hops: int,
                        origin: Coord = (0, 0)) -> Coord | None:
    """First cluster (in index order) at a given hop distance from origin."""
    for cluster in config.all_clusters():
        if manhattan(origin, cluster) == hops:
            return cluster
    return None


def max_hops(config: SystemConfig) -> int:
    return (config.mesh_cols - 1) + (config.mesh_rows - 1)


def comm_benchmarks_per_hop(api: ApiDescription, config: SystemConfig, isa,
                            sizes: list[int] | None = None,
                            reps: int = 8) -> list[Microbenchmark]:
    """Packet sweeps covering every hop distance the mesh offers, plus the
    cluster-local bus route and the idle/baseline/sync calibration
    benchmarks that make the system full rank."""
    sizes = sizes or DEFAULT_COMM_SIZES
    benchmarks: list[Microbenchmark] = [make_idle_benchmark(config),
                                        make_baseline(isa, config),
                                        make_sync_benchmark(isa, config)]
    if config.cpus_per_cluster >= 2:
        benchmarks.extend(gen_local_comm_benchmarks(api, config, (0, 0),
                                                    sizes=sizes, reps=reps))
    for hops in range(1, max_hops(config) + 1):
        dst = cluster_at_distance(config, hops)
        if dst is not None:
            benchmarks.extend(gen_comm_benchmarks(api, config, (0, 0), dst,
                                                  sizes=sizes, reps=reps))
    return benchmarks


def merge_models(instruction_model: EnergyModel,
                 comm_model: EnergyModel) -> EnergyModel:
    """Combine the instruction fit with the communication fit.

    Instruction constants win on overlap except for communication keys
    (noc/..., sync), which come from the communication campaign; the static
    term comes from the instruction fit (same platform, same truth).
    """
    constants = {k: v for k, v in comm_model.constants.items()
                 if k == "sync" or k.startswith("noc/")}
    for key, value in instruction_model.constants.items():
        if key == "sync" or key.startswith("noc/"):
            continue
        constants[key] = value
    provenance = dict(instruction_model.provenance)
    provenance["merged_with"] = comm_model.provenance.get("function_name", "comm")
    return EnergyModel(level=instruction_model.level,
                       function=instruction_model.function,
                       constants=constants,
                       reducers=list(comm_model.reducers),
                       static_pj_per_cycle=instruction_model.static_pj_per_cycle,
                       provenance=provenance)


def build_simplified_model(config: SystemConfig, isa, api: ApiDescription,
                           params: OracleParams, reps: int = 64,
                           workers: int = 1
                           ) -> tuple[EnergyModel, dict[str, FitReport]]:
    """The shipped default model: per-(group, pattern) instruction constants
    and per-pattern dmem constants (no instruction-position term), a sync
    constant, staircase packet reducers per hop count, and a static term.
    """
    instr_runs = run_campaign(instruction_campaign(isa, config, reps=reps),
                              config, params, workers)
    instr_model, instr_report = fit_campaign(instr_runs,
                                             instruction_model_function())

    comm_runs = run_campaign(comm_benchmarks_per_hop(api, config, isa),
                             config, params, workers)
    comm_model, comm_report = fit_campaign(comm_runs, noc_hop_function())
    comm_model = fit_packet_reducers(comm_model, REDUCER_STAIRCASE,
                                     config.flit_payload_bytes)

    model = merge_models(instr_model, comm_model)
    model.provenance["clock_hz"] = config.clock_hz
    return model, {"instruction": instr_report, "communication": comm_report}


def validate_applications(model: EnergyModel, config: SystemConfig, isa,
                          params: OracleParams, seed: int = 0) -> ErrorReport:
    """Held-out validation of a model on the five synthetic applications."""
    from .workloads import synthetic_applications

    apps = synthetic_applications(config, isa, seed=seed)
    return validate(model, apps, config, params)
