"""Automatic microbenchmark generation.

Every benchmark carries a setup prologue that brings the CPU into a defined
state, followed by a body that repeats the measured unit.  Within one sweep
only the swept variable changes; a matching prologue-only baseline and an
idle-only calibration benchmark make the campaign's least-squares system
identifiable (static power and prologue cost get their own equations).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .refsim import (
    BundleOp,
    DATA_PATTERNS,
    Program,
    ProgramError,
    RecvOp,
    SendOp,
    SyncOp,
    program_to_json,
)
from .sysconfig import (
    ApiDescription,
    Coord,
    InstructionDef,
    InstructionGroup,
    IsaError,
    SystemConfig,
    enumerate_instruction_groups,
)

PROLOGUE_LEN = 8
BODY_ADDR = 0          # fixed body position; popcount(0) = 0, no position term
DEFAULT_REPS = 64
COMM_REPS = 8
IDLE_CYCLES = 64


@dataclass(frozen=True)
class Microbenchmark:
    """A named program isolating one state dimension.

    swept records which variable this benchmark pins (kind plus value);
    reps is the number of measured-unit repetitions in the body.
    """

    name: str
    program: Program
    swept: tuple[tuple[str, object], ...]
    reps: int

    def swept_dict(self) -> dict[str, object]:
        return dict(self.swept)


def _swept(**kv: object) -> tuple[tuple[str, object], ...]:
    return tuple(sorted(kv.items()))


def _all_nop_group(isa: list[InstructionDef], vliw_slots: int) -> InstructionGroup | None:
    nops = [i for i in isa if i.iclass == "NOP"]
    if not nops:
        return None
    nop = sorted(nops, key=lambda i: i.mnemonic)[0]
    return InstructionGroup(slots=(nop,) * vliw_slots)


def prologue_group(isa: list[InstructionDef], vliw_slots: int) -> InstructionGroup:
    """Setup bundle: the all-NOP group when the ISA has a NOP, otherwise the
    first enumerated group.  Held constant across every sweep."""
    group = _all_nop_group(isa, vliw_slots)
    if group is not None:
        return group
    groups = enumerate_instruction_groups(isa, vliw_slots)
    if not groups:
        raise IsaError("cannot build a prologue from an empty ISA")
    return groups[0]


def _prologue_ops(group: InstructionGroup, pattern: str = "zeros") -> list[BundleOp]:
    return [BundleOp(group=group, addr=BODY_ADDR, pattern=pattern)
            for _ in range(PROLOGUE_LEN)]


def make_baseline(isa: list[InstructionDef], config: SystemConfig,
                  cpu: int = 0) -> Microbenchmark:
    """Prologue-only benchmark; its measurement is subtracted from sweeps."""
    group = prologue_group(isa, config.vliw_slots)
    program = Program.from_dict({cpu: _prologue_ops(group)})
    return Microbenchmark(name="cal/baseline", program=program,
                          swept=_swept(kind="baseline"), reps=0)


def make_idle_benchmark(config: SystemConfig,
                        cycles: int = IDLE_CYCLES) -> Microbenchmark:
    """All CPUs idle for a fixed window; pins the static-power term."""
    program = Program.from_dict({}, min_cycles=cycles)
    return Microbenchmark(name="cal/idle", program=program,
                          swept=_swept(kind="idle", cycles=cycles), reps=0)


def make_sync_benchmark(isa: list[InstructionDef], config: SystemConfig,
                        reps: int = DEFAULT_REPS, cpu: int = 0) -> Microbenchmark:
    """Standalone channel synchronizations; pins the sync cost."""
    group = prologue_group(isa, config.vliw_slots)
    ops: list = _prologue_ops(group)
    ops.extend(SyncOp() for _ in range(reps))
    program = Program.from_dict({cpu: ops})
    return Microbenchmark(name="cal/sync", program=program,
                          swept=_swept(kind="sync"), reps=reps)


def gen_instruction_benchmarks(isa: list[InstructionDef], config: SystemConfig,
                               patterns: tuple[str, ...] = DATA_PATTERNS,
                               reps: int = DEFAULT_REPS,
                               cpu: int = 0) -> list[Microbenchmark]:
    """One benchmark per (instruction group, data pattern).

    The body places the group at a fixed address and repeats it; registers
    and memory content are pinned to the pattern by the setup code.
    """
    for pattern in patterns:
        if pattern not in DATA_PATTERNS:
            raise ProgramError(f"unknown data pattern {pattern!r}")
    setup = prologue_group(isa, config.vliw_slots)
    benchmarks = []
    for group in enumerate_instruction_groups(isa, config.vliw_slots):
        for pattern in patterns:
            ops: list = _prologue_ops(setup)
            ops.extend(BundleOp(group=group, addr=BODY_ADDR, pattern=pattern)
                       for _ in range(reps))
            program = Program.from_dict({cpu: ops})
            benchmarks.append(Microbenchmark(
                name=f"instr/{group.label}/{pattern}",
                program=program,
                swept=_swept(kind="instruction-group", group=group.label,
                             pattern=pattern),
                reps=reps))
    return benchmarks


def gen_position_benchmarks(config: SystemConfig, group: InstructionGroup,
                            addr_lo: int, addr_hi: int,
                            pattern: str = "zeros",
                            reps: int = DEFAULT_REPS,
                            cpu: int = 0) -> list[Microbenchmark]:
    """One benchmark per instruction-memory address, same group everywhere."""
    span = 1 if group.compressed else config.vliw_slots
    if addr_lo > addr_hi:
        raise ProgramError(f"addr_lo {addr_lo} > addr_hi {addr_hi}")
    if addr_lo < 0 or addr_hi > config.imem_words - span:
        raise ProgramError(
            f"address range [{addr_lo}, {addr_hi}] outside instruction memory")
    fmt = "c" if group.compressed else "u"
    benchmarks = []
    for addr in range(addr_lo, addr_hi + 1):
        ops: list = [BundleOp(group=group, addr=BODY_ADDR, pattern=pattern)
                     for _ in range(PROLOGUE_LEN)]
        ops.extend(BundleOp(group=group, addr=addr, pattern=pattern)
                   for _ in range(reps))
        program = Program.from_dict({cpu: ops})
        benchmarks.append(Microbenchmark(
            name=f"imem/{fmt}/{addr}",
            program=program,
            swept=_swept(kind="imem-position", addr=addr, fmt=fmt),
            reps=reps))
    return benchmarks


def gen_comm_benchmarks(api: ApiDescription, config: SystemConfig,
                        src: Coord = (0, 0), dst: Coord = (1, 1),
                        sizes: list[int] | None = None,
                        reps: int = COMM_REPS,
                        op_name: str = "send") -> list[Microbenchmark]:
    """One benchmark per packet size between two cluster coordinates.

    The default descriptor sweeps 4..1024 bytes in 4-byte increments,
    giving 256 data points.  Sender and receiver sit on CPU 0 of their
    clusters; the prologue synchronizes the channel into a defined state.
    """
    if src == dst:
        raise ProgramError(
            "source and destination clusters must differ; "
            "use gen_local_comm_benchmarks for the cluster-local bus route")
    src_cpu = config.cpu_id(src, 0)
    dst_cpu = config.cpu_id(dst, 0)
    if sizes is None:
        sizes = api.operation(op_name).sizes()
    benchmarks = []
    hops = abs(src[0] - dst[0]) + abs(src[1] - dst[1])
    for size in sizes:
        sender: list = [SyncOp() for _ in range(PROLOGUE_LEN)]
        sender.extend(SendOp(dst_cpu=dst_cpu, size_bytes=size) for _ in range(reps))
        receiver: list = [RecvOp(src_cpu=src_cpu, size_bytes=size)
                          for _ in range(reps)]
        program = Program.from_dict({src_cpu: sender, dst_cpu: receiver})
        benchmarks.append(Microbenchmark(
            name=f"comm/h{hops}/{size}",
            program=program,
            swept=_swept(kind="packet-size", size=size, hops=hops,
                         src=f"{src[0]},{src[1]}", dst=f"{dst[0]},{dst[1]}"),
            reps=reps))
    return benchmarks


def gen_local_comm_benchmarks(api: ApiDescription, config: SystemConfig,
                              cluster: Coord = (0, 0),
                              sizes: list[int] | None = None,
                              reps: int = COMM_REPS,
                              op_name: str = "send") -> list[Microbenchmark]:
    """Packet-size sweep between two CPUs of one cluster (crossbar route)."""
    if config.cpus_per_cluster < 2:
        raise ProgramError("cluster-local transfers need at least two CPUs")
    src_cpu = config.cpu_id(cluster, 0)
    dst_cpu = config.cpu_id(cluster, 1)
    if sizes is None:
        sizes = api.operation(op_name).sizes()
    benchmarks = []
    for size in sizes:
        sender: list = [SyncOp() for _ in range(PROLOGUE_LEN)]
        sender.extend(SendOp(dst_cpu=dst_cpu, size_bytes=size) for _ in range(reps))
        receiver: list = [RecvOp(src_cpu=src_cpu, size_bytes=size)
                          for _ in range(reps)]
        program = Program.from_dict({src_cpu: sender, dst_cpu: receiver})
        benchmarks.append(Microbenchmark(
            name=f"comm/h0/{size}",
            program=program,
            swept=_swept(kind="packet-size", size=size, hops=0,
                         src=f"{cluster[0]},{cluster[1]}",
                         dst=f"{cluster[0]},{cluster[1]}"),
            reps=reps))
    return benchmarks


def gen_transition_benchmarks(states: list[InstructionGroup],
                              config: SystemConfig,
                              reps: int = DEFAULT_REPS,
                              pattern: str = "zeros",
                              cpu: int = 0) -> list[Microbenchmark]:
    """n_states x n_states benchmarks covering every ordered state pair.

    The pair (a, b) runs a self-warmup prologue of a followed by an
    alternating a,b body, so the only off-diagonal transition counts are
    a->b (reps) and b->a (reps - 1); the resulting system is full rank.
    """
    benchmarks = []
    for a in states:
        for b in states:
            ops: list = [BundleOp(group=a, addr=BODY_ADDR, pattern=pattern)
                         for _ in range(PROLOGUE_LEN)]
            for _ in range(reps):
                ops.append(BundleOp(group=a, addr=BODY_ADDR, pattern=pattern))
                ops.append(BundleOp(group=b, addr=BODY_ADDR, pattern=pattern))
            program = Program.from_dict({cpu: ops})
            benchmarks.append(Microbenchmark(
                name=f"trans/{a.label}>{b.label}",
                program=program,
                swept=_swept(kind="transition", src=a.label, dst=b.label),
                reps=reps))
    return benchmarks


def instruction_campaign(isa: list[InstructionDef], config: SystemConfig,
                         patterns: tuple[str, ...] = DATA_PATTERNS,
                         reps: int = DEFAULT_REPS) -> list[Microbenchmark]:
    """Full instruction campaign plus the calibration benchmarks."""
    benchmarks = [make_idle_benchmark(config), make_baseline(isa, config)]
    benchmarks.extend(gen_instruction_benchmarks(isa, config, patterns, reps))
    return benchmarks


def comm_campaign(api: ApiDescription, config: SystemConfig,
                  pairs: list[tuple[Coord, Coord]],
                  isa: list[InstructionDef],
                  sizes: list[int] | None = None,
                  reps: int = COMM_REPS) -> list[Microbenchmark]:
    """Packet sweeps over cluster pairs plus sync/idle calibration."""
    benchmarks = [make_idle_benchmark(config), make_sync_benchmark(isa, config)]
    for src, dst in pairs:
        benchmarks.extend(gen_comm_benchmarks(api, config, src, dst,
                                              sizes=sizes, reps=reps))
    return benchmarks


def center_window(benchmarks: list[Microbenchmark], k: int = 16,
                  key: str = "size") -> list[Microbenchmark]:
    """The k benchmarks around the center of a sweep, by swept value."""
    swept = sorted((b for b in benchmarks if key in b.swept_dict()),
                   key=lambda b: b.swept_dict()[key])
    if k >= len(swept):
        return swept
    lo = (len(swept) - k) // 2
    return swept[lo:lo + k]


def structural_diff(a: Program, b: Program) -> list[str]:
    """Paths where two programs differ; used to assert sweep isolation."""
    da, db = program_to_json(a), program_to_json(b)
    diffs: list[str] = []
    _diff("", da, db, diffs)
    return diffs


def _diff(path: str, a, b, out: list[str]) -> None:
    if isinstance(a, dict) and isinstance(b, dict):
        for key in sorted(set(a) | set(b)):
            if key not in a or key not in b:
                out.append(f"{path}/{key}")
            else:
                _diff(f"{path}/{key}", a[key], b[key], out)
    elif isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out.append(f"{path}/#len")
        for i, (xa, xb) in enumerate(zip(a, b)):
            _diff(f"{path}/{i}", xa, xb, out)
    elif a != b:
        out.append(path)


# ---------------------------------------------------------------------------
# Campaign manifests
# ---------------------------------------------------------------------------

def benchmark_filename(name: str) -> str:
    return name.replace("/", "__") + ".json"


def manifest_csv(benchmarks: list[Microbenchmark]) -> str:
    lines = ["name,swept,program_file"]
    for b in benchmarks:
        swept = json.dumps(b.swept_dict(), sort_keys=True).replace('"', "'")
        lines.append(f'{b.name},"{swept}",{benchmark_filename(b.name)}')
    return "\n".join(lines) + "\n"


def parse_manifest_csv(text: str) -> list[tuple[str, str]]:
    """(name, program_file) rows of a campaign manifest."""
    rows = []
    lines = text.strip().splitlines()
    for line in lines[1:]:
        name = line.split(",", 1)[0]
        filename = line.rsplit(",", 1)[1]
        rows.append((name, filename))
    return rows
