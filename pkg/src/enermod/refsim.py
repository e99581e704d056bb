"""Deterministic cycle-level reference simulator with a detailed energy model.

This oracle plays the role of the detailed low-level flow: it executes a
program bundle by bundle, expands communication into flit sequences routed
XY over the mesh, and accounts energy per component.  It is the ground
truth that models are fitted against and validated with.  Runs are bitwise
deterministic for identical inputs.

Fixed conventions (the fit absorbs them, but they must not drift):
  * One bundle per cycle per CPU, no stalls, no contention.
  * A packet of n flits traverses manhattan+1 routers, each traversal
    charged one router and one link energy quantum.
  * Same-cluster transfers move over the cluster crossbar in
    flit_payload_bytes beats and never touch NI or routers.
  * Instruction fetch decodes one memory row per bundle: compressed
    bundles occupy one word, uncompressed bundles vliw_slots words, so the
    uncompressed row space (and with it the position-dependent decoder
    depth range) is vliw_slots times smaller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .statetrace import (
    EVENT_BUNDLE,
    EVENT_DMEM,
    EVENT_FLIT,
    EVENT_IDLE,
    EVENT_NI,
    EVENT_SYNC,
    StateEvent,
    Trace,
    make_event,
    sort_events,
)
from .sysconfig import (
    Coord,
    ICLASSES,
    InstructionGroup,
    SystemConfig,
    format_coord,
    manhattan,
)

DATA_PATTERNS = ("zeros", "ones", "alt")

LEDGER_COMPONENTS = ("core", "imem", "dmem", "bus", "router", "ni", "sync",
                     "static", "unclassified")


class ParamError(ValueError):
    """Oracle parameters are malformed or violate an invariant."""


class ProgramError(ValueError):
    """A program is invalid against its system configuration."""


# ---------------------------------------------------------------------------
# Oracle parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleParams:
    """Synthetic per-event energies (pJ) and static powers (pW).

    core_energy is keyed (iclass, data pattern); dmem_access_energy by the
    accessed pattern.  Static power is per component instance.
    """

    core_energy: tuple[tuple[tuple[str, str], float], ...]
    empty_slot_energy: float
    imem_base_compressed: float
    imem_base_uncompressed: float
    imem_spatial_coeff: float
    dmem_access_energy: tuple[tuple[str, float], ...]
    bus_beat_energy: float
    router_flit_energy: float
    link_flit_energy: float
    ni_in_flit_energy: float
    ni_out_flit_energy: float
    packet_header_energy: float
    sync_energy: float
    static_cpu_pw: float
    static_router_pw: float
    static_ni_pw: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "core_energy", tuple(sorted(self.core_energy)))
        object.__setattr__(self, "dmem_access_energy",
                           tuple(sorted(self.dmem_access_energy)))
        for name in ("empty_slot_energy", "imem_base_compressed",
                     "imem_base_uncompressed", "imem_spatial_coeff",
                     "bus_beat_energy", "router_flit_energy", "link_flit_energy",
                     "ni_in_flit_energy", "ni_out_flit_energy",
                     "packet_header_energy", "sync_energy", "static_cpu_pw",
                     "static_router_pw", "static_ni_pw"):
            if getattr(self, name) < 0:
                raise ParamError(f"{name} must be >= 0")
        core = dict(self.core_energy)
        dmem = dict(self.dmem_access_energy)
        for pattern in DATA_PATTERNS:
            if pattern not in dmem:
                raise ParamError(f"dmem energy missing pattern {pattern!r}")
            if dmem[pattern] < 0:
                raise ParamError(f"dmem energy for {pattern!r} must be >= 0")
            for iclass in ICLASSES:
                if (iclass, pattern) not in core:
                    raise ParamError(f"core energy missing ({iclass}, {pattern})")
                if core[(iclass, pattern)] < 0:
                    raise ParamError(f"core energy ({iclass}, {pattern}) must be >= 0")
            if core[("NOP", pattern)] >= core[("SIMD", pattern)]:
                raise ParamError(
                    f"NOP core energy must stay below SIMD for pattern {pattern!r}")

    def core(self, iclass: str, pattern: str) -> float:
        return dict(self.core_energy)[(iclass, pattern)]

    def dmem(self, pattern: str) -> float:
        return dict(self.dmem_access_energy)[pattern]

    def imem_base(self, compressed: bool) -> float:
        return self.imem_base_compressed if compressed else self.imem_base_uncompressed

    def static_pw_total(self, config: SystemConfig) -> float:
        return (self.static_cpu_pw * config.n_cpus
                + self.static_router_pw * config.n_clusters
                + self.static_ni_pw * config.n_clusters)

    def static_pj_per_cycle(self, config: SystemConfig) -> float:
        return self.static_pw_total(config) / config.clock_hz


def default_oracle_params() -> OracleParams:
    """Shipped defaults, loosely anchored to a small embedded VLIW node:
    a NOP bundle sits near idle, SIMD roughly 9x a NOP, the data-pattern
    spread of the data memory stays small against the core spread, and the
    position term is a small fraction of any bundle's energy."""
    base = {"NOP": 1.0, "ALU": 5.0, "SIMD": 9.0, "MULDIV": 7.5,
            "LOAD": 6.0, "STORE": 6.5, "BRANCH": 4.0}
    pattern_scale = {"zeros": 1.0, "ones": 1.12, "alt": 1.06}
    core = tuple(((iclass, pattern), round(base[iclass] * scale, 6))
                 for iclass in ICLASSES
                 for pattern, scale in pattern_scale.items())
    return OracleParams(
        core_energy=core,
        empty_slot_energy=0.4,
        imem_base_compressed=2.6,
        imem_base_uncompressed=4.0,
        imem_spatial_coeff=0.1,
        dmem_access_energy=(("zeros", 3.0), ("ones", 3.4), ("alt", 3.2)),
        bus_beat_energy=1.2,
        router_flit_energy=2.0,
        link_flit_energy=0.8,
        ni_in_flit_energy=1.5,
        ni_out_flit_energy=1.5,
        packet_header_energy=6.0,
        sync_energy=25.0,
        static_cpu_pw=1.4e8,
        static_router_pw=0.7e8,
        static_ni_pw=0.35e8,
    )


def params_to_json(params: OracleParams) -> dict[str, float]:
    doc: dict[str, float] = {}
    for (iclass, pattern), value in params.core_energy:
        doc[f"core.{iclass}.{pattern}"] = value
    for pattern, value in params.dmem_access_energy:
        doc[f"dmem.{pattern}"] = value
    doc.update({
        "empty_slot": params.empty_slot_energy,
        "imem_base.compressed": params.imem_base_compressed,
        "imem_base.uncompressed": params.imem_base_uncompressed,
        "imem_spatial_coeff": params.imem_spatial_coeff,
        "bus_beat": params.bus_beat_energy,
        "router_flit": params.router_flit_energy,
        "link_flit": params.link_flit_energy,
        "ni_in_flit": params.ni_in_flit_energy,
        "ni_out_flit": params.ni_out_flit_energy,
        "packet_header": params.packet_header_energy,
        "sync": params.sync_energy,
        "static.cpu": params.static_cpu_pw,
        "static.router": params.static_router_pw,
        "static.ni": params.static_ni_pw,
    })
    return doc


def params_from_json(doc: dict[str, float]) -> OracleParams:
    core = []
    dmem = []
    scalars: dict[str, float] = {}
    names = {
        "empty_slot": "empty_slot_energy",
        "imem_base.compressed": "imem_base_compressed",
        "imem_base.uncompressed": "imem_base_uncompressed",
        "imem_spatial_coeff": "imem_spatial_coeff",
        "bus_beat": "bus_beat_energy",
        "router_flit": "router_flit_energy",
        "link_flit": "link_flit_energy",
        "ni_in_flit": "ni_in_flit_energy",
        "ni_out_flit": "ni_out_flit_energy",
        "packet_header": "packet_header_energy",
        "sync": "sync_energy",
        "static.cpu": "static_cpu_pw",
        "static.router": "static_router_pw",
        "static.ni": "static_ni_pw",
    }
    for key, value in doc.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ParamError(f"parameter {key!r} must be a number")
        if key.startswith("core."):
            _, iclass, pattern = key.split(".")
            core.append(((iclass, pattern), float(value)))
        elif key.startswith("dmem."):
            dmem.append((key.split(".", 1)[1], float(value)))
        elif key in names:
            scalars[names[key]] = float(value)
        else:
            raise ParamError(f"unknown parameter {key!r}")
    missing = sorted(set(names.values()) - set(scalars))
    if missing:
        raise ParamError(f"missing parameter(s): {', '.join(missing)}")
    return OracleParams(core_energy=tuple(sorted(core)),
                        dmem_access_energy=tuple(sorted(dmem)), **scalars)


def load_oracle_params(path: str) -> OracleParams:
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_json(json.load(fh))


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BundleOp:
    """Issue one VLIW bundle from an instruction-memory address.

    pattern is the ambient register/memory data pattern; an optional
    dmem_pattern overrides the pattern of the bundle's memory access.
    """

    group: InstructionGroup
    addr: int
    pattern: str
    dmem_pattern: str | None = None


@dataclass(frozen=True)
class SendOp:
    dst_cpu: int
    size_bytes: int


@dataclass(frozen=True)
class RecvOp:
    src_cpu: int
    size_bytes: int


@dataclass(frozen=True)
class SyncOp:
    """Standalone channel synchronization (software cost only)."""


ProgramOp = BundleOp | SendOp | RecvOp | SyncOp


@dataclass(frozen=True)
class Program:
    """Per-CPU operation lists; min_cycles pads the run with idle cycles."""

    ops: tuple[tuple[int, tuple[ProgramOp, ...]], ...]
    min_cycles: int = 0

    @staticmethod
    def from_dict(ops: dict[int, list[ProgramOp]], min_cycles: int = 0) -> "Program":
        return Program(
            ops=tuple((cpu, tuple(lst)) for cpu, lst in sorted(ops.items())),
            min_cycles=min_cycles,
        )

    def ops_dict(self) -> dict[int, tuple[ProgramOp, ...]]:
        return dict(self.ops)


def n_flits(size_bytes: int, flit_payload_bytes: int) -> int:
    return math.ceil(size_bytes / flit_payload_bytes)


def validate_program(config: SystemConfig, program: Program) -> None:
    """Reject invalid addresses, coordinates, patterns and sizes up front."""
    if program.min_cycles < 0:
        raise ProgramError("min_cycles must be >= 0")
    for cpu, ops in program.ops:
        if not 0 <= cpu < config.n_cpus:
            raise ProgramError(f"cpu id {cpu} out of range (n_cpus={config.n_cpus})")
        for op in ops:
            if isinstance(op, BundleOp):
                if len(op.group.slots) != config.vliw_slots:
                    raise ProgramError(
                        f"group {op.group.label} has {len(op.group.slots)} slots, "
                        f"config has {config.vliw_slots}")
                span = 1 if op.group.compressed else config.vliw_slots
                if not 0 <= op.addr <= config.imem_words - span:
                    raise ProgramError(
                        f"imem address {op.addr} out of range for "
                        f"{'compressed' if span == 1 else 'uncompressed'} bundle")
                if op.pattern not in DATA_PATTERNS:
                    raise ProgramError(f"unknown data pattern {op.pattern!r}")
                if op.dmem_pattern is not None and op.dmem_pattern not in DATA_PATTERNS:
                    raise ProgramError(f"unknown data pattern {op.dmem_pattern!r}")
            elif isinstance(op, (SendOp, RecvOp)):
                peer = op.dst_cpu if isinstance(op, SendOp) else op.src_cpu
                if not 0 <= peer < config.n_cpus:
                    raise ProgramError(f"peer cpu {peer} off mesh")
                if op.size_bytes < 1:
                    raise ProgramError("transfer size must be >= 1 byte")
                if op.size_bytes > config.dmem_bytes:
                    raise ProgramError(
                        f"transfer of {op.size_bytes} B exceeds dmem {config.dmem_bytes} B")


# ---------------------------------------------------------------------------
# Energy ledger
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyLedger:
    """Per-component energy record of one oracle run (the 'measurement')."""

    total_pj: float
    breakdown: tuple[tuple[str, float], ...]
    entries: tuple[tuple[int, str, float], ...]

    def breakdown_dict(self) -> dict[str, float]:
        return dict(self.breakdown)

    def component(self, name: str) -> float:
        return dict(self.breakdown)[name]

    def to_csv(self) -> str:
        lines = ["component,energy_pj"]
        lines.extend(f"{name},{value!r}" for name, value in self.breakdown)
        lines.append(f"total,{self.total_pj!r}")
        return "\n".join(lines) + "\n"


def ledger_from_csv(text: str) -> dict[str, float]:
    values: dict[str, float] = {}
    lines = text.strip().splitlines()
    for line in lines[1:]:
        name, value = line.split(",")
        values[name] = float(value)
    return values


class _Accumulator:
    """Orders energy contributions deterministically and sums per category."""

    def __init__(self) -> None:
        self.entries: list[tuple[int, str, float]] = []

    def add(self, cycle: int, component: str, pj: float) -> None:
        if pj != 0.0:
            self.entries.append((cycle, component, pj))

    def ledger(self) -> EnergyLedger:
        entries = sorted(self.entries)
        breakdown = {name: 0.0 for name in LEDGER_COMPONENTS}
        for _cycle, component, pj in entries:
            breakdown[component] += pj
        total = sum(breakdown.values())
        return EnergyLedger(total_pj=total,
                            breakdown=tuple(breakdown.items()),
                            entries=tuple(entries))


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------

def manhattan_dist(a: Coord, b: Coord) -> int:
    """Hop count between two clusters on the 2D mesh: |dx| + |dy|."""
    return manhattan(a, b)


def xy_route(src: Coord, dst: Coord) -> list[Coord]:
    """Routers traversed under XY routing, endpoints included.

    Length is always manhattan_dist(src, dst) + 1.
    """
    path = [src]
    x, y = src
    step = 1 if dst[0] > x else -1
    while x != dst[0]:
        x += step
        path.append((x, y))
    step = 1 if dst[1] > y else -1
    while y != dst[1]:
        y += step
        path.append((x, y))
    return path


def imem_spatial(params: OracleParams, config: SystemConfig, address: int) -> float:
    """Position-dependent fetch energy: coeff x popcount of the bank-local
    word index, a deterministic proxy for address-decoder-tree switching."""
    if not 0 <= address < config.imem_words:
        raise ProgramError(f"imem word address {address} out of range")
    return params.imem_spatial_coeff * _popcount(address % config.bank_words)


def _popcount(value: int) -> int:
    return bin(value).count("1")


def fetch_position_energy(params: OracleParams, config: SystemConfig,
                          address: int, compressed: bool) -> float:
    """Position term of one fetch; uncompressed bundles decode a row of
    vliw_slots words, shrinking the row index space by that factor."""
    if compressed:
        row = address
        rows_per_bank = config.bank_words
    else:
        row = address // config.vliw_slots
        rows_per_bank = max(1, config.bank_words // config.vliw_slots)
    return params.imem_spatial_coeff * _popcount(row % rows_per_bank)


def bundle_energy(params: OracleParams, config: SystemConfig, op: BundleOp) -> float:
    """Closed-form dynamic energy of one bundle issue (core + imem + dmem)."""
    core = 0.0
    for ins in op.group.slots:
        core += params.empty_slot_energy if ins is None else params.core(ins.iclass, op.pattern)
    imem = params.imem_base(op.group.compressed)
    imem += fetch_position_energy(params, config, op.addr, op.group.compressed)
    dmem = 0.0
    if op.group.accesses_dmem:
        dmem = params.dmem(op.dmem_pattern or op.pattern)
    return core + imem + dmem


def packet_energy(params: OracleParams, config: SystemConfig,
                  src: Coord, dst: Coord, size_bytes: int) -> float:
    """Closed-form dynamic energy of one packet between clusters.

    Remote: sync + header + n_flits * (ni_in + ni_out + (hops+1) * (router
    + link)).  Local (src == dst cluster): sync + crossbar beats.
    """
    flits = n_flits(size_bytes, config.flit_payload_bytes)
    if src == dst:
        return params.sync_energy + flits * params.bus_beat_energy
    hops = manhattan_dist(src, dst)
    per_flit = (params.ni_in_flit_energy + params.ni_out_flit_energy
                + (hops + 1) * (params.router_flit_energy + params.link_flit_energy))
    return params.sync_energy + params.packet_header_energy + flits * per_flit


# ---------------------------------------------------------------------------
# The simulator
# ---------------------------------------------------------------------------

def run_program(config: SystemConfig, params: OracleParams,
                program: Program) -> tuple[Trace, EnergyLedger]:
    """Execute a program and return its state trace and energy ledger.

    One bundle per cycle per CPU; a send occupies the sender for one sync
    cycle plus one injection cycle per flit; a recv occupies one cycle and
    costs nothing (channel synchronization is charged once, at the sender).
    Idle CPU cycles are materialized as explicit idle events.
    """
    validate_program(config, program)
    events: list[StateEvent] = []
    acc = _Accumulator()

    for cpu, ops in program.ops:
        cluster = config.cpu_cluster(cpu)
        comp = f"cpu{cpu}"
        t = 0
        for op in ops:
            if isinstance(op, BundleOp):
                events.append(make_event(
                    t, comp, EVENT_BUNDLE,
                    group=op.group.label, pattern=op.pattern, addr=op.addr,
                    fmt="c" if op.group.compressed else "u"))
                core = 0.0
                for ins in op.group.slots:
                    core += (params.empty_slot_energy if ins is None
                             else params.core(ins.iclass, op.pattern))
                acc.add(t, "core", core)
                imem = params.imem_base(op.group.compressed)
                imem += fetch_position_energy(params, config, op.addr,
                                              op.group.compressed)
                acc.add(t, "imem", imem)
                if op.group.accesses_dmem:
                    pattern = op.dmem_pattern or op.pattern
                    events.append(make_event(t, comp, EVENT_DMEM, pattern=pattern))
                    acc.add(t, "dmem", params.dmem(pattern))
                t += 1
            elif isinstance(op, SendOp):
                t = _emit_packet(config, params, events, acc, cpu, cluster, op, t)
            elif isinstance(op, RecvOp):
                # Receive completion is free; the cycle shows up as idle.
                t += 1
            elif isinstance(op, SyncOp):
                events.append(make_event(t, comp, EVENT_SYNC))
                acc.add(t, "sync", params.sync_energy)
                t += 1

    duration = program.min_cycles
    if events:
        duration = max(duration, max(e.cycle for e in events) + 1)
    for entry in acc.entries:
        duration = max(duration, entry[0] + 1)

    # Materialize idle events: a CPU cycle without any event is idle (the
    # cycles a blocked sender spends feeding the NI count as idle too).
    covered: dict[str, set[int]] = {}
    for event in events:
        if event.component.startswith("cpu"):
            covered.setdefault(event.component, set()).add(event.cycle)
    for cpu in range(config.n_cpus):
        comp = f"cpu{cpu}"
        occupied = covered.get(comp, set())
        for cycle in range(duration):
            if cycle not in occupied:
                events.append(make_event(cycle, comp, EVENT_IDLE))

    if duration > 0:
        static = params.static_pw_total(config) * duration / config.clock_hz
        acc.add(duration - 1, "static", static)

    return Trace(events=sort_events(events)), acc.ledger()


def _emit_packet(config: SystemConfig, params: OracleParams,
                 events: list[StateEvent], acc: _Accumulator, cpu: int,
                 src_cluster: Coord, op: SendOp, t: int) -> int:
    comp = f"cpu{cpu}"
    dst_cluster = config.cpu_cluster(op.dst_cpu)
    flits = n_flits(op.size_bytes, config.flit_payload_bytes)

    events.append(make_event(t, comp, EVENT_SYNC))
    acc.add(t, "sync", params.sync_energy)

    src_label = format_coord(src_cluster)
    dst_label = format_coord(dst_cluster)
    src_index = config.cluster_index(src_cluster)

    if src_cluster == dst_cluster:
        # Cluster-local transfer over the crossbar, one beat per flit quantum.
        events.append(make_event(
            t + 1, f"bus{src_index}", EVENT_NI,
            src=src_label, dst=dst_label, size=op.size_bytes, flits=flits))
        for beat in range(flits):
            acc.add(t + 1 + beat, "bus", params.bus_beat_energy)
        return t + 1 + flits

    events.append(make_event(
        t + 1, f"ni{src_index}", EVENT_NI,
        src=src_label, dst=dst_label, size=op.size_bytes, flits=flits))
    acc.add(t + 1, "ni", params.packet_header_energy)
    path = xy_route(src_cluster, dst_cluster)
    for flit in range(flits):
        inject = t + 1 + flit
        acc.add(inject, "ni", params.ni_in_flit_energy + params.ni_out_flit_energy)
        for hop, cluster in enumerate(path):
            router = config.cluster_index(cluster)
            events.append(make_event(
                inject + hop, f"router{router}", EVENT_FLIT,
                src=src_label, dst=dst_label, size=op.size_bytes, hop=hop))
            acc.add(inject + hop, "router", params.router_flit_energy)
            acc.add(inject + hop, "unclassified", params.link_flit_energy)
    return t + 1 + flits


# ---------------------------------------------------------------------------
# Program serialization
# ---------------------------------------------------------------------------

def program_to_json(program: Program) -> dict:
    doc_ops: dict[str, list[dict]] = {}
    for cpu, ops in program.ops:
        lst = []
        for op in ops:
            if isinstance(op, BundleOp):
                entry: dict = {"bundle": {"slots": op.group.mnemonics(),
                                          "addr": op.addr, "pattern": op.pattern}}
                if op.dmem_pattern is not None:
                    entry["bundle"]["dmem_pattern"] = op.dmem_pattern
            elif isinstance(op, SendOp):
                entry = {"send": {"dst": op.dst_cpu, "size": op.size_bytes}}
            elif isinstance(op, RecvOp):
                entry = {"recv": {"src": op.src_cpu, "size": op.size_bytes}}
            else:
                entry = {"sync": {}}
            lst.append(entry)
        doc_ops[str(cpu)] = lst
    return {"min_cycles": program.min_cycles, "cpus": doc_ops}


def program_from_json(doc: dict, isa: list) -> Program:
    from .sysconfig import InstructionGroup  # local alias for clarity

    by_name = {i.mnemonic: i for i in isa}
    ops: dict[int, list[ProgramOp]] = {}
    for cpu_str, entries in doc.get("cpus", {}).items():
        lst: list[ProgramOp] = []
        for entry in entries:
            if "bundle" in entry:
                b = entry["bundle"]
                slots = []
                for name in b["slots"]:
                    if name is None:
                        slots.append(None)
                    elif name in by_name:
                        slots.append(by_name[name])
                    else:
                        raise ProgramError(f"unknown mnemonic {name!r}")
                lst.append(BundleOp(group=InstructionGroup(slots=tuple(slots)),
                                    addr=b["addr"], pattern=b["pattern"],
                                    dmem_pattern=b.get("dmem_pattern")))
            elif "send" in entry:
                lst.append(SendOp(dst_cpu=entry["send"]["dst"],
                                  size_bytes=entry["send"]["size"]))
            elif "recv" in entry:
                lst.append(RecvOp(src_cpu=entry["recv"]["src"],
                                  size_bytes=entry["recv"]["size"]))
            elif "sync" in entry:
                lst.append(SyncOp())
            else:
                raise ProgramError(f"unknown op entry {sorted(entry)}")
        ops[int(cpu_str)] = lst
    return Program.from_dict(ops, min_cycles=doc.get("min_cycles", 0))
