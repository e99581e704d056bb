"""Reference oracle: accounting formulas, determinism, conservation."""

import math

import pytest

from enermod.refsim import (
    BundleOp,
    OracleParams,
    ParamError,
    Program,
    ProgramError,
    SendOp,
    SyncOp,
    bundle_energy,
    default_oracle_params,
    fetch_position_energy,
    imem_spatial,
    ledger_from_csv,
    manhattan_dist,
    n_flits,
    packet_energy,
    params_from_json,
    params_to_json,
    program_from_json,
    program_to_json,
    run_program,
    validate_program,
    xy_route,
)
from enermod.sysconfig import InstructionGroup, enumerate_instruction_groups


def _group(isa, label):
    from enermod.sysconfig import group_by_label
    return group_by_label(isa, 2, label)


def _popcount(x):
    return bin(x).count("1")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def test_params_round_trip(params):
    assert params_from_json(params_to_json(params)) == params


def test_params_reject_nop_above_simd(params):
    doc = params_to_json(params)
    doc["core.NOP.zeros"] = doc["core.SIMD.zeros"] + 1
    with pytest.raises(ParamError, match="NOP"):
        params_from_json(doc)


def test_params_reject_negative(params):
    doc = params_to_json(params)
    doc["sync"] = -1.0
    with pytest.raises(ParamError):
        params_from_json(doc)


def test_params_reject_unknown_key(params):
    doc = params_to_json(params)
    doc["warp_scheduler"] = 1.0
    with pytest.raises(ParamError, match="unknown parameter"):
        params_from_json(doc)


# ---------------------------------------------------------------------------
# single-bundle accounting
# ---------------------------------------------------------------------------

def test_single_nop_bundle_accounting(tiny_config, isa, params):
    group = _group(isa, "nop+nop")
    program = Program.from_dict(
        {0: [BundleOp(group=group, addr=0, pattern="zeros")]})
    trace, ledger = run_program(tiny_config, params, program)
    bundles = [e for e in trace.events if e.kind == "bundle-issue"]
    assert len(bundles) == 1
    expected = (2 * params.core("NOP", "zeros")
                + params.imem_base(False)
                + imem_spatial(params, tiny_config, 0)
                + params.static_pj_per_cycle(tiny_config) * 1)
    assert ledger.total_pj == pytest.approx(expected, rel=1e-12)
    b = ledger.breakdown_dict()
    assert b["core"] == pytest.approx(2 * params.core("NOP", "zeros"))
    assert b["dmem"] == 0.0


def test_dmem_access_emitted_for_load(tiny_config, isa, params):
    group = _group(isa, "ldw+add")
    program = Program.from_dict(
        {0: [BundleOp(group=group, addr=0, pattern="alt")]})
    trace, ledger = run_program(tiny_config, params, program)
    assert sum(1 for e in trace.events if e.kind == "dmem-access") == 1
    assert ledger.breakdown_dict()["dmem"] == pytest.approx(params.dmem("alt"))


def test_bundle_energy_closed_form(tiny_config, isa, params):
    for label, pattern in [("nop+nop", "zeros"), ("vadd+vmul", "ones"),
                           ("ldw+mul", "alt"), ("add+EMPTY", "zeros")]:
        group = _group(isa, label)
        op = BundleOp(group=group, addr=37, pattern=pattern)
        program = Program.from_dict({0: [op]})
        _, ledger = run_program(tiny_config, params, program)
        dynamic = ledger.total_pj - params.static_pj_per_cycle(tiny_config)
        assert dynamic == pytest.approx(bundle_energy(params, tiny_config, op),
                                        rel=1e-12)


def test_ordering_simd_above_nop(tiny_config, isa, params):
    simd = BundleOp(group=_group(isa, "vadd+vadd"), addr=0, pattern="zeros")
    nop = BundleOp(group=_group(isa, "nop+nop"), addr=0, pattern="zeros")
    for pattern in ("zeros", "ones", "alt"):
        s = bundle_energy(params, tiny_config, BundleOp(simd.group, 0, pattern))
        n = bundle_energy(params, tiny_config, BundleOp(nop.group, 0, pattern))
        assert s > n


def test_compressed_fetch_cheaper(tiny_config, isa, params):
    single = BundleOp(group=_group(isa, "nop+EMPTY"), addr=0, pattern="zeros")
    full = BundleOp(group=_group(isa, "nop+nop"), addr=0, pattern="zeros")
    # single slot costs one core NOP + one empty slot and a compressed fetch
    diff = (bundle_energy(params, tiny_config, full)
            - bundle_energy(params, tiny_config, single))
    expected = (params.core("NOP", "zeros") - params.empty_slot_energy
                + params.imem_base(False) - params.imem_base(True))
    assert diff == pytest.approx(expected)


# ---------------------------------------------------------------------------
# imem position term
# ---------------------------------------------------------------------------

def test_imem_spatial_examples(tiny_config, params):
    assert imem_spatial(params, tiny_config, 0) == 0.0
    assert imem_spatial(params, tiny_config, 7) == pytest.approx(
        3 * params.imem_spatial_coeff)
    with pytest.raises(ProgramError):
        imem_spatial(params, tiny_config, tiny_config.imem_words)


def test_imem_spatial_spread_over_first_800(tiny_config, params):
    # exhaustive sweep oracle: spread equals coeff x max popcount in range
    energies = [imem_spatial(params, tiny_config, a) for a in range(800)]
    max_pop = max(_popcount(a % tiny_config.bank_words) for a in range(800))
    assert max(energies) - min(energies) == pytest.approx(
        params.imem_spatial_coeff * max_pop)


def test_single_slot_range_at_least_two_slot(tiny_config, isa, params):
    # compression doubles the decoded row space, widening the range
    comp = [fetch_position_energy(params, tiny_config, a, True)
            for a in range(800)]
    unc = [fetch_position_energy(params, tiny_config, a, False)
           for a in range(800)]
    assert max(comp) - min(comp) >= max(unc) - min(unc)
    assert max(comp) - min(comp) > 0


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def test_manhattan_examples():
    assert manhattan_dist((0, 0), (0, 0)) == 0
    assert manhattan_dist((0, 0), (2, 1)) == 3


def test_route_length_matches_manhattan(mesh3_config):
    clusters = mesh3_config.all_clusters()
    for src in clusters:
        for dst in clusters:
            route = xy_route(src, dst)
            assert len(route) == manhattan_dist(src, dst) + 1
            assert route[0] == src and route[-1] == dst
            for a, b in zip(route, route[1:]):
                assert manhattan_dist(a, b) == 1


# ---------------------------------------------------------------------------
# packets
# ---------------------------------------------------------------------------

def _send_total(config, params, src, dst, size):
    src_cpu = config.cpu_id(src, 0)
    dst_cpu = config.cpu_id(dst, 0) if src != dst else config.cpu_id(dst, 1)
    program = Program.from_dict(
        {src_cpu: [SendOp(dst_cpu=dst_cpu, size_bytes=size)]})
    return run_program(config, params, program)


def test_one_flit_sizes_cost_the_same(config, params):
    _, l4 = _send_total(config, params, (0, 0), (1, 1), 4)
    _, l8 = _send_total(config, params, (0, 0), (1, 1), 8)
    assert l4.total_pj == l8.total_pj


def test_staircase_steps_at_flit_boundaries(config, params):
    totals = {}
    for size in range(374, 447, 2):
        _, ledger = _send_total(config, params, (0, 0), (1, 1), size)
        totals[size] = ledger.total_pj
    sizes = sorted(totals)
    for s1, s2 in zip(sizes, sizes[1:]):
        f1 = n_flits(s1, config.flit_payload_bytes)
        f2 = n_flits(s2, config.flit_payload_bytes)
        if f1 == f2:
            assert totals[s2] == totals[s1]
        else:
            assert totals[s2] > totals[s1]
            # a jump happens right after a multiple of 8
            assert (s2 - 2) % 8 == 0


def test_packet_monotone_nondecreasing(config, params):
    prev = None
    for size in range(4, 257, 4):
        _, ledger = _send_total(config, params, (0, 0), (1, 0), size)
        if prev is not None:
            assert ledger.total_pj >= prev
        prev = ledger.total_pj


def test_path_additivity_all_pairs(mesh3_config, params):
    # dynamic packet energy matches the closed form for every ordered pair
    size = 40
    flits = n_flits(size, mesh3_config.flit_payload_bytes)
    static_rate = params.static_pj_per_cycle(mesh3_config)
    clusters = mesh3_config.all_clusters()
    for src in clusters:
        for dst in clusters:
            if src == dst:
                continue
            trace, ledger = _send_total(mesh3_config, params, src, dst, size)
            dynamic = ledger.total_pj - static_rate * trace.duration
            hops = manhattan_dist(src, dst)
            expected = (params.sync_energy + params.packet_header_energy
                        + flits * (params.ni_in_flit_energy
                                   + params.ni_out_flit_energy
                                   + (hops + 1) * (params.router_flit_energy
                                                   + params.link_flit_energy)))
            assert dynamic == pytest.approx(expected, rel=1e-12)
            assert dynamic == pytest.approx(
                packet_energy(params, mesh3_config, src, dst, size), rel=1e-12)
            # flit events visit exactly hops+1 routers per flit
            flit_events = [e for e in trace.events if e.kind == "flit-hop"]
            assert len(flit_events) == flits * (hops + 1)


def test_local_transfer_uses_bus(config, params):
    trace, ledger = _send_total(config, params, (0, 0), (0, 0), 64)
    b = ledger.breakdown_dict()
    assert b["router"] == 0.0 and b["ni"] == 0.0
    assert b["bus"] == pytest.approx(8 * params.bus_beat_energy)
    assert b["sync"] == pytest.approx(params.sync_energy)
    assert any(e.component.startswith("bus") for e in trace.events)


# ---------------------------------------------------------------------------
# ledger invariants, determinism
# ---------------------------------------------------------------------------

def _mixed_program(config, isa):
    groups = enumerate_instruction_groups(isa, config.vliw_slots)
    ops0 = [BundleOp(group=groups[i % 40], addr=i % 100,
                     pattern=("zeros", "ones", "alt")[i % 3])
            for i in range(30)]
    ops0.append(SendOp(dst_cpu=config.n_cpus - 1, size_bytes=100))
    ops0.append(SyncOp())
    ops1 = [BundleOp(group=groups[5], addr=3, pattern="ones")] * 10
    return Program.from_dict({0: ops0, 1: ops1})


def test_determinism(config, isa, params):
    program = _mixed_program(config, isa)
    t1, l1 = run_program(config, params, program)
    t2, l2 = run_program(config, params, program)
    assert t1 == t2
    assert l1 == l2


def test_conservation(config, isa, params):
    program = _mixed_program(config, isa)
    _, ledger = run_program(config, params, program)
    total = sum(v for _, v in ledger.breakdown)
    assert abs(total - ledger.total_pj) <= 1e-9 * max(1.0, abs(ledger.total_pj))
    entry_sum = sum(pj for _, _, pj in ledger.entries)
    assert entry_sum == pytest.approx(ledger.total_pj, rel=1e-9)
    assert all(pj >= 0 for _, _, pj in ledger.entries)


def test_idle_events_materialized(config, isa, params):
    program = _mixed_program(config, isa)
    trace, _ = run_program(config, params, program)
    idle_cpus = {e.component for e in trace.events if e.kind == "idle"}
    assert f"cpu{config.n_cpus - 1}" in idle_cpus
    # every cycle of every cpu is either busy or idle
    for cpu in range(config.n_cpus):
        comp = f"cpu{cpu}"
        cycles = [e.cycle for e in trace.events if e.component == comp]
        assert len(set(cycles)) == trace.duration


def test_min_cycles_pads_with_idle(tiny_config, params):
    program = Program.from_dict({}, min_cycles=32)
    trace, ledger = run_program(tiny_config, params, program)
    assert trace.duration == 32
    assert all(e.kind == "idle" for e in trace.events)
    assert ledger.total_pj == pytest.approx(
        params.static_pj_per_cycle(tiny_config) * 32)


def test_invalid_programs_rejected(config, isa, params):
    group = _group(isa, "nop+nop")
    bad_addr = Program.from_dict(
        {0: [BundleOp(group=group, addr=config.imem_words, pattern="zeros")]})
    with pytest.raises(ProgramError, match="address"):
        run_program(config, params, bad_addr)
    bad_cpu = Program.from_dict(
        {0: [SendOp(dst_cpu=config.n_cpus, size_bytes=8)]})
    with pytest.raises(ProgramError, match="off mesh"):
        run_program(config, params, bad_cpu)
    bad_pattern = Program.from_dict(
        {0: [BundleOp(group=group, addr=0, pattern="noise")]})
    with pytest.raises(ProgramError, match="pattern"):
        run_program(config, params, bad_pattern)


def test_uncompressed_needs_room_for_its_slots(config, isa, params):
    group = _group(isa, "nop+nop")
    last_ok = config.imem_words - config.vliw_slots
    program = Program.from_dict(
        {0: [BundleOp(group=group, addr=last_ok, pattern="zeros")]})
    validate_program(config, program)
    with pytest.raises(ProgramError):
        validate_program(config, Program.from_dict(
            {0: [BundleOp(group=group, addr=last_ok + 1, pattern="zeros")]}))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_program_json_round_trip(config, isa):
    program = _mixed_program(config, isa)
    doc = program_to_json(program)
    assert program_from_json(doc, isa) == program


def test_ledger_csv_round_trip(config, isa, params):
    _, ledger = run_program(config, params, _mixed_program(config, isa))
    values = ledger_from_csv(ledger.to_csv())
    assert values["total"] == ledger.total_pj
    for name, pj in ledger.breakdown:
        assert values[name] == pj
