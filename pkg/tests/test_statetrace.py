"""Trace abstraction, model functions, and composition."""

import random

import pytest

from enermod.statetrace import (
    AbstractionLevel,
    DISCARD,
    ModelFunction,
    ModelFunctionError,
    Trace,
    abstract_trace,
    active_idle_function,
    active_idle_to_binary_function,
    binary_usage_function,
    compose,
    derive_binary_usage,
    discard_all_function,
    function_from_json,
    function_to_json,
    identity_function,
    instruction_model_function,
    key_identity_function,
    make_event,
    noc_hop_function,
    parse_key,
    rekey_vector,
    rule,
    sort_events,
    trace_from_lines,
    transition_function,
)
from enermod.sysconfig import manhattan


def _trace(events):
    return Trace(events=sort_events(list(events)))


def _bundle(cycle, cpu=0, group="add+add", pattern="zeros", addr=0):
    return make_event(cycle, f"cpu{cpu}", "bundle-issue",
                      group=group, pattern=pattern, addr=addr, fmt="u")


# ---------------------------------------------------------------------------
# abstraction levels
# ---------------------------------------------------------------------------

def test_levels_are_totally_ordered():
    assert (AbstractionLevel.BINARY_USAGE < AbstractionLevel.ACTIVE_IDLE
            < AbstractionLevel.FINE_GRAINED)


# ---------------------------------------------------------------------------
# abstract_trace
# ---------------------------------------------------------------------------

def test_identity_counts_distinct_events():
    t = _trace([_bundle(0), _bundle(1), _bundle(2, group="sub+sub"),
                make_event(3, "cpu0", "idle")])
    vec = abstract_trace(t, identity_function())
    assert vec.duration == 4
    assert vec.total_events == 4
    by_key = {k: c for k, c in vec.counts.items()}
    assert sum(c for k, c in by_key.items() if "add+add" in k) == 2
    assert sum(c for k, c in by_key.items() if "sub+sub" in k) == 1


def test_active_idle_sixty_forty():
    # 100-cycle single-CPU trace with 60 bundles and 40 materialized idles
    events = [_bundle(c) for c in range(60)]
    events += [make_event(c, "cpu0", "idle") for c in range(60, 100)]
    vec = abstract_trace(_trace(events), active_idle_function(per_instance=True))
    assert vec.counts == {"cpu0/active": 60, "cpu0/idle": 40}
    assert vec.duration == 100


def test_missing_rule_is_an_error():
    fn = ModelFunction(level=AbstractionLevel.FINE_GRAINED,
                       rules=(rule({"kind": "idle"}, DISCARD),))
    with pytest.raises(ModelFunctionError, match="no rule"):
        abstract_trace(_trace([_bundle(0)]), fn)


def test_hop_reduction_keys_on_all_pairs(mesh3_config):
    # one ni-transfer per ordered cluster pair; expected counts brute-forced
    clusters = mesh3_config.all_clusters()
    events = []
    cycle = 0
    for src in clusters:
        for dst in clusters:
            if src == dst:
                continue
            events.append(make_event(cycle, "ni0", "ni-transfer",
                                     src=f"{src[0]},{src[1]}",
                                     dst=f"{dst[0]},{dst[1]}",
                                     size=64, flits=8))
            cycle += 1
    vec = abstract_trace(_trace(events), noc_hop_function())
    expected = {}
    for src in clusters:
        for dst in clusters:
            if src == dst:
                continue
            key = f"noc/hops:{manhattan(src, dst)}/size:64"
            expected[key] = expected.get(key, 0) + 1
    assert vec.counts == expected
    assert set(expected) == {f"noc/hops:{h}/size:64" for h in (1, 2, 3, 4)}


def test_abstraction_is_linear_under_concat():
    rng = random.Random(7)
    parts = []
    for _ in range(3):
        events = [_bundle(c, group=rng.choice(["add+add", "sub+sub", "nop+nop"]))
                  for c in range(rng.randint(1, 20))]
        parts.append(_trace(events))
    whole = parts[0].concat(parts[1]).concat(parts[2])
    fn = instruction_model_function()
    merged = abstract_trace(parts[0], fn).add(abstract_trace(parts[1], fn))
    merged = merged.add(abstract_trace(parts[2], fn))
    got = abstract_trace(whole, fn)
    assert got.counts == merged.counts
    assert got.duration == merged.duration


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------

def _random_trace(seed):
    rng = random.Random(seed)
    events = []
    for cycle in range(rng.randint(5, 40)):
        for cpu in range(rng.randint(1, 3)):
            if rng.random() < 0.6:
                events.append(_bundle(cycle, cpu=cpu,
                                      group=rng.choice(["add+add", "nop+nop"]),
                                      pattern=rng.choice(["zeros", "ones"])))
            else:
                events.append(make_event(cycle, f"cpu{cpu}", "idle"))
    return _trace(events)


def test_compose_with_key_identity_is_f():
    t = _random_trace(1)
    f = instruction_model_function()
    composed = compose(key_identity_function(), f)
    assert abstract_trace(t, composed).counts == abstract_trace(t, f).counts


@pytest.mark.parametrize("seed", range(5))
def test_two_stage_composition_equals_direct(seed):
    # FINE -> ACTIVE_IDLE -> BINARY equals FINE -> BINARY, and equals
    # applying the stages separately.
    t = _random_trace(seed)
    ai = active_idle_function(per_instance=True)
    to_bin = active_idle_to_binary_function()
    composed = compose(to_bin, ai)
    assert composed.level == AbstractionLevel.BINARY_USAGE
    direct = abstract_trace(t, binary_usage_function(per_instance=True))
    via_compose = abstract_trace(t, composed)
    staged = rekey_vector(abstract_trace(t, ai), to_bin)
    assert via_compose.counts == direct.counts
    assert via_compose.counts == staged.counts


def test_compose_with_discard_all_empties():
    t = _random_trace(2)
    composed = compose(discard_all_function(), instruction_model_function())
    assert abstract_trace(t, composed).counts == {}


def test_compose_rejects_event_domain_outer():
    with pytest.raises(ModelFunctionError, match="domain mismatch"):
        compose(instruction_model_function(), active_idle_function())


# ---------------------------------------------------------------------------
# coarsening refinement
# ---------------------------------------------------------------------------

def test_binary_recoverable_and_totals_match():
    t = _random_trace(3)
    fine = abstract_trace(t, identity_function())
    ai = abstract_trace(t, active_idle_function(per_instance=True))
    binary = abstract_trace(t, binary_usage_function(per_instance=True))
    # used <=> active count > 0
    assert derive_binary_usage(ai).counts == {
        k.replace("/active", "/used"): 1
        for k, c in ai.counts.items() if k.endswith("/active") and c > 0}
    # per-component active+idle totals equal summed fine-grained counts
    # (identity keys are kind/component/attrs...)
    for comp in {e.component for e in t.events}:
        ai_total = sum(c for k, c in ai.counts.items() if k.startswith(comp + "/"))
        fine_total = sum(c for k, c in fine.counts.items()
                         if k.split("/")[1] == comp)
        assert ai_total == fine_total
    for key in binary.counts:
        assert key.endswith("/used")


# ---------------------------------------------------------------------------
# transition functions
# ---------------------------------------------------------------------------

def test_transition_counts_alternating_body():
    fn = transition_function()
    events = []
    seq = ["a+a", "b+b"] * 4  # a,b alternating; first event self-pairs
    for cycle, g in enumerate(seq):
        events.append(_bundle(cycle, group=g))
    vec = abstract_trace(_trace(events), fn)
    assert vec.counts == {"trans:a+a>a+a": 1, "trans:a+a>b+b": 4,
                          "trans:b+b>a+a": 3}


def test_transition_tracks_components_separately():
    fn = transition_function()
    events = [_bundle(0, cpu=0, group="a+a"), _bundle(1, cpu=0, group="b+b"),
              _bundle(0, cpu=1, group="b+b"), _bundle(1, cpu=1, group="b+b")]
    vec = abstract_trace(_trace(events), fn)
    assert vec.counts == {"trans:a+a>a+a": 1, "trans:a+a>b+b": 1,
                          "trans:b+b>b+b": 2}


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_trace_line_round_trip():
    t = _trace([_bundle(0), make_event(1, "ni0", "ni-transfer",
                                       src="0,0", dst="1,1", size=64, flits=8),
                make_event(2, "cpu0", "idle")])
    assert trace_from_lines(t.to_lines()) == t


def test_function_json_round_trip():
    for fn in (identity_function(), instruction_model_function(),
               active_idle_function(), transition_function(),
               compose(active_idle_to_binary_function(),
                       active_idle_function(per_instance=True))):
        doc = function_to_json(fn)
        assert function_from_json(doc) == fn


def test_parse_key_fields():
    rec = parse_key("cpu3/group:add+add/pat:zeros")
    assert rec["component"] == "cpu3"
    assert rec["comp_class"] == "cpu"
    assert rec["group"] == "add+add"
    rec = parse_key("cpu0/active")
    assert rec["tag"] == "active"


def test_bare_rule_list_loads_as_event_function():
    doc = [{"match": {"kind": "bundle-issue"}, "emit": "group:{group}"},
           {"match": {}, "emit": "discard"}]
    fn = function_from_json(doc)
    assert fn.domain == "event"
    assert fn.level == AbstractionLevel.FINE_GRAINED
    t = _trace([_bundle(0), make_event(1, "cpu0", "idle")])
    assert abstract_trace(t, fn).counts == {"group:add+add": 1}
