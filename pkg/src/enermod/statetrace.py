"""System-state events and the model functions that change their granularity.

A trace is a sequence of state-transition events at the simulator's native
granularity.  A model function maps each event (or each already-produced
model-state key) to the coarser state space a model's constants live in;
aggregating the mapped keys yields the count vector that multiplies those
constants.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from enum import IntEnum

from .sysconfig import manhattan, parse_coord

EVENT_BUNDLE = "bundle-issue"
EVENT_FLIT = "flit-hop"
EVENT_NI = "ni-transfer"
EVENT_DMEM = "dmem-access"
EVENT_SYNC = "sync"
EVENT_IDLE = "idle"

EVENT_KINDS = (EVENT_BUNDLE, EVENT_FLIT, EVENT_NI, EVENT_DMEM, EVENT_SYNC, EVENT_IDLE)

DISCARD = "discard"

_INT_RE = re.compile(r"^-?\d+$")


class TraceError(ValueError):
    """A trace document or event is malformed."""


class ModelFunctionError(ValueError):
    """A model function is not total over its input or is used outside its domain."""


class AbstractionLevel(IntEnum):
    """Granularity of the state description; higher is finer."""

    BINARY_USAGE = 1
    ACTIVE_IDLE = 2
    FINE_GRAINED = 3


# ---------------------------------------------------------------------------
# Events and traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateEvent:
    """One state transition: a component did something at a cycle."""

    cycle: int
    component: str
    kind: str
    attrs: tuple[tuple[str, object], ...] = ()

    def attr_dict(self) -> dict[str, object]:
        return dict(self.attrs)

    def payload(self) -> str:
        return " ".join(f"{k}={v}" for k, v in sorted(self.attrs))


def make_event(cycle: int, component: str, kind: str, **attrs: object) -> StateEvent:
    if kind not in EVENT_KINDS:
        raise TraceError(f"unknown event kind {kind!r}")
    return StateEvent(cycle=cycle, component=component, kind=kind,
                      attrs=tuple(sorted(attrs.items())))


@dataclass(frozen=True)
class Trace:
    """An immutable event sequence in canonical (cycle, component) order."""

    events: tuple[StateEvent, ...]

    @property
    def duration(self) -> int:
        if not self.events:
            return 0
        return max(e.cycle for e in self.events) + 1

    def concat(self, other: "Trace") -> "Trace":
        """Append another trace, shifting its cycles past this trace's end."""
        offset = self.duration
        shifted = tuple(replace(e, cycle=e.cycle + offset) for e in other.events)
        return Trace(events=self.events + shifted)

    def to_lines(self) -> list[str]:
        return [f"{e.cycle}\t{e.component}\t{e.kind}\t{e.payload()}" for e in self.events]


def sort_events(events: list[StateEvent]) -> tuple[StateEvent, ...]:
    return tuple(sorted(events, key=lambda e: (e.cycle, e.component, e.kind, e.attrs)))


def trace_from_lines(lines) -> Trace:
    events = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise TraceError(f"line {lineno}: expected 4 tab-separated fields")
        cycle, component, kind, payload = parts
        attrs: dict[str, object] = {}
        if payload:
            for item in payload.split(" "):
                k, v = item.split("=", 1)
                attrs[k] = int(v) if _INT_RE.match(v) else v
        events.append(make_event(int(cycle), component, kind, **attrs))
    return Trace(events=sort_events(events))


def component_class(component: str) -> str:
    """Strip the instance index: cpu12 -> cpu, router3 -> router."""
    stripped = component.rstrip("0123456789")
    return stripped if stripped else component


class _EventRecord(dict):
    """Flat field view of an event for rule matching and key templates.

    Derived fields are materialized lazily: the component class, the hop
    count recomputed from endpoint coordinates, and the identity key.
    """

    def __init__(self, event: StateEvent) -> None:
        super().__init__(event.attrs)
        self["kind"] = event.kind
        self["component"] = event.component
        self._event = event

    def __missing__(self, name: str):
        if name == "comp_class":
            value = component_class(self._event.component)
        elif name == "hops" and "src" in self and "dst" in self:
            value = manhattan(parse_coord(str(self["src"])),
                              parse_coord(str(self["dst"])))
        elif name == "__identity__":
            value = _identity_key(self._event)
        else:
            raise KeyError(name)
        self[name] = value
        return value

    def __contains__(self, name) -> bool:
        if super().__contains__(name):
            return True
        try:
            self[name]
        except KeyError:
            return False
        return True


def event_record(event: StateEvent) -> dict[str, object]:
    return _EventRecord(event)


def _identity_key(event: StateEvent) -> str:
    parts = [event.kind, event.component]
    parts.extend(f"{k}:{v}" for k, v in sorted(event.attrs))
    return "/".join(parts)


def parse_key(key: str) -> dict[str, object]:
    """Parse a model-state key back into fields for key-level rules.

    Segments are '/'-separated; 'name:value' segments become fields, the
    first bare segment is the component and any later bare segment a tag.
    """
    rec: dict[str, object] = {"key": key}
    for seg in key.split("/"):
        if ":" in seg:
            name, value = seg.split(":", 1)
            rec[name] = value
        elif "component" not in rec:
            rec["component"] = seg
            rec["comp_class"] = component_class(seg)
        else:
            rec["tag"] = seg
    return rec


# ---------------------------------------------------------------------------
# Model functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rule:
    """First-match mapping rule: field predicates -> key template or discard."""

    match: tuple[tuple[str, object], ...]
    emit: str

    def matches(self, rec: dict[str, object]) -> bool:
        for name, want in self.match:
            if name not in rec:
                return False
            have = rec[name]
            if isinstance(want, (list, tuple)):
                if have not in want and str(have) not in [str(w) for w in want]:
                    return False
            elif have != want and str(have) != str(want):
                return False
        return True


def rule(match: dict[str, object], emit: str) -> Rule:
    return Rule(match=tuple(sorted(match.items())), emit=emit)


@dataclass(frozen=True)
class ModelFunction:
    """Granularity transform from events (or keys) to model-state keys.

    domain "event" functions map raw StateEvents; domain "key" functions
    rewrite already-produced keys and can be composed onto any function.
    A pairwise function keys consecutive values of one attribute per
    component (transition models); the first event of a component counts
    as a self-transition.
    """

    level: AbstractionLevel
    rules: tuple[Rule, ...]
    domain: str = "event"
    name: str = ""
    pair_attr: str | None = None
    pair_template: str = ""
    pair_kinds: tuple[str, ...] = ()
    then: "ModelFunction | None" = None

    def __post_init__(self) -> None:
        if self.domain not in ("event", "key"):
            raise ModelFunctionError(f"unknown domain {self.domain!r}")

    # -- application ---------------------------------------------------------

    def _emit(self, rec: dict[str, object], what: str) -> str | None:
        for r in self.rules:
            if r.matches(rec):
                if r.emit == DISCARD:
                    return None
                return _fill(r.emit, rec, what)
        raise ModelFunctionError(f"no rule or discard directive for {what}")

    def _chain(self, key: str | None) -> str | None:
        if key is None or self.then is None:
            return key
        return self.then.rekey(key)

    def key_for_event(self, event: StateEvent) -> str | None:
        """Map one event to its model-state key, or None when discarded."""
        if self.domain != "event":
            raise ModelFunctionError("key-domain function applied to an event")
        if self.pair_attr is not None and event.kind in self.pair_kinds:
            raise ModelFunctionError(
                "pairwise functions require stream context; use iter_event_keys")
        rec = event_record(event)
        return self._chain(self._emit(rec, f"event kind {event.kind!r}"))

    def rekey(self, key: str) -> str | None:
        if self.domain != "key":
            raise ModelFunctionError("event-domain function applied to a key")
        rec = parse_key(key)
        return self._chain(self._emit(rec, f"key {key!r}"))


def _fill(template: str, rec: dict[str, object], what: str) -> str:
    try:
        return template.format_map(rec)
    except KeyError as exc:
        raise ModelFunctionError(
            f"template {template!r} needs field {exc.args[0]!r} absent from {what}") from exc


def compose(f: ModelFunction, g: ModelFunction) -> ModelFunction:
    """Composition applying g first, then f to g's output keys.

    abstract_trace(t, compose(f, g)) equals applying the two stages
    separately for every trace.
    """
    if f.domain != "key":
        raise ModelFunctionError(
            "domain mismatch: outer function of a composition must be key-domain")
    inner = g.then if g.then is None else compose(f, g.then)
    chained = f if g.then is None else inner
    return replace(g, then=chained, level=f.level,
                   name=f"{f.name or 'f'}*{g.name or 'g'}")


def iter_event_keys(trace: Trace, fn: ModelFunction):
    """Yield (event, key-or-None) under fn, handling pairwise functions.

    The mapping depends only on (component, kind, attrs), so repeated
    events hit a memo instead of re-running the rules.  Pairwise state is
    tracked per component in (cycle-sorted) stream order.
    """
    if fn.domain != "event":
        raise ModelFunctionError("traces can only be abstracted by event-domain functions")
    if fn.pair_attr is None:
        memo: dict[tuple, str | None] = {}
        for event in trace.events:
            ident = (event.component, event.kind, event.attrs)
            if ident in memo:
                yield event, memo[ident]
            else:
                key = fn.key_for_event(event)
                memo[ident] = key
                yield event, key
        return
    last: dict[str, object] = {}
    ordered = sorted(trace.events, key=lambda e: (e.component, e.cycle, e.kind, e.attrs))
    for event in ordered:
        if event.kind in fn.pair_kinds:
            rec = event_record(event)
            if fn.pair_attr not in rec:
                raise ModelFunctionError(
                    f"pairwise attribute {fn.pair_attr!r} absent from {event.kind} event")
            cur = rec[fn.pair_attr]
            prev = last.get(event.component, cur)
            last[event.component] = cur
            key = fn.pair_template.format_map({"prev": prev, "cur": cur})
            yield event, fn._chain(key)
        else:
            rec = event_record(event)
            yield event, fn._chain(fn._emit(rec, f"event kind {event.kind!r}"))


# ---------------------------------------------------------------------------
# Count vectors
# ---------------------------------------------------------------------------

@dataclass
class StateCountVector:
    """Occurrence counts per model-state key over an observation window."""

    counts: dict[str, int]
    duration: int

    def __post_init__(self) -> None:
        for key, count in self.counts.items():
            if count < 0:
                raise TraceError(f"negative count for key {key!r}")
        if self.duration < 0:
            raise TraceError("negative duration")

    @property
    def total_events(self) -> int:
        return sum(self.counts.values())

    def get(self, key: str) -> int:
        return self.counts.get(key, 0)

    def add(self, other: "StateCountVector") -> "StateCountVector":
        merged = dict(self.counts)
        for key, count in other.counts.items():
            merged[key] = merged.get(key, 0) + count
        return StateCountVector(counts=merged, duration=self.duration + other.duration)


def abstract_trace(trace: Trace, fn: ModelFunction) -> StateCountVector:
    """Aggregate a trace into per-key counts under a model function.

    Linear by construction: counts of a concatenation are the per-key sums.
    Duration is last cycle + 1.
    """
    counts: dict[str, int] = {}
    for _event, key in iter_event_keys(trace, fn):
        if key is not None:
            counts[key] = counts.get(key, 0) + 1
    return StateCountVector(counts=counts, duration=trace.duration)


def rekey_vector(vector: StateCountVector, fn: ModelFunction) -> StateCountVector:
    """Apply a key-domain function to an already-aggregated vector."""
    counts: dict[str, int] = {}
    for key, count in vector.counts.items():
        new = fn.rekey(key)
        if new is not None:
            counts[new] = counts.get(new, 0) + count
    return StateCountVector(counts=counts, duration=vector.duration)


def derive_binary_usage(active_idle: StateCountVector) -> StateCountVector:
    """Recover the binary-usage vector: used iff the active count is > 0."""
    counts: dict[str, int] = {}
    for key, count in active_idle.counts.items():
        rec = parse_key(key)
        if rec.get("tag") == "active" and count > 0:
            counts[f"{rec['component']}/used"] = 1
    return StateCountVector(counts=counts, duration=active_idle.duration)


# ---------------------------------------------------------------------------
# Shipped model functions
# ---------------------------------------------------------------------------

def identity_function() -> ModelFunction:
    """Fine-grained identity: one key per distinct (kind, component, attributes)."""
    return ModelFunction(
        level=AbstractionLevel.FINE_GRAINED,
        rules=(rule({}, "{__identity__}"),),
        name="identity",
    )


def instruction_model_function() -> ModelFunction:
    """Fine-grained modeling keys: per (group, pattern) bundles, per-pattern
    dmem accesses, a single sync key and hop/size communication keys.

    The instruction-memory position is deliberately not part of the key;
    component ids are dropped so constants transfer across CPUs.
    """
    return ModelFunction(
        level=AbstractionLevel.FINE_GRAINED,
        rules=(
            rule({"kind": EVENT_BUNDLE}, "group:{group}/pat:{pattern}"),
            rule({"kind": EVENT_DMEM}, "dmem/pat:{pattern}"),
            rule({"kind": EVENT_SYNC}, "sync"),
            rule({"kind": EVENT_NI}, "noc/hops:{hops}/size:{size}"),
            rule({"kind": EVENT_FLIT}, DISCARD),
            rule({"kind": EVENT_IDLE}, DISCARD),
        ),
        name="instruction-fine",
    )


def noc_pair_function() -> ModelFunction:
    """Fine NoC keys over all (source, destination, size) permutations."""
    return ModelFunction(
        level=AbstractionLevel.FINE_GRAINED,
        rules=(
            rule({"kind": EVENT_NI}, "noc/src:{src}/dst:{dst}/size:{size}"),
            rule({"kind": EVENT_BUNDLE}, "group:{group}/pat:{pattern}"),
            rule({"kind": EVENT_DMEM}, "dmem/pat:{pattern}"),
            rule({"kind": EVENT_SYNC}, "sync"),
            rule({"kind": EVENT_FLIT}, DISCARD),
            rule({"kind": EVENT_IDLE}, DISCARD),
        ),
        name="noc-pair",
    )


def noc_hop_function() -> ModelFunction:
    """Reduced NoC keys: endpoint coordinates collapsed to the hop count."""
    return ModelFunction(
        level=AbstractionLevel.FINE_GRAINED,
        rules=(
            rule({"kind": EVENT_NI}, "noc/hops:{hops}/size:{size}"),
            rule({"kind": EVENT_BUNDLE}, "group:{group}/pat:{pattern}"),
            rule({"kind": EVENT_DMEM}, "dmem/pat:{pattern}"),
            rule({"kind": EVENT_SYNC}, "sync"),
            rule({"kind": EVENT_FLIT}, DISCARD),
            rule({"kind": EVENT_IDLE}, DISCARD),
        ),
        name="noc-hop",
    )


def active_idle_function(per_instance: bool = False) -> ModelFunction:
    """Per-component active/idle keys.

    A dmem access shares its cycle with the issuing bundle and is discarded
    so active counts stay in cycle units.  Shared components without idle
    events (routers, NIs, the bus) contribute active keys only.
    """
    comp = "{component}" if per_instance else "{comp_class}"
    return ModelFunction(
        level=AbstractionLevel.ACTIVE_IDLE,
        rules=(
            rule({"kind": EVENT_IDLE}, comp + "/idle"),
            rule({"kind": EVENT_DMEM}, DISCARD),
            rule({}, comp + "/active"),
        ),
        name="active-idle" + ("-inst" if per_instance else ""),
    )


def binary_usage_function(per_instance: bool = False) -> ModelFunction:
    """Coarsest keys: a component is merely used, the active/idle split is
    gone.  Strictly coarser than active_idle_function (active and idle keys
    merge into one), so refining the level can never hurt the fit."""
    comp = "{component}" if per_instance else "{comp_class}"
    return ModelFunction(
        level=AbstractionLevel.BINARY_USAGE,
        rules=(
            rule({"kind": EVENT_DMEM}, DISCARD),
            rule({}, comp + "/used"),
        ),
        name="binary-usage" + ("-inst" if per_instance else ""),
    )


def active_idle_to_binary_function() -> ModelFunction:
    """Key-domain coarsening from active/idle keys to binary-usage keys."""
    return ModelFunction(
        level=AbstractionLevel.BINARY_USAGE,
        domain="key",
        rules=(
            rule({"tag": "idle"}, "{component}/used"),
            rule({"tag": "active"}, "{component}/used"),
        ),
        name="ai-to-binary",
    )


def key_identity_function(level: AbstractionLevel = AbstractionLevel.FINE_GRAINED) -> ModelFunction:
    """Key-domain identity; compose(identity, f) behaves exactly like f."""
    return ModelFunction(level=level, domain="key",
                         rules=(rule({}, "{key}"),), name="key-identity")


def discard_all_function(level: AbstractionLevel = AbstractionLevel.BINARY_USAGE,
                         domain: str = "key") -> ModelFunction:
    return ModelFunction(level=level, domain=domain,
                         rules=(rule({}, DISCARD),), name="discard-all")


def transition_function(attr: str = "group",
                        kinds: tuple[str, ...] = (EVENT_BUNDLE,)) -> ModelFunction:
    """Comprehensive pairwise keys trans:<prev>><cur> over one attribute.

    Everything outside the paired kinds is discarded; a component's first
    event pairs with itself.
    """
    return ModelFunction(
        level=AbstractionLevel.FINE_GRAINED,
        rules=(rule({}, DISCARD),),
        pair_attr=attr,
        pair_template="trans:{prev}>{cur}",
        pair_kinds=kinds,
        name=f"transition-{attr}",
    )


_BUILTINS = {
    "identity": identity_function,
    "instruction-fine": instruction_model_function,
    "noc-pair": noc_pair_function,
    "noc-hop": noc_hop_function,
    "active-idle": active_idle_function,
    "binary-usage": binary_usage_function,
    "ai-to-binary": active_idle_to_binary_function,
}


def builtin_function(name: str) -> ModelFunction:
    if name not in _BUILTINS:
        raise ModelFunctionError(
            f"unknown function {name!r}; available: {sorted(_BUILTINS)}")
    return _BUILTINS[name]()


# ---------------------------------------------------------------------------
# Model-function serialization (rule files)
# ---------------------------------------------------------------------------

def function_to_json(fn: ModelFunction) -> dict:
    doc: dict = {
        "level": fn.level.name,
        "domain": fn.domain,
        "name": fn.name,
        "rules": [{"match": dict(r.match), "emit": r.emit} for r in fn.rules],
    }
    if fn.pair_attr is not None:
        doc["pair"] = {"attr": fn.pair_attr, "template": fn.pair_template,
                       "kinds": list(fn.pair_kinds)}
    if fn.then is not None:
        doc["then"] = function_to_json(fn.then)
    return doc


def function_from_json(doc) -> ModelFunction:
    if isinstance(doc, list):
        # bare rule list: a fine-grained event-domain function
        doc = {"level": "FINE_GRAINED", "rules": doc}
    pair = doc.get("pair")
    return ModelFunction(
        level=AbstractionLevel[doc["level"]],
        domain=doc.get("domain", "event"),
        rules=tuple(rule(r["match"], r["emit"]) for r in doc["rules"]),
        name=doc.get("name", ""),
        pair_attr=pair["attr"] if pair else None,
        pair_template=pair["template"] if pair else "",
        pair_kinds=tuple(pair["kinds"]) if pair else (),
        then=function_from_json(doc["then"]) if "then" in doc else None,
    )


def load_function(path: str) -> ModelFunction:
    with open(path, "r", encoding="utf-8") as fh:
        return function_from_json(json.load(fh))
