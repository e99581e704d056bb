"""Model construction: correlate state counts with measured energies.

A fitted model is a set of per-key constants (pJ per occurrence) plus an
optional static term (pJ per cycle) and optional parametric reducers that
replace whole key families with fitted functions of a key attribute
(linear in packet size, or staircase in the flit count).
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .statetrace import (
    AbstractionLevel,
    ModelFunction,
    StateCountVector,
    function_from_json,
    function_to_json,
    noc_hop_function,
    parse_key,
)
from .sysconfig import manhattan, parse_coord

REDUCER_LINEAR = "LINEAR"
REDUCER_STAIRCASE = "STAIRCASE"

NEGATIVE_TOL = 1e-9


class FitError(ValueError):
    """A fit is underdetermined or its inputs are malformed."""


@dataclass(frozen=True)
class Reducer:
    """Fitted function replacing one key family.

    For keys under `family`, energy per occurrence is a + b*x with x the
    named input variable parsed from the key (LINEAR) or its flit count
    ceil(x / flit_payload_bytes) (STAIRCASE).
    """

    kind: str
    family: str
    a: float
    b: float
    variable: str = "size"
    flit_payload_bytes: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (REDUCER_LINEAR, REDUCER_STAIRCASE):
            raise FitError(f"unknown reducer kind {self.kind!r}")
        if self.kind == REDUCER_STAIRCASE and not self.flit_payload_bytes:
            raise FitError("staircase reducer needs flit_payload_bytes")

    def covers(self, key: str) -> bool:
        return key == self.family or key.startswith(self.family + "/")

    def evaluate_size(self, x: float) -> float:
        if self.kind == REDUCER_LINEAR:
            return self.a + self.b * x
        return self.a + self.b * math.ceil(x / self.flit_payload_bytes)

    def evaluate_key(self, key: str) -> float:
        rec = parse_key(key)
        if self.variable not in rec:
            raise FitError(f"key {key!r} lacks reducer variable {self.variable!r}")
        return self.evaluate_size(float(rec[self.variable]))


@dataclass
class EnergyModel:
    """A state space, a granularity transform, and fitted constants."""

    level: AbstractionLevel
    function: ModelFunction
    constants: dict[str, float]
    reducers: list[Reducer] = field(default_factory=list)
    static_pj_per_cycle: float = 0.0
    provenance: dict = field(default_factory=dict)

    def reducer_for(self, key: str) -> Reducer | None:
        for reducer in self.reducers:
            if reducer.covers(key):
                return reducer
        return None

    def energy_of_key(self, key: str) -> float | None:
        """pJ per occurrence of a key, or None when the model has no entry."""
        reducer = self.reducer_for(key)
        if reducer is not None:
            return reducer.evaluate_key(key)
        return self.constants.get(key)


@dataclass
class FitReport:
    """Residual diagnostics of one fit."""

    residuals: list[float]
    max_abs_error_pj: float
    mean_rel_error: float
    rank: int
    n_unknowns: int
    rank_deficient: bool
    negative_keys: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "observations": len(self.residuals),
            "max_abs_error_pj": self.max_abs_error_pj,
            "mean_rel_error": self.mean_rel_error,
            "rank": self.rank,
            "n_unknowns": self.n_unknowns,
            "rank_deficient": self.rank_deficient,
            "negative_keys": list(self.negative_keys),
        }


def _report(predicted: np.ndarray, measured: np.ndarray, rank: int,
            n_unknowns: int, constants: dict[str, float]) -> FitReport:
    residuals = (predicted - measured).tolist()
    max_abs = max((abs(r) for r in residuals), default=0.0)
    rels = [abs(r) / abs(m) for r, m in zip(residuals, measured) if m != 0.0]
    mean_rel = sum(rels) / len(rels) if rels else 0.0
    negative = sorted(k for k, v in constants.items() if v < -NEGATIVE_TOL)
    return FitReport(residuals=residuals, max_abs_error_pj=max_abs,
                     mean_rel_error=mean_rel, rank=rank, n_unknowns=n_unknowns,
                     rank_deficient=rank < n_unknowns, negative_keys=negative)


def fit_constants(observations: list[tuple[StateCountVector, float]],
                  function: ModelFunction,
                  level: AbstractionLevel | None = None,
                  fit_static: bool = True) -> tuple[EnergyModel, FitReport]:
    """Least-squares fit of per-key constants (and a static pJ/cycle term).

    Minimizes sum((sum_k count_k*c_k + duration*p_static - measured)^2) over
    all observations.  Keys never observed get no constant.  Columns are
    ordered by sorted key, so the result is deterministic for a fixed
    observation order; rank-deficient systems are flagged and solved with
    the minimum-norm solution.
    """
    if not observations:
        raise FitError("at least one observation is required")
    keys = sorted({k for vec, _ in observations for k in vec.counts})
    n_cols = len(keys) + (1 if fit_static else 0)
    a = np.zeros((len(observations), n_cols))
    b = np.zeros(len(observations))
    index = {k: i for i, k in enumerate(keys)}
    for row, (vec, measured) in enumerate(observations):
        for key, count in vec.counts.items():
            a[row, index[key]] = count
        if fit_static:
            a[row, -1] = vec.duration
        b[row] = measured
    coef, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    constants = {k: float(coef[index[k]]) for k in keys}
    static = float(coef[-1]) if fit_static else 0.0
    report = _report(a @ coef, b, int(rank), n_cols, constants)
    provenance = {
        "observations": len(observations),
        "solver": "lstsq-min-norm",
        "function_name": function.name,
        "fitted_at": os.environ.get("ENERMOD_BUILD_DATE"),
        "signed_constants": bool(report.negative_keys),
    }
    means = per_group_pattern_means(constants)
    if means:
        provenance["group_means"] = means
    model = EnergyModel(level=level or function.level, function=function,
                        constants=constants, reducers=[],
                        static_pj_per_cycle=static, provenance=provenance)
    return model, report


def per_group_pattern_means(constants: dict[str, float]) -> dict[str, float]:
    """Per-group means over data patterns for keys group:<g>/pat:<p>."""
    sums: dict[str, list[float]] = {}
    for key, value in constants.items():
        rec = parse_key(key)
        if "group" in rec and "pat" in rec:
            sums.setdefault(str(rec["group"]), []).append(value)
    return {g: sum(vs) / len(vs) for g, vs in sorted(sums.items())}


# ---------------------------------------------------------------------------
# Packet-size regressions
# ---------------------------------------------------------------------------

def _ols_2col(x: np.ndarray, y: np.ndarray) -> tuple[float, float, int]:
    a = np.column_stack([np.ones_like(x), x])
    coef, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    return float(coef[0]), float(coef[1]), int(rank)


def fit_linear(points: list[tuple[float, float]],
               window: list[tuple[float, float]] | None = None
               ) -> tuple[float, float, FitReport]:
    """Ordinary least squares for E(s) = a + b*s.

    The fit may use a subset (window) of the points; the report always
    evaluates residuals over every provided point.
    """
    if len(points) < 2:
        raise FitError("need at least two points")
    fit_points = window if window is not None else points
    xs = np.array([p[0] for p in fit_points], dtype=float)
    ys = np.array([p[1] for p in fit_points], dtype=float)
    if len(set(xs.tolist())) < 2:
        raise FitError("underdetermined: all sizes equal")
    a, b, rank = _ols_2col(xs, ys)
    all_x = np.array([p[0] for p in points], dtype=float)
    all_y = np.array([p[1] for p in points], dtype=float)
    report = _report(a + b * all_x, all_y, rank, 2, {})
    return a, b, report


def fit_staircase(points: list[tuple[float, float]], flit_payload_bytes: int,
                  window: list[tuple[float, float]] | None = None
                  ) -> tuple[float, float, FitReport]:
    """Least squares for E(s) = a + b*ceil(s / flit_payload_bytes)."""
    if len(points) < 2:
        raise FitError("need at least two points")
    fit_points = window if window is not None else points
    steps = np.array([math.ceil(p[0] / flit_payload_bytes) for p in fit_points],
                     dtype=float)
    ys = np.array([p[1] for p in fit_points], dtype=float)
    if len(set(steps.tolist())) < 2:
        raise FitError("underdetermined: single flit count in fit window")
    a, b, rank = _ols_2col(steps, ys)
    all_steps = np.array([math.ceil(p[0] / flit_payload_bytes) for p in points],
                         dtype=float)
    all_y = np.array([p[1] for p in points], dtype=float)
    report = _report(a + b * all_steps, all_y, rank, 2, {})
    return a, b, report


# ---------------------------------------------------------------------------
# NoC model reduction
# ---------------------------------------------------------------------------

def reduce_noc_model(full: EnergyModel, tolerance: float = 1e-9) -> EnergyModel:
    """Re-key (src, dst, size) NoC constants by (hop count, size).

    Pairs sharing a hop count must agree within tolerance (they do on the
    congestion-free oracle); disagreeing families are averaged with a
    warning.  Model size shrinks from O(pairs * sizes) to O(hops * sizes).
    """
    groups: dict[str, list[float]] = {}
    constants: dict[str, float] = {}
    for key, value in full.constants.items():
        rec = parse_key(key)
        if "src" in rec and "dst" in rec and "size" in rec:
            hops = manhattan(parse_coord(str(rec["src"])), parse_coord(str(rec["dst"])))
            groups.setdefault(f"noc/hops:{hops}/size:{rec['size']}", []).append(value)
        else:
            constants[key] = value
    for key, values in sorted(groups.items()):
        spread = max(values) - min(values)
        if spread > tolerance:
            warnings.warn(
                f"constants for {key} disagree by {spread:.3e} pJ; averaging",
                stacklevel=2)
        constants[key] = sum(values) / len(values)
    provenance = dict(full.provenance)
    provenance["reduced"] = "hops"
    return EnergyModel(level=full.level, function=noc_hop_function(),
                       constants=constants, reducers=list(full.reducers),
                       static_pj_per_cycle=full.static_pj_per_cycle,
                       provenance=provenance)


def fit_packet_reducers(model: EnergyModel, kind: str = REDUCER_STAIRCASE,
                        flit_payload_bytes: int | None = None) -> EnergyModel:
    """Replace per-(hops, size) constants with one fitted function per hop
    family, shrinking the model to two coefficients per hop count."""
    families: dict[str, list[tuple[float, float]]] = {}
    constants: dict[str, float] = {}
    for key, value in model.constants.items():
        rec = parse_key(key)
        if "hops" in rec and "size" in rec:
            families.setdefault(f"noc/hops:{rec['hops']}", []).append(
                (float(rec["size"]), value))
        else:
            constants[key] = value
    reducers = list(model.reducers)
    for family, points in sorted(families.items()):
        points.sort()
        if kind == REDUCER_STAIRCASE:
            a, b, _ = fit_staircase(points, flit_payload_bytes)
        else:
            a, b, _ = fit_linear(points)
        reducers.append(Reducer(kind=kind, family=family, a=a, b=b,
                                variable="size",
                                flit_payload_bytes=flit_payload_bytes))
    provenance = dict(model.provenance)
    provenance["reducers"] = kind
    return EnergyModel(level=model.level, function=model.function,
                       constants=constants, reducers=reducers,
                       static_pj_per_cycle=model.static_pj_per_cycle,
                       provenance=provenance)


def add_reducer(model: EnergyModel, reducer: Reducer) -> EnergyModel:
    constants = {k: v for k, v in model.constants.items()
                 if not reducer.covers(k)}
    return replace(model, constants=constants,
                   reducers=list(model.reducers) + [reducer])


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

def model_to_json(model: EnergyModel, clock_hz: float | None = None) -> dict:
    clock = clock_hz or model.provenance.get("clock_hz")
    doc = {
        "level": model.level.name,
        "function_ref": model.function.name,
        "function": function_to_json(model.function),
        "constants": {k: model.constants[k] for k in sorted(model.constants)},
        "reducers": [{
            "kind": r.kind, "family": r.family, "a": r.a, "b": r.b,
            "variable": r.variable, "flit_payload_bytes": r.flit_payload_bytes,
        } for r in model.reducers],
        "static_power_pw": (model.static_pj_per_cycle * clock) if clock else None,
        "static_pj_per_cycle": model.static_pj_per_cycle,
        "provenance": dict(model.provenance, clock_hz=clock),
    }
    return doc


def model_from_json(doc: dict) -> EnergyModel:
    return EnergyModel(
        level=AbstractionLevel[doc["level"]],
        function=function_from_json(doc["function"]),
        constants=dict(doc["constants"]),
        reducers=[Reducer(kind=r["kind"], family=r["family"], a=r["a"], b=r["b"],
                          variable=r.get("variable", "size"),
                          flit_payload_bytes=r.get("flit_payload_bytes"))
                  for r in doc.get("reducers", [])],
        static_pj_per_cycle=doc.get("static_pj_per_cycle", 0.0),
        provenance=doc.get("provenance", {}),
    )


def save_model(model: EnergyModel, path: str, clock_hz: float | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(model, clock_hz), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> EnergyModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
