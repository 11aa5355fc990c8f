"""Verification suites, scenario configuration and report persistence.

A suite runs one family of checks over the configured grid sizes and returns
a :class:`SuiteRecord`.  Each :class:`Check` carries the tolerance it was
judged against, the residual series it was computed from and, for
discretization-limited identities, a convergence table with the fitted order.

Checks flagged ``control`` are negative controls: deliberately broken inputs
that the check should reject.  A suite passes when its regular checks pass and
its controls fail.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .calculus import (
    FunctionSpec,
    QuadratureConfig,
    cmx_exp,
    differential,
    duhamel_expansion,
    duhamel_integrands,
    duhamel_residual,
    exp_power_series,
    fourier_apply,
    ito_functional_integrands,
    ito_functional_residual,
    ito_second_differential,
    series_integrands,
    spectral_apply,
    stratonovich_residual,
)
from .chebyshev import BlockFunction
from .cmx import (
    ChaosMatrix,
    ScalarMatrix,
    _embedding,
    adaptedness_residual,
    ampliate,
    analytic_radius_estimate,
    control_matrix,
)
from .fock import CapacityError, exponential_amplitudes, fock_space
from .processes import (
    CmxProcess,
    Quadruple,
    future_shifted_process,
    perturbation_quadruple,
    scenario,
    scenario_names,
)
from .qsi import (
    LABELS,
    LabeledIntegrand,
    ProbeFamily,
    buffered_norm,
    exp_matrix_element,
    integral_past,
    ito_product_residual,
    power_quadruple,
    power_recursion_residual,
    power_residual,
    qs_integral,
    verify_bounds_adjoints,
)

__all__ = [
    "SUITES",
    "TOLERANCES",
    "CONFIG_SCHEMA",
    "ConfigError",
    "ScenarioConfig",
    "Check",
    "SuiteRecord",
    "VerificationReport",
    "fit_order",
    "run_suite",
    "run_suites",
    "emit_report",
    "load_report",
    "merge_reports",
    "report_csv_rows",
]

TOLERANCES = {
    "exact": 1e-12,
    "bound": 1e-10,
    "quadrature": 1e-8,
    "oracle": 1e-10,
    "symmetrization": 1e-9,
    "group_law": 1e-9,
    "kernel_bound": 1e-8,
    "vacuum": 5e-3,
    "order_min": 0.7,
    "order_max": 1.5,
    "stratonovich_order_min": 0.7,
    "adapted_violation": 1e-3,
    "inflation": 10.0,
    "radius_fraction": 0.9,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_bins": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                },
            },
        },
        "truncation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "J": {"type": "integer", "minimum": 1},
                "buffer": {"type": "integer", "minimum": 0},
            },
        },
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": ["string", "null"]},
                "params": {"type": "object"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "u_order": {"type": "integer", "minimum": 1},
                "p_max": {"type": "number", "exclusiveMinimum": 0},
                "p_points": {"type": "integer", "minimum": 3},
            },
        },
        "suites": {"type": "array", "items": {"type": "string"}},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in TOLERANCES},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": ["string", "null"]},
                "format": {"enum": ["json", "csv", "both"]},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid scenario configuration."""


# -- configuration ---------------------------------------------------------------


@dataclass
class ScenarioConfig:
    """Everything a verification run depends on.

    ``scenario`` is None for the built-in scenario set of each suite; a name
    restricts scenario-generic suites to that one scenario.
    """

    n_bins: list = field(default_factory=lambda: [2, 4, 8])
    max_level: int = 6
    buffer: int = 2
    scenario: str | None = None
    scenario_params: dict = field(default_factory=dict)
    seed: int = 0
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    suites: list = field(default_factory=lambda: list(SUITES))
    tolerances: dict = field(default_factory=dict)
    out_dir: str | None = None
    out_format: str = "json"

    def __post_init__(self):
        self.n_bins = sorted({int(n) for n in self.n_bins})
        if not self.n_bins or self.n_bins[0] < 1:
            raise ConfigError("grid needs at least one positive n_bins")
        if self.buffer > self.max_level:
            raise ConfigError(f"buffer {self.buffer} exceeds J = {self.max_level}")
        if self.scenario is not None and self.scenario not in scenario_names():
            raise ConfigError(f"unknown scenario {self.scenario!r}; known: {', '.join(scenario_names())}")
        unknown = [s for s in self.suites if s not in SUITES]
        if unknown:
            raise ConfigError(f"unknown suite(s): {', '.join(unknown)}")
        bad = set(self.tolerances) - set(TOLERANCES)
        if bad:
            raise ConfigError(f"unknown tolerance key(s): {', '.join(sorted(bad))}")
        if self.out_format not in ("json", "csv", "both"):
            raise ConfigError(f"unknown output format {self.out_format!r}")

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, TOLERANCES[key]))

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {path}: {exc.message}") from None
        grid = doc.get("grid", {})
        trunc = doc.get("truncation", {})
        scen = doc.get("scenario", {})
        out = doc.get("output", {})
        kwargs = dict(
            scenario=scen.get("name"),
            scenario_params=dict(scen.get("params", {})),
            seed=scen.get("seed", 0),
            quadrature=QuadratureConfig(**doc.get("quadrature", {})),
            tolerances=dict(doc.get("tolerances", {})),
            out_dir=out.get("dir"),
            out_format=out.get("format", "json"),
        )
        if "n_bins" in grid:
            kwargs["n_bins"] = grid["n_bins"]
        if "J" in trunc:
            kwargs["max_level"] = trunc["J"]
        if "buffer" in trunc:
            kwargs["buffer"] = trunc["buffer"]
        if "suites" in doc:
            kwargs["suites"] = list(doc["suites"])
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "grid": {"n_bins": list(self.n_bins)},
            "truncation": {"J": self.max_level, "buffer": self.buffer},
            "scenario": {"name": self.scenario, "params": dict(self.scenario_params), "seed": self.seed},
            "quadrature": self.quadrature.to_dict(),
            "suites": list(self.suites),
            "tolerances": dict(self.tolerances),
            "output": {"dir": self.out_dir, "format": self.out_format},
        }

    @property
    def level(self) -> int:
        return self.max_level - self.buffer


# -- records ------------------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return None if math.isnan(x) else x
    if isinstance(x, complex):
        return [_clean(x.real), _clean(x.imag)]
    return x


@dataclass
class Check:
    """One judged quantity.

    ``criterion`` names the rule (``max``: value <= limit, ``min``: value >=
    limit, ``order``: fitted order in [lo, hi]) and ``limit`` the tolerance.
    ``series`` rows are (n_bins, J, t, residual).
    """

    name: str
    status: str
    criterion: str
    limit: object
    value: float | None
    scenario: str = ""
    control: bool = False
    series: list = field(default_factory=list)
    convergence: dict | None = None
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return _clean(asdict(self))


@dataclass
class SuiteRecord:
    suite: str
    status: str
    checks: list = field(default_factory=list)
    wall_time: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "status": self.status,
            "wall_time": _clean(self.wall_time),
            "error": self.error,
            "checks": [c.to_dict() for c in self.checks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteRecord":
        checks = [Check(**c) for c in d.get("checks", [])]
        return cls(d["suite"], d["status"], checks, d.get("wall_time", 0.0), d.get("error"))


@dataclass
class VerificationReport:
    config: dict
    suites: list = field(default_factory=list)
    created: str = ""

    @property
    def status(self) -> str:
        states = {s.status for s in self.suites}
        if "error" in states:
            return "error"
        if states - {"pass"}:
            return "fail"
        return "pass"

    @property
    def exit_code(self) -> int:
        return {"pass": 0, "fail": 1, "error": 2}[self.status]

    @property
    def seed(self) -> int:
        return self.config.get("scenario", {}).get("seed", 0)

    def suite(self, name: str) -> SuiteRecord:
        for s in self.suites:
            if s.suite == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "created": self.created,
            "seed": self.seed,
            "status": self.status,
            "config": _clean(self.config),
            "suites": [s.to_dict() for s in self.suites],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationReport":
        return cls(d["config"], [SuiteRecord.from_dict(s) for s in d.get("suites", [])], d.get("created", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- judging ------------------------------------------------------------------------


def fit_order(n_bins, residuals) -> float:
    """Least-squares slope of log residual against log dt."""
    n = np.asarray(n_bins, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if len(n) < 2 or np.any(r <= 0) or not np.all(np.isfinite(r)):
        return math.nan
    return float(np.polyfit(-np.log(n), np.log(r), 1)[0])


def _judge_max(value, limit) -> str:
    return "pass" if value is not None and np.isfinite(value) and value <= limit else "fail"


def _judge_min(value, limit) -> str:
    return "pass" if value is not None and not math.isnan(value) and value >= limit else "fail"


def _rows(n, J, times, residuals):
    return [[int(n), int(J), float(t), float(r)] for t, r in zip(times, residuals)]


def max_check(name, value, limit, scenario="", series=None, control=False, **extras) -> Check:
    return Check(name, _judge_max(value, limit), "max", float(limit), _clean(value), scenario,
                 control, series or [], None, _clean(extras))


def min_check(name, value, limit, scenario="", series=None, control=False, **extras) -> Check:
    return Check(name, _judge_min(value, limit), "min", float(limit), _clean(value), scenario,
                 control, series or [], None, _clean(extras))


def order_check(name, cfg: ScenarioConfig, sizes, residuals, scenario="", series=None,
                control=False, lo=None, hi=None, **extras) -> Check:
    """Judge a convergence table by its fitted order.

    A table whose residuals all sit below the exact-identity tolerance has
    no order to fit; it passes as exact.  Fewer than three sizes is
    inconclusive.
    """
    lo = cfg.tol("order_min") if lo is None else lo
    hi = cfg.tol("order_max") if hi is None else hi
    order = fit_order(sizes, residuals)
    table = {"n_bins": list(sizes), "residual": list(residuals), "order": order}
    if len(sizes) >= 1 and max(residuals) <= cfg.tol("exact"):
        status = "pass"
        table["exact"] = True
    elif len(sizes) < 3:
        status = "inconclusive"
    elif math.isnan(order):
        status = "fail"
    else:
        status = "pass" if lo <= order <= hi else "fail"
    return Check(name, status, "order", [float(lo), float(hi)], _clean(order), scenario, control,
                 series or [], _clean(table), _clean(extras))


def _suite_status(checks) -> str:
    regular = [c for c in checks if not c.control]
    controls = [c for c in checks if c.control]
    if any(c.status == "fail" for c in regular) or any(c.status != "fail" for c in controls):
        return "fail"
    if any(c.status == "inconclusive" for c in regular):
        return "inconclusive"
    return "pass"


# -- scenario helpers ---------------------------------------------------------------


def _scenario_params(cfg: ScenarioConfig, name: str, params: dict) -> dict:
    out = dict(params)
    if name == "kernel_band":
        out.setdefault("seed", cfg.seed)
    if name == "perturbed":
        out.setdefault("seed", cfg.seed + 1)
    return out


def _build(cfg, name, params, n):
    return scenario(name, n, cfg.max_level, **_scenario_params(cfg, name, params))


def _scenarios(cfg: ScenarioConfig, defaults, gauge_free=False):
    """(label, builder) pairs: the configured scenario or the suite defaults."""
    if cfg.scenario is not None:
        chosen = [(cfg.scenario, dict(cfg.scenario_params))]
    else:
        chosen = defaults
    out = []
    for name, params in chosen:
        def build(n, name=name, params=params):
            Q = _build(cfg, name, params, n)
            return Q[1] if isinstance(Q, tuple) else Q
        label = name if not params else f"{name}({', '.join(f'{k}={v}' for k, v in sorted(params.items()))})"
        out.append((label, build))
    return out


def _spot_n(cfg: ScenarioConfig) -> int:
    return 4 if 4 in cfg.n_bins else cfg.n_bins[-1]


def _max_abs(a) -> float:
    a = a.toarray() if hasattr(a, "toarray") else np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


# -- suites ----------------------------------------------------------------------------


def _suite_bounds_adjoints(cfg: ScenarioConfig):
    checks = []
    J = cfg.max_level
    defaults = [("brownian", {}), ("gauge", {}), ("kernel_band", {"k": 1})]
    for label, build in _scenarios(cfg, defaults):
        excess_rows, adj_rows, sym = [], [], 0.0
        for n in cfg.n_bins:
            Q = build(n)
            excess, adj = [], []
            for m in range(n + 1):
                rec = verify_bounds_adjoints(Q, m, tol=cfg.tol("bound"), exact=cfg.tol("exact"))
                excess.append(max(0.0, max(v["bound_slack"] for v in rec.values())))
                adj.append(max(v["adjoint_residual"] for v in rec.values()))
            times = [m / n for m in range(n + 1)]
            excess_rows += _rows(n, J, times, excess)
            adj_rows += _rows(n, J, times, adj)
            sym = max(sym, Q.symmetry_residual())
        checks.append(max_check("bounds", max(r[3] for r in excess_rows), cfg.tol("bound"), label, excess_rows))
        checks.append(max_check("adjoints", max(r[3] for r in adj_rows), cfg.tol("exact"), label, adj_rows))
        checks.append(max_check("symmetry", sym, cfg.tol("exact"), label))
    # control: a quadruple claimed symmetric whose creation integrand is not F*
    n = cfg.n_bins[0]
    one = CmxProcess.constant(n, J, 1.0)
    two = CmxProcess.constant(n, J, 2.0)
    z = CmxProcess.zero(n, J)
    bad = Quadruple(z, one, two, z, symmetric=True, name="asymmetric")
    checks.append(max_check("symmetry", bad.symmetry_residual(), cfg.tol("exact"), "asymmetric", control=True))
    return checks


def _suite_matrix_elements(cfg: ScenarioConfig):
    checks = []
    J = cfg.max_level
    defaults = [("brownian", {}), ("gauge", {}), ("kernel_band", {"k": 1})]
    for label, build in _scenarios(cfg, defaults):
        rows = []
        for n in cfg.n_bins:
            Q = build(n)
            probes = ProbeFamily.default(n, J)
            f, g = probes.amplitudes[1], probes.amplitudes[2]
            S = fock_space(n, J)
            ef, eg = exponential_amplitudes(S, f), exponential_amplitudes(S, g)
            res = []
            for m in range(n + 1):
                formula = exp_matrix_element(Q, m, f, g)
                direct = complex(np.vdot(eg, qs_integral(Q, m).apply(ef)))
                res.append(abs(formula - direct))
            rows += _rows(n, J, [m / n for m in range(n + 1)], res)
        checks.append(max_check("matrix-element", max(r[3] for r in rows), cfg.tol("exact"), label, rows))
    # canonical commutation relations below the top level
    ccr_rows = []
    for n in cfg.n_bins:
        S = fock_space(n, J)
        cut = S.prefix(J - 1)
        worst = 0.0
        for k in range(n):
            a = S.ladder("annihilate", k)
            for l in range(n):
                ad = S.ladder("create", l)
                C = (a @ ad - ad @ a).toarray()[:cut, :cut]
                if k == l:
                    C -= np.eye(cut)
                worst = max(worst, _max_abs(C))
        ccr_rows.append([n, J, 1.0, worst])
    checks.append(max_check("ccr", max(r[3] for r in ccr_rows), cfg.tol("exact"), "", ccr_rows))
    # exponential vectors factor across every grid split
    rng = np.random.default_rng(cfg.seed)
    fac_rows = []
    for n in cfg.n_bins:
        g = 0.4 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        full = exponential_amplitudes(fock_space(n, J), g)
        res = []
        for k in range(n + 1):
            past = exponential_amplitudes(fock_space(k, J), g[:k])
            fut_space = fock_space(n - k, J)
            fut = exponential_amplitudes(fut_space, g[k:])
            worst = 0.0
            for r, idx in enumerate(_embedding(k, n, J)):
                if idx.size == 0:
                    continue
                fr = fut[fut_space.level_slice(r)]
                pr = past[: idx.shape[1]]
                worst = max(worst, _max_abs(full[idx] - fr[:, None] * pr[None, :]))
            res.append(worst)
        fac_rows += _rows(n, J, [k / n for k in range(n + 1)], res)
    checks.append(max_check("factorization", max(r[3] for r in fac_rows), cfg.tol("exact"), "", fac_rows))
    return checks


def _adapted_defect(X: CmxProcess, n: int) -> list:
    out = []
    for k in range(n + 1):
        out.append(adaptedness_residual(ampliate(X.past(k), n), k))
    return out


def _suite_adaptedness(cfg: ScenarioConfig):
    checks = []
    J = cfg.max_level
    defaults = [("brownian", {}), ("gauge", {}), ("kernel_band", {"k": 1}), ("rotated", {}),
                ("perturbed", {})]
    for label, build in _scenarios(cfg, defaults):
        rows_int, rows_comp = [], []
        for n in cfg.n_bins:
            Q = build(n)
            res = [adaptedness_residual(qs_integral(Q, m), m) for m in range(n + 1)]
            rows_int += _rows(n, J, [m / n for m in range(n + 1)], res)
            comp = np.zeros(n + 1)
            for X in Q.components:
                if not X.is_zero:
                    comp = np.maximum(comp, _adapted_defect(X, n))
            rows_comp += _rows(n, J, [m / n for m in range(n + 1)], comp)
        checks.append(max_check("integral", max(r[3] for r in rows_int), cfg.tol("exact"), label, rows_int))
        checks.append(max_check("integrands", max(r[3] for r in rows_comp), cfg.tol("exact"), label, rows_comp))
    # generated quadruples at the smallest grid size
    n = cfg.n_bins[0]
    base = _build(cfg, "brownian", {}, n)
    generated = [("power(brownian, 2)", power_quadruple(base, 2)),
                 ("duhamel(brownian, p=1)", duhamel_integrands(base, 1.0, cfg.quadrature))]
    for label, G in generated:
        comp = np.zeros(n + 1)
        for X in G.components:
            if not X.is_zero:
                comp = np.maximum(comp, _adapted_defect(X, n))
        integ = [adaptedness_residual(qs_integral(G, m), m) for m in range(n + 1)]
        times = [m / n for m in range(n + 1)]
        checks.append(max_check("integrands", float(comp.max()), cfg.tol("exact"), label,
                                _rows(n, J, times, comp)))
        checks.append(max_check("integral", max(integ), cfg.tol("exact"), label, _rows(n, J, times, integ)))
    # control: a process reading the future
    rows = []
    for n in cfg.n_bins:
        X = future_shifted_process(n, J)
        res = [adaptedness_residual(X.sample(m), m) for m in range(n + 1)]
        rows += _rows(n, J, [m / n for m in range(n + 1)], res)
    checks.append(max_check("integrands", max(r[3] for r in rows), cfg.tol("exact"), "future-shifted",
                            rows, control=True, violation_floor=cfg.tol("adapted_violation")))
    return checks


_CORRECTED_PAIRS = [("gauge", "gauge"), ("gauge", "creation"), ("annihilation", "gauge"),
                    ("annihilation", "creation")]


def _product_table(cfg, x_kind, y_kind):
    J = cfg.max_level
    weak, without, rows, rows_without = [], [], [], []
    for n in cfg.n_bins:
        one = CmxProcess.constant(n, J, 1.0, name="I")
        recs = ito_product_residual(LabeledIntegrand(one, LABELS[x_kind]),
                                    LabeledIntegrand(one, LABELS[y_kind]), dense_cap=0)
        times = [r.m / n for r in recs]
        rows += _rows(n, J, times, [r.weak for r in recs])
        rows_without += _rows(n, J, times, [r.weak_without_correction for r in recs])
        weak.append(max(r.weak for r in recs))
        without.append(max(r.weak_without_correction for r in recs))
    return weak, without, rows, rows_without


def _suite_ito_product(cfg: ScenarioConfig):
    checks = []
    sizes = list(cfg.n_bins)
    for x_kind, y_kind in _CORRECTED_PAIRS:
        label = f"{x_kind} x {y_kind}"
        weak, without, rows, rows_without = _product_table(cfg, x_kind, y_kind)
        checks.append(order_check("product", cfg, sizes, weak, label, rows))
        inflation = without[-1] / weak[-1] if weak[-1] > 0 else math.inf
        checks.append(order_check("product-without-correction", cfg, sizes, without, label,
                                  rows_without, control=True, inflation=inflation,
                                  inflation_floor=cfg.tol("inflation")))
    weak, _, rows, _ = _product_table(cfg, "annihilation", "annihilation")
    checks.append(order_check("A^2 = 2 int A dA", cfg, sizes, weak, "annihilation x annihilation", rows))
    return checks


def _suite_powers(cfg: ScenarioConfig):
    checks = []
    J = cfg.max_level
    for label, build in _scenarios(cfg, [("brownian", {})]):
        for p in (2, 3):
            res, rows, rec_res = [], [], 0.0
            for n in cfg.n_bins:
                Q = build(n)
                rec = power_residual(Q, p)
                res.append(rec.max_residual)
                rows += _rows(n, J, rec.times, rec.residuals)
            n = cfg.n_bins[0]
            Q = build(n)
            for k in range(n + 1):
                rec_res = max(rec_res, power_recursion_residual(Q, p - 1, k))
            checks.append(order_check(f"power {p}", cfg, list(cfg.n_bins), res, label, rows))
            checks.append(max_check(f"recursion {p - 1}->{p}", rec_res, cfg.tol("exact"), label))
    return checks


def _duhamel_table(cfg, build, p):
    J = cfg.max_level
    res, rows = [], []
    for n in cfg.n_bins:
        rec = duhamel_residual(build(n), p, cfg.quadrature, buffer=cfg.buffer)
        res.append(rec.max_residual)
        rows += _rows(n, J, rec.times, rec.residuals)
    return res, rows


def _suite_duhamel(cfg: ScenarioConfig):
    checks = []
    if cfg.scenario is not None:
        cases = [(label, build, 1.0) for label, build in _scenarios(cfg, [])]
    else:
        cases = [(f"brownian", b, p) for p in (0.5, 1.0, 2.0) for _, b in _scenarios(cfg, [("brownian", {})])]
        for name, params in [("kernel_band", {"k": 1}), ("rotated", {}), ("perturbed", {})]:
            for label, b in _scenarios(cfg, [(name, params)]):
                cases.append((label, b, 1.0))
    for label, build, p in cases:
        res, rows = _duhamel_table(cfg, build, p)
        checks.append(order_check(f"duhamel p={p:g}", cfg, list(cfg.n_bins), res, label, rows, p=p))
    return checks


def _suite_series_vs_quadrature(cfg: ScenarioConfig):
    checks = []
    J, L = cfg.max_level, cfg.level
    p = 0.5
    for label, build in _scenarios(cfg, [("brownian", {})]):
        for N in (12, 24):
            rows = []
            for n in [_spot_n(cfg)]:
                Q = build(n)
                D = duhamel_integrands(Q, p, cfg.quadrature)
                S = series_integrands(Q, p, N)
                res = []
                for k in range(n):
                    worst = 0.0
                    for a, b in zip(D.components, S.components):
                        if a.is_zero and b.is_zero:
                            continue
                        X = a.past(k) - b.past(k)
                        worst = max(worst, buffered_norm(X.dense(), X.space, L))
                    res.append(worst)
                rows += _rows(n, J, [k / n for k in range(n)], res)
            checks.append(max_check(f"series N={N}", max(r[3] for r in rows), cfg.tol("quadrature"),
                                    label, rows, p=p, level=L))
    return checks


def _random_hermitian(rng, d, scale=1.0):
    A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return scale * (A + A.conj().T) / 2


def _suite_fourier_calculus(cfg: ScenarioConfig):
    checks = []
    J = cfg.max_level
    n = _spot_n(cfg)
    B1 = integral_past(_build(cfg, "brownian", {}, n), n)
    catalog = [FunctionSpec.gaussian(1.0), FunctionSpec.gaussian(2.0),
               FunctionSpec.hermite_gaussian(1, 1.0), FunctionSpec.hermite_gaussian(2, 1.0)]
    for f in catalog:
        err = _max_abs(fourier_apply(f, B1, cfg.quadrature).data - spectral_apply(f, B1).data)
        args = ", ".join(f"{a:g}" for a in f.params)
        checks.append(max_check(f"fourier vs spectral {f.kind}({args})", err, cfg.tol("quadrature"),
                                "brownian B_1", n_bins=n, J=J))
    vac = abs(cmx_exp(B1, 1.0).dense()[0, 0] - math.exp(-0.5))
    checks.append(max_check("vacuum characteristic function", vac, cfg.tol("vacuum"), "brownian B_1",
                            n_bins=n, J=J))
    # unitarity, group law and the exponential series
    E1, E2, E3 = cmx_exp(B1, 0.3).dense(), cmx_exp(B1, 0.5).dense(), cmx_exp(B1, 0.8).dense()
    unit = _max_abs(E1 @ E1.conj().T - np.eye(E1.shape[0]))
    group = _max_abs(E1 @ E2 - E3)
    checks.append(max_check("unitarity and group law", max(unit, group), cfg.tol("group_law"), "brownian B_1"))
    ser = _max_abs(exp_power_series(B1, 0.05, 30).data - cmx_exp(B1, 0.05).data)
    checks.append(max_check("exponential series", ser, cfg.tol("oracle"), "brownian B_1", p=0.05))
    # scalar reductions on T = tau I
    S0 = fock_space(1, 2)
    f = FunctionSpec.gaussian(1.0)
    worst = 0.0
    for tau in (-0.7, 0.0, 0.3, 1.4):
        T = ChaosMatrix(S0, tau * np.eye(S0.dim))
        H = ChaosMatrix(S0, 2.0 * np.eye(S0.dim))
        K = ChaosMatrix(S0, -0.5 * np.eye(S0.dim))
        d1, d2 = float(f.derivative(tau, 1)), float(f.derivative(tau, 2))
        for method in ("fourier", "spectral"):
            D1 = differential(f, T, H, cfg.quadrature, method).dense()
            D2 = ito_second_differential(f, T, H, K, cfg.quadrature, method).dense()
            worst = max(worst, _max_abs(D1 - d1 * 2.0 * np.eye(S0.dim)),
                        _max_abs(D2 - 0.5 * d2 * (2.0 * -0.5) * np.eye(S0.dim)))
    checks.append(max_check("scalar reductions", worst, cfg.tol("oracle"), "tau I"))
    # the Ito second differential is the corner of f on a block-triangular matrix
    rng = np.random.default_rng(cfg.seed)
    S1 = fock_space(2, 2)
    worst_sym, worst_lin = 0.0, 0.0
    for _ in range(3):
        T = ChaosMatrix(S1, _random_hermitian(rng, S1.dim, 0.5))
        H = ChaosMatrix(S1, _random_hermitian(rng, S1.dim, 0.5))
        K = ChaosMatrix(S1, rng.standard_normal((S1.dim, S1.dim)) + 1j * rng.standard_normal((S1.dim, S1.dim)))
        corner = BlockFunction(f, [T, T, T], [H, K]) @ np.eye(S1.dim, dtype=complex)
        for method in ("fourier", "spectral"):
            D2 = ito_second_differential(f, T, H, K, cfg.quadrature, method).dense()
            worst_sym = max(worst_sym, _max_abs(D2 - corner))
        a, b = 0.7, -1.3 + 0.2j
        lhs = differential(f, T, a * H + b * K, cfg.quadrature).dense()
        rhs = a * differential(f, T, H, cfg.quadrature).dense() + b * differential(f, T, K, cfg.quadrature).dense()
        worst_lin = max(worst_lin, _max_abs(lhs - rhs))
    checks.append(max_check("second differential vs block corner", worst_sym, cfg.tol("symmetrization"),
                            "random blocks"))
    checks.append(max_check("differential linearity", worst_lin, cfg.tol("oracle"), "random blocks"))
    return checks


def _functional_table(cfg, build, f, drop_drift=False):
    J = cfg.max_level
    res, rows = [], []
    for n in cfg.n_bins:
        rec = ito_functional_residual(build(n), f, cfg.quadrature, buffer=cfg.buffer, drop_drift=drop_drift)
        res.append(rec.max_residual)
        rows += _rows(n, J, rec.times, rec.residuals)
    return res, rows


def _suite_ito_functional(cfg: ScenarioConfig):
    checks = []
    f = FunctionSpec.gaussian(1.0)
    sizes = list(cfg.n_bins)
    for label, build in _scenarios(cfg, [("brownian", {}), ("rotated", {})]):
        res, rows = _functional_table(cfg, build, f)
        checks.append(order_check("functional ito gaussian(1)", cfg, sizes, res, label, rows))
    # constant functions integrate to nothing
    n = cfg.n_bins[0]
    const = FunctionSpec.polynomial([1.5])
    rec = ito_functional_residual(_build(cfg, "brownian", {}, n), const, cfg.quadrature, buffer=cfg.buffer)
    checks.append(max_check("constant function", rec.max_residual, cfg.tol("oracle"), "brownian"))
    # control: the rotated scenario without the drift term in the formula
    rot = _scenarios(cfg, [("rotated", {})]) if cfg.scenario is None else []
    if cfg.scenario == "rotated":
        rot = _scenarios(cfg, [])
    for label, build in rot:
        full, _ = _functional_table(cfg, build, f)
        res, rows = _functional_table(cfg, build, f, drop_drift=True)
        inflation = res[-1] / full[-1] if full[-1] > 0 else math.inf
        checks.append(order_check("functional ito without drift", cfg, sizes, res, label, rows,
                                  control=True, inflation=inflation, inflation_floor=cfg.tol("inflation")))
    return checks


def _suite_brownian_classical(cfg: ScenarioConfig):
    checks = []
    J = cfg.max_level
    f = FunctionSpec.gaussian(1.0)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for n in cfg.n_bins:
        Q = _build(cfg, "brownian", {}, n)
        ops_at = ito_functional_integrands(Q, f)
        res = []
        for k in range(n):
            M = integral_past(Q, k)
            X = rng.standard_normal((M.space.dim, 3)) + 1j * rng.standard_normal((M.space.dim, 3))
            d1 = BlockFunction(lambda x: f.derivative(x, 1), [M]) @ X
            d2 = BlockFunction(lambda x: 0.5 * f.derivative(x, 2), [M]) @ X
            Ff, Gf, Hf = ops_at(k)
            scale = max(1.0, _max_abs(d1), _max_abs(d2))
            res.append(max(_max_abs(Ff @ X - d1), _max_abs(Gf @ X - d1), _max_abs(Hf @ X - d2)) / scale)
        rows += _rows(n, J, [k / n for k in range(n)], res)
    checks.append(max_check("integrands f'(B), f'(B), f''(B)/2", max(r[3] for r in rows), cfg.tol("oracle"),
                            "brownian", rows))
    res, rows = _functional_table(cfg, lambda n: _build(cfg, "brownian", {}, n), f)
    checks.append(order_check("functional ito gaussian(1)", cfg, list(cfg.n_bins), res, "brownian", rows))
    return checks


def _suite_perturbation(cfg: ScenarioConfig):
    checks = []
    base_name = cfg.scenario if cfg.scenario not in (None, "perturbed") else "brownian"
    base_params = dict(cfg.scenario_params) if cfg.scenario not in (None, "perturbed") else {}
    sizes = list(cfg.n_bins)

    def pair(n):
        return scenario("perturbed", n, cfg.max_level, base=base_name, base_params=base_params,
                        seed=cfg.seed + 1)

    base_res, base_rows = _duhamel_table(cfg, lambda n: pair(n)[0], 1.0)
    pert_res, pert_rows = _duhamel_table(cfg, lambda n: pair(n)[1], 1.0)
    checks.append(order_check("duhamel p=1 base", cfg, sizes, base_res, base_name, base_rows))
    checks.append(order_check("duhamel p=1 perturbed", cfg, sizes, pert_res, f"perturbed({base_name})",
                              pert_rows))
    n = cfg.n_bins[0]
    B, P = pair(n)
    sym = P.symmetry_residual()
    checks.append(max_check("perturbed quadruple symmetric", sym, cfg.tol("exact"), f"perturbed({base_name})"))
    return checks


def _suite_duhamel_expansion(cfg: ScenarioConfig):
    checks = []
    n, J = _spot_n(cfg), cfg.max_level
    M = integral_past(_build(cfg, "brownian", {}, n), n)
    Jp = integral_past(perturbation_quadruple(n, J, seed=cfg.seed + 1), n)
    rec = duhamel_expansion(M, Jp, 10, cfg.quadrature)
    excess = [max(0.0, a - b) for a, b in zip(rec.kernel_norms[:7], rec.bounds[:7])]
    checks.append(max_check("kernel bound n<=6", max(excess), cfg.tol("kernel_bound"), "brownian + J",
                            kernel_norms=rec.kernel_norms, bounds=rec.bounds,
                            perturbation_norm=rec.perturbation_norm))
    over = [max(0.0, r - t) for r, t in zip(rec.partial_residuals, rec.tail_bounds)]
    checks.append(max_check("partial sums within tail bound", max(over), cfg.tol("kernel_bound"), "brownian + J",
                            partial_residuals=rec.partial_residuals, tail_bounds=rec.tail_bounds))
    zero = duhamel_expansion(M, ChaosMatrix.zeros(M.space), 3, cfg.quadrature)
    checks.append(max_check("zero perturbation", max(zero.kernel_norms[1:]), cfg.tol("exact"), "brownian"))
    return checks


def _suite_stratonovich(cfg: ScenarioConfig):
    checks = []
    J = cfg.max_level
    n = cfg.n_bins[-1]
    depths = [d for d in range(0, 31) if 2 ** d in cfg.n_bins and n % 2 ** d == 0]
    for label, build in _scenarios(cfg, [("brownian", {})]):
        Q = build(n)
        for coeffs, kind in (([0.0, 1.0], "x"), ([0.0, 0.0, 1.0], "x^2"), ([0.0, 0.0, 0.0, 1.0], "x^3")):
            f = FunctionSpec.polynomial(coeffs)
            try:
                rec = stratonovich_residual(Q, f, depths=depths, buffer=cfg.buffer, dense_cap=0)
            except CapacityError as exc:
                checks.append(Check(f"midpoint {kind}", "inconclusive", "order", None, None, label,
                                    extras={"reason": str(exc)}))
                continue
            sizes = [2 ** d for d in depths]
            rows = [[s, J, 1.0, r] for s, r in zip(sizes, rec.residuals)]
            if kind == "x":
                checks.append(max_check("midpoint x", rec.max_residual, cfg.tol("exact"), label, rows))
            else:
                checks.append(order_check(f"midpoint {kind}", cfg, sizes, rec.residuals, label, rows,
                                          lo=cfg.tol("stratonovich_order_min"), hi=math.inf))
    return checks


def _suite_analytic_radius(cfg: ScenarioConfig):
    checks = []
    size = 64
    i, j = np.indices((size, size))
    kappa = ScalarMatrix(np.where(np.abs(i - j) <= 1, (i + j).astype(float), 0.0))
    est = analytic_radius_estimate(kappa, 0, size - 4)
    floor = cfg.tol("radius_fraction") / 6.0
    checks.append(min_check("band-1 kappa_ij = i + j", est.radius, floor, "scalar", decay=est.decay_exponent))
    for label, build in _scenarios(cfg, [("brownian", {}), ("kernel_band", {"k": 1})]):
        Q = build(cfg.n_bins[-1])
        kap = control_matrix(Q)
        rad = analytic_radius_estimate(kap, 0, max(8, 4 * kap.size))
        checks.append(min_check("control matrix radius", rad.radius, 0.0, label,
                                band=kap.band(), size=kap.size))
    return checks


SUITES = {
    "bounds-adjoints": _suite_bounds_adjoints,
    "matrix-elements": _suite_matrix_elements,
    "adaptedness": _suite_adaptedness,
    "ito-product": _suite_ito_product,
    "powers": _suite_powers,
    "duhamel": _suite_duhamel,
    "series-vs-quadrature": _suite_series_vs_quadrature,
    "fourier-calculus": _suite_fourier_calculus,
    "ito-functional": _suite_ito_functional,
    "brownian-classical": _suite_brownian_classical,
    "perturbation": _suite_perturbation,
    "duhamel-expansion": _suite_duhamel_expansion,
    "stratonovich": _suite_stratonovich,
    "analytic-radius": _suite_analytic_radius,
}


def run_suite(name: str, cfg: ScenarioConfig) -> SuiteRecord:
    """Run one suite; failures of the machinery are reported as ``error``."""
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; known: {', '.join(SUITES)}")
    start = time.perf_counter()
    try:
        checks = SUITES[name](cfg)
    except (CapacityError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return SuiteRecord(name, "error", [], time.perf_counter() - start, f"{name}: {type(exc).__name__}: {exc}")
    return SuiteRecord(name, _suite_status(checks), checks, time.perf_counter() - start)


def run_suites(cfg: ScenarioConfig, suites=None, progress=None) -> VerificationReport:
    report = VerificationReport(cfg.to_dict(), [], time.strftime("%Y-%m-%dT%H:%M:%S"))
    for name in (cfg.suites if suites is None else suites):
        rec = run_suite(name, cfg)
        report.suites.append(rec)
        if progress is not None:
            progress(rec)
    return report


# -- persistence ------------------------------------------------------------------------

CSV_HEADER = ["suite", "check", "n_bins", "J", "t", "residual"]


def report_csv_rows(report: VerificationReport) -> list:
    rows = []
    for s in report.suites:
        for c in s.checks:
            label = f"{c.name} [{c.scenario}]" if c.scenario else c.name
            for n, J, t, r in c.series:
                rows.append([s.suite, label, n, J, t, r])
    return rows


def emit_report(report: VerificationReport, out_dir, fmt: str = "json", stem: str = "report") -> list:
    """Write the report as JSON, CSV or both; returns the written paths."""
    if fmt not in ("json", "csv", "both"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if fmt in ("json", "both"):
        p = out / f"{stem}.json"
        p.write_text(report.to_json() + "\n")
        paths.append(p)
    if fmt in ("csv", "both"):
        p = out / f"{stem}.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in report_csv_rows(report):
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
        p.write_text(buf.getvalue())
        paths.append(p)
    return paths


def load_report(path) -> VerificationReport:
    return VerificationReport.from_dict(json.loads(Path(path).read_text()))


def merge_reports(reports) -> VerificationReport:
    """Concatenate suites; a suite appearing twice keeps its last record."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to merge")
    merged: dict[str, SuiteRecord] = {}
    for r in reports:
        for s in r.suites:
            merged.pop(s.suite, None)
            merged[s.suite] = copy.deepcopy(s)
    config = copy.deepcopy(reports[-1].config)
    config["suites"] = list(merged)
    return VerificationReport(config, list(merged.values()), reports[-1].created)
