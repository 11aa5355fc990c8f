"""Acceptance criteria, one test and one PASS/FAIL line each.

The full verification run happens once per session (about a minute).
"""
import json
import math

import pytest

from artifact.harness import ScenarioConfig, run_suites

PRE_ASYMPTOTIC = (
    "residuals still in the pre-asymptotic range at n <= 8; "
    "measured slopes and the larger-n trend are recorded in the decision ledger"
)


@pytest.fixture(scope="module")
def report():
    return run_suites(ScenarioConfig(seed=0))


def _find(report, suite, name, scenario=None):
    for c in report.suite(suite).checks:
        if c.name == name and (scenario is None or c.scenario == scenario):
            return c
    raise LookupError(f"{suite}: no check {name!r} [{scenario}]")


def _line(label, ok, value, limit):
    return f"{'PASS' if ok else 'FAIL'}  {label}: value={value} limit={limit}"


def _emit(capsys, text):
    with capsys.disabled():
        print("\n" + text)


# (label, suite, check name, scenario); each must be judged "pass"
REGULAR = [
    # exact identities
    ("matrix element brownian", "matrix-elements", "matrix-element", "brownian"),
    ("matrix element gauge", "matrix-elements", "matrix-element", "gauge"),
    ("matrix element kernel", "matrix-elements", "matrix-element", "kernel_band(k=1)"),
    ("canonical commutation", "matrix-elements", "ccr", ""),
    ("exponential factorization", "matrix-elements", "factorization", ""),
    ("adjoint brownian", "bounds-adjoints", "adjoints", "brownian"),
    ("adjoint gauge", "bounds-adjoints", "adjoints", "gauge"),
    ("adjoint kernel", "bounds-adjoints", "adjoints", "kernel_band(k=1)"),
    ("symmetric kernel quadruple", "bounds-adjoints", "symmetry", "kernel_band(k=1)"),
    ("adapted integral kernel", "adaptedness", "integral", "kernel_band(k=1)"),
    ("adapted integral rotated", "adaptedness", "integral", "rotated"),
    ("adapted integral perturbed", "adaptedness", "integral", "perturbed"),
    ("adapted power integrands", "adaptedness", "integrands", "power(brownian, 2)"),
    ("adapted exponential integrands", "adaptedness", "integrands", "duhamel(brownian, p=1)"),
    ("power recursion 1->2", "powers", "recursion 1->2", "brownian"),
    ("power recursion 2->3", "powers", "recursion 2->3", "brownian"),
    ("midpoint sum of x", "stratonovich", "midpoint x", "brownian"),
    ("constant function", "ito-functional", "constant function", "brownian"),
    ("zero perturbation", "duhamel-expansion", "zero perturbation", "brownian"),
    ("perturbed quadruple symmetric", "perturbation", "perturbed quadruple symmetric", "perturbed(brownian)"),
    # block-norm bounds
    ("block bounds brownian", "bounds-adjoints", "bounds", "brownian"),
    ("block bounds gauge", "bounds-adjoints", "bounds", "gauge"),
    ("block bounds kernel", "bounds-adjoints", "bounds", "kernel_band(k=1)"),
    ("expansion kernel bound", "duhamel-expansion", "kernel bound n<=6", "brownian + J"),
    ("expansion partial sums", "duhamel-expansion", "partial sums within tail bound", "brownian + J"),
    # first order convergence
    ("ito product gauge x gauge", "ito-product", "product", "gauge x gauge"),
    ("ito product gauge x creation", "ito-product", "product", "gauge x creation"),
    ("ito product annihilation x gauge", "ito-product", "product", "annihilation x gauge"),
    ("ito product annihilation x creation", "ito-product", "product", "annihilation x creation"),
    ("A^2 = 2 int A dA", "ito-product", "A^2 = 2 int A dA", "annihilation x annihilation"),
    ("square of brownian integral", "powers", "power 2", "brownian"),
    ("cube of brownian integral", "powers", "power 3", "brownian"),
    ("exponential brownian p=0.5", "duhamel", "duhamel p=0.5", "brownian"),
    ("exponential brownian p=1", "duhamel", "duhamel p=1", "brownian"),
    ("exponential brownian p=2", "duhamel", "duhamel p=2", "brownian"),
    ("exponential perturbed", "duhamel", "duhamel p=1", "perturbed"),
    ("perturbation base", "perturbation", "duhamel p=1 base", "brownian"),
    ("perturbation perturbed", "perturbation", "duhamel p=1 perturbed", "perturbed(brownian)"),
    ("functional ito brownian", "ito-functional", "functional ito gaussian(1)", "brownian"),
    ("midpoint sum of x^2", "stratonovich", "midpoint x^2", "brownian"),
    ("midpoint sum of x^3", "stratonovich", "midpoint x^3", "brownian"),
    # oracles
    ("fourier vs spectral gaussian(1)", "fourier-calculus", "fourier vs spectral gaussian(1)", None),
    ("fourier vs spectral gaussian(2)", "fourier-calculus", "fourier vs spectral gaussian(2)", None),
    ("fourier vs spectral hermite(1)", "fourier-calculus", "fourier vs spectral hermite_gaussian(1, 1)", None),
    ("fourier vs spectral hermite(2)", "fourier-calculus", "fourier vs spectral hermite_gaussian(2, 1)", None),
    ("unitarity and group law", "fourier-calculus", "unitarity and group law", None),
    ("exponential series", "fourier-calculus", "exponential series", None),
    ("scalar reductions", "fourier-calculus", "scalar reductions", None),
    ("second differential block corner", "fourier-calculus", "second differential vs block corner", None),
    ("differential linearity", "fourier-calculus", "differential linearity", None),
    ("classical brownian integrands", "brownian-classical", "integrands f'(B), f'(B), f''(B)/2", None),
    # spot values
    ("vacuum characteristic function", "fourier-calculus", "vacuum characteristic function", None),
    ("analytic radius band-1", "analytic-radius", "band-1 kappa_ij = i + j", None),
    ("control radius brownian", "analytic-radius", "control matrix radius", "brownian"),
    ("control radius kernel", "analytic-radius", "control matrix radius", "kernel_band(k=1)"),
]

UNATTAINED = [
    ("exponential kernel band", "duhamel", "duhamel p=1", "kernel_band(k=1)", PRE_ASYMPTOTIC),
    ("exponential rotated", "duhamel", "duhamel p=1", "rotated", PRE_ASYMPTOTIC),
    ("functional ito rotated", "ito-functional", "functional ito gaussian(1)", "rotated", PRE_ASYMPTOTIC),
    ("series N=12 vs quadrature", "series-vs-quadrature", "series N=12", "brownian",
     "the N=12 series tail at J=6 is about 3e-7, above 1e-8; see the decision ledger"),
]

CASES = [pytest.param(*c, id=c[0]) for c in REGULAR] + [
    pytest.param(*c[:4], id=c[0], marks=pytest.mark.xfail(strict=True, reason=c[4])) for c in UNATTAINED
]


@pytest.mark.parametrize("label,suite,name,scenario", CASES)
def test_criterion(report, capsys, label, suite, name, scenario):
    c = _find(report, suite, name, scenario)
    ok = c.status == "pass"
    value = c.value
    if c.convergence and c.convergence.get("exact"):
        value = f"exact (max residual {max(c.convergence['residual']):.2g})"
    _emit(capsys, _line(label, ok, value, c.limit))
    assert ok, c


# negative controls: the check must fail, and by a clear margin
CONTROLS = [
    ("asymmetric quadruple detected", "bounds-adjoints", "symmetry", "asymmetric", None, None),
    ("future-shifted integrand detected", "adaptedness", "integrands", "future-shifted", "value",
     "adapted_violation"),
    ("gauge x gauge needs correction", "ito-product", "product-without-correction", "gauge x gauge",
     "inflation", "inflation"),
    ("gauge x creation needs correction", "ito-product", "product-without-correction", "gauge x creation",
     "inflation", "inflation"),
    ("annihilation x gauge needs correction", "ito-product", "product-without-correction",
     "annihilation x gauge", "inflation", "inflation"),
    ("annihilation x creation needs correction", "ito-product", "product-without-correction",
     "annihilation x creation", "inflation", "inflation"),
]
CONTROL_CASES = [pytest.param(*c, id=c[0]) for c in CONTROLS] + [
    pytest.param("rotated needs drift term", "ito-functional", "functional ito without drift", "rotated",
                 "inflation", "inflation", id="rotated needs drift term",
                 marks=pytest.mark.xfail(strict=True, reason=(
                     "the dropped-drift residual plateaus near 0.09 while the full residual is still "
                     "0.8 at n=8, so a 10x gap appears only near n=256; see the decision ledger"))),
]


@pytest.mark.parametrize("label,suite,name,scenario,field,floor_key", CONTROL_CASES)
def test_control(report, capsys, label, suite, name, scenario, field, floor_key):
    c = _find(report, suite, name, scenario)
    cfg = ScenarioConfig()
    ok = c.control and c.status == "fail"
    value, limit = c.value, "status fail"
    if field is not None:
        value = c.value if field == "value" else c.extras[field]
        limit = cfg.tol(floor_key)
        ok = ok and value is not None and value >= limit
    _emit(capsys, _line(label, ok, value, limit))
    assert ok, c


def _strip(doc):
    doc = json.loads(json.dumps(doc))
    doc.pop("created")
    for s in doc["suites"]:
        s.pop("wall_time")
    return doc


def test_deterministic_reports(capsys):
    cfg = ScenarioConfig(seed=3, suites=["matrix-elements", "adaptedness", "powers", "duhamel-expansion"])
    a, b = _strip(run_suites(cfg).to_dict()), _strip(run_suites(cfg).to_dict())
    ok = a == b and a["seed"] == 3
    _emit(capsys, _line("identical reports for a fixed seed", ok, ok, True))
    assert ok


def test_every_suite_ran(report, capsys):
    errors = [s.suite for s in report.suites if s.status == "error"]
    ok = not errors and len(report.suites) == len(ScenarioConfig().suites)
    _emit(capsys, _line("all suites ran without error", ok, errors or "none", "none"))
    assert ok
    assert not any(math.isnan(c.value) for s in report.suites for c in s.checks
                   if isinstance(c.value, float))
