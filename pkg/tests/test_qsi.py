import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.fock import CapacityError, exponential_amplitudes, fock_space
from artifact.processes import AdaptednessError, Quadruple, basic_process, future_shifted_process, scenario
from artifact.qsi import (
    LabeledIntegrand,
    ProbeFamily,
    exp_matrix_element,
    integral_pairings,
    integral_past,
    ito_product_residual,
    power_quadruple,
    power_recursion_residual,
    power_residual,
    qs_integral,
    verify_bounds_adjoints,
)


def test_brownian_integral_is_field():
    n, J = 4, 4
    Q = scenario("brownian", n, J)
    A = basic_process("annihilation", n, J)
    Ad = basic_process("creation", n, J)
    for m in range(n + 1):
        d = integral_past(Q, m).dense() - (A.past(m) + Ad.past(m)).dense()
        assert np.abs(d).max() < 1e-14


def test_gauge_integral_is_number_operator():
    Q = scenario("gauge", 3, 3)
    M = integral_past(Q, 3)
    assert np.allclose(M.dense(), np.diag(fock_space(3, 3).levels))


def test_full_space_integral_is_ampliation():
    Q = scenario("brownian", 3, 3)
    assert qs_integral(Q, 1).space.n_modes == 3
    assert qs_integral(Q, 1).dim == fock_space(3, 3).dim


def test_non_adapted_integrand_rejected():
    X = future_shifted_process(3, 3)
    z = Quadruple.zero(3, 3).E
    with pytest.raises(AdaptednessError):
        integral_past(Quadruple(z, X, X, z), 2)


@given(st.integers(0, 3), st.sampled_from([0, 2, 4]))
def test_matrix_element_matches_direct(m, L):
    Q = scenario("kernel_band", 3, 4, k=1)
    rng = np.random.default_rng(m * 10 + L)
    f = 0.5 * rng.normal(size=3) + 0.3j * rng.normal(size=3)
    g = 0.5 * rng.normal(size=3) - 0.2j * rng.normal(size=3)
    S = fock_space(3, 4)
    M = qs_integral(Q, m).dense()
    keep = S.levels <= L
    ef = exponential_amplitudes(S, np.array([f]))[0] * keep
    eg = exponential_amplitudes(S, np.array([g]))[0] * keep
    assert abs(exp_matrix_element(Q, m, f, g, L) - np.vdot(eg, M @ ef)) < 1e-12


def test_probe_family_inner():
    P = ProbeFamily.default(4, 5)
    G = P.inner(5)
    assert np.allclose(G, G.conj().T)
    assert G[0, 0] == 1
    with pytest.raises(ValueError):
        ProbeFamily(4, 3, np.ones((2, 3)))


def test_pairings_start_at_zero():
    Q = scenario("rotated", 4, 4)
    vals = integral_pairings(Q, ProbeFamily.default(4, 4), 3)
    assert vals.shape == (5, 4, 4)
    assert np.all(vals[0] == 0)


@pytest.mark.parametrize("name,params", [("brownian", {}), ("kernel_band", {"k": 1}), ("rotated", {})])
def test_bounds_and_adjoints(name, params):
    Q = scenario(name, 4, 4, **params)
    for m in (2, 4):
        out = verify_bounds_adjoints(Q, m)
        for rec in out.values():
            assert rec["ok"].all()
            assert rec["adjoint_ok"]


def test_ito_product_brownian_order_one():
    res = []
    for n in (2, 4, 8):
        Q = scenario("brownian", n, 5)
        X = LabeledIntegrand(Q.F, (0, 1))
        Y = LabeledIntegrand(Q.G, (1, 0))
        recs = ito_product_residual(X, Y)
        res.append(recs[-1].weak)
        assert recs[-1].weak_without_correction > 5 * recs[-1].weak
    slopes = np.diff(np.log(res)) / np.diff(np.log([0.5, 0.25, 0.125]))
    assert np.all((slopes > 0.7) & (slopes < 1.5))


def test_ito_product_decomposition_exact():
    Q = scenario("kernel_band", 3, 5, k=1)
    recs = ito_product_residual(LabeledIntegrand(Q.F, (0, 1)), LabeledIntegrand(Q.H, (0, 0)))
    assert all(r.decomposition < 1e-12 for r in recs)


def test_power_recursion_holds():
    Q = scenario("kernel_band", 3, 6, k=1)
    for n in (1, 2):
        for k in range(4):
            assert power_recursion_residual(Q, n, k) < 1e-12


def test_first_power_is_quadruple():
    Q = scenario("kernel_band", 3, 4, k=1)
    P = power_quadruple(Q, 1)
    for a, b in zip(P.components, Q.components):
        assert np.abs(a.past(2).dense() - b.past(2).dense()).max() < 1e-14


def test_power_residual_brownian_shrinks():
    r = [power_residual(scenario("brownian", n, 6), 2).max_residual for n in (2, 4, 8)]
    assert r[0] > r[1] > r[2]
    assert 1.6 < r[1] / r[2] < 2.4


def test_power_residual_capacity():
    with pytest.raises(CapacityError):
        power_residual(scenario("brownian", 2, 3), 4)
