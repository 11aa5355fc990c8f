import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from artifact.calculus import (
    FunctionSpec,
    HermitianError,
    QuadratureConfig,
    QuadratureError,
    cmx_exp,
    differential,
    divided_difference,
    divided_difference2,
    duhamel_expansion,
    duhamel_integrands,
    duhamel_residual,
    exp_power_series,
    fourier_apply,
    ito_functional_residual,
    ito_second_differential,
    second_differential,
    series_integrands,
    series_tail_bound,
    spectral_apply,
    stratonovich_residual,
)
from artifact.cmx import ChaosMatrix
from artifact.fock import fock_space
from artifact.processes import scenario
from artifact.qsi import integral_past

FUNCS = [FunctionSpec.gaussian(1.0), FunctionSpec.gaussian(0.7), FunctionSpec.hermite_gaussian(2, 1.2)]


def hermitian_cmx(rng, n, J, scale=1.0):
    S = fock_space(n, J)
    A = rng.standard_normal((S.dim, S.dim)) + 1j * rng.standard_normal((S.dim, S.dim))
    A = (A + A.conj().T) / 2
    return ChaosMatrix(S, scale * A / np.linalg.norm(A, 2))


@pytest.mark.parametrize("f", FUNCS, ids=lambda f: f.kind)
def test_fourier_inversion(f):
    for x in (0.0, 0.4, -1.3):
        re = integrate.quad(lambda p: (f.fhat(p) * np.exp(1j * p * x)).real, -40, 40, limit=400)[0]
        im = integrate.quad(lambda p: (f.fhat(p) * np.exp(1j * p * x)).imag, -40, 40, limit=400)[0]
        assert abs(re + 1j * im - f(x)) < 1e-10


@given(st.floats(-3, 3), st.integers(1, 3))
def test_derivatives_match_finite_differences(x, order):
    f = FunctionSpec.hermite_gaussian(1, 0.9)
    h = 1e-5
    fd = (f.derivative(x + h, order - 1) - f.derivative(x - h, order - 1)) / (2 * h)
    assert abs(fd - f.derivative(x, order)) < 1e-6


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_divided_difference(x, y):
    f = FunctionSpec.gaussian(1.0)
    dd = divided_difference(f, x, y)
    if abs(x - y) > 1e-3:
        assert abs(dd - (f(x) - f(y)) / (x - y)) < 1e-10
    else:
        assert abs(dd - f.derivative((x + y) / 2, 1)) < 1e-3
    assert abs(divided_difference(f, x, x) - f.derivative(x, 1)) < 1e-12


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_second_divided_difference_symmetric(x, y, z):
    f = FunctionSpec.hermite_gaussian(2, 1.0)
    a = divided_difference2(f, x, y, z)
    b = divided_difference2(f, z, x, y)
    assert abs(a - b) < 1e-9
    assert abs(divided_difference2(f, x, x, x) - f.derivative(x, 2) / 2) < 1e-10


def test_polynomial_function():
    f = FunctionSpec.polynomial([1.0, 0.0, 2.0])
    assert f.degree == 2
    assert f(2.0) == 9.0
    assert divided_difference2(f, 0.3, -1.0, 2.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        f.fhat(0.0)


def test_function_spec_round_trip_and_validation():
    for f in FUNCS + [FunctionSpec.polynomial([0, 1])]:
        assert FunctionSpec.from_dict(f.to_dict()) == f
    with pytest.raises(ValueError):
        FunctionSpec.gaussian(-1)
    with pytest.raises(ValueError):
        FunctionSpec("cosh", ())


def test_quadrature_config_validation():
    with pytest.raises(ValueError):
        QuadratureConfig(p_points=10)
    with pytest.raises(QuadratureError):
        fourier_apply(FunctionSpec.gaussian(0.1), ChaosMatrix.identity(fock_space(1, 1)),
                      QuadratureConfig(p_max=5.0))


def test_cmx_exp_unitary_and_group_law(rng):
    T = hermitian_cmx(rng, 2, 3, 2.0)
    U = cmx_exp(T, 0.7).dense()
    assert np.abs(U @ U.conj().T - np.eye(T.dim)).max() < 1e-12
    V = cmx_exp(T, 0.3).dense() @ cmx_exp(T, 0.4).dense()
    assert np.abs(U - V).max() < 1e-12


def test_non_hermitian_rejected(rng):
    S = fock_space(2, 2)
    T = ChaosMatrix(S, rng.standard_normal((S.dim, S.dim)))
    with pytest.raises(HermitianError):
        cmx_exp(T, 1.0)


def test_power_series_and_tail_bound(rng):
    T = hermitian_cmx(rng, 2, 3, 1.5)
    exact = cmx_exp(T, 0.8).dense()
    for N in (4, 8, 16):
        err = np.linalg.norm(exp_power_series(T, 0.8, N).dense() - exact, 2)
        assert err <= series_tail_bound(1.5, 0.8, N) * (1 + 1e-9) + 1e-15


@pytest.mark.parametrize("f", FUNCS, ids=lambda f: f.kind)
def test_fourier_matches_spectral(f, rng):
    T = hermitian_cmx(rng, 2, 3, 2.0)
    d = fourier_apply(f, T).dense() - spectral_apply(f, T).dense()
    assert np.abs(d).max() < 1e-8


def test_scalar_reductions():
    f = FunctionSpec.gaussian(1.0)
    S = fock_space(0, 0)
    T = ChaosMatrix(S, np.array([[0.37]]))
    H = ChaosMatrix(S, np.array([[1.0]]))
    assert abs(differential(f, T, H).dense()[0, 0] - f.derivative(0.37, 1)) < 1e-8
    d2 = second_differential(f, T, H, H).dense()[0, 0]
    assert abs(d2 - f.derivative(0.37, 2)) < 1e-8


def test_differential_routes_agree(rng):
    f = FunctionSpec.gaussian(1.0)
    T = hermitian_cmx(rng, 2, 2, 1.5)
    H = hermitian_cmx(rng, 2, 2)
    K = hermitian_cmx(rng, 2, 2)
    a = differential(f, T, H, method="fourier").dense()
    b = differential(f, T, H, method="spectral").dense()
    assert np.abs(a - b).max() < 1e-8
    a = ito_second_differential(f, T, H, K, QuadratureConfig(p_points=121), method="fourier").dense()
    b = ito_second_differential(f, T, H, K, method="spectral").dense()
    assert np.abs(a - b).max() < 1e-8


def test_differential_block_corner(rng):
    # Df(T)(H) is the corner of p([[T, H], [0, T]]) for a polynomial p
    coeffs = [0.5, -1.0, 0.3, 0.2, -0.05]
    f = FunctionSpec.polynomial(coeffs)
    T = hermitian_cmx(rng, 2, 2, 1.0)
    H = hermitian_cmx(rng, 2, 2)
    D = T.dim
    big = np.block([[T.dense(), H.dense()], [np.zeros((D, D)), T.dense()]])
    fb = sum(c * np.linalg.matrix_power(big, k) for k, c in enumerate(coeffs))
    assert np.abs(fb[:D, D:] - differential(f, T, H, method="spectral").dense()).max() < 1e-12


def test_duhamel_integrands_structure():
    Q = scenario("brownian", 4, 4)
    D0 = duhamel_integrands(Q, 0.0)
    assert all(X.is_zero for X in D0.components)
    D = duhamel_integrands(Q, 1.0)
    assert D.E.is_zero
    assert not D.F.is_zero


def test_first_order_series_is_linear():
    Q = scenario("kernel_band", 3, 4, k=1)
    S = series_integrands(Q, 0.5, n_terms=1)
    for k in range(3):
        assert np.abs(S.F.past(k).dense() - 0.5j * Q.F.past(k).dense()).max() < 1e-14


def test_quadrature_and_probe_routes_agree():
    Q = scenario("kernel_band", 3, 4, k=1)
    D = duhamel_integrands(Q, 1.0)
    for X in D.components[1:]:
        for k in (1, 2):
            dense = X.past(k).dense()
            lazy = X.past_operator(k) @ np.eye(dense.shape[0], dtype=complex)
            assert np.abs(dense - lazy).max() < 1e-10


def test_duhamel_residual_brownian_shrinks():
    r = [duhamel_residual(scenario("brownian", n, 6), 1.0).max_residual for n in (2, 4, 8)]
    assert r[0] > r[1] > r[2]
    assert 1.6 < r[1] / r[2] < 2.4


def test_ito_functional_brownian_shrinks():
    f = FunctionSpec.gaussian(1.0)
    r = [ito_functional_residual(scenario("brownian", n, 6), f).max_residual for n in (2, 4, 8)]
    assert r[0] > r[1] > r[2]


def test_ito_functional_requires_gauge_free():
    with pytest.raises(ValueError):
        ito_functional_residual(scenario("gauge", 2, 4), FunctionSpec.gaussian(1.0))


def test_stratonovich_linear_and_quadratic_exact():
    Q = scenario("brownian", 4, 6)
    for coeffs in ([0.0, 1.0], [0.3, 0.0, 1.0], [2.0]):
        rec = stratonovich_residual(Q, FunctionSpec.polynomial(coeffs))
        assert max(rec.residuals) < 1e-12


def test_duhamel_expansion_converges():
    Q = scenario("brownian", 2, 4)
    M = integral_past(Q, 2)
    _, P = scenario("perturbed", 2, 4, xi=0.3)
    Jp = integral_past(P, 2) - M
    rec = duhamel_expansion(M, Jp, 8)
    assert rec.partial_residuals[-1] < 1e-8
    assert all(a <= b * (1 + 1e-8) + 1e-14 for a, b in zip(rec.kernel_norms, rec.bounds))
