import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from artifact.cmx import (
    ChaosMatrix,
    GradientStack,
    LevelVector,
    ScalarMatrix,
    adaptedness_residual,
    ampliate,
    ampliated_block_norms,
    analytic_radius_estimate,
    block_norm,
    block_norms,
    control_matrix,
    scalar_matrix,
)
from artifact.fock import fock_space
from artifact.processes import scenario


def random_cmx(rng, n, J, band=None):
    S = fock_space(n, J)
    A = rng.standard_normal((S.dim, S.dim)) + 1j * rng.standard_normal((S.dim, S.dim))
    if band is not None:
        lv = S.levels
        A[np.abs(lv[:, None] - lv[None, :]) > band] = 0
    return ChaosMatrix(S, A, band)


def test_blocks_round_trip(rng):
    T = random_cmx(rng, 2, 3)
    R = ChaosMatrix.from_blocks(T.space, T.blocks)
    assert np.allclose(R.dense(), T.dense())


def test_product_and_adjoint(rng):
    S, T = random_cmx(rng, 3, 2), random_cmx(rng, 3, 2)
    assert np.allclose((S @ T).dense(), S.dense() @ T.dense())
    assert np.allclose((S @ T).adjoint().dense(), (T.adjoint() @ S.adjoint()).dense())
    assert np.allclose((S + T - S).dense(), T.dense())
    assert np.allclose((2 * S).dense(), 2 * S.dense())


def test_band_bookkeeping(rng):
    T = random_cmx(rng, 3, 4, band=1)
    assert T.effective_band() == 1 and T.respects_band()
    assert (T @ T).effective_band() <= 2
    assert ChaosMatrix.zeros(T.space).effective_band() == 0


def test_space_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        random_cmx(rng, 2, 2) + random_cmx(rng, 3, 2)
    with pytest.raises(ValueError):
        ChaosMatrix(fock_space(2, 2), np.eye(3))


def test_compress_keeps_low_levels(rng):
    T = random_cmx(rng, 2, 4)
    C = T.compress(2)
    assert C.space == fock_space(2, 2)
    assert np.allclose(C.dense(), T.dense()[: C.dim, : C.dim])


def test_block_norm_dense_and_iterative(rng):
    B = rng.standard_normal((40, 30))
    assert abs(block_norm(B) - np.linalg.norm(B, 2)) < 1e-12
    big = sp.random(3000, 2600, density=2e-3, random_state=3, format="csr")
    dense = big.toarray()
    ref = np.linalg.norm(dense, 2)
    assert abs(block_norm(big) - ref) < 1e-9 * ref
    assert block_norm(np.zeros((0, 4))) == 0.0


def test_block_norms_matrix(rng):
    T = random_cmx(rng, 2, 2)
    N = block_norms(T)
    for i in range(3):
        for j in range(3):
            assert abs(N[i, j] - np.linalg.norm(T.block(i, j), 2)) < 1e-12


def test_ampliation_acts_on_past_modes(rng):
    m, n, J = 2, 4, 3
    T = random_cmx(rng, m, J)
    A = ampliate(T, n)
    full = fock_space(n, J)
    # on states with empty future it is T itself
    cut = [i for i in range(full.dim) if full.states[i, m:].sum() == 0]
    assert np.allclose(A.dense()[np.ix_(cut, cut)], T.dense())
    # it commutes with the future ladders below the top level
    for k in range(m, n):
        a = full.ladder("annihilate", k).toarray()
        C = a @ A.dense() - A.dense() @ a
        top = full.prefix(J - 1)
        assert np.max(np.abs(C[:top])) < 1e-12


def test_ampliated_block_norms_match(rng):
    T = random_cmx(rng, 2, 3)
    A = ampliate(T, 4)
    assert np.allclose(ampliated_block_norms(block_norms(T)), block_norms(A), atol=1e-12)


def test_adaptedness_detects_future_action():
    S = fock_space(3, 3)
    a = S.ladder("annihilate", 2)
    T = ChaosMatrix(S, a + a.T)
    assert adaptedness_residual(T, 1) > 1e-3
    assert adaptedness_residual(ampliate(ChaosMatrix.identity(fock_space(1, 3)), 3), 1) < 1e-12


def test_gradient_and_skorohod_adjoint(rng):
    S = fock_space(3, 3)
    st_ = GradientStack(S)
    j = 2
    psi = LevelVector(j, rng.standard_normal(S.level_dim(j)) + 0j)
    phis = [LevelVector(j - 1, rng.standard_normal(S.level_dim(j - 1)) + 0j) for _ in range(3)]
    lhs = sum(np.vdot(phis[k].amplitudes, st_.gradient_apply(k, psi).amplitudes) for k in range(3)) * st_.dt
    rhs = np.vdot(st_.skorohod_apply(3, phis).amplitudes, psi.amplitudes)
    assert abs(lhs - rhs) < 1e-12


def test_scalar_matrix_algebra():
    K = ScalarMatrix([[0, 1], [2, 0]])
    assert np.allclose((K @ K).entries, [[2, 0], [0, 2]])
    assert K.band() == 1
    assert K.precedes(K + K)
    with pytest.raises(ValueError):
        ScalarMatrix([[-1.0]])


def test_control_matrix_of_brownian():
    Q = scenario("brownian", 4, 4)
    kap = control_matrix(Q)
    r = np.sqrt(np.arange(5))
    expect = np.zeros((5, 5))
    for j in range(1, 5):
        expect[j - 1, j] = r[j]
        expect[j, j - 1] = r[j]
    assert np.allclose(kap.entries, expect)
    assert np.allclose(scalar_matrix(Q.F, 2).entries, np.eye(5))


@given(st.floats(0.1, 5.0))
def test_radius_of_diagonal_kappa_is_infinite(c):
    est = analytic_radius_estimate(ScalarMatrix(c * np.eye(6)), 0, 40)
    assert math.isinf(est.radius)


def test_radius_of_shift_like_kappa():
    size = 64
    i, j = np.indices((size, size))
    K = np.where(np.abs(i - j) <= 1, (i + j).astype(float), 0.0)
    est = analytic_radius_estimate(ScalarMatrix(K), 0, size - 4)
    assert est.radius >= 0.9 / 6
    assert np.isfinite(est.radius)


def test_radius_needs_terms():
    with pytest.raises(ValueError):
        analytic_radius_estimate(ScalarMatrix(np.eye(2)), 0, 2)
