from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.fock import (
    CapacityError,
    GridConfig,
    TruncationConfig,
    buffered_projection,
    enumerate_basis,
    exponential_amplitudes,
    exponential_vector,
    fock_space,
    mode_amplitudes,
)


@given(st.integers(1, 6), st.integers(0, 5))
def test_dimension_is_binomial(n, J):
    assert fock_space(n, J).dim == comb(n + J, J)


def test_colex_order_small():
    assert enumerate_basis(2, 2) == [(2, 0), (1, 1), (0, 2)]
    assert enumerate_basis(3, 1) == [(1, 0, 0), (0, 1, 0), (0, 0, 1)]


def test_past_states_form_level_prefixes():
    full, past = fock_space(4, 3), fock_space(2, 3)
    for j in range(4):
        head = full.states[full.level_slice(j)][: past.level_dim(j)]
        assert np.all(head[:, 2:] == 0)
        assert np.array_equal(head[:, :2], past.states[past.level_slice(j)])


@given(st.integers(1, 5), st.integers(0, 4))
def test_index_round_trip(n, J):
    S = fock_space(n, J)
    assert np.array_equal(S.index(S.states), np.arange(S.dim))


def test_index_missing_state():
    S = fock_space(2, 2)
    assert S.index([[2, 1]])[0] == -1


def test_ladder_transpose_and_number():
    S = fock_space(3, 3)
    for k in range(3):
        a = S.ladder("annihilate", k)
        assert (S.ladder("create", k) - a.T).count_nonzero() == 0
        n = (a.T @ a).toarray()
        assert np.allclose(n, S.ladder("number", k).toarray())


def test_ccr_below_top_level():
    S = fock_space(3, 4)
    cut = S.prefix(3)
    for k in range(3):
        for l in range(3):
            a, ad = S.ladder("annihilate", k), S.ladder("create", l)
            C = (a @ ad - ad @ a).toarray()[:cut, :cut]
            assert np.max(np.abs(C - (k == l) * np.eye(cut))) < 1e-12


def test_mode_ladder_block_matches_full():
    S = fock_space(3, 3)
    blk = S.mode_ladder("annihilate", 1, 2)
    full = S.ladder("annihilate", 1).toarray()
    assert np.allclose(blk.matrix.toarray(), full[S.level_slice(1), S.level_slice(2)])
    assert S.mode_ladder("create", 0, 3).truncated


@given(st.lists(st.complex_numbers(max_magnitude=0.6, allow_nan=False), min_size=1, max_size=4))
def test_exponential_vector_inner_products(g):
    g = np.array(g)
    J = 12
    e = exponential_vector(g, J)
    exact = np.exp(np.sum(np.abs(g) ** 2))
    tail = sum(np.sum(np.abs(g) ** 2) ** j / np.prod(range(1, j + 1)) for j in range(J + 1, J + 40))
    assert abs(e.norm() ** 2 - (exact - tail)) < 1e-9 * exact


def test_exponential_amplitudes_factor_across_split(rng):
    from artifact.cmx import _embedding

    n, J = 5, 4
    g = 0.5 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    full = exponential_amplitudes(fock_space(n, J), g)
    for k in range(n + 1):
        past = exponential_amplitudes(fock_space(k, J), g[:k])
        F = fock_space(n - k, J)
        fut = exponential_amplitudes(F, g[k:])
        for r, idx in enumerate(_embedding(k, n, J)):
            if idx.size:
                expect = fut[F.level_slice(r)][:, None] * past[: idx.shape[1]][None, :]
                assert np.max(np.abs(full[idx] - expect)) < 1e-14


def test_buffered_projection_zeroes_top_levels():
    e = exponential_vector([0.3, 0.4], 5)
    b = buffered_projection(e, 5, 2)
    S = e.space
    assert np.all(b.amplitudes[S.prefix(3):] == 0)
    assert np.allclose(b.amplitudes[: S.prefix(3)], e.amplitudes[: S.prefix(3)])


def test_mode_amplitudes_of_constant():
    amps = mode_amplitudes(lambda s: 1.0 + 0 * s, 4)
    assert np.allclose(amps, np.full(4, 0.5))


def test_configs_validate():
    assert GridConfig(4).dt == 0.25
    assert np.allclose(GridConfig(2).times, [0, 0.5, 1])
    with pytest.raises(ValueError):
        GridConfig(0)
    assert TruncationConfig(6, 2).support_level == 4
    with pytest.raises(ValueError):
        TruncationConfig(2, 3)


def test_capacity_error():
    with pytest.raises(CapacityError):
        fock_space(400, 40)
