import numpy as np
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from artifact.chebyshev import BlockFunction, LinearCombination, chebyshev_coefficients, spectral_interval


def herm(rng, d, s=1.0):
    A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return s * (A + A.conj().T) / 2


@given(st.floats(-20, 20))
def test_coefficients_reproduce_exponential(p):
    c = chebyshev_coefficients(lambda x: np.exp(1j * p * x), -2.0, 3.0)
    x = np.linspace(-2, 3, 41)
    y = (x - 0.5) / 2.5
    approx = np.polynomial.chebyshev.chebval(y, c)
    assert np.max(np.abs(approx - np.exp(1j * p * x))) < 1e-12


def test_interval_contains_spectrum(rng):
    A = herm(rng, 12)
    lo, hi = spectral_interval(A)
    w = np.linalg.eigvalsh(A)
    assert lo <= w.min() and w.max() <= hi


def test_single_block_is_function_of_matrix(rng):
    A = herm(rng, 10)
    X = rng.standard_normal((10, 3))
    out = BlockFunction(lambda x: np.exp(1.3j * x), [A]) @ X
    assert np.max(np.abs(out - sla.expm(1.3j * A) @ X)) < 1e-11


def test_two_and_three_block_corners(rng):
    d = 6
    A, B, C = herm(rng, d), herm(rng, d), herm(rng, d)
    F = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    Z = np.block([[A, F, np.zeros((d, d))], [np.zeros((d, d)), B, G], [np.zeros((d, d)), np.zeros((d, d)), C]])
    E = sla.expm(0.7j * Z)
    eye = np.eye(d)
    two = BlockFunction(lambda x: np.exp(0.7j * x), [A, B], [F]) @ eye
    three = BlockFunction(lambda x: np.exp(0.7j * x), [A, B, C], [F, G]) @ eye
    Z2 = sla.expm(0.7j * np.block([[A, F], [np.zeros((d, d)), B]]))
    assert np.max(np.abs(two - Z2[:d, d:])) < 1e-11
    assert np.max(np.abs(three - E[:d, 2 * d:])) < 1e-11


def test_linear_combination(rng):
    A = herm(rng, 5)
    X = rng.standard_normal((5, 2))
    op = LinearCombination([(2.0, A), (-1.0, np.eye(5)), (3.0, None)])
    assert np.allclose(op @ X, 2 * A @ X - X)
    assert np.allclose(LinearCombination([]) @ X, 0)
