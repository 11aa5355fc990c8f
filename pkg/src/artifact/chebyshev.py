"""Chebyshev evaluation of matrix functions on blocks of vectors.

For a Hermitian T with spectrum in [lo, hi] the polynomial interpolant p of
f on that interval gives p(T) X from a three-term recursion of matvecs.  The
same recursion applied to an upper block-bidiagonal matrix

    Z = [[T_0, B_1,  0 , ...],
         [ 0 , T_1, B_2, ...],
         ...]

with Hermitian diagonal blocks produces in its top-right block the
divided-difference (Daleckii-Krein) sums of p, e.g. for two blocks
sum_ab p[x_a, y_b] (B_1)_ab in the eigenbases of T_0 and T_1.  The divided
differences of p approximate those of f as well as the derivatives of p
approximate those of f, which for the entire functions used here is to
near machine precision.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import chebyshev as C

__all__ = ["spectral_interval", "chebyshev_coefficients", "BlockFunction", "as_matvec_operand"]

_MAX_DEGREE = 4096


def as_matvec_operand(data):
    """A representation of a matrix that is fast for repeated products."""
    if sp.issparse(data):
        return sp.csr_array(data)
    data = np.asarray(data)
    if data.size and np.count_nonzero(data) < 0.3 * data.size:
        return sp.csr_array(data)
    return data


def spectral_interval(*mats) -> tuple[float, float]:
    """Gershgorin interval containing the spectra of Hermitian matrices."""
    lo, hi = 0.0, 0.0
    for A in mats:
        if A is None or A.shape[0] == 0:
            continue
        if sp.issparse(A):
            A = sp.csr_array(A)
            d = A.diagonal().real
            radius = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
        else:
            d = np.real(np.diag(A))
            radius = np.abs(A).sum(axis=1) - np.abs(d)
        lo = min(lo, float(np.min(d - radius)))
        hi = max(hi, float(np.max(d + radius)))
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def chebyshev_coefficients(fn, lo: float, hi: float, tol: float = 1e-14) -> np.ndarray:
    """Coefficients of the Chebyshev interpolant of ``fn`` on [lo, hi].

    The degree doubles until the trailing coefficients fall below ``tol``
    relative to the largest one.
    """
    c, r = 0.5 * (hi + lo), 0.5 * (hi - lo)
    deg = 16
    prev_tail = np.inf
    while True:
        coef = C.chebinterpolate(lambda y: fn(c + r * y), deg)
        scale = max(np.max(np.abs(coef)), 1e-300)
        tail = np.max(np.abs(coef[-4:]))
        # stop at the tolerance, or once the tail has hit the rounding plateau
        if tail <= tol * scale or deg >= _MAX_DEGREE:
            break
        if tail < 1e-9 * scale and tail > 0.1 * prev_tail:
            break
        prev_tail = tail
        deg *= 2
    floor = max(1e-17 * scale, 4 * tail if tail > tol * scale else 0.0)
    keep = np.nonzero(np.abs(coef) > floor)[0]
    last = int(keep[-1]) + 1 if keep.size else 1
    return coef[:last]


class BlockFunction:
    """Top-right block of f(Z) for an upper block-bidiagonal Z, applied lazily.

    ``diag`` holds the Hermitian diagonal blocks (all the same size) and
    ``upper`` the couplings between consecutive blocks.  With a single
    diagonal block this is plain f(T).  ``block @ X`` returns the top block of
    f(Z) [0; ...; 0; X].
    """

    def __init__(self, fn, diag, upper=(), interval=None, coefficients=None):
        if len(upper) != len(diag) - 1:
            raise ValueError("need one coupling per pair of consecutive diagonal blocks")
        self.diag = [as_matvec_operand(_data(D)) for D in diag]
        self.upper = [as_matvec_operand(_data(B)) for B in upper]
        self.dim = self.diag[0].shape[0]
        lo, hi = interval if interval is not None else spectral_interval(*self.diag)
        self.center, self.radius = 0.5 * (hi + lo), 0.5 * (hi - lo)
        self.coef = chebyshev_coefficients(fn, lo, hi) if coefficients is None else coefficients

    def _scaled(self, X):
        s, D = len(self.diag), self.dim
        out = np.empty_like(X)
        for i in range(s):
            xi = X[i * D:(i + 1) * D]
            yi = self.diag[i] @ xi
            if i + 1 < s:
                yi = yi + self.upper[i] @ X[(i + 1) * D:(i + 2) * D]
            out[i * D:(i + 1) * D] = (yi - self.center * xi) / self.radius
        return out

    def __matmul__(self, block):
        block = np.asarray(block)
        vec = block.ndim == 1
        if vec:
            block = block[:, None]
        s, D = len(self.diag), self.dim
        X = np.zeros((s * D, block.shape[1]), dtype=complex)
        X[(s - 1) * D:] = block
        t_prev, t_cur = X, self._scaled(X)
        acc = self.coef[0] * t_prev[:D]
        if len(self.coef) > 1:
            acc = acc + self.coef[1] * t_cur[:D]
        for k in range(2, len(self.coef)):
            t_prev, t_cur = t_cur, 2.0 * self._scaled(t_cur) - t_prev
            acc = acc + self.coef[k] * t_cur[:D]
        return acc[:, 0] if vec else acc

    @property
    def degree(self) -> int:
        return len(self.coef) - 1


class LinearCombination:
    """Lazy sum of scaled operators (each supporting ``@`` on blocks)."""

    def __init__(self, terms):
        self.terms = [(c, op) for c, op in terms if op is not None]

    def __matmul__(self, block):
        out = None
        for c, op in self.terms:
            v = c * (op @ block)
            out = v if out is None else out + v
        return np.zeros(np.shape(block), dtype=complex) if out is None else out


def _data(A):
    return A.data if hasattr(A, "space") else A


def exp_degree_estimate(p: float, radius: float) -> int:
    """Rough Chebyshev degree needed for exp(i p x) on an interval of given radius."""
    return int(abs(p) * radius + 8 * math.log10(abs(p) * radius + 10) + 10)
