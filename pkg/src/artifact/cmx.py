"""Chaos matrices: block operators graded by chaos level.

A :class:`ChaosMatrix` stores one matrix on the truncated Fock space (dense
``ndarray`` or scipy CSR) and exposes its level blocks ``T[i, j]``, which map
level ``j`` into level ``i``.  Keeping a single backing matrix lets products
and adjoints run through BLAS or sparse kernels, while block views give the
graded picture used by norms, bounds and adaptedness checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, LinearOperator, aslinearoperator, svds

from .fock import CapacityError, FockSpace, fock_space

__all__ = [
    "ChaosMatrix",
    "ScalarMatrix",
    "GradientStack",
    "LevelVector",
    "RadiusEstimate",
    "cmx_mul",
    "cmx_adjoint",
    "block_norm",
    "block_norms",
    "ampliate",
    "ampliated_block_norms",
    "adaptedness_residual",
    "scalar_matrix",
    "control_matrix",
    "analytic_radius_estimate",
    "as_operator",
    "materialize",
    "ADAPTED_PASS",
    "ADAPTED_FAIL",
]

ADAPTED_PASS = 1e-12
ADAPTED_FAIL = 1e-3

# fraction of nonzeros above which sparse results are densified
_DENSE_FILL = 0.3
# blocks with min dimension above this use an iterative largest-singular-value solve
_SVD_CUTOFF = 2500


def _is_sparse(a) -> bool:
    return sp.issparse(a)


def _as_backing(data):
    if _is_sparse(data):
        data = sp.csr_array(data)
        if data.nnz > _DENSE_FILL * data.shape[0] * data.shape[1] and data.shape[0] > 0:
            return data.toarray()
        return data
    return np.asarray(data)


class ChaosMatrix:
    """Operator on a truncated Fock space viewed through its level blocks.

    Parameters
    ----------
    space : FockSpace
    data : array or sparse matrix of shape (space.dim, space.dim)
    band : optional declared band; blocks with |i - j| > band must vanish
    truncated : True when some product feeding this matrix crossed the top level
    """

    __array_priority__ = 100

    def __init__(self, space: FockSpace, data, band: int | None = None, truncated: bool = False):
        data = _as_backing(data)
        if data.shape != (space.dim, space.dim):
            raise ValueError(
                f"matrix shape {data.shape} does not match space dimension {space.dim}"
            )
        self.space = space
        self.data = data
        self.band = band
        self.truncated = truncated

    @classmethod
    def zeros(cls, space: FockSpace) -> "ChaosMatrix":
        return cls(space, sp.csr_array((space.dim, space.dim)), band=0)

    @classmethod
    def identity(cls, space: FockSpace) -> "ChaosMatrix":
        return cls(space, sp.identity(space.dim, format="csr"), band=0)

    @classmethod
    def from_blocks(cls, space: FockSpace, blocks: dict, band: int | None = None) -> "ChaosMatrix":
        out = np.zeros((space.dim, space.dim), dtype=complex)
        for (i, j), b in blocks.items():
            out[space.level_slice(i), space.level_slice(j)] = b
        return cls(space, out, band)

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"ChaosMatrix({self.space!r}, {kind}, band={self.band})"

    @property
    def is_sparse(self) -> bool:
        return _is_sparse(self.data)

    @property
    def dim(self) -> int:
        return self.space.dim

    def dense(self) -> np.ndarray:
        return self.data.toarray() if self.is_sparse else np.asarray(self.data)

    def block(self, i: int, j: int) -> np.ndarray:
        s = self.data[self.space.level_slice(i)][:, self.space.level_slice(j)]
        return s.toarray() if _is_sparse(s) else np.array(s)

    @property
    def blocks(self) -> dict[tuple[int, int], np.ndarray]:
        """Nonzero level blocks."""
        out = {}
        J = self.space.max_level
        for i in range(J + 1):
            for j in range(J + 1):
                b = self.block(i, j)
                if b.size and np.any(b):
                    out[(i, j)] = b
        return out

    def effective_band(self) -> int:
        """Largest |i - j| over nonzero blocks (0 for the zero matrix)."""
        lv = self.space.levels
        if self.is_sparse:
            coo = self.data.tocoo()
            keep = coo.data != 0
            r, c = coo.row[keep], coo.col[keep]
        else:
            r, c = np.nonzero(self.data)
        if len(r) == 0:
            return 0
        return int(np.max(np.abs(lv[r] - lv[c])))

    def respects_band(self) -> bool:
        return self.band is None or self.effective_band() <= self.band

    def hermitian_defect(self) -> float:
        """Largest entry of |T - T*|."""
        diff = self.data - self.data.conj().T
        if _is_sparse(diff):
            return float(abs(diff).max()) if diff.nnz else 0.0
        return float(np.max(np.abs(diff))) if diff.size else 0.0

    def is_real(self) -> bool:
        if self.is_sparse:
            return not np.iscomplexobj(self.data.data) or not np.any(self.data.data.imag)
        return not np.iscomplexobj(self.data) or not np.any(self.data.imag)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Matrix action on a vector or a stack of column vectors."""
        return self.data @ x

    def compress(self, level: int) -> "ChaosMatrix":
        """Restriction to levels <= ``level`` (a ChaosMatrix on the smaller truncation)."""
        cut = self.space.prefix(level)
        small = fock_space(self.space.n_modes, min(level, self.space.max_level))
        return ChaosMatrix(small, self.data[:cut][:, :cut], self.band, self.truncated)

    def adjoint(self) -> "ChaosMatrix":
        return cmx_adjoint(self)

    def __matmul__(self, other):
        if isinstance(other, ChaosMatrix):
            return cmx_mul(self, other)
        return NotImplemented

    def _combine(self, other, sign):
        if not isinstance(other, ChaosMatrix):
            return NotImplemented
        _check_same_space(self, other)
        a, b = self.data, other.data
        if _is_sparse(a) != _is_sparse(b):
            a = a.toarray() if _is_sparse(a) else a
            b = b.toarray() if _is_sparse(b) else b
        band = None if self.band is None or other.band is None else max(self.band, other.band)
        return ChaosMatrix(self.space, a + sign * b, band, self.truncated or other.truncated)

    def __add__(self, other):
        return self._combine(other, 1)

    def __sub__(self, other):
        return self._combine(other, -1)

    def __neg__(self):
        return ChaosMatrix(self.space, -self.data, self.band, self.truncated)

    def __mul__(self, c):
        if isinstance(c, ChaosMatrix) or np.ndim(c) != 0:
            return NotImplemented
        return ChaosMatrix(self.space, self.data * c, self.band, self.truncated)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)


def as_operator(T) -> LinearOperator:
    """View a ChaosMatrix (or anything scipy understands) as a LinearOperator."""
    if isinstance(T, ChaosMatrix):
        return aslinearoperator(T.data)
    if isinstance(T, LinearOperator):
        return T
    return aslinearoperator(T)


def materialize(op, space: FockSpace, band: int | None = None) -> ChaosMatrix:
    """Dense ChaosMatrix of a lazy operator on ``space``."""
    if isinstance(op, ChaosMatrix):
        return op
    return ChaosMatrix(space, op @ np.eye(space.dim, dtype=complex), band)


def _check_same_space(S: ChaosMatrix, T: ChaosMatrix):
    if S.space != T.space:
        raise ValueError(f"incompatible chaos matrices: {S.space!r} vs {T.space!r}")


def cmx_mul(S: ChaosMatrix, T: ChaosMatrix) -> ChaosMatrix:
    """Block product (ST)^i_j = sum_v S^i_v T^v_j over the truncation."""
    _check_same_space(S, T)
    band = None if S.band is None or T.band is None else S.band + T.band
    return ChaosMatrix(S.space, S.data @ T.data, band, S.truncated or T.truncated)


def cmx_adjoint(T: ChaosMatrix) -> ChaosMatrix:
    data = T.data.conj().T
    if _is_sparse(data):
        data = data.tocsr()
    return ChaosMatrix(T.space, data, T.band, T.truncated)


def block_norm(B) -> float:
    """Largest singular value of a block (dense or sparse)."""
    if min(B.shape) == 0:
        return 0.0
    if _is_sparse(B):
        if B.nnz == 0 or not np.any(B.data):
            return 0.0
    elif not np.any(B):
        return 0.0
    small = min(B.shape)
    if small <= _SVD_CUTOFF:
        A = B.toarray() if _is_sparse(B) else np.asarray(B)
        if small <= 256:
            return float(sla.svdvals(A, check_finite=False)[0])
        # top eigenvalue of the smaller Gram matrix; exact svd when tiny
        G = A.conj().T @ A if A.shape[1] == small else A @ A.conj().T
        lam = sla.eigvalsh(G, subset_by_index=[small - 1, small - 1], check_finite=False)[0]
        if lam < 1e-12 * max(1.0, float(np.abs(G).max())):
            return float(sla.svdvals(A, check_finite=False)[0])
        return float(math.sqrt(max(lam, 0.0)))
    M = sp.csr_array(B) if _is_sparse(B) else B
    # fixed start vector keeps the iteration deterministic
    v0 = np.ones(small) / math.sqrt(small)
    try:
        s = svds(M, k=1, tol=1e-12, v0=v0, ncv=min(small - 1, 40), maxiter=20 * small,
                 return_singular_vectors=False)
        return float(s[0])
    except ArpackError:
        return _power_norm(M, v0)


def _power_norm(M, v0, tol=1e-13, maxiter=20000) -> float:
    wide = M.shape[0] < M.shape[1]
    x = v0.astype(complex)
    sigma = 0.0
    for _ in range(maxiter):
        y = (M @ (M.conj().T @ x)) if wide else (M.conj().T @ (M @ x))
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        new = math.sqrt(nrm)
        x = y / nrm
        if abs(new - sigma) <= tol * new:
            return new
        sigma = new
    return sigma


def block_norms(T, space: FockSpace | None = None, max_row_level: int | None = None) -> np.ndarray:
    """Matrix of spectral norms of the level blocks of ``T``."""
    if isinstance(T, ChaosMatrix):
        space, data = T.space, T.data
    else:
        data = T
    J = space.max_level
    out = np.zeros((J + 1, J + 1))
    rows = J if max_row_level is None else max_row_level
    out[: rows + 1] = _rect_block_norms(data, space, rows)
    return out


# -- ampliation -----------------------------------------------------------------


@lru_cache(maxsize=64)
def _embedding(m: int, n: int, J: int):
    """Full-space indices of (past state, future state) pairs.

    Returns one entry per future level r: an integer array of shape
    (number of future states at level r, past states with level <= J - r).
    """
    past = fock_space(m, J)
    fut = fock_space(n - m, J)
    full = fock_space(n, J)
    tables = []
    for r in range(J + 1):
        fstates = fut.states[fut.level_slice(r)]
        if fstates.shape[0] == 0:
            tables.append(np.zeros((0, 0), dtype=np.int64))
            continue
        pstates = past.states[: past.prefix(J - r)]
        occ = np.concatenate(
            [
                np.broadcast_to(pstates[None], (fstates.shape[0],) + pstates.shape),
                np.broadcast_to(fstates[:, None], (fstates.shape[0], pstates.shape[0], n - m)),
            ],
            axis=2,
        ).reshape(-1, n)
        idx = full.index(occ).reshape(fstates.shape[0], pstates.shape[0])
        if np.any(idx < 0):
            raise RuntimeError("embedding lookup failed")
        idx.setflags(write=False)
        tables.append(idx)
    return tables


def ampliate(T_past: ChaosMatrix, n_bins: int) -> ChaosMatrix:
    """Extend an operator on the first ``m`` bins to all ``n_bins`` bins.

    The result acts as ``T_past`` on the past modes and as the identity on the
    remaining ones.  In the sector where the future bins carry ``r`` quanta
    only past levels up to ``J - r`` survive the truncation, so each sector
    receives the corresponding compression of ``T_past``.
    """
    m = T_past.space.n_modes
    J = T_past.space.max_level
    if not 0 <= m <= n_bins:
        raise ValueError(f"cannot ampliate from {m} bins to {n_bins} bins")
    if m == n_bins:
        return T_past
    full = fock_space(n_bins, J)
    tables = _embedding(m, n_bins, J)
    # ampliation never increases the fill, so build sparse and let the
    # backing rule decide
    coo = (T_past.data if T_past.is_sparse else sp.csr_array(T_past.data)).tocoo()
    lv = T_past.space.levels
    top = np.maximum(lv[coo.row], lv[coo.col])
    rows, cols, vals = [], [], []
    for r, idx in enumerate(tables):
        if idx.size == 0:
            continue
        keep = top <= J - r
        rows.append(idx[:, coo.row[keep]].ravel())
        cols.append(idx[:, coo.col[keep]].ravel())
        vals.append(np.broadcast_to(coo.data[keep], (idx.shape[0], int(keep.sum()))).ravel())
    data = sp.csr_array(
        (np.concatenate(vals).astype(coo.data.dtype), (np.concatenate(rows), np.concatenate(cols))),
        shape=(full.dim, full.dim),
    )
    return ChaosMatrix(full, data, T_past.band, T_past.truncated)


def ampliated_block_norms(past_norms: np.ndarray, has_future: bool = True) -> np.ndarray:
    """Block norms of an ampliation, from the block norms of the past operator.

    The ampliated (i, j) block is a direct sum of past (i - r, j - r) blocks.
    """
    if not has_future:
        return past_norms.copy()
    J = past_norms.shape[0] - 1
    out = past_norms.copy()
    for r in range(1, J + 1):
        out[r:, r:] = np.maximum(out[r:, r:], past_norms[: J + 1 - r, : J + 1 - r])
    return out


def adaptedness_residual(T: ChaosMatrix, m: int) -> float:
    """Commutation defect of ``T`` and ``T*`` with the future gradients.

    Maximum over bins k >= m and level pairs of
    ||D_k T^i_j - T^{i-1}_{j-1} D_k|| with D_k = a_k / sqrt(dt).
    """
    space = T.space
    n = space.n_modes
    if not 0 <= m <= n:
        raise ValueError(f"grid index {m} out of range 0..{n}")
    scale = math.sqrt(n)
    J = space.max_level
    worst = 0.0
    for op in (T.data, T.data.conj().T):
        for k in range(m, n):
            a = space.ladder("annihilate", k)
            comm = a @ op - op @ a
            comm = comm[: space.prefix(J - 1)]
            if _is_sparse(comm):
                if comm.nnz == 0 or not np.any(comm.data):
                    continue
            elif not np.any(comm):
                continue
            norms = _rect_block_norms(comm, space, J - 1)
            worst = max(worst, scale * float(norms.max()))
    return worst


def _rect_block_norms(data, space: FockSpace, top_row_level: int) -> np.ndarray:
    J = space.max_level
    out = np.zeros((top_row_level + 1, J + 1))
    for i in range(top_row_level + 1):
        strip = data[space.level_slice(i)]
        for j in range(J + 1):
            out[i, j] = block_norm(strip[:, space.level_slice(j)])
    return out


# -- gradient and Skorohod maps -------------------------------------------------


@dataclass(frozen=True)
class LevelVector:
    level: int
    amplitudes: np.ndarray
    truncated: bool = False


class GradientStack:
    """Per-bin gradients D_k = a_k / sqrt(dt) and the adjoint Skorohod map."""

    def __init__(self, space: FockSpace):
        if space.n_modes < 1:
            raise ValueError("gradient needs at least one bin")
        self.space = space
        self.dt = 1.0 / space.n_modes

    def gradient_apply(self, k: int, psi: LevelVector) -> LevelVector:
        j = psi.level
        if j == 0:
            return LevelVector(0, np.zeros(0, dtype=complex))
        block = self.space.mode_ladder("annihilate", k, j).matrix
        return LevelVector(j - 1, block @ psi.amplitudes / math.sqrt(self.dt))

    def skorohod_apply(self, m: int, phis) -> LevelVector:
        """sqrt(dt) * sum_{k<m} a_k^dagger phi_k for a per-bin family of level-j vectors."""
        phis = list(phis)
        if len(phis) < m:
            raise ValueError("need one vector per bin below m")
        j = phis[0].level if phis else 0
        if j >= self.space.max_level:
            return LevelVector(j + 1, np.zeros(0, dtype=complex), truncated=True)
        out = np.zeros(self.space.level_dim(j + 1), dtype=complex)
        for k in range(m):
            out += self.space.mode_ladder("create", k, j).matrix @ phis[k].amplitudes
        return LevelVector(j + 1, math.sqrt(self.dt) * out)


# -- scalar matrices ------------------------------------------------------------


class ScalarMatrix:
    """Entrywise nonnegative matrix indexed by chaos levels."""

    def __init__(self, entries):
        entries = np.asarray(entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("scalar matrix must be square")
        if np.any(entries < 0):
            raise ValueError("scalar matrix entries must be nonnegative")
        self.entries = entries

    def __repr__(self):
        return f"ScalarMatrix({self.entries!r})"

    def __getitem__(self, idx):
        return self.entries[idx]

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def __matmul__(self, other: "ScalarMatrix") -> "ScalarMatrix":
        return ScalarMatrix(self.entries @ other.entries)

    def __add__(self, other: "ScalarMatrix") -> "ScalarMatrix":
        return ScalarMatrix(self.entries + other.entries)

    def __mul__(self, c: float) -> "ScalarMatrix":
        return ScalarMatrix(self.entries * c)

    __rmul__ = __mul__

    def precedes(self, other: "ScalarMatrix", tol: float = 0.0) -> bool:
        """Entrywise order self <= other (up to ``tol``)."""
        return bool(np.all(self.entries <= other.entries + tol))

    def band(self) -> int:
        i, j = np.nonzero(self.entries)
        return int(np.max(np.abs(i - j))) if len(i) else 0


def _time_norm(per_sample: np.ndarray, p, dt: float) -> np.ndarray:
    if p in (np.inf, "inf", math.inf):
        return per_sample.max(axis=0)
    if p == 2:
        return np.sqrt(dt * (per_sample ** 2).sum(axis=0))
    if p == 1:
        return dt * per_sample.sum(axis=0)
    raise ValueError(f"unsupported time norm p={p!r}")


def scalar_matrix(X, p) -> ScalarMatrix:
    """Time norms of the block norms of a bin-step process.

    The process takes the value of its left-endpoint sample on each bin, so
    the grid rules are exact: sup over bins, sqrt(sum dt ||.||^2), sum dt ||.||.
    """
    n = X.n_bins
    per = np.stack([X.block_norms(k) for k in range(n)])
    return ScalarMatrix(_time_norm(per, p, 1.0 / n))


def control_matrix(Q) -> ScalarMatrix:
    """Control matrix of an integrand quadruple."""
    nE = scalar_matrix(Q.E, np.inf).entries
    nF = scalar_matrix(Q.F, 2).entries
    nG = scalar_matrix(Q.G, 2).entries
    nH = scalar_matrix(Q.H, 1).entries
    size = nE.shape[0]
    kappa = nH.copy()
    r = np.sqrt(np.arange(size))
    kappa[1:, 1:] += r[1:, None] * nE[:-1, :-1] * r[None, 1:]
    kappa[:, 1:] += nF[:, :-1] * r[None, 1:]
    kappa[1:, :] += r[1:, None] * nG[:-1, :]
    return ScalarMatrix(kappa)


@dataclass(frozen=True)
class RadiusEstimate:
    """Analytic-radius estimate with the data behind it.

    ``log_terms[n]`` is log(||kappa^n e_j|| / n!) and ``ratios[n-1]`` the
    successive ratio of terms n and n-1.  ``decay_exponent`` is the fitted
    power of n in the ratios over the last quartile.
    """

    radius: float
    log_terms: np.ndarray
    ratios: np.ndarray
    decay_exponent: float

    def __float__(self):
        return float(self.radius)


# ratios falling at least this fast in n signal an entire series
_ENTIRE_EXPONENT = -0.25


def analytic_radius_estimate(kappa: ScalarMatrix, j: int, N_terms: int) -> RadiusEstimate:
    """Estimate the radius of convergence of sum_n ||kappa^n e_j|| z^n / n!.

    Terms are accumulated in log form, so no overflow can occur.  The last
    quartile of successive ratios r_n is fitted twice: r_n ~ n**beta decides
    whether the ratios decay (entire series, +inf), otherwise r_n = C + D/n is
    extrapolated to n -> infinity and 1/C is returned.
    """
    if N_terms < 4:
        raise ValueError("N_terms must be at least 4")
    K = kappa.entries
    if not 0 <= j < K.shape[0]:
        raise IndexError("basis index outside the scalar matrix")
    v = np.zeros(K.shape[0])
    v[j] = 1.0
    logs = [0.0]
    for n in range(1, N_terms + 1):
        v = K @ v / n
        s = float(np.linalg.norm(v))
        if s == 0.0 or not np.isfinite(s):
            if s == 0.0:
                ratios = np.exp(np.diff(logs)) if len(logs) > 1 else np.zeros(0)
                return RadiusEstimate(math.inf, np.array(logs), ratios, -math.inf)
            raise FloatingPointError("rescaling failed while iterating the scalar matrix")
        logs.append(logs[-1] + math.log(s))
        v = v / s
    logs = np.array(logs)
    ratios = np.exp(np.diff(logs))
    n = np.arange(1, N_terms + 1)
    tail = n >= max(2, (3 * N_terms) // 4)
    beta = float(np.polyfit(np.log(n[tail]), np.log(ratios[tail]), 1)[0])
    if beta < _ENTIRE_EXPONENT:
        return RadiusEstimate(math.inf, logs, ratios, beta)
    A = np.vstack([np.ones(tail.sum()), 1.0 / n[tail]]).T
    C = float(np.linalg.lstsq(A, ratios[tail], rcond=None)[0][0])
    if C <= 0:
        return RadiusEstimate(math.inf, logs, ratios, beta)
    return RadiusEstimate(1.0 / C, logs, ratios, beta)
