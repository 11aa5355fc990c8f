"""Exponentials, Duhamel integrands and the Fourier functional calculus.

Two evaluation routes run side by side.  The matrix route works with full
eigendecompositions of the truncated operators and realizes every u, v and
p integral by the configured quadrature rule; it returns chaos matrices and
is meant for moderate dimensions.  The probe route never forms the large
matrices: exponentials and divided-difference sandwiches are applied to
blocks of probe vectors through Chebyshev recursions on block-triangular
operators (see :mod:`artifact.chebyshev`), which integrates u and v exactly.
Residual records are computed on the probe route; the matrix route supplies
the operator-valued integrands and the oracle comparisons.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numpy.polynomial import Polynomial
from numpy.polynomial import hermite as herm
from numpy.polynomial import legendre as leg
from scipy import integrate
from scipy.special import gammainc

from .chebyshev import BlockFunction, LinearCombination, as_matvec_operand
from .cmx import ChaosMatrix, ampliate
from .fock import CapacityError, fock_space
from .processes import CmxProcess, Quadruple
from .qsi import ProbeFamily, ResidualRecord, _increment, buffered_norm, integral_pairings, integral_past

__all__ = [
    "HermitianError",
    "QuadratureError",
    "FunctionSpec",
    "QuadratureConfig",
    "Spectrum",
    "spectrum",
    "cmx_exp",
    "exp_power_series",
    "series_tail_bound",
    "duhamel_integrands",
    "series_integrands",
    "duhamel_residual",
    "fourier_apply",
    "spectral_apply",
    "differential",
    "second_differential",
    "ito_second_differential",
    "divided_difference",
    "divided_difference2",
    "ito_functional_residual",
    "ito_functional_integrands",
    "stratonovich_residual",
    "duhamel_expansion",
    "ResidualRecord",
    "ExpansionRecord",
]

HERMITIAN_TOL = 1e-10
_SLOT_LABELS = ((1, 1), (0, 1), (1, 0), (0, 0))


class HermitianError(ValueError):
    """A Hermitian operator was required and the input is not one."""


class QuadratureError(ValueError):
    """The configured quadrature cannot reach the requested accuracy."""


# -- function catalog ----------------------------------------------------------


@dataclass(frozen=True)
class FunctionSpec:
    """A scalar function with closed-form derivatives and Fourier transform.

    Fourier convention: f(x) = int fhat(p) exp(i p x) dp, so
    fhat(p) = (1 / 2 pi) int f(x) exp(-i p x) dx.

    kinds: ``gaussian`` (sigma), ``hermite_gaussian`` (n, sigma) with
    f(x) = H_n(x / sigma) exp(-x^2 / 2 sigma^2) in the physicists' convention,
    and ``polynomial`` (coefficients in increasing degree).
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "gaussian":
            (sigma,) = self.params
            if sigma <= 0:
                raise ValueError("sigma must be positive")
        elif self.kind == "hermite_gaussian":
            n, sigma = self.params
            if int(n) != n or n < 0 or sigma <= 0:
                raise ValueError("hermite_gaussian needs an integer order >= 0 and sigma > 0")
        elif self.kind == "polynomial":
            if len(self.params) == 0:
                raise ValueError("polynomial needs at least one coefficient")
        else:
            raise ValueError(f"unknown function kind {self.kind!r}")

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "FunctionSpec":
        return cls("gaussian", (float(sigma),))

    @classmethod
    def hermite_gaussian(cls, n: int, sigma: float = 1.0) -> "FunctionSpec":
        return cls("hermite_gaussian", (int(n), float(sigma)))

    @classmethod
    def polynomial(cls, coeffs) -> "FunctionSpec":
        return cls("polynomial", tuple(complex(c) if np.iscomplexobj(c) else float(c) for c in coeffs))

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionSpec":
        kind = d["name"]
        if kind == "gaussian":
            return cls.gaussian(d.get("sigma", 1.0))
        if kind == "hermite_gaussian":
            return cls.hermite_gaussian(d["n"], d.get("sigma", 1.0))
        if kind == "polynomial":
            return cls.polynomial(d["coeffs"])
        raise ValueError(f"unknown function kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"name": "gaussian", "sigma": self.params[0]}
        if self.kind == "hermite_gaussian":
            return {"name": "hermite_gaussian", "n": self.params[0], "sigma": self.params[1]}
        return {"name": "polynomial", "coeffs": list(self.params)}

    @property
    def is_polynomial(self) -> bool:
        return self.kind == "polynomial"

    @property
    def degree(self) -> int:
        if not self.is_polynomial:
            raise ValueError("degree is defined for polynomials only")
        c = np.asarray(self.params)
        nz = np.nonzero(c)[0]
        return int(nz[-1]) if nz.size else 0

    def _prefactor(self):
        # f = P(x) exp(-x^2 / 2 s^2) for the Gaussian kinds
        if self.kind == "gaussian":
            return Polynomial([1.0]), self.params[0]
        n, s = self.params
        coef = herm.herm2poly([0] * n + [1])
        return Polynomial(coef * s ** -np.arange(n + 1.0)), s

    def derivative_prefactor(self, order: int):
        P, s = self._prefactor()
        x = Polynomial([0.0, 1.0])
        for _ in range(order):
            P = P.deriv() - x * P / s ** 2
        return P, s

    def derivative(self, x, order: int = 0):
        """f^(order)(x)."""
        x = np.asarray(x)
        if self.is_polynomial:
            P = Polynomial(self.params)
            return P.deriv(order)(x) if order else P(x)
        P, s = self.derivative_prefactor(order)
        return P(x) * np.exp(-x ** 2 / (2 * s ** 2))

    def __call__(self, x):
        return self.derivative(x, 0)

    def fhat(self, p):
        """Fourier transform under the convention above."""
        if self.is_polynomial:
            raise ValueError("polynomials have no integrable Fourier transform")
        p = np.asarray(p, dtype=float)
        if self.kind == "gaussian":
            (s,) = self.params
            return s / math.sqrt(2 * math.pi) * np.exp(-(s * p) ** 2 / 2)
        n, s = self.params
        return (s / math.sqrt(2 * math.pi) * (-1j) ** n * herm.hermval(s * p, [0] * n + [1])
                * np.exp(-(s * p) ** 2 / 2))

    def fourier_tail(self, p_max: float, power: int = 0) -> float:
        """int_{|p| > p_max} |p|^power |fhat(p)| dp."""
        def g(p):
            return abs(p) ** power * abs(self.fhat(p))
        right = integrate.quad(g, p_max, np.inf, limit=200)[0]
        left = integrate.quad(g, -np.inf, -p_max, limit=200)[0]
        return right + left


@dataclass(frozen=True)
class QuadratureConfig:
    """Gauss-Legendre order in u (and v) on [0, 1]; trapezoid rule in p."""

    u_order: int = 16
    p_max: float = 12.0
    p_points: int = 241

    def __post_init__(self):
        if self.u_order < 2:
            raise ValueError("u_order must be at least 2")
        if self.p_points < 3 or self.p_points % 2 == 0:
            raise ValueError("p_points must be an odd integer >= 3")
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")

    def u_rule(self):
        x, w = leg.leggauss(self.u_order)
        return 0.5 * (x + 1.0), 0.5 * w

    def p_rule(self):
        p = np.linspace(-self.p_max, self.p_max, self.p_points)
        h = p[1] - p[0]
        w = np.full(self.p_points, h)
        w[0] = w[-1] = h / 2
        return p, w

    def to_dict(self) -> dict:
        return asdict(self)


def _check_tail(f: FunctionSpec, quad: QuadratureConfig, power: int, tol: float):
    tail = f.fourier_tail(quad.p_max, power)
    if tail > tol:
        raise QuadratureError(
            f"Fourier tail of {f.kind}{f.params} beyond p_max={quad.p_max} is {tail:.3g} (> {tol:g})"
        )


# -- spectra and exponentials --------------------------------------------------


@dataclass
class Spectrum:
    values: np.ndarray
    vectors: np.ndarray

    def function(self, diag) -> np.ndarray:
        V = self.vectors
        return (V * diag) @ V.conj().T

    def to_eigenbasis(self, X, right: "Spectrum | None" = None) -> np.ndarray:
        W = self.vectors if right is None else right.vectors
        return self.vectors.conj().T @ _dense(X) @ W

    def from_eigenbasis(self, Y, right: "Spectrum | None" = None) -> np.ndarray:
        W = self.vectors if right is None else right.vectors
        return self.vectors @ Y @ W.conj().T


def _dense(X):
    if isinstance(X, ChaosMatrix):
        X = X.data
    return X.toarray() if sp.issparse(X) else np.asarray(X)


def _check_hermitian(T: ChaosMatrix):
    defect = T.hermitian_defect()
    if defect > HERMITIAN_TOL:
        raise HermitianError(f"operator is not Hermitian (defect {defect:.3g} > {HERMITIAN_TOL:g})")


def spectrum(T: ChaosMatrix) -> Spectrum:
    """Eigendecomposition of a Hermitian chaos matrix (cached on the matrix)."""
    cached = T.__dict__.get("_spectrum")
    if cached is not None:
        return cached
    _check_hermitian(T)
    A = _dense(T)
    A = 0.5 * (A + A.conj().T)
    w, V = sla.eigh(A, check_finite=False) if A.size else (np.zeros(0), np.zeros((0, 0)))
    out = Spectrum(w, V)
    T.__dict__["_spectrum"] = out
    return out


def cmx_exp(T: ChaosMatrix, p: float) -> ChaosMatrix:
    """exp(i p T) for Hermitian T, by eigendecomposition."""
    S = spectrum(T)
    return ChaosMatrix(T.space, S.function(np.exp(1j * p * S.values)))


def series_tail_bound(norm: float, p: float, n_terms: int) -> float:
    """sum_{k > n_terms} (|p| norm)^k / k!."""
    x = abs(p) * norm
    if x == 0:
        return 0.0
    return float(math.exp(x) * gammainc(n_terms + 1, x))


def exp_power_series(T: ChaosMatrix, p: float, n_terms: int) -> ChaosMatrix:
    """Partial sum sum_{k <= n_terms} (i p T)^k / k!."""
    if n_terms < 1:
        raise ValueError("n_terms must be at least 1")
    _check_hermitian(T)
    A = _dense(T)
    term = np.eye(A.shape[0], dtype=complex)
    total = term.copy()
    for k in range(1, n_terms + 1):
        term = (1j * p / k) * (A @ term)
        total += term
    return ChaosMatrix(T.space, total)


# -- Duhamel integrands --------------------------------------------------------


def _exp_kernel(p, a, b, x, w):
    """ip sum_j w_j exp(i(1-x_j) p a) exp(i x_j p b) as a matrix over (a, b)."""
    left = np.exp(1j * p * np.outer(1 - x, a))
    right = np.exp(1j * p * np.outer(x, b))
    return 1j * p * np.einsum("j,ja,jb->ab", w, left, right)


def _quadrature_sample(M, E, F, G, H, p, quad):
    """(E_exp, F_exp, G_exp, H_exp) on one past space, u and v by Gauss-Legendre."""
    S = M.space
    SM = spectrum(M)
    SE = spectrum(M + E) if E is not None else SM
    lam, mu = SM.values, SE.values
    x, w = quad.u_rule()
    out = [None, None, None, None]
    if E is not None:
        out[0] = ChaosMatrix(S, SE.function(np.exp(1j * p * mu)) - SM.function(np.exp(1j * p * lam)))
    if F is not None:
        Ft = SM.to_eigenbasis(F, SE)
        out[1] = ChaosMatrix(S, SM.from_eigenbasis(_exp_kernel(p, lam, mu, x, w) * Ft, SE))
    if G is not None:
        Gt = SE.to_eigenbasis(G, SM)
        out[2] = ChaosMatrix(S, SE.from_eigenbasis(_exp_kernel(p, mu, lam, x, w) * Gt, SM))
    Hsum = np.zeros((S.dim, S.dim), dtype=complex)
    if H is not None:
        Hsum += _exp_kernel(p, lam, lam, x, w) * SM.to_eigenbasis(H)
    if F is not None and G is not None:
        # -p^2 int int u e^{i(1-u)pM} F e^{iu(1-v)p(M+E)} G e^{iuvpM}
        for xj, wj in zip(x, w):
            inner = np.einsum("l,lb,lc->bc", w,
                              np.exp(1j * p * xj * np.outer(1 - x, mu)),
                              np.exp(1j * p * xj * np.outer(x, lam)))
            rows = np.exp(1j * p * (1 - xj) * lam)[:, None] * Ft
            Hsum += (-p ** 2 * wj * xj) * (rows @ (Gt * inner))
    if H is not None or (F is not None and G is not None):
        out[3] = ChaosMatrix(S, SM.from_eigenbasis(Hsum))
    return out


def _probe_sample(M, E, F, G, H, p):
    """Lazy versions of the four integrands, with u and v integrated exactly."""
    ex = lambda x: np.exp(1j * p * x)  # noqa: E731
    ME = M if E is None else M + E
    ops = [None, None, None, None]
    if E is not None:
        ops[0] = LinearCombination([(1.0, BlockFunction(ex, [ME])), (-1.0, BlockFunction(ex, [M]))])
    if F is not None:
        ops[1] = BlockFunction(ex, [M, ME], [F])
    if G is not None:
        ops[2] = BlockFunction(ex, [ME, M], [G])
    terms = []
    if H is not None:
        terms.append((1.0, BlockFunction(ex, [M, M], [H])))
    if F is not None and G is not None:
        terms.append((1.0, BlockFunction(ex, [M, ME, M], [F, G])))
    if terms:
        ops[3] = LinearCombination(terms)
    return ops


def _samples_at(Q: Quadruple, k: int):
    M = integral_past(Q, k)
    E, F, G, H = (None if X.is_zero else X.past(k) for X in Q.components)
    return M, E, F, G, H


def _require_symmetric(Q: Quadruple):
    if not Q.symmetric:
        raise ValueError("the Duhamel integrands need a symmetric quadruple")


def duhamel_integrands(Q: Quadruple, p: float, quad: QuadratureConfig | None = None) -> Quadruple:
    """Integrand quadruple of exp(i p M_t), M the integral of ``Q``.

    ``past(k)`` gives the chaos matrices at t_k with the u and v integrals
    done by Gauss-Legendre (E_exp from two exponentials); ``past_operator(k)``
    gives the same objects lazily with exact u, v integration.
    """
    _require_symmetric(Q)
    quad = quad or QuadratureConfig()
    n, J = Q.n_bins, Q.max_level
    dense: dict[int, list] = {}

    def sample(k):
        if k not in dense:
            dense[k] = _quadrature_sample(*_samples_at(Q, k), p, quad)
        return dense[k]

    def lazy(k):
        return _probe_sample(*_samples_at(Q, k), p)

    zero_slots = [
        Q.E.is_zero,
        Q.F.is_zero,
        Q.G.is_zero,
        Q.H.is_zero and (Q.F.is_zero or Q.G.is_zero),
    ]
    names = ("E_exp", "F_exp", "G_exp", "H_exp")
    procs = []
    for i, name in enumerate(names):
        if zero_slots[i] or p == 0:
            procs.append(CmxProcess.zero(n, J))
            continue
        procs.append(CmxProcess(
            n, J,
            past=lambda k, i=i: sample(k)[i] if sample(k)[i] is not None else ChaosMatrix.zeros(fock_space(k, J)),
            past_op=lambda k, i=i: lazy(k)[i],
            band=None, name=name,
        ))
    return Quadruple(*procs, symmetric=True, name=f"exp(i{p:g} {Q.name})",
                     params={"p": p, **quad.to_dict()})


def _series_sample(M, E, F, G, H, p, n_terms):
    """Power-series integrands sum_n (ip)^n X_n / n! from the power recursion."""
    S = M.space
    D = S.dim
    Md = _dense(M)
    Ed, Fd, Gd, Hd = (None if X is None else _dense(X) for X in (E, F, G, H))
    zero = np.zeros((D, D), dtype=complex)
    Mn = Md.copy()
    En = zero if Ed is None else Ed.copy()
    Fn = zero if Fd is None else Fd.copy()
    Gn = zero if Gd is None else Gd.copy()
    Hn = zero if Hd is None else Hd.copy()
    acc = [1j * p * X for X in (En, Fn, Gn, Hn)]
    coeff = 1j * p
    for k in range(1, n_terms):
        nE = Md @ En + (0 if Ed is None else Ed @ Mn + Ed @ En)
        nF = Md @ Fn + (0 if Fd is None else Fd @ Mn + Fd @ En)
        nG = Gn @ Md + (0 if Gd is None else Mn @ Gd + En @ Gd)
        nH = Md @ Hn + (0 if Hd is None else Hd @ Mn) + (0 if Fd is None else Fd @ Gn)
        Mn = Mn @ Md
        En, Fn, Gn, Hn = nE, nF, nG, nH
        coeff = coeff * 1j * p / (k + 1)
        for i, X in enumerate((En, Fn, Gn, Hn)):
            acc[i] = acc[i] + coeff * X
    return [ChaosMatrix(S, a) for a in acc]


def series_integrands(Q: Quadruple, p: float, n_terms: int = 12) -> Quadruple:
    """Partial sums sum_{n <= N} (ip)^n X_n / n! of the power-quadruple series.

    The products are taken in the truncated algebra, so the series converges
    to the exponential of the truncated matrices; compare on levels at least
    a buffer below the top.
    """
    _require_symmetric(Q)
    if n_terms < 1:
        raise ValueError("n_terms must be at least 1")
    n, J = Q.n_bins, Q.max_level
    cache: dict[int, list] = {}

    def sample(k):
        if k not in cache:
            cache[k] = _series_sample(*_samples_at(Q, k), p, n_terms)
        return cache[k]

    procs = [CmxProcess(n, J, past=lambda k, i=i: sample(k)[i], band=None, name=f"series_{i}")
             for i in range(4)]
    return Quadruple(*procs, symmetric=True, name=f"series(i{p:g} {Q.name})",
                     params={"p": p, "n_terms": n_terms})


# -- residual records ----------------------------------------------------------


def _default_level(J: int, buffer: int) -> int:
    L = J - buffer
    if L < 0:
        raise CapacityError(f"buffer {buffer} exceeds the truncation level {J}")
    return L


def duhamel_residual(Q: Quadruple, p: float, quad: QuadratureConfig | None = None,
                     probes: ProbeFamily | None = None, level: int | None = None,
                     buffer: int = 2, dense_cap: int = 0) -> ResidualRecord:
    """Residual of exp(i p M_t) = I + int (E_exp dLambda + F_exp dA + G_exp dA+ + H_exp ds).

    The weak residual is evaluated at every grid time with the probe route.
    When the full dimension is at most ``dense_cap`` the buffered operator
    norm of the matrix-route residual is added.
    """
    _require_symmetric(Q)
    quad = quad or QuadratureConfig()
    n, J = Q.n_bins, Q.max_level
    L = _default_level(J, buffer) if level is None else level
    probes = probes or ProbeFamily.default(n, J)
    ex = lambda x: np.exp(1j * p * x)  # noqa: E731

    def ops_at(k):
        return _probe_sample(*_samples_at(Q, k), p)

    rhs = integral_pairings(ops_at, probes, L, _SLOT_LABELS) if p != 0 else \
        np.zeros((n + 1, probes.size, probes.size), dtype=complex)
    base = probes.inner(L)
    res = []
    for m in range(n + 1):
        lhs = probes.pair(m, BlockFunction(ex, [integral_past(Q, m)]), L, L)
        res.append(float(np.max(np.abs(lhs - base - rhs[m]))))
    record = ResidualRecord("duhamel", n, J, L, [m / n for m in range(n + 1)], res,
                            extras={"p": p, "scenario": Q.name})
    if fock_space(n, J).dim <= dense_cap:
        DQ = duhamel_integrands(Q, p, quad)
        ops = []
        for m in range(n + 1):
            S = fock_space(m, J)
            U = cmx_exp(integral_past(Q, m), p)
            R = integral_past(DQ, m)
            ops.append(buffered_norm(U.data - np.eye(S.dim) - _dense(R), S, L))
        record.operator = ops
    return record


# -- Fourier functional calculus -----------------------------------------------


def fourier_apply(f: FunctionSpec, T: ChaosMatrix, quad: QuadratureConfig | None = None,
                  tail_tol: float = 1e-10) -> ChaosMatrix:
    """Trapezoid sum over the p nodes of fhat(p) exp(i p T).

    The sum is formed in the eigenbasis of T, where each exp(i p T) is
    diagonal; the result is the same matrix the node-by-node sum would give.
    """
    if f.is_polynomial:
        raise ValueError("fourier_apply needs a function with an integrable Fourier transform")
    quad = quad or QuadratureConfig()
    _check_tail(f, quad, 0, tail_tol)
    S = spectrum(T)
    p, w = quad.p_rule()
    diag = np.exp(1j * np.outer(S.values, p)) @ (w * f.fhat(p))
    return ChaosMatrix(T.space, S.function(diag))


def spectral_apply(f: FunctionSpec, T: ChaosMatrix) -> ChaosMatrix:
    """f(T) through the eigendecomposition of T."""
    S = spectrum(T)
    return ChaosMatrix(T.space, S.function(f(S.values)))


_GL16 = leg.leggauss(16)


def divided_difference(f: FunctionSpec, x, y):
    """f[x, y], with the integral form when x and y are within 1 of each other."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    out = np.empty(x.shape, dtype=complex if f.is_polynomial and np.iscomplexobj(np.asarray(f.params)) else float)
    near = np.abs(x - y) <= 1.0
    if np.any(near):
        s = 0.5 * (_GL16[0] + 1)
        w = 0.5 * _GL16[1]
        xn, yn = x[near][..., None], y[near][..., None]
        out[near] = (w * f.derivative(xn + s * (yn - xn), 1)).sum(-1)
    far = ~near
    if np.any(far):
        out[far] = (f(x[far]) - f(y[far])) / (x[far] - y[far])
    return out


def divided_difference2(f: FunctionSpec, x, y, z):
    """f[x, y, z]: the simplex integral of f'' for a spread of at most 1, quotients otherwise."""
    x, y, z = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, y, z)))
    out = np.empty(x.shape, dtype=complex if f.is_polynomial and np.iscomplexobj(np.asarray(f.params)) else float)
    stack = np.stack([x, y, z])
    spread = stack.max(0) - stack.min(0)
    near = spread <= 1.0
    if np.any(near):
        s = 0.5 * (_GL16[0] + 1)
        w = 0.5 * _GL16[1]
        u, v = s[:, None], s[None, :]
        wt = (w[:, None] * w[None, :]) * u
        xn, yn, zn = (a[near][..., None, None] for a in (x, y, z))
        pts = (1 - u) * xn + u * (1 - v) * yn + u * v * zn
        out[near] = (wt * f.derivative(pts, 2)).sum((-1, -2))
    far = ~near
    if np.any(far):
        # pair the two most distant points so the quotient is well conditioned
        xf, yf, zf = x[far], y[far], z[far]
        lo = np.argmin(np.stack([xf, yf, zf]), 0)
        hi = np.argmax(np.stack([xf, yf, zf]), 0)
        pts = np.stack([xf, yf, zf])
        idx = np.arange(xf.size)
        a, c = pts[lo, idx], pts[hi, idx]
        b = pts[3 - lo - hi, idx]
        out[far] = (divided_difference(f, a, b) - divided_difference(f, b, c)) / (a - c)
    return out


def _fourier_first_kernel(f, lam_a, lam_b, quad):
    p, wp = quad.p_rule()
    x, wu = quad.u_rule()
    coef = (1j * p * f.fhat(p) * wp)[:, None] * wu[None, :]  # (p, j)
    A = np.exp(1j * np.einsum("p,j,a->apj", p, 1 - x, lam_a)) * coef[None]
    B = np.exp(1j * np.einsum("p,j,b->pjb", p, x, lam_b))
    return A.reshape(len(lam_a), -1) @ B.reshape(-1, len(lam_b))


def differential(f: FunctionSpec, T: ChaosMatrix, H, quad: QuadratureConfig | None = None,
                 method: str = "fourier") -> ChaosMatrix:
    """Df(T)(H) = int int ip fhat(p) exp(ip(1-u)T) H exp(ipuT) du dp.

    ``method="fourier"`` evaluates the p and u rules; ``"spectral"`` uses the
    exact divided differences f[lambda_a, lambda_b] in the eigenbasis.
    """
    quad = quad or QuadratureConfig()
    S = spectrum(T)
    Ht = S.to_eigenbasis(H)
    lam = S.values
    if method == "fourier":
        if f.is_polynomial:
            raise ValueError("the Fourier route needs a non-polynomial function")
        _check_tail(f, quad, 1, 1e-10)
        K = _fourier_first_kernel(f, lam, lam, quad)
    elif method == "spectral":
        K = divided_difference(f, lam[:, None], lam[None, :])
    else:
        raise ValueError(f"unknown method {method!r}")
    return ChaosMatrix(T.space, S.from_eigenbasis(K * Ht))


def ito_second_differential(f: FunctionSpec, T: ChaosMatrix, H, K,
                            quad: QuadratureConfig | None = None, method: str = "fourier") -> ChaosMatrix:
    """Unsymmetrized second differential D^2_I f(T)(H, K).

    Fourier route: -int int int p^2 fhat(p) u exp(ip(1-u)T) H exp(ipu(1-v)T) K exp(ipuvT).
    Spectral route: sum_b f[l_a, l_b, l_c] H_ab K_bc in the eigenbasis.  The
    Fourier route costs (p nodes) x (u nodes) cubic products and suits small
    matrices.
    """
    quad = quad or QuadratureConfig()
    S = spectrum(T)
    Ht, Kt = S.to_eigenbasis(H), S.to_eigenbasis(K)
    lam = S.values
    if method == "fourier":
        if f.is_polynomial:
            raise ValueError("the Fourier route needs a non-polynomial function")
        _check_tail(f, quad, 2, 1e-10)
        p, wp = quad.p_rule()
        x, wu = quad.u_rule()
        cp = -p ** 2 * f.fhat(p) * wp
        out = np.zeros_like(Ht, dtype=complex)
        for xj, wj in zip(x, wu):
            outer = np.exp(1j * np.einsum("p,a->pa", p * (1 - xj), lam))
            mid = np.exp(1j * xj * np.einsum("p,l,b->plb", p, 1 - x, lam))
            last = np.exp(1j * xj * np.einsum("p,l,c->plc", p, x, lam))
            kern = np.einsum("l,plb,plc->pbc", wu, mid, last)
            out += (wj * xj) * np.einsum("p,pa,ab,pbc,bc->ac", cp, outer, Ht, kern, Kt, optimize=True)
    elif method == "spectral":
        dd = divided_difference2(f, lam[:, None, None], lam[None, :, None], lam[None, None, :])
        out = np.einsum("abc,ab,bc->ac", dd, Ht, Kt, optimize=True)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ChaosMatrix(T.space, S.from_eigenbasis(out))


def second_differential(f: FunctionSpec, T: ChaosMatrix, H, K,
                        quad: QuadratureConfig | None = None, method: str = "fourier") -> ChaosMatrix:
    """D^2 f(T)(H, K) = D^2_I f(T)(H, K) + D^2_I f(T)(K, H)."""
    return (ito_second_differential(f, T, H, K, quad, method)
            + ito_second_differential(f, T, K, H, quad, method))


# -- functional Ito formula ----------------------------------------------------


def _require_gauge_free(Q: Quadruple):
    if not Q.E.is_zero:
        raise ValueError(
            "the functional Ito formula here covers gauge-free quadruples; "
            "with a gauge part use the Duhamel integrands composed with Fourier weights"
        )


def ito_functional_integrands(Q: Quadruple, f: FunctionSpec, drop_drift: bool = False):
    """Callable k -> lazy (F_f, G_f, H_f) at t_k.

    F_f = Df(M)(F), G_f = Df(M)(G), H_f = Df(M)(H) + D^2_I f(M)(F, G).
    ``drop_drift`` omits Df(M)(H).
    """
    _require_symmetric(Q)
    _require_gauge_free(Q)

    def ops_at(k):
        M, _, F, G, H = _samples_at(Q, k)
        Ff = None if F is None else BlockFunction(f, [M, M], [F])
        Gf = None if G is None else BlockFunction(f, [M, M], [G])
        terms = []
        if H is not None and not drop_drift:
            terms.append((1.0, BlockFunction(f, [M, M], [H])))
        if F is not None and G is not None:
            terms.append((1.0, BlockFunction(f, [M, M, M], [F, G])))
        Hf = LinearCombination(terms) if terms else None
        return [Ff, Gf, Hf]

    return ops_at


def ito_functional_residual(Q: Quadruple, f: FunctionSpec, quad: QuadratureConfig | None = None,
                            probes: ProbeFamily | None = None, level: int | None = None,
                            buffer: int = 2, drop_drift: bool = False,
                            dense_cap: int = 0) -> ResidualRecord:
    """Residual of f(M_t) = f(0) + int (Df(M)(dM) + D^2_I f(M)(dM, dM)) for E = 0.

    Weak residuals come from the probe route.  With ``dense_cap`` at least
    the full dimension, the buffered operator norm of the matrix-route
    residual (Fourier differentials, spectral f(M_t)) is added.
    """
    ops_at = ito_functional_integrands(Q, f, drop_drift)
    quad = quad or QuadratureConfig()
    n, J = Q.n_bins, Q.max_level
    L = _default_level(J, buffer) if level is None else level
    probes = probes or ProbeFamily.default(n, J)
    labels = [(0, 1), (1, 0), (0, 0)]
    rhs = integral_pairings(ops_at, probes, L, labels)
    f0 = complex(f(0.0))
    base = f0 * probes.inner(L)
    res = []
    for m in range(n + 1):
        lhs = probes.pair(m, BlockFunction(f, [integral_past(Q, m)]), L, L)
        res.append(float(np.max(np.abs(lhs - base - rhs[m]))))
    record = ResidualRecord("ito-functional", n, J, L, [m / n for m in range(n + 1)], res,
                            extras={"function": f.to_dict(), "scenario": Q.name,
                                    "drop_drift": drop_drift})
    if fock_space(n, J).dim <= dense_cap:
        record.operator = _dense_functional_residual(Q, f, quad, L, drop_drift)
    return record


def _dense_functional_residual(Q, f, quad, L, drop_drift):
    n, J = Q.n_bins, Q.max_level
    dt = 1.0 / n
    out = []
    total = ChaosMatrix.zeros(fock_space(0, J))
    for m in range(n + 1):
        S = fock_space(m, J)
        if m > 0:
            k = m - 1
            M, _, F, G, H = _samples_at(Q, k)
            Hf = ChaosMatrix.zeros(M.space)
            if H is not None and not drop_drift:
                Hf = Hf + differential(f, M, H, quad)
            if F is not None and G is not None:
                Hf = Hf + ito_second_differential(f, M, F, G, quad, method="spectral")
            step = _increment(Hf, (0, 0), k, dt)
            if F is not None:
                step = step + _increment(differential(f, M, F, quad), (0, 1), k, dt)
            if G is not None:
                step = step + _increment(differential(f, M, G, quad), (1, 0), k, dt)
            total = ampliate(total, m) + step
        lhs = spectral_apply(f, integral_past(Q, m)).data - complex(f(0.0)) * np.eye(S.dim)
        out.append(buffered_norm(lhs - _dense(total), S, L))
    return out


# -- Stratonovich midpoint sums ------------------------------------------------


def _poly_apply(coeffs, op, block):
    """sum_j c_j T^j block by Horner's rule."""
    out = coeffs[-1] * block
    for c in reversed(coeffs[:-1]):
        out = op @ out + c * block
    return out


def _poly_differential_apply(coeffs, A, H, block):
    """Df(A)(H) block for polynomial f: sum_j c_j sum_{a+b=j-1} A^a H A^b block."""
    out = np.zeros(block.shape, dtype=complex)
    deg = len(coeffs) - 1
    # powers A^b block
    powers = [block]
    for _ in range(deg - 1):
        powers.append(A @ powers[-1])
    for j in range(1, deg + 1):
        if coeffs[j] == 0:
            continue
        acc = np.zeros(block.shape, dtype=complex)
        for b in range(j):
            v = H @ powers[b]
            for _ in range(j - 1 - b):
                v = A @ v
            acc += v
        out += coeffs[j] * acc
    return out


class _MidpointSum:
    def __init__(self, coeffs, points):
        self.coeffs = coeffs
        self.points = points

    def __matmul__(self, block):
        out = np.zeros(block.shape, dtype=complex)
        for a, b in zip(self.points[:-1], self.points[1:]):
            mid = _Sum(0.5, a, 0.5, b)
            delta = _Sum(1.0, b, -1.0, a)
            out += _poly_differential_apply(self.coeffs, mid, delta, block)
        return out


class _Sum:
    def __init__(self, ca, A, cb, B):
        self.ca, self.A, self.cb, self.B = ca, A, cb, B

    def __matmul__(self, block):
        return self.ca * (self.A @ block) + self.cb * (self.B @ block)


class _Poly:
    def __init__(self, coeffs, A):
        self.coeffs, self.A = coeffs, A

    def __matmul__(self, block):
        return _poly_apply(self.coeffs, self.A, block)


def stratonovich_residual(Q: Quadruple, f: FunctionSpec, depths=None,
                          probes: ProbeFamily | None = None, level: int | None = None,
                          buffer: int = 2, dense_cap: int = 1200) -> ResidualRecord:
    """Midpoint sums sum_k Df((M_{s_k} + M_{s_{k+1}}) / 2)(M_{s_{k+1}} - M_{s_k}) vs f(M_1) - f(0).

    The partitions are dyadic coarsenings of the grid: depth d uses 2^d
    intervals (d = 0 .. log2 n_bins by default).  ``residuals[i]`` is the
    weak residual at t = 1 for ``depths[i]``; ``times`` holds the meshes.
    """
    if not f.is_polynomial:
        raise ValueError("Stratonovich sums are implemented for polynomials")
    _require_symmetric(Q)
    _require_gauge_free(Q)
    n, J = Q.n_bins, Q.max_level
    deg = f.degree
    band = Q.band if Q.band is not None else J
    if deg * band > J - buffer:
        raise CapacityError(f"degree {deg} times band {band} exceeds J - buffer = {J - buffer}")
    L = J - deg * band if level is None else level
    if depths is None:
        depths = [d for d in range(0, 31) if 2 ** d <= n and n % 2 ** d == 0]
    probes = probes or ProbeFamily.default(n, J)
    coeffs = [complex(c) for c in f.params[: deg + 1]] or [0j]
    full = {}

    def M_full(m):
        if m not in full:
            Mp = integral_past(Q, m)
            Mp = ChaosMatrix(Mp.space, as_matvec_operand(Mp.data), Mp.band)
            full[m] = as_matvec_operand(ampliate(Mp, n).data)
        return full[m]

    lhs = probes.pair(n, _Poly(coeffs, M_full(n)), L, L) - coeffs[0] * probes.inner(L)
    res, meshes, ops = [], [], []
    dense = fock_space(n, J).dim <= dense_cap
    for d in depths:
        step = n // 2 ** d
        pts = [M_full(j * step) for j in range(2 ** d + 1)]
        rhs = probes.pair(n, _MidpointSum(coeffs, pts), L, L)
        res.append(float(np.max(np.abs(lhs - rhs))))
        meshes.append(step / n)
        if dense:
            S = fock_space(n, J)
            eye = np.eye(S.dim, dtype=complex)
            diff = _Poly(coeffs, pts[-1]) @ eye - coeffs[0] * eye - _MidpointSum(coeffs, pts) @ eye
            ops.append(buffered_norm(diff, S, L))
    return ResidualRecord("stratonovich", n, J, L, meshes, res, ops if dense else None,
                          extras={"function": f.to_dict(), "depths": list(depths), "scenario": Q.name})


# -- Duhamel expansion ---------------------------------------------------------


@dataclass
class ExpansionRecord:
    """Kernels of the Duhamel expansion of exp(i(M + J)) at s = 1."""

    kernel_norms: list
    bounds: list
    partial_residuals: list
    tail_bounds: list
    perturbation_norm: float
    nodes: int
    kernels: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("kernels")
        return d


def _integration_matrix(panels: int, order: int):
    """Composite Gauss-Legendre nodes on [0, 1] with the matrix of int_0^{s_i}."""
    y, wy = leg.leggauss(order)
    V = leg.legvander(y, order - 1)
    Vinv = np.linalg.inv(V)
    # S[i, k] = int_{-1}^{y_i} P_k
    S = np.zeros((order, order))
    for k in range(order):
        c = np.zeros(order)
        c[k] = 1
        S[:, k] = leg.legval(y, leg.legint(c, lbnd=-1))
    local = S @ Vinv  # int_{-1}^{y_i} l_j
    h = 1.0 / panels
    nodes = np.concatenate([(q + 0.5 * (y + 1)) * h for q in range(panels)])
    weights = np.concatenate([0.5 * h * wy for _ in range(panels)])
    N = panels * order
    W = np.zeros((N, N))
    for q in range(panels):
        rows = slice(q * order, (q + 1) * order)
        for r in range(q):
            W[rows, r * order:(r + 1) * order] = 0.5 * h * wy[None, :]
        W[rows, rows] = 0.5 * h * local
    return nodes, weights, W


def duhamel_expansion(M: ChaosMatrix, Jp: ChaosMatrix, N: int,
                      quad: QuadratureConfig | None = None, panels: int | None = None) -> ExpansionRecord:
    """K^(n)(s) = i int_0^s exp(i(s-u)M) J K^(n-1)(u) du, K^(0)(s) = exp(isM).

    The recursion runs in the interaction picture Y^(n)(s) = exp(-isM) K^(n)(s)
    on composite Gauss-Legendre nodes, integrating up to each node with the
    panel interpolation matrix.  The partial sums sum_{n <= N'} K^(n)(1) are
    compared with exp(i(M + J)).
    """
    if N < 0:
        raise ValueError("N must be nonnegative")
    quad = quad or QuadratureConfig()
    SM = spectrum(M)
    _check_hermitian(Jp)
    lam = SM.values
    spread = float(lam.max() - lam.min()) if lam.size else 0.0
    panels = panels or max(2, int(math.ceil(spread / 4.0)))
    s, w, W = _integration_matrix(panels, quad.u_order)
    Jt = SM.to_eigenbasis(Jp)
    jnorm = float(np.linalg.norm(_dense(Jp), 2)) if Jp.space.dim else 0.0
    D = M.space.dim
    gap = lam[:, None] - lam[None, :]
    eiM = np.exp(1j * lam)
    Y_prev = np.broadcast_to(np.eye(D, dtype=complex), (len(s), D, D))
    kernels_eig = [np.diag(eiM)]
    for _ in range(N):
        Z = np.stack([(np.exp(-1j * u * gap) * Jt) @ Y_prev[j] for j, u in enumerate(s)])
        Y_next = 1j * np.einsum("ij,jab->iab", W, Z)
        Y_one = 1j * np.einsum("j,jab->ab", w, Z)
        kernels_eig.append(eiM[:, None] * Y_one)
        Y_prev = Y_next
    kernels = [ChaosMatrix(M.space, SM.from_eigenbasis(K)) for K in kernels_eig]
    norms = [float(np.linalg.norm(K, 2)) if D else 0.0 for K in kernels_eig]
    bounds = [jnorm ** k / math.factorial(k) for k in range(N + 1)]
    target = cmx_exp(M + Jp, 1.0).data
    partial = np.zeros((D, D), dtype=complex)
    residuals, tails = [], []
    for k, K in enumerate(kernels):
        partial = partial + K.data
        residuals.append(float(np.linalg.norm(target - partial, 2)) if D else 0.0)
        tails.append(series_tail_bound(jnorm, 1.0, k))
    return ExpansionRecord(norms, bounds, residuals, tails, jnorm, len(s), kernels)
