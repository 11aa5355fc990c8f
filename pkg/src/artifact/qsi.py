"""Discrete quantum stochastic integrals of adapted integrand quadruples.

On the bin grid the integral of (E, F, G, H) up to t_m is

    M_m = sum_{k<m} [a_k^+ E_k a_k + sqrt(dt) F_k a_k + sqrt(dt) a_k^+ G_k + dt H_k]

with integrands sampled at the left endpoint t_k.  The prefix M_{k+1} lives
on the first k+1 bins and is built from the ampliation of M_k plus the bin-k
increment, so the full-space integral never has to be formed directly.

Weak evaluation
---------------
Matrix elements between exponential vectors factor across the split at bin
k: for an operator X on the first k bins,

    <X e_a(f), e_b(g)> = sum_r c_r <X P_{a-r} e(f_<k), P_{b-r} e(g_<k)>,
    c_r = (sum_{i>=k} f_i conj(g_i))**r / r!,

where P_l keeps levels <= l.  :class:`ProbeFamily` evaluates this for a whole
family of probe functions at once, which is how residuals on the largest
grids are measured.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .cmx import ChaosMatrix, ampliate, ampliated_block_norms, block_norms, cmx_adjoint
from .fock import CapacityError, exponential_amplitudes, fock_space, mode_amplitudes
from .processes import AdaptednessError, CmxProcess, Quadruple

__all__ = [
    "LABELS",
    "LabeledIntegrand",
    "ProbeFamily",
    "integral_past",
    "labeled_integral_past",
    "qs_integral",
    "integral_process",
    "exp_matrix_element",
    "integral_pairings",
    "operator_pairings",
    "verify_bounds_adjoints",
    "ito_product_residual",
    "power_quadruple",
    "power_recursion_residual",
    "buffered_norm",
    "power_residual",
    "ResidualRecord",
]

# Evans labels (alpha, beta): number of creations and annihilations
LABELS = {"gauge": (1, 1), "annihilation": (0, 1), "creation": (1, 0), "time": (0, 0)}
_SLOT_LABELS = ((1, 1), (0, 1), (1, 0), (0, 0))


def _weight(label, dt):
    alpha, beta = label
    return dt ** ((2 - alpha - beta) / 2)


def _apply(op, block):
    if op is None:
        return np.zeros_like(block)
    if isinstance(op, ChaosMatrix):
        return op.data @ block
    return op @ block


def _increment(op_k: ChaosMatrix, label, k: int, dt: float) -> ChaosMatrix:
    """(a_k^+)^alpha X a_k^beta on the first k+1 bins, X ampliated from k bins."""
    X = ampliate(op_k, k + 1)
    S = X.space
    out = X.data
    alpha, beta = label
    if beta:
        out = out @ S.ladder("annihilate", k)
    if alpha:
        out = S.ladder("create", k) @ out
    band = None if op_k.band is None else op_k.band + abs(alpha - beta)
    return ChaosMatrix(S, _weight(label, dt) * out, band)


@dataclass(frozen=True)
class LabeledIntegrand:
    """An adapted process together with its integrator label (alpha, beta)."""

    process: CmxProcess
    label: tuple[int, int]

    def __post_init__(self):
        if self.label not in _SLOT_LABELS:
            raise ValueError(f"label {self.label} not in the Evans set")


def labeled_integral_past(X: CmxProcess, label, m: int) -> ChaosMatrix:
    """Prefix integral of one labeled integrand, on the first m bins (cached)."""
    if not X.adapted:
        raise AdaptednessError(f"integrand {X.name!r} is not adapted")
    J = X.max_level
    if X.is_zero:
        return ChaosMatrix.zeros(fock_space(m, J))
    key = ("integral", tuple(label))
    prefixes = X.cache.setdefault(key, [ChaosMatrix.zeros(fock_space(0, J))])
    dt = X.dt
    while len(prefixes) <= m:
        k = len(prefixes) - 1
        prev = ampliate(prefixes[k], k + 1)
        prefixes.append(prev + _increment(X.past(k), label, k, dt))
    return prefixes[m]


def integral_past(Q: Quadruple, m: int) -> ChaosMatrix:
    """Prefix integral M_m of a quadruple on the first m bins (cached)."""
    if not Q.adapted:
        raise AdaptednessError("quadruple has a non-adapted component")
    if not 0 <= m <= Q.n_bins:
        raise IndexError(f"grid index {m} outside 0..{Q.n_bins}")
    prefixes = Q.cache.setdefault("integral", [ChaosMatrix.zeros(fock_space(0, Q.max_level))])
    dt = 1.0 / Q.n_bins
    while len(prefixes) <= m:
        k = len(prefixes) - 1
        total = ampliate(prefixes[k], k + 1)
        for X, label in zip(Q.components, _SLOT_LABELS):
            if not X.is_zero:
                total = total + _increment(X.past(k), label, k, dt)
        total.band = Q.band
        prefixes.append(total)
    return prefixes[m]


def qs_integral(Q: Quadruple, m: int) -> ChaosMatrix:
    """Full-space integral of ``Q`` up to t_m."""
    return ampliate(integral_past(Q, m), Q.n_bins)


def integral_process(Q: Quadruple, name: str = "M") -> CmxProcess:
    """The integral of ``Q`` as an adapted process."""
    real = all(X.real for X in Q.components)
    return CmxProcess(Q.n_bins, Q.max_level, past=lambda m: integral_past(Q, m),
                      band=Q.band, name=name, real=real)


# -- weak evaluation -----------------------------------------------------------


def _default_probe_functions():
    return [
        lambda s: 0.0 * s,
        lambda s: 0.5 + 0.0 * s,
        lambda s: 0.5 * np.exp(2j * np.pi * s),
        lambda s: 0.6 * (1.0 - 2.0 * s),
    ]


class ProbeFamily:
    """A family of exponential vectors used to evaluate operators weakly.

    Parameters
    ----------
    n_bins, max_level : grid and truncation
    amplitudes : array (P, n_bins) of mode amplitudes, one row per probe
    """

    def __init__(self, n_bins: int, max_level: int, amplitudes):
        amps = np.atleast_2d(np.asarray(amplitudes, dtype=complex))
        if amps.shape[1] != n_bins:
            raise ValueError("probe amplitudes must have one entry per bin")
        self.n_bins = n_bins
        self.max_level = max_level
        self.amplitudes = amps
        self._components: dict[int, np.ndarray] = {}

    @classmethod
    def default(cls, n_bins: int, max_level: int) -> "ProbeFamily":
        """Probes 0, 0.5, 0.5 exp(2 pi i s) and 0.6 (1 - 2 s): fixed continuum functions."""
        amps = [mode_amplitudes(f, n_bins) for f in _default_probe_functions()]
        return cls(n_bins, max_level, amps)

    @property
    def size(self) -> int:
        return self.amplitudes.shape[0]

    def components(self, k: int) -> np.ndarray:
        """Level components of e(f restricted to bins < k): array (D_k, P, J+1)."""
        if k not in self._components:
            S = fock_space(k, self.max_level)
            full = exponential_amplitudes(S, self.amplitudes[:, :k])  # (P, D_k)
            out = np.zeros((S.dim, self.size, self.max_level + 1), dtype=complex)
            for j in range(self.max_level + 1):
                sl = S.level_slice(j)
                out[sl, :, j] = full[:, sl].T
            self._components[k] = out
        return self._components[k]

    def tail_weights(self, k: int) -> np.ndarray:
        """c_r(f, g) = (sum_{i>=k} f_i conj(g_i))**r / r!: array (P, P, J+1)."""
        z = self.amplitudes[:, k:] @ self.amplitudes[:, k:].conj().T
        r = np.arange(self.max_level + 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = z[..., None] ** r / np.exp(gammaln(r + 1.0))
        w[..., 0] = 1.0
        return w

    def gram(self, k: int, op) -> np.ndarray:
        """G[f, l, g, l'] = <X e^(l)(f_<k), e^(l')(g_<k)> for X on the first k bins."""
        phi = self.components(k)
        D, P, L1 = phi.shape
        flat = phi.reshape(D, P * L1)
        Y = flat if op == "identity" else _apply(op, flat)
        G = flat.conj().T @ Y  # [(g,l'), (f,l)]
        return G.reshape(P, L1, P, L1).transpose(2, 3, 0, 1)

    def pair(self, k: int, op, level_in: int, level_out: int, gram=None) -> np.ndarray:
        """<X e_in(f), e_out(g)> for all probe pairs, X an operator on the first k bins.

        Returns an array indexed [f, g].
        """
        P = self.size
        if op is None or level_in < 0 or level_out < 0:
            return np.zeros((P, P), dtype=complex)
        G = self.gram(k, op) if gram is None else gram
        cum = G.cumsum(axis=1).cumsum(axis=3)
        w = self.tail_weights(k)
        out = np.zeros((P, P), dtype=complex)
        for r in range(min(level_in, level_out) + 1):
            out += w[:, :, r] * cum[:, level_in - r, :, level_out - r]
        return out

    def inner(self, level: int) -> np.ndarray:
        """<e_L(f), e_L(g)> for all pairs."""
        z = self.amplitudes @ self.amplitudes.conj().T
        return sum(z ** j / math.factorial(j) for j in range(level + 1))


def operator_pairings(probes: ProbeFamily, m: int, op, level: int) -> np.ndarray:
    """<X e_L(f), e_L(g)> for an operator X on the first m bins."""
    return probes.pair(m, op, level, level)


def _bin_contribution(probes: ProbeFamily, k: int, ops, labels, level: int, dt: float):
    f = probes.amplitudes[:, k]
    fg = f[:, None] * np.conj(f)[None, :]
    out = np.zeros((probes.size, probes.size), dtype=complex)
    for op, label in zip(ops, labels):
        if op is None:
            continue
        alpha, beta = label
        G = probes.gram(k, op)
        val = probes.pair(k, op, level - beta, level - alpha, gram=G)
        if beta:
            val = val * f[:, None]
        if alpha:
            val = val * np.conj(f)[None, :]
        out += _weight(label, dt) * val
    return out


def integral_pairings(source, probes: ProbeFamily, level: int, labels=None, stop: int | None = None):
    """<M_m e_L(f), e_L(g)> for m = 0..stop, from integrand matrix elements.

    ``source`` is a Quadruple, or a callable k -> sequence of operators (or
    None) matched with ``labels``.  Returns an array (stop+1, P, P).
    """
    if isinstance(source, Quadruple):
        Q = source
        labels = _SLOT_LABELS
        n = Q.n_bins

        def ops_at(k):
            return [X.past_operator(k) for X in Q.components]
    else:
        ops_at = source
        n = probes.n_bins
    stop = n if stop is None else stop
    dt = 1.0 / probes.n_bins
    out = np.zeros((stop + 1, probes.size, probes.size), dtype=complex)
    for k in range(stop):
        out[k + 1] = out[k] + _bin_contribution(probes, k, ops_at(k), labels, level, dt)
    return out


def exp_matrix_element(Q: Quadruple, m: int, f, g, level: int | None = None) -> complex:
    """<M_m e(f), e(g)> as a sum over bins of integrand matrix elements.

    ``level`` is the truncation of the exponential vectors (default J).
    """
    J = Q.max_level
    L = J if level is None else level
    probes = ProbeFamily(Q.n_bins, J, [np.asarray(f, complex), np.asarray(g, complex)])
    vals = integral_pairings(Q, probes, L, stop=m)
    return complex(vals[m, 0, 1])


def buffered_norm(T, space, level: int) -> float:
    """Spectral norm of the restriction of T to levels <= level (rows and columns)."""
    cut = space.prefix(level)
    data = T.data if isinstance(T, ChaosMatrix) else T
    block = data[:cut][:, :cut]
    block = block.toarray() if sp.issparse(block) else np.asarray(block)
    if block.size == 0:
        return 0.0
    return float(np.linalg.norm(block, 2))


@dataclass
class ResidualRecord:
    """Residuals of one identity along the grid.

    ``residuals[m]`` is the weak residual at ``times[m]``: the largest
    |<(LHS - RHS) e_L(f), e_L(g)>| over probe pairs, L = ``level``.
    ``operator`` holds buffered operator-norm residuals when they were
    computed.
    """

    name: str
    n_bins: int
    max_level: int
    level: int
    times: list
    residuals: list
    operator: list | None = None
    extras: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return float(max(self.residuals)) if self.residuals else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["max_residual"] = self.max_residual
        return d



# -- bounds and adjoints -------------------------------------------------------


def _adjoint_process(X: CmxProcess) -> CmxProcess:
    return X.adjoint()


def verify_bounds_adjoints(Q: Quadruple, m: int, tol: float = 1e-10, exact: float = 1e-12) -> dict:
    """Block-norm bounds and adjoint relations of the four component integrals at t_m.

    Returns a dict with, for each component, the block norms of its integral,
    the bound matrix, the per-block pass flags and the adjoint residual.
    """
    n = Q.n_bins
    dt = 1.0 / n
    J = Q.max_level
    has_future = m < n
    root = np.sqrt(np.arange(J + 2))
    out = {}
    # (name, integrand, label, adjoint partner label, time norm)
    spec = [
        ("gauge", Q.E, (1, 1), (1, 1), "sup"),
        ("annihilation", Q.F, (0, 1), (1, 0), "l2"),
        ("creation", Q.G, (1, 0), (0, 1), "l2"),
        ("time", Q.H, (0, 0), (0, 0), "l1"),
    ]
    for name, X, label, adj_label, kind in spec:
        M = labeled_integral_past(X, label, m)
        norms = ampliated_block_norms(block_norms(M), has_future)
        per = np.stack([X.block_norms(k) for k in range(m)]) if m > 0 else np.zeros((1, J + 1, J + 1))
        if kind == "sup":
            tn = per.max(axis=0)
        elif kind == "l2":
            tn = np.sqrt(dt * (per ** 2).sum(axis=0))
        else:
            tn = dt * per.sum(axis=0)
        bound = np.zeros((J + 1, J + 1))
        if label == (1, 1):
            bound[1:, 1:] = root[1:J + 1, None] * tn[:J, :J] * root[None, 1:J + 1]
        elif label == (0, 1):
            bound[:, 1:] = tn[:, :J] * root[None, 1:J + 1]
        elif label == (1, 0):
            bound[1:, :] = root[1:J + 1, None] * tn[:J, :]
        else:
            bound = tn
        ok = norms <= bound + tol
        # adjoint relation: integral of X against the partner label equals M*
        Madj = labeled_integral_past(X.adjoint(), adj_label, m)
        diff = Madj.data - cmx_adjoint(M).data
        adj_res = float(abs(diff).max()) if sp.issparse(diff) and diff.nnz else (
            0.0 if sp.issparse(diff) else float(np.max(np.abs(diff))) if diff.size else 0.0)
        out[name] = {
            "norms": norms,
            "bound": bound,
            "ok": ok,
            "bound_slack": float(np.max(norms - bound)),
            "adjoint_residual": adj_res,
            "adjoint_ok": adj_res <= exact,
        }
    return out


# -- Ito product formula -------------------------------------------------------


@dataclass
class ProductRecord:
    """Outcome of one Ito product comparison at t_m."""

    m: int
    level: int
    weak: float
    weak_without_correction: float
    decomposition: float | None = None
    operator: float | None = None
    correction_norm: float | None = None
    extras: dict = field(default_factory=dict)


def _product_process(A: CmxProcess, B: CmxProcess, name: str) -> CmxProcess:
    """Samplewise product, kept lazy for weak evaluation."""
    def op(m):
        a, b = A.past_operator(m), B.past_operator(m)
        if a is None or b is None:
            return None
        return _Composite([a, b])

    return CmxProcess(A.n_bins, A.max_level, past=lambda m: A.past(m) @ B.past(m),
                      past_op=op, name=name)


class _Composite:
    """Product of operators applied right to left, without forming the matrix."""

    def __init__(self, factors):
        self.factors = list(factors)

    def __matmul__(self, block):
        for f in reversed(self.factors):
            block = _apply(f, block)
        return block


def ito_product_residual(X: LabeledIntegrand, Y: LabeledIntegrand, probes: ProbeFamily | None = None,
                         level: int | None = None, dense_cap: int = 1200):
    """Compare M(X) M(Y) with the Ito product formula at every grid time.

    Returns a list of :class:`ProductRecord` for m = 0..n.  The weak residual
    is the largest |<(LHS - RHS) e_L(f), e_L(g)>| over probe pairs; the
    operator-norm residual, the exact decomposition defect and the norm of the
    dropped diagonal correction are included when the full dimension is at
    most ``dense_cap``.
    """
    PX, (a, b) = X.process, X.label
    PY, (c, d) = Y.process, Y.label
    n, J = PX.n_bins, PX.max_level
    band_x = (PX.band or 0) + abs(a - b) if not PX.is_zero else 0
    band_y = (PY.band or 0) + abs(c - d) if not PY.is_zero else 0
    L = J - (max(band_x, 1) + max(band_y, 1)) if level is None else level
    if L < 0:
        raise CapacityError("product band exceeds the truncation")
    probes = probes or ProbeFamily.default(n, J)
    MX = CmxProcess(n, J, past=lambda m: labeled_integral_past(PX, (a, b), m), name="M(X)")
    MY = CmxProcess(n, J, past=lambda m: labeled_integral_past(PY, (c, d), m), name="M(Y)")
    Z1 = _product_process(MX, PY, "M(X)Y")
    Z2 = _product_process(PX, MY, "XM(Y)")
    has_corr = b == 1 and c == 1
    Z3 = _product_process(PX, PY, "XY") if has_corr else None
    corr_label = (a, d)

    def rhs_ops(k):
        ops = [Z1.past_operator(k), Z2.past_operator(k)]
        ops.append(Z3.past_operator(k) if has_corr else None)
        return ops

    labels = [(c, d), (a, b), corr_label]
    rhs_parts = []
    for idx in range(3):
        def only(k, idx=idx):
            ops = rhs_ops(k)
            return [ops[i] if i == idx else None for i in range(3)]
        rhs_parts.append(integral_pairings(only, probes, L, labels))
    records = []
    dense = fock_space(n, J).dim <= dense_cap
    dt = 1.0 / n
    for m in range(n + 1):
        lhs = probes.pair(m, _Composite([MX.past(m), MY.past(m)]), L, L)
        without = lhs - rhs_parts[0][m] - rhs_parts[1][m]
        full = without - rhs_parts[2][m]
        rec = ProductRecord(m, L, float(np.max(np.abs(full))), float(np.max(np.abs(without))))
        if dense:
            S = fock_space(m, J)
            lhs_m = (MX.past(m) @ MY.past(m)).data
            r1 = labeled_integral_past(Z1, (c, d), m).data
            r2 = labeled_integral_past(Z2, (a, b), m).data
            diag = sp.csr_array((S.dim, S.dim))
            for k in range(m):
                left = _increment(PX.past(k), (a, b), k, dt)
                right = _increment(PY.past(k), (c, d), k, dt)
                term = ampliate(left @ right, m).data
                diag = diag + term
            corr = labeled_integral_past(Z3, corr_label, m).data if has_corr else 0 * r1
            rec.decomposition = buffered_norm(lhs_m - r1 - r2 - diag, S, L)
            rec.operator = buffered_norm(lhs_m - r1 - r2 - corr, S, L)
            rec.correction_norm = buffered_norm(corr, S, L) if has_corr else 0.0
        records.append(rec)
    return records


# -- powers --------------------------------------------------------------------


def _power_words(M, E, F, Fs, H, n: int):
    """Operator words of the power quadruple, as lists of (coefficient, factors)."""
    ME = None if E is None else ("sum", M, E)
    words = {"E": [], "F": [], "G": [], "H": []}

    def pw(op, k):
        return [op] * k

    mpe = ME if ME is not None else M
    # E_n = (M+E)^n - M^n
    if E is not None:
        words["E"] = [(1.0, pw(mpe, n)), (-1.0, pw(M, n))]
    if F is not None:
        for al in range(n):
            be = n - 1 - al
            words["F"].append((1.0, pw(M, al) + [F] + pw(mpe, be)))
            words["G"].append((1.0, pw(mpe, be) + [Fs] + pw(M, al)))
    if H is not None:
        for al in range(n):
            words["H"].append((1.0, pw(M, al) + [H] + pw(M, n - 1 - al)))
    if F is not None:
        for al in range(n - 1):
            for be in range(n - 1 - al):
                ga = n - 2 - al - be
                words["H"].append((1.0, pw(M, al) + [F] + pw(mpe, be) + [Fs] + pw(M, ga)))
    return words


class _WordSum:
    """Lazy sum of operator words."""

    def __init__(self, terms):
        self.terms = terms

    def __matmul__(self, block):
        out = np.zeros(block.shape, dtype=complex)
        for coeff, factors in self.terms:
            v = block
            for f in reversed(factors):
                if isinstance(f, tuple):
                    v = _apply(f[1], v) + _apply(f[2], v)
                else:
                    v = _apply(f, v)
            out = out + coeff * v
        return out


def _materialize_words(terms, S) -> ChaosMatrix:
    total = None
    for coeff, factors in terms:
        P = ChaosMatrix.identity(S)
        for f in factors:
            P = P @ (f[1] + f[2] if isinstance(f, tuple) else f)
        total = coeff * P if total is None else total + coeff * P
    return total if total is not None else ChaosMatrix.zeros(S)


def power_quadruple(Q: Quadruple, n: int) -> Quadruple:
    """Integrand quadruple of the n-th power of the integral of ``Q``.

    Samples at t_k are built from M_k (the prefix integral), E_k, F_k and H_k
    by the explicit word sums; ``past_operator`` gives them lazily.
    """
    if n < 1:
        raise ValueError("power must be positive")
    if not Q.symmetric:
        raise ValueError("power quadruples are defined for symmetric quadruples")
    if n == 1:
        return Q
    J = Q.max_level
    if Q.band is not None and Q.band * n > J:
        raise CapacityError(f"band {Q.band} times power {n} exceeds the truncation level {J}")

    def words_at(k):
        M = integral_past(Q, k)
        E, F, H = (X.past(k) if not X.is_zero else None for X in (Q.E, Q.F, Q.H))
        Fs = None if F is None else Q.G.past(k)
        return _power_words(M, E, F, Fs, H, n)

    def proc(slot, zero):
        if zero:
            return CmxProcess.zero(Q.n_bins, J)
        return CmxProcess(
            Q.n_bins, J,
            past=lambda k: _materialize_words(words_at(k)[slot], fock_space(k, J)),
            past_op=lambda k: _WordSum(words_at(k)[slot]),
            band=None if Q.band is None else Q.band * n,
            name=f"{slot}_{n}",
        )

    E = proc("E", Q.E.is_zero)
    F = proc("F", Q.F.is_zero)
    G = proc("G", Q.F.is_zero)
    H = proc("H", Q.F.is_zero and Q.H.is_zero)
    return Quadruple(E, F, G, H, symmetric=True, name=f"{Q.name}^{n}")


def power_recursion_residual(Q: Quadruple, n: int, k: int) -> float:
    """Defect of the step n -> n+1 recursion between power quadruples at t_k.

    E_{n+1} = M E_n + E M^n + E E_n,   F_{n+1} = M F_n + F M^n + F E_n,
    H_{n+1} = M H_n + H M^n + F F_n^*.
    """
    J = Q.max_level
    S = fock_space(k, J)
    M = integral_past(Q, k)
    Pn, Pn1 = power_quadruple(Q, n), power_quadruple(Q, n + 1)
    E, F, H = (X.past(k) for X in (Q.E, Q.F, Q.H))
    Mn = ChaosMatrix.identity(S)
    for _ in range(n):
        Mn = Mn @ M
    En, Fn, Gn, Hn = (X.past(k) for X in Pn.components)
    checks = [
        Pn1.E.past(k) - (M @ En + E @ Mn + E @ En),
        Pn1.F.past(k) - (M @ Fn + F @ Mn + F @ En),
        Pn1.G.past(k) - (Gn @ M + Mn @ Q.G.past(k) + En @ Q.G.past(k)),
        Pn1.H.past(k) - (M @ Hn + H @ Mn + F @ Gn),
    ]
    worst = 0.0
    for C in checks:
        d = C.data
        worst = max(worst, float(abs(d).max()) if sp.issparse(d) and d.nnz else (
            0.0 if sp.issparse(d) else float(np.max(np.abs(d))) if d.size else 0.0))
    return worst


def power_residual(Q: Quadruple, n: int, probes: ProbeFamily | None = None,
                   level: int | None = None) -> ResidualRecord:
    """Weak residual of M_m^n against the integral of ``power_quadruple(Q, n)``.

    The default level keeps n band steps of headroom below J.
    """
    N, J = Q.n_bins, Q.max_level
    band = Q.band if Q.band is not None else J
    L = J - n * band if level is None else level
    if L < 0:
        raise CapacityError(f"power {n} of a band-{band} integral leaves no level below J = {J}")
    probes = probes or ProbeFamily.default(N, J)
    rhs = integral_pairings(power_quadruple(Q, n), probes, L)
    res = []
    for m in range(N + 1):
        lhs = probes.pair(m, _Composite([integral_past(Q, m)] * n), L, L)
        res.append(float(np.max(np.abs(lhs - rhs[m]))))
    return ResidualRecord("powers", N, J, L, [m / N for m in range(N + 1)], res,
                          extras={"power": n, "scenario": Q.name})
