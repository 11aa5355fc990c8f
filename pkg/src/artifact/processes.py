"""Grid-indexed operator processes, integrand quadruples and scenario builders.

An adapted process is stored through its past samples: the value at grid time
``t_m`` is an operator on the Fock space of the first ``m`` bins, and the
full-space sample is its ampliation.  Past samples are computed lazily and
cached, which keeps the large-grid runs within memory.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.stats import unitary_group

from .cmx import (
    ChaosMatrix,
    adaptedness_residual,
    ampliate,
    ampliated_block_norms,
    block_norms,
    materialize,
)
from .fock import CapacityError, FockSpace, fock_space, mode_amplitudes

__all__ = [
    "AdaptednessError",
    "CmxProcess",
    "Quadruple",
    "KernelSpec",
    "basic_process",
    "kernel_process",
    "polynomial_process",
    "parse_polynomial",
    "scenario",
    "scenario_names",
    "SCENARIOS",
    "future_shifted_process",
]


class AdaptednessError(ValueError):
    """An operation that needs past samples met a non-adapted process."""


class CmxProcess:
    """Family of chaos matrices indexed by the grid times t_0..t_n.

    Exactly one of ``past`` and ``full`` is given.  ``past(m)`` returns the
    sample at t_m as an operator on the first m bins (adapted processes);
    ``full(m)`` returns a full-space operator and makes no adaptedness claim.
    ``past_op(m)`` may supply a lazy (scipy ``LinearOperator``) version of the
    past sample; when ``past`` is omitted it is materialized from it.
    """

    def __init__(
        self,
        n_bins: int,
        max_level: int,
        past: Callable[[int], ChaosMatrix] | None = None,
        full: Callable[[int], ChaosMatrix] | None = None,
        past_op: Callable | None = None,
        band: int | None = None,
        name: str = "",
        zero: bool = False,
        real: bool = False,
    ):
        if past is None and past_op is not None:
            past = lambda m: materialize(past_op(m), fock_space(m, max_level), band)  # noqa: E731
        if (past is None) == (full is None) and not zero:
            raise ValueError("give exactly one of past= or full=")
        self.n_bins = n_bins
        self.max_level = max_level
        self._past_fn = past
        self._past_op_fn = past_op
        self._full_fn = full
        self.band = 0 if zero else band
        self.name = name
        self.is_zero = zero
        self.real = real
        self._past_cache: dict[int, ChaosMatrix] = {}
        self._norm_cache: dict[int, np.ndarray] = {}
        self.cache: dict = {}

    def __repr__(self):
        return f"CmxProcess({self.name or 'anonymous'}, n_bins={self.n_bins}, J={self.max_level})"

    @property
    def adapted(self) -> bool:
        return self.is_zero or self._past_fn is not None

    @property
    def space(self) -> FockSpace:
        return fock_space(self.n_bins, self.max_level)

    @property
    def dt(self) -> float:
        return 1.0 / self.n_bins

    @classmethod
    def zero(cls, n_bins: int, max_level: int) -> "CmxProcess":
        return cls(n_bins, max_level, zero=True, name="zero", real=True)

    @classmethod
    def constant(cls, n_bins: int, max_level: int, c: complex = 1.0, name: str = "") -> "CmxProcess":
        def past(m):
            S = fock_space(m, max_level)
            return ChaosMatrix(S, c * sp.identity(S.dim, format="csr"), band=0)

        return cls(n_bins, max_level, past=past, band=0, name=name or f"{c}*I",
                   real=np.isreal(c))

    def _check_index(self, m: int):
        if not 0 <= m <= self.n_bins:
            raise IndexError(f"grid index {m} outside 0..{self.n_bins}")

    def past(self, m: int) -> ChaosMatrix:
        """Sample at t_m as an operator on the first m bins."""
        self._check_index(m)
        if self.is_zero:
            return ChaosMatrix.zeros(fock_space(m, self.max_level))
        if self._past_fn is None:
            raise AdaptednessError(f"process {self.name!r} has no past representation")
        if m not in self._past_cache:
            T = self._past_fn(m)
            if not isinstance(T, ChaosMatrix):
                T = ChaosMatrix(fock_space(m, self.max_level), T, self.band)
            if T.space != fock_space(m, self.max_level):
                raise ValueError(f"past sample at m={m} lives on {T.space!r}")
            self._past_cache[m] = T
        return self._past_cache[m]

    def past_operator(self, m: int):
        """Past sample at t_m, lazily if a lazy form exists; None for the zero process."""
        if self.is_zero:
            return None
        if self._past_op_fn is not None:
            self._check_index(m)
            return self._past_op_fn(m)
        return self.past(m)

    def past_on(self, m: int, n_modes: int) -> ChaosMatrix:
        """Sample at t_m ampliated to the first ``n_modes`` bins (n_modes >= m)."""
        return ampliate(self.past(m), n_modes)

    def sample(self, m: int) -> ChaosMatrix:
        """Full-space sample at t_m."""
        self._check_index(m)
        if self._full_fn is not None:
            T = self._full_fn(m)
            if not isinstance(T, ChaosMatrix):
                T = ChaosMatrix(self.space, T, self.band)
            return T
        return ampliate(self.past(m), self.n_bins)

    @property
    def samples(self) -> list[ChaosMatrix]:
        return [self.sample(m) for m in range(self.n_bins + 1)]

    def block_norms(self, m: int) -> np.ndarray:
        """Spectral norms of the level blocks of the full-space sample at t_m."""
        if m not in self._norm_cache:
            J = self.max_level
            if self.is_zero:
                out = np.zeros((J + 1, J + 1))
            elif self.adapted:
                past = self.past(m)
                pn = block_norms(past)
                out = ampliated_block_norms(pn, has_future=m < self.n_bins)
            else:
                out = block_norms(self.sample(m))
            self._norm_cache[m] = out
        return self._norm_cache[m]

    def adaptedness_defect(self) -> float:
        """Largest adaptedness residual over the grid samples."""
        return max(adaptedness_residual(self.sample(m), m) for m in range(self.n_bins + 1))

    # process algebra, samplewise

    def _derive(self, fn, name, band=None, real=None):
        if self.adapted:
            return CmxProcess(self.n_bins, self.max_level, past=lambda m: fn(self.past(m)),
                              band=band, name=name, real=self.real if real is None else real)
        return CmxProcess(self.n_bins, self.max_level, full=lambda m: fn(self.sample(m)),
                          band=band, name=name, real=self.real if real is None else real)

    def adjoint(self) -> "CmxProcess":
        if self.is_zero:
            return self
        return self._derive(lambda T: T.adjoint(), f"{self.name}*", self.band)

    def scaled(self, c) -> "CmxProcess":
        """Multiply by a constant or by a function of grid time."""
        if self.is_zero:
            return self
        if callable(c):
            n = self.n_bins
            if not self.adapted:
                return CmxProcess(n, self.max_level, full=lambda m: c(m / n) * self.sample(m),
                                  band=self.band, name=f"c(t)*{self.name}")
            return CmxProcess(n, self.max_level, past=lambda m: c(m / n) * self.past(m),
                              band=self.band, name=f"c(t)*{self.name}")
        return self._derive(lambda T: c * T, f"{c}*{self.name}", self.band,
                            real=self.real and np.isreal(c))

    def __add__(self, other: "CmxProcess") -> "CmxProcess":
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        band = None if self.band is None or other.band is None else max(self.band, other.band)
        name = f"({self.name}+{other.name})"
        real = self.real and other.real
        if self.adapted and other.adapted:
            return CmxProcess(self.n_bins, self.max_level,
                              past=lambda m: self.past(m) + other.past(m),
                              band=band, name=name, real=real)
        return CmxProcess(self.n_bins, self.max_level,
                          full=lambda m: self.sample(m) + other.sample(m),
                          band=band, name=name, real=real)

    def __matmul__(self, other: "CmxProcess") -> "CmxProcess":
        if self.is_zero or other.is_zero:
            return CmxProcess.zero(self.n_bins, self.max_level)
        band = None if self.band is None or other.band is None else self.band + other.band
        name = f"{self.name}{other.name}"
        real = self.real and other.real
        if self.adapted and other.adapted:
            return CmxProcess(self.n_bins, self.max_level,
                              past=lambda m: self.past(m) @ other.past(m),
                              band=band, name=name, real=real)
        return CmxProcess(self.n_bins, self.max_level,
                          full=lambda m: self.sample(m) @ other.sample(m),
                          band=band, name=name, real=real)


@dataclass
class Quadruple:
    """Integrands (E, F, G, H) against dLambda, dA, dA^dagger and dt."""

    E: CmxProcess
    F: CmxProcess
    G: CmxProcess
    H: CmxProcess
    symmetric: bool = False
    name: str = ""
    params: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ref = self.F
        for X in (self.E, self.G, self.H):
            if (X.n_bins, X.max_level) != (ref.n_bins, ref.max_level):
                raise ValueError("quadruple components live on different grids")

    @property
    def n_bins(self) -> int:
        return self.F.n_bins

    @property
    def max_level(self) -> int:
        return self.F.max_level

    @property
    def components(self) -> tuple[CmxProcess, CmxProcess, CmxProcess, CmxProcess]:
        return (self.E, self.F, self.G, self.H)

    @property
    def adapted(self) -> bool:
        return all(X.adapted for X in self.components)

    @property
    def band(self) -> int | None:
        """Band of the integral: one more than the widest integrand."""
        bands = []
        for X, shift in zip(self.components, (0, 1, 1, 0)):
            if X.is_zero:
                continue
            if X.band is None:
                return None
            bands.append(X.band + shift)
        return max(bands, default=0)

    @property
    def gauge_free(self) -> bool:
        return self.E.is_zero

    @classmethod
    def zero(cls, n_bins: int, max_level: int) -> "Quadruple":
        z = CmxProcess.zero(n_bins, max_level)
        return cls(z, z, z, z, symmetric=True, name="zero")

    def adjoint(self) -> "Quadruple":
        """Quadruple of the adjoint integral: (E*, G*, F*, H*)."""
        return Quadruple(self.E.adjoint(), self.G.adjoint(), self.F.adjoint(), self.H.adjoint(),
                         self.symmetric, f"{self.name}*")

    def scaled(self, c: float) -> "Quadruple":
        return Quadruple(*(X.scaled(c) for X in self.components), symmetric=self.symmetric
                         and np.isreal(c), name=f"{c}*{self.name}")

    def __add__(self, other: "Quadruple") -> "Quadruple":
        parts = [a + b for a, b in zip(self.components, other.components)]
        return Quadruple(*parts, symmetric=self.symmetric and other.symmetric,
                         name=f"{self.name}+{other.name}")

    def symmetry_residual(self) -> float:
        """Largest entry of E - E*, G - F*, H - H* over the grid."""
        worst = 0.0
        for m in range(self.n_bins + 1):
            E, F, G, H = (X.past(m) if X.adapted else X.sample(m) for X in self.components)
            worst = max(worst, E.hermitian_defect(), H.hermitian_defect(),
                        _max_abs(G.data - F.data.conj().T))
        return worst


def _max_abs(a) -> float:
    if sp.issparse(a):
        return float(abs(a).max()) if a.nnz else 0.0
    return float(np.max(np.abs(a))) if a.size else 0.0


# -- basic processes -----------------------------------------------------------


def _ladder_sum(S: FockSpace, kind: str) -> sp.csr_array:
    out = sp.csr_array((S.dim, S.dim))
    for k in range(S.n_modes):
        out = out + S.ladder(kind, k)
    return out.tocsr()


def basic_process(kind: str, n_bins: int, max_level: int) -> CmxProcess:
    """Gauge, annihilation, creation, time or identity process on the grid."""
    dt = 1.0 / n_bins
    J = max_level

    if kind == "gauge":
        def past(m):
            S = fock_space(m, J)
            return ChaosMatrix(S, sp.diags_array(S.levels.astype(float)).tocsr(), band=0)
        band = 0
    elif kind == "annihilation":
        def past(m):
            S = fock_space(m, J)
            return ChaosMatrix(S, math.sqrt(dt) * _ladder_sum(S, "annihilate"), band=1)
        band = 1
    elif kind == "creation":
        def past(m):
            S = fock_space(m, J)
            return ChaosMatrix(S, math.sqrt(dt) * _ladder_sum(S, "create"), band=1)
        band = 1
    elif kind == "time":
        def past(m):
            S = fock_space(m, J)
            return ChaosMatrix(S, (m * dt) * sp.identity(S.dim, format="csr"), band=0)
        band = 0
    elif kind == "identity":
        return CmxProcess.constant(n_bins, J, 1.0, name="I")
    else:
        raise ValueError(f"unknown basic process {kind!r}")
    return CmxProcess(n_bins, J, past=past, band=band, name=kind, real=True)


def future_shifted_process(n_bins: int, max_level: int) -> CmxProcess:
    """Creation on the bin just after t_m: the standard non-adapted process."""
    J = max_level

    def full(m):
        S = fock_space(n_bins, J)
        if m >= n_bins:
            return ChaosMatrix.zeros(S)
        return ChaosMatrix(S, S.ladder("create", m), band=1)

    return CmxProcess(n_bins, J, full=full, band=1, name="future-creation", real=True)


# -- polynomial processes ------------------------------------------------------

_SYMBOLS = {"L": "gauge", "A": "annihilation", "Ad": "creation", "T": "time", "I": "identity"}


def parse_polynomial(expr: str) -> list[tuple[complex, tuple[str, ...]]]:
    """Parse a sum of words like ``"2*A*A + 0.5*L*Ad - T"``.

    Symbols: L (gauge), A (annihilation), Ad (creation), T (time), I (identity).
    """
    terms = []
    text = expr.replace(" ", "")
    if not text:
        return [(1.0, ())]
    for sign, body in re.findall(r"([+-]?)([^+-]+)", text):
        coeff: complex = -1.0 if sign == "-" else 1.0
        word = []
        for factor in body.split("*"):
            if factor in _SYMBOLS:
                if factor != "I":
                    word.append(factor)
            else:
                try:
                    coeff *= complex(factor.replace("i", "j")) if "i" in factor else float(factor)
                except ValueError:
                    raise ValueError(f"cannot parse factor {factor!r} in {expr!r}") from None
        terms.append((coeff, tuple(word)))
    return terms


def polynomial_process(expr, n_bins: int, max_level: int, max_depth: int = 6) -> CmxProcess:
    """Samplewise polynomial in the basic processes.

    ``expr`` is a string (see :func:`parse_polynomial`) or a list of
    ``(coefficient, word)`` pairs where a coefficient may be a function of t.
    Products are formed on the truncated past space, so a word of degree d is
    exact only on levels <= J - d.
    """
    terms = parse_polynomial(expr) if isinstance(expr, str) else list(expr)
    depth = max((len(w) for _, w in terms), default=0)
    if depth > max_depth:
        raise CapacityError(f"word length {depth} exceeds the configured depth {max_depth}")
    basics = {s: basic_process(_SYMBOLS[s], n_bins, max_level) for s in ("L", "A", "Ad", "T")}
    band = max((sum(basics[s].band for s in w) for _, w in terms), default=0)
    dt = 1.0 / n_bins

    def past(m):
        S = fock_space(m, max_level)
        out = ChaosMatrix.zeros(S)
        for coeff, word in terms:
            c = coeff(m * dt) if callable(coeff) else coeff
            P = ChaosMatrix.identity(S)
            for s in word:
                P = P @ basics[s].past(m)
            out = out + c * P
        out.band = band
        out.truncated = depth > 1
        return out

    name = expr if isinstance(expr, str) else "polynomial"
    real = all(not callable(c) and np.isreal(c) for c, _ in terms)
    return CmxProcess(n_bins, max_level, past=past, band=band, name=name, real=real)


# -- kernel processes ----------------------------------------------------------


def _fourier_mode(q):
    return lambda s: np.exp(2j * np.pi * q * s)


@dataclass
class KernelSpec:
    """Parameters of a banded kernel process.

    The process at t is sum over level pairs of c^i_j(t) B^i_j restricted to
    the past bins.  Two constructions of the base blocks are available:

    ``"second-quantized"`` (default) builds B from smooth one-particle data:
    raising blocks a^dagger(phi_d)^d / sqrt((j+1)...(j+d)), lowering blocks
    from a(psi_d) likewise, diagonal blocks dGamma(w) / max(j, 1).  Every
    block has norm <= 1, restriction to the past bins is compression, and the
    same seed gives the same continuum kernel on every grid.

    ``"haar"`` takes corners of seeded Haar unitaries on the full grid.  Those
    blocks depend on the grid, so this choice suits single-grid tests only.
    """

    band: int
    xi: float = 0.5
    seed: int = 0
    hermitian: bool = True
    construction: str = "second-quantized"
    n_fourier: int = 2
    coefficients: Callable[[int, int, float], complex] | None = None
    blocks: dict | None = None

    def __post_init__(self):
        if self.band < 0:
            raise ValueError("band must be nonnegative")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if self.construction not in ("second-quantized", "haar", "user"):
            raise ValueError(f"unknown kernel construction {self.construction!r}")
        if self.construction == "user" and self.blocks is None:
            raise ValueError("user construction needs blocks")
        rng = np.random.default_rng(self.seed)
        nb = self.band
        # coefficient data: modulus <= 1, frequency, phase per level pair
        self._rho = rng.uniform(0.3, 1.0, size=(2 * nb + 1, 64))
        self._freq = rng.uniform(0.0, 0.5, size=(2 * nb + 1, 64))
        self._phase = rng.uniform(0, 2 * np.pi, size=(2 * nb + 1, 64))
        q = self.n_fourier
        self._phi = []
        self._psi = []
        for d in range(nb):
            for store in (self._phi, self._psi):
                v = rng.normal(size=q) + 1j * rng.normal(size=q)
                store.append(v / np.linalg.norm(v))
        w = rng.normal(size=(q, q)) + 1j * rng.normal(size=(q, q))
        if self.hermitian:
            w = w + w.conj().T
        self._w = w / np.linalg.norm(w, 2)
        self._haar: dict = {}
        self._haar_rng_seed = int(rng.integers(2 ** 31))

    def coefficient(self, i: int, j: int, t: float) -> complex:
        """c^i_j(t) with |c| <= xi (and c^j_i = conj(c^i_j) when Hermitian)."""
        if abs(i - j) > self.band:
            return 0.0
        if self.coefficients is not None:
            return self.coefficients(i, j, t)
        d = i - j
        lo = min(i, j)
        if self.hermitian and d < 0:
            return np.conj(self.coefficient(j, i, t))
        slot = d + self.band
        rho, f, ph = self._rho[slot, lo], self._freq[slot, lo], self._phase[slot, lo]
        if d == 0 and self.hermitian:
            return self.xi * rho * math.cos(2 * np.pi * f * t + ph)
        return self.xi * rho * np.exp(1j * (2 * np.pi * f * t + ph))

    def one_particle(self, n_bins: int):
        """Bin amplitudes of phi_d, psi_d and the bin matrix of w."""
        modes = np.array([mode_amplitudes(_fourier_mode(q), n_bins) for q in range(self.n_fourier)])
        phis = [v @ modes for v in self._phi]
        psis = [v @ modes for v in self._psi]
        W = modes.T @ self._w @ modes.conj()
        return phis, psis, W


def _field(S: FockSpace, amps, kind: str) -> sp.csr_array:
    out = sp.csr_array((S.dim, S.dim), dtype=complex)
    for k in range(S.n_modes):
        c = amps[k] if kind == "create" else np.conj(amps[k])
        if c != 0:
            out = out + c * S.ladder(kind, k)
    return out.tocsr()


def _second_quantized_pieces(spec: KernelSpec, n_bins: int, m: int, J: int):
    S = fock_space(m, J)
    phis, psis, W = spec.one_particle(n_bins)
    lv = S.levels
    pieces = []
    # diagonal: dGamma(w) compressed to the past bins
    dg = sp.csr_array((S.dim, S.dim), dtype=complex)
    for k in range(m):
        for l in range(m):
            if W[k, l] != 0:
                dg = dg + W[k, l] * (S.ladder("create", k) @ S.ladder("annihilate", l))
    pieces.append((0, dg.tocsr(), 1.0 / np.maximum(lv, 1)))
    for d in range(1, spec.band + 1):
        up = sp.identity(S.dim, format="csr", dtype=complex)
        a_up = _field(S, phis[d - 1], "create")
        for _ in range(d):
            up = up @ a_up
        # column scale 1/sqrt((j+1)...(j+d))
        scale_up = np.array([1.0 / math.sqrt(math.prod(range(j + 1, j + d + 1))) for j in lv])
        pieces.append((d, up.tocsr(), scale_up))
        if spec.hermitian:
            continue
        down = sp.identity(S.dim, format="csr", dtype=complex)
        a_dn = _field(S, psis[d - 1], "annihilate")
        for _ in range(d):
            down = down @ a_dn
        scale_dn = np.array([1.0 / math.sqrt(math.prod(range(j - d + 1, j + 1))) if j >= d else 0.0
                             for j in lv])
        pieces.append((-d, down.tocsr(), scale_dn))
    return S, pieces


def kernel_process(spec: KernelSpec, n_bins: int, max_level: int, name: str = "") -> CmxProcess:
    """Adapted banded process built from a :class:`KernelSpec`."""
    J = max_level
    if spec.band > J:
        raise CapacityError(f"band {spec.band} exceeds the truncation level {J}")
    dt = 1.0 / n_bins

    def coeff_vector(S, d, t):
        lv = S.levels
        return np.array([spec.coefficient(j + d, j, t) if 0 <= j + d <= J else 0.0 for j in lv])

    def past_sq(m):
        S, pieces = _second_quantized_pieces(spec, n_bins, m, J)
        t = m * dt
        out = sp.csr_array((S.dim, S.dim), dtype=complex)
        for d, mat, scale in pieces:
            col = scale * coeff_vector(S, d, t)
            term = mat @ sp.diags_array(col)
            out = out + term
            if spec.hermitian and d > 0:
                out = out + term.conj().T
        return ChaosMatrix(S, out.tocsr(), band=spec.band)

    def past_blocks(m):
        S = fock_space(m, J)
        full = fock_space(n_bins, J)
        t = m * dt
        out = np.zeros((S.dim, S.dim), dtype=complex)
        for i in range(J + 1):
            for j in range(J + 1):
                if abs(i - j) > spec.band or S.level_dim(i) == 0 or S.level_dim(j) == 0:
                    continue
                B = _base_block(spec, full, i, j)
                c = spec.coefficient(i, j, t)
                out[S.level_slice(i), S.level_slice(j)] = c * B[: S.level_dim(i), : S.level_dim(j)]
        return ChaosMatrix(S, out, band=spec.band)

    past = past_sq if spec.construction == "second-quantized" else past_blocks
    return CmxProcess(n_bins, J, past=past, band=spec.band,
                      name=name or f"kernel(k={spec.band},seed={spec.seed})")


def _base_block(spec: KernelSpec, full: FockSpace, i: int, j: int) -> np.ndarray:
    key = (full.n_modes, full.max_level, i, j)
    if key in spec._haar:
        return spec._haar[key]
    if spec.construction == "user":
        B = np.asarray(spec.blocks[(i, j)])
    elif spec.hermitian and i < j:
        B = _base_block(spec, full, j, i).conj().T
    else:
        di, dj = full.level_dim(i), full.level_dim(j)
        seed = np.random.SeedSequence([spec._haar_rng_seed, full.n_modes, i, j])
        U = unitary_group.rvs(max(di, dj, 2), random_state=np.random.default_rng(seed))
        B = U[:di, :dj]
        if spec.hermitian and i == j:
            B = 0.5 * (B + B.conj().T)
    spec._haar[key] = B
    return B


# -- scenarios -----------------------------------------------------------------


def _brownian(n_bins, max_level):
    I = CmxProcess.constant(n_bins, max_level, 1.0, name="I")
    z = CmxProcess.zero(n_bins, max_level)
    return Quadruple(z, I, I, z, symmetric=True, name="brownian")


def _gauge(n_bins, max_level):
    I = CmxProcess.constant(n_bins, max_level, 1.0, name="I")
    z = CmxProcess.zero(n_bins, max_level)
    return Quadruple(I, z, z, z, symmetric=True, name="gauge")


def _rotated(n_bins, max_level, omega=2 * np.pi, phase=0.0, drift=True, theta=None, dtheta=None):
    if theta is None:
        theta = lambda t: phase + omega * t  # noqa: E731
        dtheta = lambda t: omega  # noqa: E731
    elif dtheta is None:
        raise ValueError("a custom theta needs its derivative dtheta")
    J = max_level
    A = basic_process("annihilation", n_bins, J)
    Ad = basic_process("creation", n_bins, J)
    dt = 1.0 / n_bins

    def F(m):
        S = fock_space(m, J)
        return ChaosMatrix(S, np.exp(1j * theta(m * dt)) * sp.identity(S.dim, format="csr"), band=0)

    def H(m):
        t = m * dt
        Q = 1j * (np.exp(1j * theta(t)) * A.past(m) - np.exp(-1j * theta(t)) * Ad.past(m))
        return dtheta(t) * Q

    Fp = CmxProcess(n_bins, J, past=F, band=0, name="exp(i theta)")
    Hp = CmxProcess(n_bins, J, past=H, band=1, name="theta' Q") if drift \
        else CmxProcess.zero(n_bins, J)
    z = CmxProcess.zero(n_bins, J)
    return Quadruple(z, Fp, Fp.adjoint(), Hp, symmetric=True,
                     name="rotated" if drift else "rotated-no-drift",
                     params={"omega": omega, "phase": phase, "drift": drift})


def _kernel_band(n_bins, max_level, k=1, xi=0.5, seed=0, construction="second-quantized"):
    seeds = np.random.SeedSequence(seed).generate_state(3)
    E = kernel_process(KernelSpec(k, xi, int(seeds[0]), True, construction), n_bins, max_level, "E")
    F = kernel_process(KernelSpec(k, xi, int(seeds[1]), False, construction), n_bins, max_level, "F")
    H = kernel_process(KernelSpec(k, xi, int(seeds[2]), True, construction), n_bins, max_level, "H")
    return Quadruple(E, F, F.adjoint(), H, symmetric=True, name=f"kernel_band({k})",
                     params={"k": k, "xi": xi, "seed": seed, "construction": construction})


def _polynomial(n_bins, max_level, expr="A"):
    P = polynomial_process(expr, n_bins, max_level)
    z = CmxProcess.zero(n_bins, max_level)
    return Quadruple(z, P, P.adjoint(), z, symmetric=True, name=f"polynomial({expr})",
                     params={"expr": expr})


def perturbation_quadruple(n_bins, max_level, xi=0.5, seed=1, gauge=False):
    """Bounded band-0 perturbation (R, S, S*, U)."""
    seeds = np.random.SeedSequence([seed, 7]).generate_state(3)
    z = CmxProcess.zero(n_bins, max_level)
    R = kernel_process(KernelSpec(0, xi, int(seeds[0]), True), n_bins, max_level, "R") if gauge else z
    S = kernel_process(KernelSpec(0, xi, int(seeds[1]), False), n_bins, max_level, "S")
    U = kernel_process(KernelSpec(0, xi, int(seeds[2]), True), n_bins, max_level, "U")
    return Quadruple(R, S, S.adjoint(), U, symmetric=True, name="J",
                     params={"xi": xi, "seed": seed, "gauge": gauge})


def _perturbed(n_bins, max_level, base="brownian", base_params=None, xi=0.5, seed=1, gauge=False):
    B = scenario(base, n_bins, max_level, **(base_params or {}))
    if xi == 0:
        return B, B
    Jq = perturbation_quadruple(n_bins, max_level, xi, seed, gauge)
    P = B + Jq
    P.name = f"perturbed({B.name})"
    P.params = {"base": base, "xi": xi, "seed": seed, "gauge": gauge}
    return B, P


SCENARIOS = {
    "brownian": (_brownian, "quadruple (0, I, I, 0); integral A_t + A_t^dagger"),
    "gauge": (_gauge, "gauge-only quadruple (I, 0, 0, 0); integral Lambda_t"),
    "rotated": (_rotated, "rotated Brownian motion with angle theta(t) = phase + omega t"),
    "kernel_band": (_kernel_band, "seeded banded kernel quadruple (k, xi, seed)"),
    "polynomial": (_polynomial, "quadruple (0, P, P*, 0) for a polynomial P in L, A, Ad, T"),
    "perturbed": (_perturbed, "base scenario plus a bounded band-0 perturbation (pair)"),
}


def scenario_names() -> list[str]:
    return list(SCENARIOS)


def scenario(name: str, n_bins: int, max_level: int, **params):
    """Build a named scenario quadruple (a pair of quadruples for ``perturbed``)."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}")
    return SCENARIOS[name][0](n_bins, max_level, **params)
