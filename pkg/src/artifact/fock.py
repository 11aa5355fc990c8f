"""Truncated Bose-Fock space over a uniform grid of time bins.

The one-particle space is spanned by the normalized bin indicators, so a
Fock basis vector is an occupation sequence ``nu`` with one entry per bin.
States of total occupation ``j`` form the level-``j`` chaos.  Within a level
the basis is ordered colexicographically (last bin most significant), and
levels are stacked in increasing order.  With this order the states that
leave the last bins empty come first inside every level, which makes the
past subspace of the first ``m`` bins a prefix of each level block.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.special import gammaln

__all__ = [
    "CapacityError",
    "GridConfig",
    "TruncationConfig",
    "FockSpace",
    "fock_space",
    "enumerate_basis",
    "LadderBlock",
    "StateVector",
    "exponential_vector",
    "buffered_projection",
    "mode_amplitudes",
]

# largest basis we are willing to materialize
MAX_DIM = 2_000_000


class CapacityError(ValueError):
    """Requested basis or product does not fit the configured truncation."""


@dataclass(frozen=True)
class GridConfig:
    n_bins: int

    def __post_init__(self):
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise ValueError(f"n_bins must be a positive integer, got {self.n_bins!r}")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_bins

    @property
    def times(self) -> np.ndarray:
        """Grid times t_0, ..., t_n."""
        return np.arange(self.n_bins + 1) / self.n_bins


@dataclass(frozen=True)
class TruncationConfig:
    max_level: int
    buffer: int = 0

    def __post_init__(self):
        if self.max_level < 0 or self.buffer < 0:
            raise ValueError("max_level and buffer must be nonnegative")
        if self.buffer > self.max_level:
            raise ValueError(f"buffer {self.buffer} exceeds max_level {self.max_level}")

    @property
    def support_level(self) -> int:
        """Highest level on which identities are asserted."""
        return self.max_level - self.buffer


def _check_capacity(n_modes: int, level: int) -> int:
    size = comb(n_modes + level - 1, level) if n_modes > 0 else int(level == 0)
    if size > np.iinfo(np.int64).max or size > MAX_DIM:
        raise CapacityError(
            f"level {level} over {n_modes} modes has {size} basis states (cap {MAX_DIM})"
        )
    return size


@lru_cache(maxsize=None)
def _level_states(n_modes: int, level: int) -> np.ndarray:
    # colex: recurse on the last mode, which varies slowest
    if n_modes == 0:
        return np.zeros((1 if level == 0 else 0, 0), dtype=np.int64)
    if n_modes == 1:
        return np.array([[level]], dtype=np.int64)
    parts = []
    for last in range(level + 1):
        head = _level_states(n_modes - 1, level - last)
        tail = np.full((head.shape[0], 1), last, dtype=np.int64)
        parts.append(np.hstack([head, tail]))
    out = np.vstack(parts)
    out.setflags(write=False)
    return out


def enumerate_basis(n_bins: int, level: int) -> list[tuple[int, ...]]:
    """All occupations of ``n_bins`` modes with total ``level``, in colex order."""
    if n_bins < 1 or level < 0:
        raise ValueError("need n_bins >= 1 and level >= 0")
    _check_capacity(n_bins, level)
    return [tuple(int(v) for v in row) for row in _level_states(n_bins, level)]


@dataclass(frozen=True)
class LadderBlock:
    """A single-mode ladder operator restricted to one level.

    ``matrix`` maps level ``source`` to level ``target``.  ``truncated`` marks
    a creation out of the top level, where the block is zero because its
    target lies outside the truncation.
    """

    matrix: sp.csr_array
    source: int
    target: int
    truncated: bool = False


class FockSpace:
    """Occupation basis over ``n_modes`` bins, truncated at ``max_level``.

    Use :func:`fock_space` to obtain shared instances.
    """

    def __init__(self, n_modes: int, max_level: int):
        if n_modes < 0 or max_level < 0:
            raise ValueError("n_modes and max_level must be nonnegative")
        for j in range(max_level + 1):
            _check_capacity(n_modes, j)
        self.n_modes = n_modes
        self.max_level = max_level
        blocks = [_level_states(n_modes, j) for j in range(max_level + 1)]
        self.states = np.vstack(blocks) if n_modes else np.zeros((1, 0), dtype=np.int64)
        self.states.setflags(write=False)
        sizes = [b.shape[0] for b in blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.dim = int(self.offsets[-1])
        self.levels = np.repeat(np.arange(max_level + 1), sizes)
        self._radix = max_level + 1
        self._keyed = n_modes * np.log2(self._radix) < 62
        if self._keyed:
            self._weights = self._radix ** np.arange(n_modes, dtype=np.int64)
            keys = self.states @ self._weights
            self._order = np.argsort(keys, kind="stable")
            self._sorted_keys = keys[self._order]
        else:
            self._lookup = {tuple(row): i for i, row in enumerate(self.states.tolist())}
        self._ladders: dict = {}

    def __repr__(self):
        return f"FockSpace(n_modes={self.n_modes}, max_level={self.max_level}, dim={self.dim})"

    def __eq__(self, other):
        return (
            isinstance(other, FockSpace)
            and self.n_modes == other.n_modes
            and self.max_level == other.max_level
        )

    def __hash__(self):
        return hash((self.n_modes, self.max_level))

    def level_slice(self, j: int) -> slice:
        return slice(int(self.offsets[j]), int(self.offsets[j + 1]))

    def level_dim(self, j: int) -> int:
        if j < 0 or j > self.max_level:
            return 0
        return int(self.offsets[j + 1] - self.offsets[j])

    def prefix(self, level: int) -> int:
        """Number of basis states with level <= ``level``."""
        level = min(level, self.max_level)
        return 0 if level < 0 else int(self.offsets[level + 1])

    def index(self, occupations) -> np.ndarray:
        """Positions of the given occupation rows; -1 where absent."""
        occ = np.atleast_2d(np.asarray(occupations, dtype=np.int64))
        if occ.shape[1] != self.n_modes:
            raise ValueError("occupation length does not match the number of modes")
        valid = (occ >= 0).all(axis=1) & (occ.sum(axis=1) <= self.max_level)
        out = np.full(occ.shape[0], -1, dtype=np.int64)
        if self._keyed:
            keys = np.where(valid, np.clip(occ, 0, None) @ self._weights, -1)
            pos = np.searchsorted(self._sorted_keys, keys)
            pos = np.clip(pos, 0, self.dim - 1)
            hit = valid & (self._sorted_keys[pos] == keys)
            out[hit] = self._order[pos[hit]]
        else:
            for r, row in enumerate(occ.tolist()):
                if valid[r]:
                    out[r] = self._lookup.get(tuple(row), -1)
        return out

    def ladder(self, kind: str, k: int) -> sp.csr_array:
        """Full-space matrix of ``a_k``, ``a_k^dagger`` or ``n_k``.

        Creation out of the top level is dropped, so the truncated creation
        matrix is exactly the transpose of the annihilation matrix.
        """
        if not 0 <= k < self.n_modes:
            raise IndexError(f"mode {k} out of range for {self.n_modes} modes")
        key = (kind, k)
        if key in self._ladders:
            return self._ladders[key]
        if kind == "annihilate":
            src = np.nonzero(self.states[:, k] > 0)[0]
            lowered = self.states[src].copy()
            lowered[:, k] -= 1
            dst = self.index(lowered)
            vals = np.sqrt(self.states[src, k].astype(float))
            mat = sp.csr_array((vals, (dst, src)), shape=(self.dim, self.dim))
        elif kind == "create":
            mat = self.ladder("annihilate", k).T.tocsr()
        elif kind == "number":
            mat = sp.diags_array(self.states[:, k].astype(float)).tocsr()
        else:
            raise ValueError(f"unknown ladder kind {kind!r}")
        self._ladders[key] = mat
        return mat

    def mode_ladder(self, kind: str, k: int, level: int) -> LadderBlock:
        """Ladder operator of mode ``k`` restricted to the level-``level`` block."""
        if not 0 <= level <= self.max_level:
            raise ValueError(f"level {level} outside 0..{self.max_level}")
        target = {"annihilate": level - 1, "create": level + 1, "number": level}[kind]
        cols = self.level_slice(level)
        if target > self.max_level:
            empty = sp.csr_array((0, self.level_dim(level)))
            return LadderBlock(empty, level, target, truncated=True)
        if target < 0:
            empty = sp.csr_array((0, self.level_dim(level)))
            return LadderBlock(empty, level, target)
        full = self.ladder(kind, k)
        block = full[self.level_slice(target)][:, cols].tocsr()
        return LadderBlock(block, level, target)

    def vacuum(self) -> "StateVector":
        amps = np.zeros(self.dim, dtype=complex)
        amps[0] = 1.0
        return StateVector(self, amps)


@lru_cache(maxsize=None)
def fock_space(n_modes: int, max_level: int) -> FockSpace:
    return FockSpace(n_modes, max_level)


@dataclass
class StateVector:
    """Amplitudes on the basis of ``space``; ``truncated`` records lost weight."""

    space: FockSpace
    amplitudes: np.ndarray
    truncated: bool = field(default=False)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.space.dim,):
            raise ValueError("amplitude vector does not match the space dimension")

    def level(self, j: int) -> np.ndarray:
        return self.amplitudes[self.space.level_slice(j)]

    def components(self) -> dict[tuple[int, int], complex]:
        """Nonzero amplitudes keyed by (level, position within level)."""
        out = {}
        for i in np.flatnonzero(self.amplitudes):
            j = int(self.space.levels[i])
            out[(j, int(i - self.space.offsets[j]))] = complex(self.amplitudes[i])
        return out

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def inner(self, other: "StateVector") -> complex:
        """<self, other>, linear in ``self``."""
        if other.space != self.space:
            raise ValueError("vectors live on different spaces")
        return complex(np.vdot(other.amplitudes, self.amplitudes))

    def __add__(self, other):
        return StateVector(self.space, self.amplitudes + other.amplitudes,
                           self.truncated or other.truncated)

    def __rmul__(self, c):
        return StateVector(self.space, c * self.amplitudes, self.truncated)


def exponential_vector(g, max_level: int) -> StateVector:
    """Exponential vector of the mode amplitudes ``g``, cut at ``max_level``."""
    g = np.asarray(g, dtype=complex).ravel()
    space = fock_space(len(g), max_level)
    return StateVector(space, exponential_amplitudes(space, g), truncated=True)


def exponential_amplitudes(space: FockSpace, g) -> np.ndarray:
    """Amplitudes prod_k g_k**nu_k / sqrt(nu_k!) for every basis state.

    ``g`` may carry leading batch axes; the basis axis is appended last.
    """
    g = np.asarray(g, dtype=complex)
    if g.shape[-1] != space.n_modes:
        raise ValueError("amplitude length does not match the number of modes")
    if space.n_modes == 0:
        return np.ones(g.shape[:-1] + (1,), dtype=complex)
    nu = space.states
    scale = np.exp(-0.5 * gammaln(nu + 1.0).sum(axis=1))
    powers = np.prod(g[..., None, :] ** nu, axis=-1)
    return powers * scale


def buffered_projection(psi: StateVector, max_level: int, buffer: int) -> StateVector:
    """Zero every component above level ``max_level - buffer``."""
    cut = psi.space.prefix(max_level - buffer)
    amps = psi.amplitudes.copy()
    amps[cut:] = 0.0
    return StateVector(psi.space, amps, psi.truncated)


def mode_amplitudes(g, n_bins: int, order: int = 12) -> np.ndarray:
    """Bin amplitudes g_k = dt**-0.5 * integral of g over bin k.

    ``g`` is a callable on [0, 1] (vectorized) or an array of ready amplitudes.
    """
    if not callable(g):
        arr = np.asarray(g, dtype=complex)
        if arr.shape != (n_bins,):
            raise ValueError("amplitude array length must equal n_bins")
        return arr
    x, w = leggauss(order)
    dt = 1.0 / n_bins
    left = np.arange(n_bins) * dt
    s = left[:, None] + 0.5 * dt * (x[None, :] + 1.0)
    vals = np.asarray(g(s), dtype=complex)
    return (0.5 * dt * vals @ w) / np.sqrt(dt)
