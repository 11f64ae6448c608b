"""Domain types and thresholding operators for hierarchically sparse vectors.

A hierarchical vector stacks u blocks of length s into one complex vector of
length u*s.  A vector is (k_u, k_s)-sparse when at most k_u blocks are nonzero
and each of those blocks has at most k_s nonzero entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# A hierarchical vector is a plain complex ndarray of length u*s, addressed as
# (block i, offset j) <-> flat index i*s + j.
HierVector = np.ndarray

__all__ = [
    "HierVector",
    "ProblemDims",
    "HierSupport",
    "block_energies",
    "block_threshold",
    "hier_threshold",
    "project_to_support",
]


@dataclass(frozen=True)
class ProblemDims:
    """Structural parameters of one detection problem.

    n    ambient signal-space dimension
    u    number of users (blocks)
    s    block length (cyclic-prefix length)
    k_u  active-user (block) sparsity
    k_s  in-block (path) sparsity
    m    number of compressive measurements
    """

    n: int
    u: int
    s: int
    k_u: int
    k_s: int
    m: int

    def __post_init__(self):
        for name in ("n", "u", "s", "k_u", "k_s", "m"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.u * self.s > self.n:
            raise ValueError(f"u*s = {self.u * self.s} exceeds ambient dimension n = {self.n}")
        if self.k_u > self.u:
            raise ValueError(f"k_u = {self.k_u} exceeds u = {self.u}")
        if self.k_s > self.s:
            raise ValueError(f"k_s = {self.k_s} exceeds s = {self.s}")
        if self.m > self.n:
            raise ValueError(f"m = {self.m} exceeds n = {self.n}")

    @property
    def us(self) -> int:
        return self.u * self.s


@dataclass
class HierSupport:
    """Hierarchical support: active blocks, each with its in-block offsets.

    blocks is kept sorted; per_block maps every block in ``blocks`` to a
    sorted tuple of offsets in [0, s).
    """

    blocks: tuple[int, ...]
    per_block: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self.blocks = tuple(sorted(self.blocks))
        self.per_block = {int(b): tuple(sorted(o)) for b, o in sorted(self.per_block.items())}
        if set(self.per_block) - set(self.blocks):
            raise ValueError("per_block contains blocks not listed in blocks")

    @property
    def size(self) -> int:
        return sum(len(o) for o in self.per_block.values())

    def flat_indices(self, s: int) -> np.ndarray:
        """Flat indices into the length-u*s vector, in ascending order."""
        idx = [b * s + j for b in self.blocks for j in self.per_block.get(b, ())]
        return np.asarray(idx, dtype=np.intp)

    def is_valid_for(self, dims: ProblemDims) -> bool:
        """True when this support fits the (k_u, k_s) budget of ``dims``."""
        if len(self.blocks) > dims.k_u:
            return False
        return all(
            0 <= b < dims.u and len(o) <= dims.k_s and all(0 <= j < dims.s for j in o)
            for b, o in self.per_block.items()
        )


def _as_hier(h: HierVector, dims: ProblemDims) -> np.ndarray:
    h = np.asarray(h)
    if h.shape != (dims.us,):
        raise ValueError(f"expected vector of length u*s = {dims.us}, got shape {h.shape}")
    return h


def block_energies(h: HierVector, dims: ProblemDims) -> np.ndarray:
    """Squared l2-norm of every block: entry i equals ||h_i||^2."""
    h = _as_hier(h, dims)
    mags = np.abs(h.reshape(dims.u, dims.s))
    return np.einsum("ij,ij->i", mags, mags)


def block_threshold(h: HierVector, xi: float, dims: ProblemDims) -> set[int]:
    """Blocks whose energy reaches the threshold: { i : ||h_i||^2 >= xi }.

    The comparison is on squared norms (equivalent to ||h_i|| >= sqrt(xi) for
    xi >= 0) and is inclusive, so xi = 0 admits every block.
    """
    if xi < 0:
        raise ValueError(f"threshold must be nonnegative, got {xi}")
    energies = block_energies(h, dims)
    return set(np.flatnonzero(energies >= xi).tolist())


def hier_threshold(x: HierVector, k_u: int, k_s: int, dims: ProblemDims) -> HierSupport:
    """Support of the best (k_u, k_s)-sparse approximation to ``x``.

    Selects the k_s absolutely largest entries inside each block, then the
    k_u blocks with the largest truncated l2 energy.  Ties at equal magnitude
    or equal energy are broken toward the lowest index so repeated runs are
    reproducible.
    """
    x = _as_hier(x, dims)
    if not 1 <= k_u <= dims.u:
        raise ValueError(f"k_u must be in [1, {dims.u}], got {k_u}")
    if not 1 <= k_s <= dims.s:
        raise ValueError(f"k_s must be in [1, {dims.s}], got {k_s}")

    mags2 = np.abs(x.reshape(dims.u, dims.s)) ** 2
    # Stable sort on negated magnitudes: descending, lowest index first on ties.
    order = np.argsort(-mags2, axis=1, kind="stable")
    top = order[:, :k_s]
    trunc_energy = np.take_along_axis(mags2, top, axis=1).sum(axis=1)
    best_blocks = np.argsort(-trunc_energy, kind="stable")[:k_u]

    blocks = tuple(sorted(int(b) for b in best_blocks))
    per_block = {int(b): tuple(sorted(int(j) for j in top[b])) for b in blocks}
    return HierSupport(blocks=blocks, per_block=per_block)


def project_to_support(x: HierVector, support: HierSupport, dims: ProblemDims) -> HierVector:
    """Vector agreeing with ``x`` on ``support`` and zero elsewhere."""
    x = _as_hier(x, dims)
    for b, offsets in support.per_block.items():
        if not 0 <= b < dims.u:
            raise IndexError(f"block index {b} out of range [0, {dims.u})")
        for j in offsets:
            if not 0 <= j < dims.s:
                raise IndexError(f"offset {j} out of range [0, {dims.s}) in block {b}")
    out = np.zeros_like(x)
    idx = support.flat_indices(dims.s)
    out[idx] = x[idx]
    return out
