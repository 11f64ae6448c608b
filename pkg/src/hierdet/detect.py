"""Activity detectors: HiHTP, HiIHT and the block correlation baseline.

HiHTP and HiIHT iterate a gradient proxy followed by a hierarchical-sparse
support selection; HiHTP then re-fits coefficients by least squares on the
selected support while HiIHT keeps the projected proxy.  The block correlator
declares a user active when its correlation energy summed over all in-block
shifts exceeds a threshold.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .core import (
    HierSupport,
    HierVector,
    ProblemDims,
    block_energies,
    hier_threshold,
    project_to_support,
)
from .measure import (
    FourierMeasurement,
    SignatureSet,
    apply_adjoint,
    apply_measurement,
    correlate_all_shifts,
    embed,
)

__all__ = [
    "StopRule",
    "DetectorConfig",
    "DetectionOutcome",
    "CorrelatorMode",
    "restricted_least_squares",
    "hihtp",
    "hiiht",
    "block_correlator",
    "correlator_energies",
    "ideal_correlator_energies",
    "detect_from_energies",
]


class StopRule(str, Enum):
    SUPPORT_FIXED_POINT = "support_fixed_point"
    RESIDUAL_TOLERANCE = "residual_tolerance"
    MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class DetectorConfig:
    """Iteration controls shared by HiHTP and HiIHT.

    The default stop rule halts once the selected support repeats (for HiIHT
    additionally once the iterate itself has stopped moving, since its
    coefficients keep refining after the support settles), backstopped by
    max_iters.  residual_tolerance is only consulted by the
    RESIDUAL_TOLERANCE rule.
    """

    max_iters: int = 50
    stop_rule: StopRule = StopRule.SUPPORT_FIXED_POINT
    ls_tolerance: float = 1e-10
    ls_max_iters: int = 200
    xi: float = 0.0
    residual_tolerance: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.ls_tolerance > 0:
            raise ValueError("ls_tolerance must be positive")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")


@dataclass
class DetectionOutcome:
    """Final estimate, declared active set and per-iteration diagnostics."""

    h_hat: HierVector
    active_users: set[int]
    iterations: int
    support_history: list[HierSupport] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)
    ls_converged: bool = True


class CorrelatorMode(str, Enum):
    SIGNATURE = "signature"
    IDEAL_ORTHOGONAL = "ideal"


def _declared_active(h_hat: HierVector, xi: float, dims: ProblemDims) -> set[int]:
    # xi = 0 declares the support of the sparse estimate; the inclusive
    # comparison of block_threshold would admit every block at zero.
    energies = block_energies(h_hat, dims)
    if xi > 0:
        return set(np.flatnonzero(energies >= xi).tolist())
    return set(np.flatnonzero(energies > 0).tolist())


def _restricted_lsq(
    A: FourierMeasurement,
    y: np.ndarray,
    support: HierSupport,
    dims: ProblemDims,
    cfg: DetectorConfig,
) -> tuple[HierVector, bool]:
    """Least-squares fit on a fixed support via CG on the normal equations."""
    idx = support.flat_indices(dims.s)
    out = np.zeros(dims.us, dtype=complex)
    if idx.size == 0:
        return out, True
    if idx.size > A.m:
        raise ValueError(
            f"support size {idx.size} exceeds m = {A.m}: restricted system is underdetermined"
        )

    def normal_matvec(w):
        x = np.zeros(A.n, dtype=complex)
        x[idx] = w
        t = apply_adjoint(A, apply_measurement(A, x))
        return t[idx]

    op = LinearOperator((idx.size, idx.size), matvec=normal_matvec, dtype=complex)
    b = apply_adjoint(A, y)[idx]
    w, info = cg(op, b, rtol=cfg.ls_tolerance, atol=0.0, maxiter=cfg.ls_max_iters)
    out[idx] = w
    return out, info == 0


def restricted_least_squares(
    A: FourierMeasurement,
    y: np.ndarray,
    support: HierSupport,
    dims: ProblemDims,
    cfg: DetectorConfig | None = None,
) -> HierVector:
    """Minimum-norm least-squares solution of ||y - A z|| with supp(z) in S."""
    cfg = cfg or DetectorConfig()
    h, converged = _restricted_lsq(A, y, support, dims, cfg)
    if not converged:
        warnings.warn(
            f"restricted least squares did not converge in {cfg.ls_max_iters} iterations;"
            " returning best iterate",
            RuntimeWarning,
        )
    return h


def hihtp(
    A: FourierMeasurement,
    y: np.ndarray,
    dims: ProblemDims,
    cfg: DetectorConfig | None = None,
) -> DetectionOutcome:
    """Hard thresholding pursuit over hierarchically sparse supports.

    Each pass thresholds the gradient proxy h + A^H (y - A h) to a
    (k_u, k_s)-sparse support, then solves the least-squares problem
    restricted to that support.
    """
    cfg = cfg or DetectorConfig()
    h = np.zeros(dims.us, dtype=complex)
    r = np.asarray(y, dtype=complex).copy()
    y_norm = float(np.linalg.norm(y))

    supports: list[HierSupport] = []
    residuals: list[float] = []
    ls_converged = True
    prev_support: HierSupport | None = None
    iterations = cfg.max_iters

    for t in range(1, cfg.max_iters + 1):
        proxy = h + apply_adjoint(A, r)[: dims.us]
        support = hier_threshold(proxy, dims.k_u, dims.k_s, dims)
        supports.append(support)

        if cfg.stop_rule == StopRule.SUPPORT_FIXED_POINT and support == prev_support:
            # h is already the least-squares solution on this support.
            residuals.append(float(np.linalg.norm(r)))
            iterations = t
            break

        h, ok = _restricted_lsq(A, y, support, dims, cfg)
        ls_converged = ls_converged and ok
        r = y - apply_measurement(A, embed(h, A))
        r_norm = float(np.linalg.norm(r))
        residuals.append(r_norm)
        prev_support = support

        if cfg.stop_rule == StopRule.RESIDUAL_TOLERANCE and r_norm <= cfg.residual_tolerance * y_norm:
            iterations = t
            break

    return DetectionOutcome(
        h_hat=h,
        active_users=_declared_active(h, cfg.xi, dims),
        iterations=iterations,
        support_history=supports,
        residual_history=residuals,
        ls_converged=ls_converged,
    )


def hiiht(
    A: FourierMeasurement,
    y: np.ndarray,
    dims: ProblemDims,
    cfg: DetectorConfig | None = None,
) -> DetectionOutcome:
    """Iterative hard thresholding variant: the least-squares refit is
    replaced by projecting the gradient proxy onto the selected support."""
    cfg = cfg or DetectorConfig()
    h = np.zeros(dims.us, dtype=complex)
    r = np.asarray(y, dtype=complex).copy()
    y_norm = float(np.linalg.norm(y))

    supports: list[HierSupport] = []
    residuals: list[float] = []
    prev_support: HierSupport | None = None
    iterations = cfg.max_iters

    for t in range(1, cfg.max_iters + 1):
        proxy = h + apply_adjoint(A, r)[: dims.us]
        support = hier_threshold(proxy, dims.k_u, dims.k_s, dims)
        supports.append(support)

        h_new = project_to_support(proxy, support, dims)
        step = float(np.linalg.norm(h_new - h))
        h = h_new
        r = y - apply_measurement(A, embed(h, A))
        r_norm = float(np.linalg.norm(r))
        residuals.append(r_norm)

        if (
            cfg.stop_rule == StopRule.SUPPORT_FIXED_POINT
            and support == prev_support
            and step <= cfg.ls_tolerance * max(float(np.linalg.norm(h)), np.finfo(float).tiny)
        ):
            iterations = t
            break
        if cfg.stop_rule == StopRule.RESIDUAL_TOLERANCE and r_norm <= cfg.residual_tolerance * y_norm:
            iterations = t
            break
        prev_support = support

    return DetectionOutcome(
        h_hat=h,
        active_users=_declared_active(h, cfg.xi, dims),
        iterations=iterations,
        support_history=supports,
        residual_history=residuals,
    )


def correlator_energies(y: np.ndarray, sig: SignatureSet, dims: ProblemDims) -> np.ndarray:
    """Per-user correlation energy summed over all s in-block shifts."""
    return block_energies(correlate_all_shifts(y, sig, dims), dims)


def ideal_correlator_energies(
    h: HierVector,
    dims: ProblemDims,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Correlator statistics under perfectly shift-orthogonal signatures.

    With orthogonal unit-spectrum signatures of energy n, block i of the
    correlator output is n*h_i + sqrt(n)*e_i with e_i ~ CN(0, sigma^2 I_s),
    so the statistic can be synthesized without forming a received word.
    """
    h = np.asarray(h).reshape(dims.u, dims.s)
    scale = np.sqrt(sigma2 / 2.0)
    e = scale * (
        rng.standard_normal((dims.u, dims.s)) + 1j * rng.standard_normal((dims.u, dims.s))
    )
    stat = dims.n * h + np.sqrt(dims.n) * e
    mags = np.abs(stat)
    return np.einsum("ij,ij->i", mags, mags)


def detect_from_energies(energies: np.ndarray, xi: float, k_u: int) -> set[int]:
    """Threshold detection, or rank (top-k_u) selection when xi is zero."""
    if xi > 0:
        return set(np.flatnonzero(energies >= xi).tolist())
    order = np.argsort(-energies, kind="stable")[:k_u]
    return set(int(i) for i in order)


def block_correlator(
    y: np.ndarray | None,
    sig: SignatureSet | None,
    dims: ProblemDims,
    xi: float,
    mode: CorrelatorMode | str = CorrelatorMode.SIGNATURE,
    *,
    h: HierVector | None = None,
    sigma2: float | None = None,
    rng: np.random.Generator | None = None,
) -> set[int]:
    """Block correlation detector over all n received samples.

    Signature mode correlates y against every cyclic shift of the actual
    signature set.  Ideal-orthogonal mode synthesizes the statistic of a
    perfectly shift-orthogonal signature family from the true channel and
    fresh noise (h, sigma2, rng required).
    """
    mode = CorrelatorMode(mode)
    if mode == CorrelatorMode.SIGNATURE:
        if y is None or sig is None:
            raise ValueError("signature mode requires y and sig")
        energies = correlator_energies(y, sig, dims)
    else:
        if h is None or sigma2 is None or rng is None:
            raise ValueError("ideal-orthogonal mode requires h, sigma2 and rng")
        energies = ideal_correlator_energies(h, dims, sigma2, rng)
    return detect_from_energies(energies, xi, dims.k_u)
