"""Closed-form performance bounds for the thresholding and correlator detectors.

Everything here is a pure function of the problem dimensions, the linear SNR
(= 1/sigma^2 under unit per-tap channel power) and a handful of configurable
constants: the noise enhancement tau of the recovery guarantee, the restricted
isometry constants (prefactor and exponential rate), and the scale hidden in
the energy-concentration exponent.  Products of gamma functions and binomials
are evaluated in the log domain throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import gammainc, gammaincc, gammaln, logsumexp

from .core import ProblemDims

__all__ = [
    "BoundParams",
    "BoundReport",
    "CdfMode",
    "threshold_miss_constant",
    "log_threshold_miss_constant",
    "correlator_miss_constant",
    "chi_sq_ccdf",
    "channel_norm_cdf",
    "noisy_channel_norm_cdf",
    "rip_failure_bound",
    "false_alarm_bound",
    "missed_detection_bound_recovery",
    "energy_concentration_failure_bound",
    "missed_detection_bound_concentration",
    "correlator_missed_detection_log_bound",
    "noise_max_exceedance_approx",
    "rate_lower_bound",
    "block_error_bound",
    "sufficient_measurements",
]


@dataclass(frozen=True)
class BoundParams:
    """Inputs shared by the bound evaluations.

    tau is the noise enhancement of the recovery guarantee (calibrate it
    empirically, e.g. with hierdet.sim.calibrate_tau); rip_prefactor/rip_rate
    are the constants of the restricted-isometry failure bound; conc_scale
    scales the denominator of the energy-concentration exponent; epsilon is
    the concentration accuracy.
    """

    dims: ProblemDims
    snr: float
    tau: float
    xi: float = 0.0
    epsilon: float = 0.05
    rip_prefactor: float = 1.0
    rip_rate: float = 0.1
    conc_scale: float = 1.0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if not self.tau >= 1:
            raise ValueError("tau must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if self.rip_prefactor < 0:
            raise ValueError("rip_prefactor must be nonnegative")
        if min(self.rip_rate, self.conc_scale) <= 0:
            raise ValueError("rip_rate and conc_scale must be positive")

    @property
    def sigma2(self) -> float:
        return 1.0 / self.snr


@dataclass(frozen=True)
class BoundReport:
    """Additive bound broken into named terms.

    total is always the exact sum of the terms; clipped saturates at 1 so
    vacuous regimes are visible rather than hidden.
    """

    terms: dict[str, float]
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(sum(self.terms.values()))

    @property
    def clipped(self) -> float:
        return min(self.total, 1.0)


class CdfMode(str, Enum):
    EXACT = "exact"
    SMALL_XI_APPROX = "small_xi"


def _exp(logv: float) -> float:
    # exp that saturates to inf instead of warning on overflow
    if logv > 700.0:
        return math.inf
    return math.exp(logv)


def log_threshold_miss_constant(m: int, k_s: int) -> float:
    """log of sum_{j=0}^{m-1} Gamma(k_s + j) / (Gamma(k_s) j!).

    Uses the closed form (m / k_s) * binom(m + k_s - 1, k_s - 1).
    """
    if m < 1 or k_s < 1:
        raise ValueError("m and k_s must be positive integers")
    return (
        math.log(m)
        - math.log(k_s)
        + gammaln(m + k_s)
        - gammaln(k_s)
        - gammaln(m + 1)
    )


def threshold_miss_constant(m: int, k_s: int) -> float:
    """High-SNR miss constant of the thresholding detector (shift of its
    missed-detection curve), evaluated via the closed form."""
    return _exp(log_threshold_miss_constant(m, k_s))


def _log_conv(log_x: np.ndarray, log_y: np.ndarray) -> np.ndarray:
    """Convolution of two positive sequences given by their logs."""
    out = np.full(log_x.size + log_y.size - 1, -np.inf)
    for k in range(log_y.size):
        seg = log_x + log_y[k]
        out[k : k + log_x.size] = np.logaddexp(out[k : k + log_x.size], seg)
    return out


def correlator_miss_constant(
    s: int,
    u: int,
    k_s: int,
    *,
    u_max: int = 64,
    high_precision: bool = False,
) -> float:
    """High-SNR miss constant of the orthogonal-signature correlator.

    Evaluates (1/Gamma(k_s)) * sum_{i=1}^{u-1} (-1)^{i+1} binom(u-1, i) *
    sum over all i-tuples (j_1..j_i) in [1, s-1]^i of
    Gamma(sum_k j_k + k_s) / prod_k Gamma(j_k + 1) * s^(-sum_k j_k - k_s).

    The i-fold inner sum collapses to the i-fold discrete convolution of
    a_j = 1/j!, contracted against Gamma(J + k_s) * s^(-J - k_s) over the
    total degree J, which keeps the evaluation polynomial in u and s.  The
    alternating outer sum runs with sign tracking and aborts on catastrophic
    cancellation unless high_precision is requested.
    """
    if s < 2 or u < 2 or k_s < 1:
        raise ValueError("require s >= 2, u >= 2, k_s >= 1")
    if u > u_max:
        raise ValueError(f"u = {u} exceeds the practical guard u_max = {u_max}")
    if high_precision:
        return _correlator_miss_constant_mp(s, u, k_s)

    log_s = math.log(s)
    log_a = -gammaln(np.arange(1, s) + 1.0)  # a_j = 1/j!, j = 1..s-1

    total = 0.0
    max_term = 0.0
    log_c = log_a.copy()  # i-fold convolution; degree offset is i
    for i in range(1, u):
        degrees = np.arange(i, i * (s - 1) + 1, dtype=float)
        log_inner = logsumexp(log_c + gammaln(degrees + k_s) - (degrees + k_s) * log_s)
        log_term = (
            gammaln(u) - gammaln(i + 1) - gammaln(u - i) + log_inner - gammaln(k_s)
        )
        term = _exp(log_term)
        max_term = max(max_term, term)
        total += term if i % 2 == 1 else -term
        if i < u - 1:
            log_c = _log_conv(log_c, log_a)

    if max_term > 1e12 * abs(total):
        raise ArithmeticError(
            "catastrophic cancellation in the alternating sum; "
            "retry with high_precision=True"
        )
    return total


def _correlator_miss_constant_mp(s: int, u: int, k_s: int) -> float:
    """Arbitrary-precision fallback for the alternating sum."""
    import mpmath as mp

    with mp.workdps(60):
        a = [mp.mpf(0)] + [1 / mp.gamma(j + 1) for j in range(1, s)]
        conv = list(a)
        total = mp.mpf(0)
        for i in range(1, u):
            inner = mp.mpf(0)
            for J, cJ in enumerate(conv):
                if cJ:
                    inner += cJ * mp.gamma(J + k_s) * mp.mpf(s) ** (-(J + k_s))
            term = mp.binomial(u - 1, i) * inner / mp.gamma(k_s)
            total += term if i % 2 == 1 else -term
            if i < u - 1:
                new = [mp.mpf(0)] * (len(conv) + s - 1)
                for J, cJ in enumerate(conv):
                    if cJ:
                        for j in range(1, s):
                            new[J + j] += cJ * a[j]
                conv = new
        return float(total)


def chi_sq_ccdf(x: float, m: int, sigma2: float) -> float:
    """P(||z||^2 > x) for z with m iid circular complex Gaussian entries of
    per-entry variance sigma2; equals the regularized upper incomplete gamma
    Q(m, x/sigma2)."""
    if x < 0 or m < 1 or sigma2 <= 0:
        raise ValueError("require x >= 0, m >= 1, sigma2 > 0")
    return float(gammaincc(m, x / sigma2))


def channel_norm_cdf(
    xi: float,
    k_s: int,
    sigma_h2: float = 1.0,
    mode: CdfMode | str = CdfMode.EXACT,
) -> float:
    """CDF of the squared norm of a block with k_s active unit-power taps.

    Exact mode is the regularized lower incomplete gamma P(k_s, xi/sigma_h2);
    the small-threshold approximation keeps the leading density term
    xi^k_s / (k_s Gamma(k_s) sigma_h2^k_s).
    """
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    mode = CdfMode(mode)
    if mode == CdfMode.EXACT:
        return float(gammainc(k_s, xi / sigma_h2))
    if xi == 0.0:
        return 0.0
    return _exp(k_s * math.log(xi / sigma_h2) - math.log(k_s) - gammaln(k_s))


def noisy_channel_norm_cdf(
    xi: float, k_s: int, sigma_h2: float, sigma2: float, m: int, n: int
) -> float:
    """CDF of the on-support squared norm of channel plus signal-domain noise.

    On the support, channel taps and the damped noise add as independent
    circular Gaussians with total per-entry variance sigma_h2 + sigma2*m/n^2.
    """
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    var = sigma_h2 + sigma2 * m / n**2
    return float(gammainc(k_s, xi / var))


def rip_failure_bound(params: BoundParams) -> float:
    """Probability that the operator misses the hierarchical restricted
    isometry: prefactor * (e s / k_s)^k_s * (e u / k_u)^k_u * exp(-rate * m)."""
    if params.rip_prefactor == 0.0:
        return 0.0
    d = params.dims
    logv = (
        math.log(params.rip_prefactor)
        + d.k_s * (1.0 + math.log(d.s / d.k_s))
        + d.k_u * (1.0 + math.log(d.u / d.k_u))
        - params.rip_rate * d.m
    )
    return _exp(logv)


def false_alarm_bound(params: BoundParams) -> BoundReport:
    """Tail bound on declaring any inactive user active at threshold xi.

    Valid only when snr * n * xi / (tau^2 m) exceeds 1; outside that regime
    the bound is vacuous and the report is flagged.
    """
    d = params.dims
    arg = params.snr * d.n * params.xi / (params.tau**2 * d.m)
    if arg <= 1.0:
        return BoundReport(terms={"false_alarm": 1.0}, flags={"in_regime": False})
    value = min(1.0, _exp(-((arg - 1.0) ** 2) * d.m / 2.0))
    return BoundReport(terms={"false_alarm": value}, flags={"in_regime": True})


def missed_detection_bound_recovery(params: BoundParams) -> BoundReport:
    """Missed-detection bound routed through the full recovery guarantee.

    Three additive terms: the restricted-isometry failure, the probability
    that the block energy itself falls below 4*xi, and the high-SNR diversity
    term (4 tau^2)^k_s n^-k_s SNR^-k_s times the threshold miss constant.
    """
    d = params.dims
    rip = rip_failure_bound(params)
    threshold = channel_norm_cdf(4.0 * params.xi, d.k_s)
    log_div = (
        d.k_s * math.log(4.0 * params.tau**2)
        - d.k_s * math.log(d.n)
        - d.k_s * math.log(params.snr)
        + log_threshold_miss_constant(d.m, d.k_s)
    )
    return BoundReport(
        terms={"rip": rip, "threshold": threshold, "diversity": _exp(log_div)}
    )


def energy_concentration_failure_bound(params: BoundParams) -> BoundReport:
    """Probability that blockwise energies of the linear estimation step
    deviate by more than epsilon.

    Three terms: a window term decaying exponentially in m, an SNR term with
    slope -k_u*k_s, and a sparsity term 4*exp(-k_u*k_s/2).  The stated regime
    is k_u >= 8 and k_s >= 3; outside it the report is flagged.
    """
    d = params.dims
    denom = params.conc_scale * 4.0 * d.k_u**4 * d.k_s**5
    log_window = (
        math.log(32.0 * d.u)
        + d.k_s * (1.0 + math.log(d.s / d.k_s))
        + math.log(d.k_s)
        - params.epsilon**2 * d.m / denom
    )
    log_snr_term = (
        math.log(32.0 * d.k_s / math.sqrt(2.0))
        - d.k_u * d.k_s * math.log(params.snr)
        - 2.0 * d.k_s * math.log(d.n)
        + d.k_u * d.k_s * (
            math.log(d.k_u**4 * d.k_s**5) - (1.0 - 3.0 / d.k_u) * math.log(d.n)
        )
    )
    sparsity = 4.0 * math.exp(-d.k_u * d.k_s / 2.0)
    return BoundReport(
        terms={
            "window": _exp(log_window),
            "snr": _exp(log_snr_term),
            "sparsity": sparsity,
        },
        flags={"applicable": d.k_u >= 8 and d.k_s >= 3},
    )


def missed_detection_bound_concentration(params: BoundParams) -> BoundReport:
    """Missed-detection bound routed through the energy-concentration step.

    Terms: the concentration failure probability, 2 s (u - k_u) times the
    noisy-block-norm CDF at xi + 4 epsilon, and a diversity term with the
    same -k_s SNR slope but no tau dependence.  Both user-count terms carry
    the factor (u - k_u) and vanish when every user is active.
    """
    d = params.dims
    conc = energy_concentration_failure_bound(params)
    spare = d.u - d.k_u
    if spare > 0:
        threshold = (
            2.0
            * d.s
            * spare
            * noisy_channel_norm_cdf(
                params.xi + 4.0 * params.epsilon, d.k_s, 1.0, params.sigma2, d.m, d.n
            )
        )
        log_div = (
            -d.k_s * math.log(d.n)
            - d.k_s * math.log(params.snr)
            - d.k_s * math.log(d.us / (2.0 * d.k_s * d.m))
            + math.log(d.s)
            + math.log(spare)
        )
        diversity = _exp(log_div)
    else:
        threshold = 0.0
        diversity = 0.0
    return BoundReport(
        terms={"concentration": conc.total, "threshold": threshold, "diversity": diversity},
        flags=conc.flags,
    )


def correlator_missed_detection_log_bound(
    s: int, u: int, k_s: int, n: int, snr: float
) -> float:
    """log of the correlator baseline's missed-detection bound at zero
    threshold: -k_s * log(1 + n * snr) + log(miss constant)."""
    b0 = correlator_miss_constant(s, u, k_s)
    return -k_s * math.log1p(n * snr) + math.log(b0)


def noise_max_exceedance_approx(
    u: int, m: int, k_s: int, sigma2: float, sigma_h2_list
) -> float:
    """Leading-order probability that the largest of u noise energies
    (m complex dimensions each, per-entry variance sigma2) exceeds the energy
    of a signal with k_s taps of the given powers."""
    powers = np.asarray(sigma_h2_list, dtype=float)
    if powers.shape != (k_s,):
        raise ValueError(f"sigma_h2_list must have length k_s = {k_s}")
    if np.any(powers <= 0) or sigma2 <= 0:
        raise ValueError("variances must be positive")
    logv = (
        math.log(u)
        + k_s * math.log(sigma2)
        + log_threshold_miss_constant(m, k_s)
        - float(np.sum(np.log(powers)))
    )
    return _exp(logv)


def rate_lower_bound(
    k_s: int,
    snr: float,
    tau: float,
    m: int,
    n: int,
    sigma2: float,
    units: str = "nats",
) -> float:
    """Achievable average subcarrier rate on the unused window:
    log(1 + k_s snr) - log(1 + tau^2 m sigma2 / n).

    The channel-power expectation is degenerate under the unit-power
    convention, so the first term is deterministic.
    """
    if units not in ("nats", "bits"):
        raise ValueError("units must be 'nats' or 'bits'")
    value = math.log1p(k_s * snr) - math.log1p(tau**2 * m * sigma2 / n)
    return value / math.log(2.0) if units == "bits" else value


def block_error_bound(pmd: float, pfa: float, k_u: int) -> float:
    """Per-user block error bound min(1, k_u * pmd + pfa)."""
    if not (0 <= pmd <= 1 and 0 <= pfa <= 1):
        raise ValueError("pmd and pfa must lie in [0, 1]")
    return min(1.0, k_u * pmd + pfa)


def sufficient_measurements(
    dims: ProblemDims, mode: str = "recovery", constant: float = 1.0
) -> int:
    """Measurement-count heuristics (natural logs, ceiling of constant times
    the expression).

    recovery:       k_u log(u/k_u) + k_u k_s log(s/k_s)
    concentration:  k_u^4 k_s^6 log(n)
    """
    if mode == "recovery":
        expr = dims.k_u * math.log(dims.u / dims.k_u) + dims.k_u * dims.k_s * math.log(
            dims.s / dims.k_s
        )
    elif mode == "concentration":
        expr = dims.k_u**4 * dims.k_s**6 * math.log(dims.n)
    else:
        raise ValueError("mode must be 'recovery' or 'concentration'")
    return math.ceil(constant * expr)
