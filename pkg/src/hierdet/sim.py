"""Random instance generation, single trials and Monte Carlo aggregation.

Trials are embarrassingly parallel.  Every trial derives its own generator
from (master seed, cell index, trial index), and per-trial tallies are reduced
in trial order, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import HierSupport, HierVector, ProblemDims
from .detect import (
    DetectorConfig,
    block_correlator,
    detect_from_energies,
    hihtp,
    hiiht,
    ideal_correlator_energies,
)
from .measure import (
    NoiseModel,
    NoiseSpec,
    apply_measurement,
    embed,
    make_control_window,
    make_signature,
    measurement_from_signature,
    sample_noise,
    superimpose_signatures,
)

__all__ = [
    "ChannelPrior",
    "TrialConfig",
    "TrialRecord",
    "MetricsSummary",
    "SlopeFit",
    "sample_channel",
    "run_trial",
    "monte_carlo",
    "sweep",
    "diversity_slope",
    "calibrate_tau",
    "wilson_interval",
    "trial_rng",
]

DETECTORS = ("hihtp", "hiiht", "correlator_signature", "correlator_ideal")

# Reserved cell tag so calibration draws never collide with trial streams.
_TAU_CELL = 0x7A55


@dataclass(frozen=True)
class ChannelPrior:
    """Sparse channel prior: uniformly random hierarchical support with iid
    circular complex Gaussian coefficients of power sigma_h2.

    With exact_sparsity every active block carries exactly k_s paths;
    otherwise the per-block path count is uniform on {1..k_s}.  power_profile
    optionally assigns one power per path position instead of sigma_h2.
    """

    dims: ProblemDims
    sigma_h2: float = 1.0
    exact_sparsity: bool = True
    power_profile: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.sigma_h2 > 0:
            raise ValueError("sigma_h2 must be positive")
        if self.power_profile is not None:
            if len(self.power_profile) != self.dims.k_s:
                raise ValueError("power_profile must have one entry per path (k_s)")
            if any(p <= 0 for p in self.power_profile):
                raise ValueError("power_profile entries must be positive")


@dataclass(frozen=True)
class TrialConfig:
    """Everything one trial needs: dimensions, detector, noise and prior."""

    dims: ProblemDims
    noise: NoiseSpec
    detector: str = "hiiht"
    prior: ChannelPrior | None = None
    detector_cfg: DetectorConfig | None = None
    randomize_phases: bool = True

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}; choose from {DETECTORS}")
        if self.prior is None:
            object.__setattr__(self, "prior", ChannelPrior(dims=self.dims))
        if self.detector_cfg is None:
            object.__setattr__(self, "detector_cfg", DetectorConfig())

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.noise.snr)


@dataclass
class TrialRecord:
    true_active: tuple[int, ...]
    detected_active: tuple[int, ...]
    mse_per_user: np.ndarray
    iterations: int
    residual: float
    ls_converged: bool = True


@dataclass
class MetricsSummary:
    """Aggregated detection metrics with Wilson 95% intervals."""

    pmd: float
    pmd_lo: float
    pmd_hi: float
    pfa: float
    pfa_lo: float
    pfa_hi: float
    pfa_user: float
    pbe: float
    pbe_lo: float
    pbe_hi: float
    mse_mean: float
    trials: int
    seed: int
    config: TrialConfig
    bounds: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    n_points: int


def trial_rng(seed: int, cell: int, trial: int) -> np.random.Generator:
    """Independent per-trial stream from a counter-based split of the seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(cell, trial)))


def sample_channel(prior: ChannelPrior, rng: np.random.Generator) -> tuple[HierVector, HierSupport]:
    """Draw a hierarchically sparse channel from the prior."""
    d = prior.dims
    blocks = np.sort(rng.choice(d.u, size=d.k_u, replace=False))
    h = np.zeros(d.us, dtype=complex)
    per_block: dict[int, tuple[int, ...]] = {}
    for b in blocks:
        count = d.k_s if prior.exact_sparsity else int(rng.integers(1, d.k_s + 1))
        offsets = np.sort(rng.choice(d.s, size=count, replace=False))
        if prior.power_profile is not None:
            powers = np.asarray(prior.power_profile[:count])
        else:
            powers = np.full(count, prior.sigma_h2)
        scale = np.sqrt(powers / 2.0)
        vals = scale * (rng.standard_normal(count) + 1j * rng.standard_normal(count))
        h[int(b) * d.s + offsets] = vals
        per_block[int(b)] = tuple(int(j) for j in offsets)
    support = HierSupport(blocks=tuple(int(b) for b in blocks), per_block=per_block)
    return h, support


def _frequency_mse(h_hat: HierVector, h: HierVector, blocks: tuple[int, ...], dims: ProblemDims) -> np.ndarray:
    """Per-user ||sqrt(n) W d||^2 with d the zero-padded block difference."""
    out = np.empty(len(blocks))
    for k, b in enumerate(blocks):
        diff = np.zeros(dims.n, dtype=complex)
        sl = slice(b * dims.s, (b + 1) * dims.s)
        diff[: dims.s] = h_hat[sl] - h[sl]
        spec = np.sqrt(dims.n) * np.fft.fft(diff, norm="ortho")
        out[k] = float(np.real(np.vdot(spec, spec)))
    return out


def run_trial(config: TrialConfig, rng: np.random.Generator) -> TrialRecord:
    """Sample one instance, run the configured detector, record the outcome.

    Draw order is fixed (channel, window, signature phases, noise) so a trial
    is fully determined by its generator state.
    """
    d = config.dims
    cfg = config.detector_cfg
    h, support = sample_channel(config.prior, rng)
    true_active = support.blocks

    if config.detector == "correlator_ideal":
        energies = ideal_correlator_energies(h, d, config.noise.sigma2, rng)
        detected = detect_from_energies(energies, cfg.xi, d.k_u)
        return TrialRecord(
            true_active=true_active,
            detected_active=tuple(sorted(detected)),
            mse_per_user=np.full(len(true_active), np.nan),
            iterations=0,
            residual=float("nan"),
        )

    B = make_control_window(d.n, d.m, rng)
    sig = make_signature(
        B, d.n, d.m, rng, randomize_phases=config.randomize_phases, shift_stride=d.s
    )

    if config.detector == "correlator_signature":
        # Full-window observation: every one of the n samples is available.
        e_scale = np.sqrt(config.noise.sigma2 / 2.0)
        e = e_scale * (rng.standard_normal(d.n) + 1j * rng.standard_normal(d.n))
        y_full = superimpose_signatures(h, sig, d) + e
        detected = block_correlator(y_full, sig, d, cfg.xi, "signature")
        return TrialRecord(
            true_active=true_active,
            detected_active=tuple(sorted(detected)),
            mse_per_user=np.full(len(true_active), np.nan),
            iterations=0,
            residual=float("nan"),
        )

    A = measurement_from_signature(sig)
    z = sample_noise(config.noise, d, rng)
    if config.noise.model == NoiseModel.MEASUREMENT_DOMAIN:
        y = apply_measurement(A, embed(h, A)) + z
    else:
        y = apply_measurement(A, embed(h, A) + z)

    detector = hihtp if config.detector == "hihtp" else hiiht
    outcome = detector(A, y, d, cfg)
    return TrialRecord(
        true_active=true_active,
        detected_active=tuple(sorted(outcome.active_users)),
        mse_per_user=_frequency_mse(outcome.h_hat, h, true_active, d),
        iterations=outcome.iterations,
        residual=outcome.residual_history[-1] if outcome.residual_history else float("nan"),
        ls_converged=outcome.ls_converged,
    )


def _run_chunk(config: TrialConfig, seed: int, cell: int, start: int, stop: int):
    """Per-trial tallies for trials [start, stop); reduced deterministically."""
    count = stop - start
    missed = np.zeros(count, dtype=np.int64)
    false_alarm = np.zeros(count, dtype=np.int64)
    errors = np.zeros(count, dtype=np.int64)
    mse_sum = np.zeros(count)
    mse_cnt = np.zeros(count, dtype=np.int64)
    for k in range(count):
        rec = run_trial(config, trial_rng(seed, cell, start + k))
        true_set = set(rec.true_active)
        det_set = set(rec.detected_active)
        missed[k] = len(true_set - det_set)
        false_alarm[k] = len(det_set - true_set)
        errors[k] = missed[k] + false_alarm[k]
        hits = [i for i, b in enumerate(rec.true_active) if b in det_set]
        if hits and np.all(np.isfinite(rec.mse_per_user[hits])):
            mse_sum[k] = float(rec.mse_per_user[hits].sum())
            mse_cnt[k] = len(hits)
    return start, missed, false_alarm, errors, mse_sum, mse_cnt


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float, float]:
    """Wilson 95% score interval; returns (estimate, lo, hi)."""
    if n <= 0:
        return 0.0, 0.0, 0.0
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return p, max(0.0, center - half), min(1.0, center + half)


def _chunk_ranges(trials: int, workers: int) -> list[tuple[int, int]]:
    per = max(1, math.ceil(trials / (workers * 4)))
    return [(a, min(a + per, trials)) for a in range(0, trials, per)]


def monte_carlo(
    config: TrialConfig,
    trials: int,
    seed: int,
    workers: int = 1,
    cell_index: int = 0,
) -> MetricsSummary:
    """Run independent trials and aggregate user-wise detection metrics.

    pmd counts missed active-user events over all trials; pfa is the fraction
    of trials in which any inactive user was declared active (a per-user rate
    is kept as pfa_user); pbe counts per-user classification errors.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    d = config.dims
    missed = np.zeros(trials, dtype=np.int64)
    false_alarm = np.zeros(trials, dtype=np.int64)
    errors = np.zeros(trials, dtype=np.int64)
    mse_sum = np.zeros(trials)
    mse_cnt = np.zeros(trials, dtype=np.int64)

    if workers <= 1:
        parts = [_run_chunk(config, seed, cell_index, 0, trials)]
    else:
        ranges = _chunk_ranges(trials, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    _run_chunk,
                    [config] * len(ranges),
                    [seed] * len(ranges),
                    [cell_index] * len(ranges),
                    [a for a, _ in ranges],
                    [b for _, b in ranges],
                )
            )
    for start, mi, fa, er, ms, mc in parts:
        sl = slice(start, start + mi.size)
        missed[sl], false_alarm[sl], errors[sl] = mi, fa, er
        mse_sum[sl], mse_cnt[sl] = ms, mc

    active_events = trials * d.k_u
    pmd, pmd_lo, pmd_hi = wilson_interval(int(missed.sum()), active_events)
    pfa, pfa_lo, pfa_hi = wilson_interval(int(np.count_nonzero(false_alarm)), trials)
    inactive_events = trials * (d.u - d.k_u)
    pfa_user = float(false_alarm.sum() / inactive_events) if inactive_events else 0.0
    pbe, pbe_lo, pbe_hi = wilson_interval(int(errors.sum()), trials * d.u)
    total_cnt = int(mse_cnt.sum())
    mse_mean = float(mse_sum.sum() / total_cnt) if total_cnt else float("nan")

    return MetricsSummary(
        pmd=pmd, pmd_lo=pmd_lo, pmd_hi=pmd_hi,
        pfa=pfa, pfa_lo=pfa_lo, pfa_hi=pfa_hi, pfa_user=pfa_user,
        pbe=pbe, pbe_lo=pbe_lo, pbe_hi=pbe_hi,
        mse_mean=mse_mean, trials=trials, seed=seed, config=config,
    )


def _apply_cell(base: TrialConfig, assignment: dict) -> TrialConfig:
    """Rebuild a trial config with the grid assignment applied."""
    d = base.dims
    dim_fields = {k: v for k, v in assignment.items() if k in ("m", "u", "s", "k_u", "k_s")}
    if dim_fields:
        u = int(dim_fields.get("u", d.u))
        s = dim_fields.get("s", d.s if "u" not in dim_fields else None)
        s = int(s) if s is not None else d.n // u  # tie s to n/u unless pinned
        d = ProblemDims(
            n=d.n, u=u, s=s,
            k_u=int(dim_fields.get("k_u", d.k_u)),
            k_s=int(dim_fields.get("k_s", d.k_s)),
            m=int(dim_fields.get("m", d.m)),
        )
    noise = base.noise
    if "snr_db" in assignment:
        noise = NoiseSpec(sigma2=10 ** (-assignment["snr_db"] / 10.0), model=base.noise.model)
    prior = replace(base.prior, dims=d)
    return replace(base, dims=d, noise=noise, prior=prior)


def sweep(
    base: TrialConfig,
    grid: dict[str, list],
    trials: int,
    seed: int,
    mode: str = "cartesian",
    workers: int = 1,
    bound_kinds: tuple[str, ...] = (),
    bound_kwargs: dict | None = None,
) -> list[MetricsSummary]:
    """Monte Carlo over a parameter grid, one independent cell per point.

    mode 'cartesian' crosses every grid list; 'zip' pairs them positionally.
    Cell seeds derive from (seed, cell index) so reruns are reproducible for
    any worker count.  bound_kinds optionally attaches analytic curves per
    cell ('recovery', 'concentration', 'correlator'); tau is calibrated per
    cell unless supplied in bound_kwargs.
    """
    keys = [k for k in ("snr_db", "m", "u", "s", "k_u", "k_s") if k in grid]
    if set(grid) - set(keys):
        raise ValueError(f"unknown grid keys {sorted(set(grid) - set(keys))}")
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise ValueError("sweep grid must contain at least one non-empty axis")

    if mode == "cartesian":
        from itertools import product

        cells = [dict(zip(keys, combo)) for combo in product(*(grid[k] for k in keys))]
    elif mode == "zip":
        lengths = {len(grid[k]) for k in keys}
        if len(lengths) != 1:
            raise ValueError("zip mode requires equal-length grid lists")
        cells = [{k: grid[k][i] for k in keys} for i in range(lengths.pop())]
    else:
        raise ValueError("mode must be 'cartesian' or 'zip'")

    results = []
    for idx, assignment in enumerate(cells):
        config = _apply_cell(base, assignment)
        summary = monte_carlo(config, trials, seed, workers=workers, cell_index=idx)
        if bound_kinds:
            summary.bounds = evaluate_bounds(
                config, bound_kinds, seed=seed, workers=workers, **(bound_kwargs or {})
            )
        results.append(summary)
    return results


def evaluate_bounds(
    config: TrialConfig,
    kinds: tuple[str, ...],
    seed: int = 0,
    workers: int = 1,
    tau: float | None = None,
    tau_trials: int = 1000,
    xi: float | None = None,
    epsilon: float = 0.05,
    rip_prefactor: float = 1.0,
    rip_rate: float = 0.1,
    conc_scale: float = 1.0,
) -> dict[str, float]:
    """Analytic-bound overlay for one configuration (clipped at 1)."""
    from . import bounds as bd

    out: dict[str, float] = {}
    need_tau = any(k in ("recovery", "concentration") for k in kinds)
    if need_tau and tau is None:
        tau = calibrate_tau(config, trials=tau_trials, seed=seed, workers=workers)
    params = None
    if need_tau:
        params = bd.BoundParams(
            dims=config.dims,
            snr=config.noise.snr,
            tau=tau,
            xi=config.detector_cfg.xi if xi is None else xi,
            epsilon=epsilon,
            rip_prefactor=rip_prefactor,
            rip_rate=rip_rate,
            conc_scale=conc_scale,
        )
    for kind in kinds:
        if kind == "recovery":
            out["bound_recovery"] = bd.missed_detection_bound_recovery(params).clipped
        elif kind == "concentration":
            out["bound_concentration"] = bd.missed_detection_bound_concentration(params).clipped
        elif kind == "correlator":
            d = config.dims
            logv = bd.correlator_missed_detection_log_bound(d.s, d.u, d.k_s, d.n, config.noise.snr)
            out["bound_correlator"] = math.exp(min(logv, 0.0))
        else:
            raise ValueError(f"unknown bound kind {kind!r}")
    if need_tau:
        out["tau"] = tau
    return out


def _tau_chunk(config: TrialConfig, seed: int, start: int, stop: int) -> np.ndarray:
    ratios = np.empty(stop - start)
    d = config.dims
    detector = hihtp if config.detector == "hihtp" else hiiht
    for k in range(stop - start):
        rng = trial_rng(seed, _TAU_CELL, start + k)
        h, _ = sample_channel(config.prior, rng)
        B = make_control_window(d.n, d.m, rng)
        sig = make_signature(
            B, d.n, d.m, rng, randomize_phases=config.randomize_phases, shift_stride=d.s
        )
        A = measurement_from_signature(sig)
        z = sample_noise(config.noise, d, rng)
        if config.noise.model == NoiseModel.MEASUREMENT_DOMAIN:
            y = apply_measurement(A, embed(h, A)) + z
        else:
            y = apply_measurement(A, embed(h, A) + z)
        outcome = detector(A, y, d, config.detector_cfg)
        noise_norm = float(np.linalg.norm(y - apply_measurement(A, embed(h, A))))
        ratios[k] = float(np.linalg.norm(outcome.h_hat - h)) / noise_norm
    return ratios


def calibrate_tau(
    config: TrialConfig, trials: int = 1000, seed: int = 0, workers: int = 1
) -> float:
    """Empirical noise enhancement: 99th percentile of the recovery-error to
    noise-norm ratio over calibration trials (floored at 1)."""
    det_config = config
    if config.detector not in ("hihtp", "hiiht"):
        det_config = replace(config, detector="hiiht")
    if workers <= 1:
        ratios = _tau_chunk(det_config, seed, 0, trials)
    else:
        ranges = _chunk_ranges(trials, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    _tau_chunk,
                    [det_config] * len(ranges),
                    [seed] * len(ranges),
                    [a for a, _ in ranges],
                    [b for _, b in ranges],
                )
            )
        ratios = np.concatenate(parts)
    return max(1.0, float(np.percentile(ratios, 99.0)))


def diversity_slope(
    summaries: list[MetricsSummary],
    pmd_window: tuple[float, float] = (1e-4, 1e-1),
) -> SlopeFit:
    """Least-squares slope of log10(pmd) against log10(snr), restricted to
    grid points whose estimate falls inside the window."""
    lo, hi = pmd_window
    xs, ys = [], []
    for summary in summaries:
        if lo <= summary.pmd <= hi:
            xs.append(math.log10(summary.config.noise.snr))
            ys.append(math.log10(summary.pmd))
    if len(xs) < 3:
        raise ValueError(
            f"need at least 3 grid points with pmd inside [{lo}, {hi}], got {len(xs)}"
        )
    x = np.asarray(xs)
    y = np.asarray(ys)
    (slope, intercept), res = np.polyfit(x, y, 1), None
    fitted = slope * x + intercept
    dof = len(xs) - 2
    sigma2 = float(np.sum((y - fitted) ** 2) / dof) if dof else 0.0
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(sigma2 / sxx) if sxx else float("inf")
    return SlopeFit(slope=float(slope), stderr=stderr, n_points=len(xs))
