"""Hierarchical-sparse multiuser activity detection.

Library plus CLI: thresholding detectors (HiHTP, HiIHT) and the block
correlation baseline over subsampled-Fourier measurements, closed-form
performance bounds, and a reproducible Monte Carlo harness.
"""

from .core import (
    HierSupport,
    HierVector,
    ProblemDims,
    block_energies,
    block_threshold,
    hier_threshold,
    project_to_support,
)
from .measure import (
    FourierMeasurement,
    NoiseModel,
    NoiseSpec,
    SignatureSet,
    apply_adjoint,
    apply_measurement,
    correlate_all_shifts,
    make_control_window,
    make_measurement,
    make_signature,
    measurement_from_signature,
    sample_noise,
    superimpose_signatures,
)
from .detect import (
    CorrelatorMode,
    DetectionOutcome,
    DetectorConfig,
    StopRule,
    block_correlator,
    hihtp,
    hiiht,
    restricted_least_squares,
)
from .bounds import BoundParams, BoundReport
from .sim import (
    ChannelPrior,
    MetricsSummary,
    TrialConfig,
    TrialRecord,
    calibrate_tau,
    diversity_slope,
    monte_carlo,
    run_trial,
    sample_channel,
    sweep,
)

__version__ = "0.1.0"
