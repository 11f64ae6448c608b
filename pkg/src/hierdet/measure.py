"""Flat-spectrum signatures and the subsampled-Fourier measurement operator.

The base signature p0 has constant magnitude sqrt(n/m) on a control window B
of m subcarriers and is zero elsewhere; user i transmits the (i*s)-fold cyclic
shift of p0.  Compressing the received word onto B and rescaling yields the
linear model y = A h + z, where A = diag(p0_hat restricted to B) . W with W
the unitary DFT.  Every entry of A has magnitude 1/sqrt(m), so A preserves
energy on average over the random window.

Noise enters in either of two equivalent forms: a length-m measurement-domain
vector z with per-entry variance sigma^2/n, or a length-n signal-domain vector
z' with per-entry variance sigma^2*m/n^2 applied before A.  Both carry the
same total energy m*sigma^2/n and A z' is distributed as z.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import HierVector, ProblemDims

__all__ = [
    "SignatureSet",
    "FourierMeasurement",
    "NoiseModel",
    "NoiseSpec",
    "make_control_window",
    "make_signature",
    "make_measurement",
    "measurement_from_signature",
    "apply_measurement",
    "apply_adjoint",
    "sample_noise",
    "correlate_all_shifts",
    "superimpose_signatures",
    "embed",
]


@dataclass(frozen=True)
class SignatureSet:
    """Base sequence p0 plus the shift stride assigning signatures to users.

    p0 is the length-n time-domain sequence; user i uses its (i * shift_stride)
    cyclic shift.  row_set and phases record the spectrum structure so the
    measurement operator can be derived without re-transforming.
    """

    p0: np.ndarray
    row_set: np.ndarray
    phases: np.ndarray
    shift_stride: int

    @property
    def n(self) -> int:
        return self.p0.shape[0]


@dataclass(frozen=True)
class FourierMeasurement:
    """Row-subsampled, phase-decorated unitary DFT, scaled by sqrt(n/m).

    (A x)_k = phases[k] * sqrt(n/m) * (W x)[row_set[k]], so every matrix entry
    has magnitude 1/sqrt(m).
    """

    n: int
    row_set: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.row_set)
        if rows.ndim != 1 or np.unique(rows).size != rows.size:
            raise ValueError("row_set must be a 1-d array of distinct indices")
        if rows.size and (rows.min() < 0 or rows.max() >= self.n):
            raise ValueError("row_set indices must lie in [0, n)")
        if self.phases.shape != rows.shape:
            raise ValueError("phases must have one entry per retained row")
        if not np.allclose(np.abs(self.phases), 1.0, atol=1e-12):
            raise ValueError("phases must have unit modulus")

    @property
    def m(self) -> int:
        return self.row_set.shape[0]

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.n / self.m))


class NoiseModel(str, Enum):
    MEASUREMENT_DOMAIN = "measurement"
    SIGNAL_DOMAIN = "signal"


@dataclass(frozen=True)
class NoiseSpec:
    """Noise variance sigma^2 (SNR = 1/sigma^2) and where the noise enters."""

    sigma2: float
    model: NoiseModel = NoiseModel.MEASUREMENT_DOMAIN

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def snr(self) -> float:
        return 1.0 / self.sigma2


def make_control_window(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m distinct subcarrier indices uniformly without replacement."""
    if not 1 <= m <= n:
        raise ValueError(f"m must satisfy 1 <= m <= n = {n}, got {m}")
    return rng.choice(n, size=m, replace=False)


def _unit_phases(m: int, rng: np.random.Generator | None, randomize: bool) -> np.ndarray:
    if randomize:
        if rng is None:
            raise ValueError("rng required when randomize_phases is on")
        return np.exp(2j * np.pi * rng.random(m))
    return np.ones(m, dtype=complex)


def make_signature(
    B: np.ndarray,
    n: int,
    m: int,
    rng: np.random.Generator | None = None,
    *,
    randomize_phases: bool = True,
    shift_stride: int = 1,
) -> SignatureSet:
    """Build p0 with magnitude sqrt(n/m) on B (random phases) and 0 off B."""
    B = np.asarray(B)
    if B.shape != (m,):
        raise ValueError(f"window must contain m = {m} indices, got shape {B.shape}")
    phases = _unit_phases(m, rng, randomize_phases)
    spectrum = np.zeros(n, dtype=complex)
    spectrum[B] = np.sqrt(n / m) * phases
    p0 = np.fft.ifft(spectrum, norm="ortho")
    return SignatureSet(p0=p0, row_set=B.copy(), phases=phases, shift_stride=shift_stride)


def measurement_from_signature(sig: SignatureSet) -> FourierMeasurement:
    """Measurement operator matched to a signature set (same window, phases)."""
    return FourierMeasurement(n=sig.n, row_set=sig.row_set, phases=sig.phases)


def make_measurement(
    B: np.ndarray,
    n: int,
    rng: np.random.Generator | None = None,
    *,
    randomize_phases: bool = True,
) -> FourierMeasurement:
    """Standalone operator constructor for tests and direct library use."""
    B = np.asarray(B)
    phases = _unit_phases(B.shape[0], rng, randomize_phases)
    return FourierMeasurement(n=n, row_set=B.copy(), phases=phases)


def embed(x: HierVector, A_or_n) -> np.ndarray:
    """Zero-pad a length-u*s hierarchical vector to the ambient length n."""
    n = A_or_n.n if hasattr(A_or_n, "n") else int(A_or_n)
    x = np.asarray(x)
    if x.shape[0] == n:
        return x
    out = np.zeros(n, dtype=complex)
    out[: x.shape[0]] = x
    return out


def apply_measurement(A: FourierMeasurement, x: np.ndarray) -> np.ndarray:
    """Compute A x via one full FFT, row selection and scaling."""
    x = np.asarray(x)
    if x.shape != (A.n,):
        raise ValueError(f"expected length-{A.n} vector, got shape {x.shape}")
    spectrum = np.fft.fft(x, norm="ortho")
    return A.phases * (A.scale * spectrum[A.row_set])


def apply_adjoint(A: FourierMeasurement, y: np.ndarray) -> np.ndarray:
    """Compute A^H y: scatter into the retained rows, inverse unitary DFT."""
    y = np.asarray(y)
    if y.shape != (A.m,):
        raise ValueError(f"expected length-{A.m} vector, got shape {y.shape}")
    spectrum = np.zeros(A.n, dtype=complex)
    spectrum[A.row_set] = np.conj(A.phases) * (A.scale * y)
    return np.fft.ifft(spectrum, norm="ortho")


def sample_noise(spec: NoiseSpec, dims: ProblemDims, rng: np.random.Generator) -> np.ndarray:
    """Draw circular complex Gaussian noise under the selected model.

    Measurement domain: length m, per-entry variance sigma^2/n.
    Signal domain: length n, per-entry variance sigma^2*m/n^2.
    """
    if spec.model == NoiseModel.MEASUREMENT_DOMAIN:
        size, var = dims.m, spec.sigma2 / dims.n
    else:
        size, var = dims.n, spec.sigma2 * dims.m / dims.n**2
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def correlate_all_shifts(y: np.ndarray, sig: SignatureSet, dims: ProblemDims) -> HierVector:
    """Inner products of y against every user's shifted signature.

    Entry (i, j) equals <y, shift(p0, i*s + j)>, computed for all u*s shifts
    at once through one FFT-based circular correlation.
    """
    y = np.asarray(y)
    n = sig.n
    if y.shape != (n,):
        raise ValueError(f"expected length-{n} vector, got shape {y.shape}")
    spectrum = np.fft.fft(y, norm="ortho")
    p0_hat = np.fft.fft(sig.p0, norm="ortho")
    corr = np.fft.ifft(np.sqrt(n) * np.conj(p0_hat) * spectrum, norm="ortho")
    return corr[: dims.us]


def superimpose_signatures(h: HierVector, sig: SignatureSet, dims: ProblemDims) -> np.ndarray:
    """Noise-free received word: the channel-weighted sum of shifted signatures.

    Equals the circulant matrix of p0 (columns = all cyclic shifts) applied to
    the zero-padded coefficient vector.
    """
    h_full = embed(h, sig.n)
    p0_hat = np.fft.fft(sig.p0, norm="ortho")
    return np.fft.ifft(np.sqrt(sig.n) * p0_hat * np.fft.fft(h_full, norm="ortho"), norm="ortho")
