"""The five filter-bank families and the cepstral feature pipeline.

Triangular banks (linear- and Mel-spaced) place boundary frequencies
equally on their scale; the gammatone bank places fourth-order magnitude
responses on an ERB-derived grid. Each bank also has an inverse variant
obtained by flipping both the filter order and every filter's frequency
axis, which moves the fine resolution from low to high frequencies.

Boundary frequencies are kept in continuous bin units ((N / F_s) * f_hz)
and the triangular equations evaluated at integer bins without rounding
the boundaries first, so narrow low-frequency filters never collapse to
zero width.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .audio_io import Block, Condition
from .dsp import FRAMES_PER_BLOCK, SPECTRUM_BINS, dct2, frame_block, power_spectra
from .errors import BadSpec, ShapeMismatch

LINEAR = "linear"
MEL = "mel"
INVERSE_MEL = "inverse_mel"
GAMMATONE = "gammatone"
INVERSE_GAMMATONE = "inverse_gammatone"

FAMILIES = (LINEAR, MEL, INVERSE_MEL, GAMMATONE, INVERSE_GAMMATONE)

FEATURE_TO_FAMILY = {
    "LFCC": LINEAR,
    "MFCC": MEL,
    "IMFCC": INVERSE_MEL,
    "GFCC": GAMMATONE,
    "IGFCC": INVERSE_GAMMATONE,
}
FAMILY_TO_FEATURE = {v: k for k, v in FEATURE_TO_FAMILY.items()}
FEATURE_NAMES = tuple(sorted(FEATURE_TO_FAMILY))  # GFCC, IGFCC, IMFCC, LFCC, MFCC

_INVERSE_OF = {
    LINEAR: LINEAR,
    MEL: INVERSE_MEL,
    INVERSE_MEL: MEL,
    GAMMATONE: INVERSE_GAMMATONE,
    INVERSE_GAMMATONE: GAMMATONE,
}

NUM_FILTERS = 20
NUM_CEPS = 20
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FilterBankSpec:
    family: str
    num_filters: int = NUM_FILTERS
    fft_bins: int = SPECTRUM_BINS
    sample_rate: int = 16000
    f_low: float = 0.0
    f_high: float = 8000.0
    gammatone_order: int = 4
    gammatone_c: float = 228.83
    frame_length: int = 512

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise BadSpec(f"unknown family {self.family!r}")
        if not 0 <= self.f_low < self.f_high <= self.sample_rate / 2:
            raise BadSpec(
                f"need 0 <= f_low < f_high <= {self.sample_rate / 2}, "
                f"got [{self.f_low}, {self.f_high}]"
            )
        if self.num_filters < 1:
            raise BadSpec("num_filters must be >= 1")
        if self.gammatone_order < 1:
            raise BadSpec("gammatone_order must be >= 1")

    def hz_to_bin(self, f_hz):
        """Continuous bin coordinate of a frequency in Hz."""
        return self.frame_length / self.sample_rate * np.asarray(f_hz, dtype=np.float64)

    def bin_freqs_hz(self) -> np.ndarray:
        """Center frequency in Hz of every FFT bin."""
        return np.arange(self.fft_bins) * self.sample_rate / self.frame_length


@dataclass
class FilterBankMatrix:
    """M x K matrix of nonnegative filter gains over FFT bins."""

    gains: np.ndarray
    spec: FilterBankSpec

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.gains.shape != (self.spec.num_filters, self.spec.fft_bins):
            raise BadSpec(
                f"gains shape {self.gains.shape} does not match spec "
                f"({self.spec.num_filters}, {self.spec.fft_bins})"
            )


def mel_scale(f_hz):
    """Mel value of a frequency in Hz: 1125 * ln(1 + f/700)."""
    return 1125.0 * np.log1p(np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_inverse(m):
    """Frequency in Hz of a Mel value: 700 * (e^(m/1125) - 1)."""
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1125.0)


def erb(f_hz):
    """Equivalent rectangular bandwidth at a frequency in Hz."""
    return np.asarray(f_hz, dtype=np.float64) / 9.26 + 24.7


def linear_boundaries(spec: FilterBankSpec) -> np.ndarray:
    """M+2 boundary points equally spaced in Hz, in continuous bin units."""
    m = np.arange(spec.num_filters + 2)
    hz = spec.f_low + m * (spec.f_high - spec.f_low) / (spec.num_filters + 1)
    return spec.hz_to_bin(hz)


def mel_boundaries(spec: FilterBankSpec) -> np.ndarray:
    """M+2 boundary points equally spaced on the Mel scale, in bin units."""
    m = np.arange(spec.num_filters + 2)
    lo, hi = mel_scale(spec.f_low), mel_scale(spec.f_high)
    hz = mel_inverse(lo + m * (hi - lo) / (spec.num_filters + 1))
    return spec.hz_to_bin(hz)


def gammatone_center_freqs(spec: FilterBankSpec) -> np.ndarray:
    """Center frequencies in Hz for filters g = 1..G on the ERB-derived grid.

    f_c(g) = -C + (f_high + C) * e^(g * log10((f_low+C)/(f_high+C)) / G).
    The base-10 log inside the base-e exponential is kept verbatim; it
    compresses the grid relative to the natural-log spacing that many
    gammatone banks use.
    """
    c = spec.gammatone_c
    g = np.arange(1, spec.num_filters + 1, dtype=np.float64)
    ratio = (spec.f_low + c) / (spec.f_high + c)
    return -c + (spec.f_high + c) * np.exp(g * np.log10(ratio) / spec.num_filters)


def _triangular_bank(boundaries: np.ndarray, spec: FilterBankSpec) -> np.ndarray:
    """Rows of triangular filters evaluated at integer bins.

    Filter m rises from b[m-1] to its peak at b[m] and falls to b[m+1]:
        rise(k) = 2 (k - b[m-1]) / ((b[m+1] - b[m-1]) (b[m]   - b[m-1]))
        fall(k) = 2 (b[m+1] - k) / ((b[m+1] - b[m-1]) (b[m+1] - b[m]))
    """
    k = np.arange(spec.fft_bins, dtype=np.float64)
    left = boundaries[:-2, None]
    center = boundaries[1:-1, None]
    right = boundaries[2:, None]
    rise = 2.0 * (k - left) / ((right - left) * (center - left))
    fall = 2.0 * (right - k) / ((right - left) * (right - center))
    return np.maximum(0.0, np.minimum(rise, fall))


def _warn_empty_rows(gains: np.ndarray, family: str) -> None:
    empty = np.flatnonzero(~gains.any(axis=1))
    if empty.size:
        warnings.warn(
            f"{family} bank: filters {empty.tolist()} cover no integer bin; "
            "their energies fall to the log floor",
            stacklevel=3,
        )


def linear_filterbank(spec: FilterBankSpec) -> FilterBankMatrix:
    """Triangular bank with boundaries equally spaced in Hz."""
    if spec.family != LINEAR:
        raise BadSpec(f"spec family is {spec.family!r}, expected {LINEAR!r}")
    gains = _triangular_bank(linear_boundaries(spec), spec)
    _warn_empty_rows(gains, LINEAR)
    return FilterBankMatrix(gains, spec)


def mel_filterbank(spec: FilterBankSpec) -> FilterBankMatrix:
    """Triangular bank with boundaries equally spaced on the Mel scale."""
    if spec.family != MEL:
        raise BadSpec(f"spec family is {spec.family!r}, expected {MEL!r}")
    gains = _triangular_bank(mel_boundaries(spec), spec)
    _warn_empty_rows(gains, MEL)
    return FilterBankMatrix(gains, spec)


def gammatone_filterbank(spec: FilterBankSpec) -> FilterBankMatrix:
    """Fourth-order gammatone magnitude responses, peak-normalized to 1.

    |H_g(f)| = (L-1)! / (ERB(f_c)^2 + (2 pi (f - f_c))^2)^(L/2), sampled at
    the bin frequencies. The response has no inherent scale, so each row
    is divided by its maximum; the log+DCT stage absorbs per-filter
    constants anyway, but a pinned convention keeps outputs reproducible.
    """
    if spec.family != GAMMATONE:
        raise BadSpec(f"spec family is {spec.family!r}, expected {GAMMATONE!r}")
    order = spec.gammatone_order
    fc = gammatone_center_freqs(spec)[:, None]
    f = spec.bin_freqs_hz()[None, :]
    mag_sq = erb(fc) ** 2 + (2.0 * np.pi * (f - fc)) ** 2
    gains = math.factorial(order - 1) / mag_sq ** (order / 2.0)
    gains /= gains.max(axis=1, keepdims=True)
    return FilterBankMatrix(gains, spec)


def invert_filterbank(fb: FilterBankMatrix) -> FilterBankMatrix:
    """Flip both the filter order and each filter's frequency axis.

    Resolution concentrated at low frequencies moves to high frequencies;
    applying the operation twice returns the original bank exactly.
    """
    flipped = fb.gains[::-1, ::-1].copy()
    spec = replace(fb.spec, family=_INVERSE_OF[fb.spec.family])
    return FilterBankMatrix(flipped, spec)


_BASE_BUILDERS = {
    LINEAR: linear_filterbank,
    MEL: mel_filterbank,
    GAMMATONE: gammatone_filterbank,
}


def make_filterbank(spec: FilterBankSpec) -> FilterBankMatrix:
    """Construct the bank named by spec.family (inverse families included)."""
    if spec.family in _BASE_BUILDERS:
        return _BASE_BUILDERS[spec.family](spec)
    base_family = _INVERSE_OF[spec.family]
    base = _BASE_BUILDERS[base_family](replace(spec, family=base_family))
    return invert_filterbank(base)


_BANK_CACHE: dict[str, FilterBankMatrix] = {}


def get_filterbank(feature_name: str) -> FilterBankMatrix:
    """Default 20-filter bank for one of the five feature names."""
    if feature_name not in FEATURE_TO_FAMILY:
        raise BadSpec(f"unknown feature {feature_name!r}; expected one of {FEATURE_NAMES}")
    if feature_name not in _BANK_CACHE:
        spec = FilterBankSpec(family=FEATURE_TO_FAMILY[feature_name])
        _BANK_CACHE[feature_name] = make_filterbank(spec)
    return _BANK_CACHE[feature_name]


@dataclass
class FeatureMatrix:
    """31 x 20 cepstral coefficients of one block, with provenance."""

    coeffs: np.ndarray
    feature_name: str
    source_id: str = ""
    block_index: int = -1
    label: str = ""
    condition: Condition = field(default_factory=Condition)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (FRAMES_PER_BLOCK, NUM_CEPS):
            raise ShapeMismatch(
                f"feature matrix must be ({FRAMES_PER_BLOCK}, {NUM_CEPS}), "
                f"got {self.coeffs.shape}"
            )
        if not np.isfinite(self.coeffs).all():
            raise ValueError("feature matrix contains non-finite entries")


def supervector(features: FeatureMatrix) -> np.ndarray:
    """Row-major flatten of a feature matrix, length 620."""
    return features.coeffs.reshape(-1).copy()


def cepstra(power: np.ndarray, fb: FilterBankMatrix, num_ceps: int = NUM_CEPS) -> FeatureMatrix:
    """Cepstral coefficients of a block's power spectra under one bank.

    Per frame: e = fb @ p, then c = dct2(log(e + 1e-10), num_ceps). The
    floor keeps the log finite for silent or unsupported filters.
    """
    p = np.asarray(power, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != fb.spec.fft_bins:
        raise ShapeMismatch(
            f"power spectra {p.shape} incompatible with bank K={fb.spec.fft_bins}"
        )
    if p.shape[0] != FRAMES_PER_BLOCK:
        raise ShapeMismatch(f"expected {FRAMES_PER_BLOCK} frames, got {p.shape[0]}")
    energies = p @ fb.gains.T
    coeffs = dct2(np.log(energies + LOG_FLOOR), num_ceps)
    return FeatureMatrix(coeffs, FAMILY_TO_FEATURE[fb.spec.family])


def extract_features(block: Block, feature_name: str, fb: FilterBankMatrix | None = None) -> FeatureMatrix:
    """Full feature pipeline for one block: frame, FFT, bank, log, DCT."""
    if fb is None:
        fb = get_filterbank(feature_name)
    elif FAMILY_TO_FEATURE[fb.spec.family] != feature_name:
        raise BadSpec(f"bank family {fb.spec.family!r} does not produce {feature_name}")
    power = power_spectra(frame_block(block.samples))
    features = cepstra(power, fb)
    features.source_id = block.source_id
    features.block_index = block.block_index
    features.label = block.label
    features.condition = block.condition
    return features
