"""Framing, windowing, power spectra and the DCT.

A 8192-sample block is cut into 31 frames of 32 ms with a 16 ms shift,
each frame Hamming-windowed, transformed with a 512-point FFT and reduced
to the one-sided power spectrum. The window choice and the 1/N power
normalization are pinned conventions: any fixed constant only shifts the
0th cepstral coefficient after the log.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

from .audio_io import BLOCK_SAMPLES
from .errors import BadCoeffCount

FRAME_LENGTH = 512  # 32 ms at 16 kHz
FRAME_SHIFT = 256  # 16 ms
FRAMES_PER_BLOCK = (BLOCK_SAMPLES - FRAME_LENGTH) // FRAME_SHIFT + 1  # 31
SPECTRUM_BINS = FRAME_LENGTH // 2 + 1  # 257

_WINDOW = np.hamming(FRAME_LENGTH)


def num_frames(n_samples: int) -> int:
    """Frames of length 512 with shift 256 that fit fully in n_samples."""
    if n_samples < FRAME_LENGTH:
        return 0
    return (n_samples - FRAME_LENGTH) // FRAME_SHIFT + 1


def frame_signal(samples) -> np.ndarray:
    """Slice a signal into raw (unwindowed) frames, shape (F, 512)."""
    x = np.asarray(samples, dtype=np.float64)
    n = num_frames(x.size)
    if n == 0:
        return np.empty((0, FRAME_LENGTH))
    view = np.lib.stride_tricks.sliding_window_view(x, FRAME_LENGTH)
    return view[:: FRAME_SHIFT][:n].copy()


def frame_block(samples) -> np.ndarray:
    """Windowed frames of one block, shape (31, 512)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.shape != (BLOCK_SAMPLES,):
        raise ValueError(f"expected a {BLOCK_SAMPLES}-sample block, got {x.shape}")
    return frame_signal(x) * _WINDOW


def power_spectrum(frame) -> np.ndarray:
    """One-sided power spectrum |DFT(frame)|^2 / N, shape (257,)."""
    x = np.asarray(frame, dtype=np.float64)
    if x.shape != (FRAME_LENGTH,):
        raise ValueError(f"expected a {FRAME_LENGTH}-sample frame, got {x.shape}")
    spec = np.fft.rfft(x)
    return (spec.real**2 + spec.imag**2) / FRAME_LENGTH


def power_spectra(frames) -> np.ndarray:
    """Power spectra of a frame stack, shape (F, 257)."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != FRAME_LENGTH:
        raise ValueError(f"expected (F, {FRAME_LENGTH}) frames, got {x.shape}")
    spec = np.fft.rfft(x, axis=-1)
    return (spec.real**2 + spec.imag**2) / FRAME_LENGTH


def dct2(values, num_coeffs: int) -> np.ndarray:
    """Orthonormal DCT-II along the last axis, truncated to num_coeffs.

    c_j = s_j * sum_m x_m cos(pi*j*(m+0.5)/M) with s_0 = sqrt(1/M) and
    s_j = sqrt(2/M) for j > 0.
    """
    x = np.asarray(values, dtype=np.float64)
    m = x.shape[-1]
    if not 1 <= num_coeffs <= m:
        raise BadCoeffCount(f"num_coeffs={num_coeffs} outside [1, {m}]")
    return scipy.fft.dct(x, type=2, norm="ortho", axis=-1)[..., :num_coeffs]


def idct2(coeffs) -> np.ndarray:
    """Inverse of dct2 at full order (orthonormal DCT-III)."""
    return scipy.fft.idct(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho", axis=-1)
