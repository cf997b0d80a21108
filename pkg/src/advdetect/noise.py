"""Additive noise mixing at speech-part SNR with leak-free noise splits.

The target SNR is defined against the clean signal's speech-part RMS (as
selected by a speech mask) and the full noise slice RMS; the scaled noise
is then added over the entire signal, non-speech included. Noise files
are split into contiguous train/validation/test segments first so no
noise sample leaks across dataset splits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioSignal, rms
from .errors import LengthMismatch, NoSpeech, SilentSpeech, TooShort
from .vad import SpeechMask, speech_samples

SNR_LEVELS_DB = (0, 5, 10, 15, 20)
NOISE_NAMES = ("cafeteria", "bus", "square", "kitchen", "ssn", "bbl")
NOISE_SPLIT_RATIOS = (0.7, 0.1, 0.2)
MIN_NOISE_SAMPLES = 3 * 8192


@dataclass
class NoiseSource:
    """A noise recording with disjoint contiguous per-split segments."""

    name: str
    signal: AudioSignal
    segments: dict  # split name -> (start, end) sample range

    def segment_bounds(self, part: str) -> tuple[int, int]:
        if part not in self.segments:
            raise KeyError(f"unknown split {part!r}")
        return self.segments[part]


def split_noise(noise: AudioSignal, name: str, ratios=NOISE_SPLIT_RATIOS) -> NoiseSource:
    """Partition a noise file into contiguous train/validation/test ranges.

    Segment lengths are floor(ratio * N) with the remainder going to test,
    in file order: train first, then validation, then test.
    """
    n = len(noise)
    if n < MIN_NOISE_SAMPLES:
        raise TooShort(f"noise needs >= {MIN_NOISE_SAMPLES} samples, got {n}")
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    segments = {
        "train": (0, n_train),
        "validation": (n_train, n_train + n_val),
        "test": (n_train + n_val, n),
    }
    return NoiseSource(name=name, signal=noise, segments=segments)


def noise_segment(src: NoiseSource, part: str, offset: int, length: int) -> np.ndarray:
    """Contiguous slice of a split starting at offset, wrapping cyclically."""
    start, end = src.segment_bounds(part)
    seg = src.signal.samples[start:end]
    idx = (offset + np.arange(length)) % seg.size
    return seg[idx]


def sample_noise_segment(src: NoiseSource, part: str, length: int, rng: np.random.Generator) -> np.ndarray:
    """Slice of the split at a uniform random offset (wrapping within it)."""
    start, end = src.segment_bounds(part)
    offset = int(rng.integers(0, end - start))
    return noise_segment(src, part, offset, length)


def compute_alpha(signal: AudioSignal, mask: SpeechMask, noise_slice, snr_db: float) -> float:
    """Noise scale placing the speech part at the target SNR.

    alpha = rms(speech part) / rms(noise) * 10^(-snr_db / 20), so that
    20*log10(rms(speech) / rms(alpha * noise)) == snr_db.
    """
    noise = np.asarray(noise_slice, dtype=np.float64)
    if noise.size != len(signal):
        raise LengthMismatch(f"noise slice {noise.size} != signal {len(signal)}")
    if not mask.flags.any():
        raise NoSpeech("mask marks no speech frames")
    speech_rms = rms(speech_samples(signal, mask))
    if speech_rms == 0.0:
        raise SilentSpeech("speech part has zero RMS")
    noise_rms = rms(noise)
    if noise_rms == 0.0:
        raise ValueError("noise slice is silent; SNR scaling undefined")
    return speech_rms / noise_rms * 10.0 ** (-snr_db / 20.0)


def mix_at_snr(signal: AudioSignal, mask: SpeechMask, noise_slice, snr_db: float) -> AudioSignal:
    """Additively mix scaled noise over the whole signal.

    The output is kept at full precision and may exceed [-1, 1]; WAV
    export rescales by the peak and records the factor in the manifest.
    """
    alpha = compute_alpha(signal, mask, noise_slice, snr_db)
    mixed = signal.samples + alpha * np.asarray(noise_slice, dtype=np.float64)
    return AudioSignal(mixed, signal.sample_rate)


def derive_seed(global_seed: int, source_id: str) -> int:
    """Stable per-utterance RNG seed from the run seed and the file id."""
    digest = hashlib.sha256(f"{global_seed}:{source_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
