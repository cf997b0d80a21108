"""Energy-based voice activity detection and speech/non-speech splitting.

This is a deliberate stand-in for heavier published VAD methods: a frame
is speech when its RMS clears a multiple of a robust noise floor, followed
by morphological smoothing. Users who run an external VAD can load its
per-frame decisions through load_external_mask and keep the rest of the
pipeline unchanged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioSignal
from .dsp import FRAME_LENGTH, FRAME_SHIFT, frame_signal, num_frames
from .errors import GeometryMismatch, ParseError, TooShort

VAD_THETA = 3.0  # speech threshold as multiple of the noise floor
VAD_FLOOR_PERCENTILE = 10.0
VAD_PEAK_CAP = 0.5  # threshold never exceeds this fraction of the loudest frame
VAD_MAX_GAP = 3  # non-speech gaps this short inside speech are closed
VAD_MAX_ISLAND = 2  # speech runs this short are dropped


@dataclass
class SpeechMask:
    """Per-frame speech flags over 32 ms frames with 16 ms shift."""

    flags: np.ndarray
    frame_length: int = FRAME_LENGTH
    frame_shift: int = FRAME_SHIFT

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.ndim != 1:
            raise ValueError("mask flags must be one-dimensional")

    def __len__(self) -> int:
        return self.flags.size


def _runs(flags: np.ndarray):
    """Yield (start, end, value) for each constant run."""
    if flags.size == 0:
        return
    edges = np.flatnonzero(np.diff(flags)) + 1
    starts = np.r_[0, edges]
    ends = np.r_[edges, flags.size]
    for s, e in zip(starts, ends):
        yield int(s), int(e), bool(flags[s])


def _close_gaps(flags: np.ndarray, max_gap: int) -> np.ndarray:
    out = flags.copy()
    for s, e, value in _runs(flags):
        if not value and e - s <= max_gap and s > 0 and e < flags.size:
            out[s:e] = True
    return out


def _drop_islands(flags: np.ndarray, max_island: int) -> np.ndarray:
    out = flags.copy()
    for s, e, value in _runs(flags):
        if value and e - s <= max_island:
            out[s:e] = False
    return out


def frame_rms(samples) -> np.ndarray:
    """RMS of each raw frame of a signal."""
    frames = frame_signal(samples)
    return np.sqrt(np.mean(np.square(frames), axis=1))


def detect_speech(signal: AudioSignal) -> SpeechMask:
    """Mark speech frames by comparing frame RMS against a noise floor.

    The floor is the 10th percentile of frame RMS over the utterance and
    the threshold is VAD_THETA times that, capped at half the loudest
    frame so signals without any quiet part (a constant tone) still count
    as fully active. Digital-silence frames are never speech. Gaps up to
    3 frames are closed, then speech islands up to 2 frames are dropped.
    """
    if len(signal) < FRAME_LENGTH:
        raise TooShort(f"need at least {FRAME_LENGTH} samples, got {len(signal)}")
    energy = frame_rms(signal.samples)
    floor = np.percentile(energy, VAD_FLOOR_PERCENTILE)
    threshold = min(VAD_THETA * floor, VAD_PEAK_CAP * energy.max())
    flags = (energy > 0) & (energy >= threshold)
    flags = _close_gaps(flags, VAD_MAX_GAP)
    flags = _drop_islands(flags, VAD_MAX_ISLAND)
    return SpeechMask(flags)


def _frame_sample_slices(n_frames: int) -> list[slice]:
    """Sample ownership per frame: its shift window, plus the tail for the last.

    Frame i owns [i*256, (i+1)*256); the final frame additionally owns the
    256-sample tail of its window, so the covered span is (F+1)*256 and at
    most 255 trailing samples fall outside every frame.
    """
    slices = [slice(i * FRAME_SHIFT, (i + 1) * FRAME_SHIFT) for i in range(n_frames)]
    if n_frames:
        slices[-1] = slice((n_frames - 1) * FRAME_SHIFT, (n_frames + 1) * FRAME_SHIFT)
    return slices


def split_speech_nonspeech(signal: AudioSignal, mask: SpeechMask) -> tuple[AudioSignal, AudioSignal]:
    """Concatenate speech-owned and non-speech-owned samples separately.

    Every covered input sample lands in exactly one of the two outputs,
    in original order.
    """
    expected = num_frames(len(signal))
    if len(mask) != expected:
        raise GeometryMismatch(f"mask has {len(mask)} frames, signal needs {expected}")
    slices = _frame_sample_slices(expected)
    speech = [signal.samples[s] for s, keep in zip(slices, mask.flags) if keep]
    other = [signal.samples[s] for s, keep in zip(slices, mask.flags) if not keep]
    empty = np.empty(0)
    return (
        AudioSignal(np.concatenate(speech) if speech else empty, signal.sample_rate),
        AudioSignal(np.concatenate(other) if other else empty, signal.sample_rate),
    )


def speech_samples(signal: AudioSignal, mask: SpeechMask) -> np.ndarray:
    """Just the speech part's samples (used for speech-part RMS)."""
    return split_speech_nonspeech(signal, mask)[0].samples


def save_mask(mask: SpeechMask, path) -> None:
    """Write a mask as CSV rows of frame_index,flag."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, flag in enumerate(mask.flags):
            writer.writerow([i, int(flag)])


def load_external_mask(path) -> SpeechMask:
    """Load per-frame decisions produced by this or any external VAD."""
    rows = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read mask {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'frame_index,flag'")
        try:
            idx, flag = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-integer field") from exc
        if flag not in (0, 1):
            raise ParseError(f"{path}:{lineno}: flag must be 0 or 1")
        rows.append((idx, bool(flag)))
    if not rows:
        raise ParseError(f"{path}: empty mask file")
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ParseError(f"{path}: frame indices must be 0..N-1 without gaps")
    return SpeechMask(np.array([f for _, f in rows], dtype=bool))
