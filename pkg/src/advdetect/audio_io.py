"""PCM audio I/O and block chopping.

Only RIFF/WAVE, 16-bit PCM, mono, 16 kHz is accepted; anything else is
rejected instead of silently resampled or remixed, because the whole
feature pipeline is pinned to that format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyInput,
    IoError,
    NotWav,
    UnsupportedChannels,
    UnsupportedEncoding,
    UnsupportedRate,
)

SAMPLE_RATE = 16000
BLOCK_SAMPLES = 8192  # 512 ms at 16 kHz
PCM_SCALE = 32768.0

LABEL_BENIGN = "benign"
LABEL_ADVERSARIAL = "adversarial"
LABEL_TO_INT = {LABEL_BENIGN: 0, LABEL_ADVERSARIAL: 1}


@dataclass(frozen=True)
class Condition:
    """Provenance tags carried by a block through the experiment matrix.

    attack: attack-type tag of the source dataset (e.g. "white", "black",
        "synthetic"); "none" when untagged.
    noise: noise type mixed in ("none" for clean).
    snr_db: mixing SNR in dB, or None for clean.
    part: "full", "speech" or "nonspeech".
    """

    attack: str = "none"
    noise: str = "none"
    snr_db: int | None = None
    part: str = "full"

    def key(self) -> str:
        snr = "clean" if self.snr_db is None else f"{self.snr_db}db"
        return f"{self.attack}-{self.noise}-{snr}-{self.part}"


@dataclass
class AudioSignal:
    """Mono PCM samples as float64 amplitudes with their sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioSignal samples must be one-dimensional")
        if self.samples.size and not np.isfinite(self.samples).all():
            raise ValueError("AudioSignal samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Block:
    """One 512 ms window of an utterance, the classifier's unit of decision."""

    samples: np.ndarray
    label: str
    source_id: str
    block_index: int
    condition: Condition = field(default_factory=Condition)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.shape != (BLOCK_SAMPLES,):
            raise ValueError(f"Block must hold exactly {BLOCK_SAMPLES} samples")
        if self.label not in LABEL_TO_INT:
            raise ValueError(f"unknown label {self.label!r}")
        if self.block_index < 0:
            raise ValueError("block_index must be >= 0")


def _read_fmt_chunk(body: bytes) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise NotWav("fmt chunk too short")
    audio_format, channels, rate, _byte_rate, _align, bits = struct.unpack(
        "<HHIIHH", body[:16]
    )
    return audio_format, channels, rate, bits


def read_wav(path) -> AudioSignal:
    """Read a 16 kHz mono PCM16 WAV file, scaling samples to [-1, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise NotWav(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise NotWav(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            fmt = _read_fmt_chunk(body)
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise NotWav(f"{path}: missing fmt/data chunk")
    audio_format, channels, rate, bits = fmt
    if audio_format != 1 or bits != 16:
        raise UnsupportedEncoding(
            f"{path}: need 16-bit PCM, got format={audio_format} bits={bits}"
        )
    if channels != 1:
        raise UnsupportedChannels(f"{path}: need mono, got {channels} channels")
    if rate != SAMPLE_RATE:
        raise UnsupportedRate(f"{path}: need {SAMPLE_RATE} Hz, got {rate}")

    pcm = np.frombuffer(data[: len(data) - (len(data) % 2)], dtype="<i2")
    return AudioSignal(pcm.astype(np.float64) / PCM_SCALE, rate)


def write_wav(signal: AudioSignal, path) -> None:
    """Write a signal as PCM16 mono WAV; +1.0 clamps to the max PCM code."""
    x = np.clip(signal.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * PCM_SCALE), -32768, 32767).astype("<i2")
    body = pcm.tobytes()
    rate = signal.sample_rate
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(body)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16),
            b"data",
            struct.pack("<I", len(body)),
        ]
    )
    try:
        Path(path).write_bytes(header + body)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def chop_blocks(
    signal: AudioSignal,
    label: str,
    source_id: str,
    condition: Condition = Condition(),
) -> list[Block]:
    """Chop a signal into contiguous non-overlapping 8192-sample blocks.

    The trailing remainder shorter than a full block is discarded (never
    zero-padded); an utterance shorter than 512 ms yields no blocks.
    """
    if signal.sample_rate != SAMPLE_RATE:
        raise UnsupportedRate(f"need {SAMPLE_RATE} Hz, got {signal.sample_rate}")
    n_blocks = len(signal) // BLOCK_SAMPLES
    return [
        Block(
            samples=signal.samples[i * BLOCK_SAMPLES : (i + 1) * BLOCK_SAMPLES],
            label=label,
            source_id=source_id,
            block_index=i,
            condition=condition,
        )
        for i in range(n_blocks)
    ]


def rms(samples) -> float:
    """Root mean square of a nonempty amplitude sequence."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise EmptyInput("rms of empty sequence")
    return float(np.sqrt(np.mean(np.square(x))))
