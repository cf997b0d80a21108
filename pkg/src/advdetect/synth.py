"""Synthetic audio for self-contained tests and smoke runs.

Benign material is Gaussian noise shaped to a speech-like spectrum (flat
below ~500 Hz, falling above) with a randomized high-frequency tail;
"attacked" material additionally carries a 6-8 kHz band-limited
perturbation at a fixed level below the speech RMS, mimicking the
high-frequency energy footprint that distinguishes adversarial audio.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import AudioSignal, BLOCK_SAMPLES, Block, Condition, SAMPLE_RATE, rms, write_wav
from .dataset import UtteranceEntry, split_of, write_labels_manifest

PERTURBATION_BAND_HZ = (6000.0, 8000.0)
PERTURBATION_REL_DB = -30.0
TAIL_DB_RANGE = (-48.0, -32.0)


def speech_shaped_noise(rng: np.random.Generator, n: int, tail_db: float | None = None) -> np.ndarray:
    """Unit-RMS noise with a speech-like spectral envelope.

    The envelope is flat to ~500 Hz and rolls off as 1/(1 + (f/500)^2);
    tail_db, when given, adds a smooth high-frequency shelf at that
    amplitude (dB relative to the low-band plateau) ramping in around
    4.5 kHz.
    """
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    envelope = 1.0 / (1.0 + (f / 500.0) ** 2)
    if tail_db is not None:
        shelf = 10.0 ** (tail_db / 20.0) / (1.0 + np.exp(-(f - 4500.0) / 400.0))
        envelope = envelope + shelf
    x = np.fft.irfft(spectrum * envelope, n)
    return x / rms(x)


def bandlimited_noise(rng: np.random.Generator, n: int, f_lo: float, f_hi: float) -> np.ndarray:
    """Unit-RMS noise confined to [f_lo, f_hi] Hz."""
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    spectrum[(f < f_lo) | (f > f_hi)] = 0.0
    x = np.fft.irfft(spectrum, n)
    return x / rms(x)


def add_band_perturbation(
    samples: np.ndarray,
    rng: np.random.Generator,
    speech_rms: float | None = None,
    band=PERTURBATION_BAND_HZ,
    rel_db: float = PERTURBATION_REL_DB,
) -> np.ndarray:
    """Overlay band-limited noise at rel_db below the speech RMS."""
    if speech_rms is None:
        speech_rms = rms(samples)
    p = bandlimited_noise(rng, samples.size, band[0], band[1])
    return samples + p * speech_rms * 10.0 ** (rel_db / 20.0)


def detection_blocks(n_benign: int = 500, n_attacked: int = 500, seed: int = 0) -> list[Block]:
    """Single-block utterances for the synthetic detection task.

    Benign blocks vary their high-band tail level so total band energy
    overlaps between classes; attacked blocks differ by the flat 6-8 kHz
    perturbation footprint.
    """
    rng = np.random.default_rng(seed)
    cond = Condition(attack="synthetic")
    blocks = []
    for kind, count in (("benign", n_benign), ("attacked", n_attacked)):
        for i in range(count):
            tail_db = rng.uniform(*TAIL_DB_RANGE)
            x = speech_shaped_noise(rng, BLOCK_SAMPLES, tail_db)
            x *= rng.uniform(0.05, 0.2)
            if kind == "attacked":
                x = add_band_perturbation(x, rng)
            blocks.append(
                Block(
                    samples=x,
                    label="benign" if kind == "benign" else "adversarial",
                    source_id=f"{kind}-{i:04d}",
                    block_index=0,
                    condition=cond,
                )
            )
    return blocks


def synthetic_utterance(rng: np.random.Generator, adversarial: bool) -> AudioSignal:
    """Silence / speech-shaped burst / silence, optionally perturbed."""
    n_sil1 = int(rng.uniform(0.3, 0.5) * SAMPLE_RATE)
    n_speech = int(rng.uniform(0.9, 1.7) * SAMPLE_RATE)
    n_sil2 = int(rng.uniform(0.2, 0.4) * SAMPLE_RATE)
    speech = speech_shaped_noise(rng, n_speech, tail_db=rng.uniform(*TAIL_DB_RANGE)) * 0.1
    x = np.concatenate(
        [
            rng.standard_normal(n_sil1) * 1e-4,
            speech,
            rng.standard_normal(n_sil2) * 1e-4,
        ]
    )
    if adversarial:
        x = add_band_perturbation(x, rng, speech_rms=rms(speech))
    peak = np.abs(x).max()
    if peak > 0.99:
        x *= 0.99 / peak
    return AudioSignal(x)


def _pick_smoke_ids(n_utterances: int) -> dict[str, list[str]]:
    """Choose utterance ids so the hash split is usable at tiny scale.

    Candidates are scanned in order and kept while their hash bucket
    still needs members, so membership stays a pure function of the id.
    """
    targets = {
        "train": max(1, round(n_utterances * 0.7)),
        "validation": max(1, round(n_utterances * 0.1)),
        "test": max(1, round(n_utterances * 0.2)),
    }
    while sum(targets.values()) > n_utterances:
        targets["train"] -= 1
    while sum(targets.values()) < n_utterances:
        targets["train"] += 1
    chosen: dict[str, list[str]] = {"train": [], "validation": [], "test": []}
    i = 0
    while sum(len(v) for v in chosen.values()) < n_utterances:
        sid = f"smoke-{i:04d}"
        split = split_of(sid)
        if len(chosen[split]) < targets[split]:
            chosen[split].append(sid)
        i += 1
        if i > 100 * n_utterances:
            raise RuntimeError("could not fill split targets")
    return chosen


def write_smoke_corpus(root, n_utterances: int = 20, seed: int = 0) -> Path:
    """Write a small WAV corpus: clean tree + labels + two noise files.

    Labels alternate within each hash-split bucket so every split holds
    both classes. Returns the clean tree's labels manifest path.
    """
    root = Path(root)
    clean = root / "clean"
    clean.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for split, ids in sorted(_pick_smoke_ids(n_utterances).items()):
        for j, sid in enumerate(ids):
            adversarial = j % 2 == 1
            signal = synthetic_utterance(rng, adversarial)
            fname = f"{sid}.wav"
            write_wav(signal, clean / fname)
            entries.append(
                UtteranceEntry(
                    source_id=sid,
                    path=fname,
                    label="adversarial" if adversarial else "benign",
                    condition=Condition(attack="synthetic"),
                )
            )
    entries.sort(key=lambda e: e.source_id)
    manifest = clean / "labels.csv"
    write_labels_manifest(entries, manifest)

    noise_dir = root / "noise"
    noise_dir.mkdir(parents=True, exist_ok=True)
    for name in ("ssn", "bbl"):
        ten_seconds = 10 * SAMPLE_RATE
        tail = -30.0 if name == "bbl" else None
        noise = speech_shaped_noise(rng, ten_seconds, tail_db=tail) * 0.05
        write_wav(AudioSignal(noise), noise_dir / f"{name}.wav")
    return manifest
