"""Hash-based splitting, balance truncation and feature-set assembly.

Split membership depends only on the utterance filename: the first 8
bytes of SHA-256(source_id), read big-endian, mod 100, with buckets
[0,70) train / [70,80) validation / [80,100) test. That makes the split
reproducible across platforms and stable under reordering, and every
block of one utterance lands in the same split.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio_io import Condition, LABEL_TO_INT
from .dsp import FRAMES_PER_BLOCK
from .errors import DuplicateId, MissingCache
from .filterbanks import NUM_CEPS, FeatureMatrix

SPLITS = ("train", "validation", "test")
TRAIN_BUCKET_END = 70
VALIDATION_BUCKET_END = 80

CACHE_MAGIC = b"FBCF"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sI16sQII")


def split_of(source_id: str) -> str:
    """Deterministic split of one utterance id."""
    digest = hashlib.sha256(source_id.encode()).digest()
    bucket = int.from_bytes(digest[:8], "big") % 100
    if bucket < TRAIN_BUCKET_END:
        return "train"
    if bucket < VALIDATION_BUCKET_END:
        return "validation"
    return "test"


@dataclass
class DatasetPartition:
    train: list[str] = field(default_factory=list)
    validation: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, list[str]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def hash_split(source_ids) -> DatasetPartition:
    """Partition utterance ids into train/validation/test buckets."""
    ids = list(source_ids)
    if not ids:
        raise ValueError("hash_split needs at least one id")
    if len(set(ids)) != len(ids):
        raise DuplicateId("source ids must be unique")
    part = DatasetPartition()
    for sid in ids:
        getattr(part, split_of(sid)).append(sid)
    return part


@dataclass(frozen=True)
class BlockRef:
    """Provenance of one feature matrix inside a cache."""

    source_id: str
    block_index: int
    label: str
    condition: Condition


@dataclass
class LabeledFeatureSet:
    """Stacked feature matrices with 0/1 labels and provenance."""

    features: np.ndarray  # (n, 31, 20)
    labels: np.ndarray  # (n,), 0 benign / 1 adversarial
    refs: list[BlockRef]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 3 or self.features.shape[1:] != (FRAMES_PER_BLOCK, NUM_CEPS):
            raise ValueError(f"features must be (n, 31, 20), got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with features")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if len(self.refs) != self.features.shape[0]:
            raise ValueError("refs must align with features")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def items(self):
        return list(zip(self.features, self.labels, self.refs))

    def subset(self, indices) -> "LabeledFeatureSet":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledFeatureSet(
            self.features[idx], self.labels[idx], [self.refs[i] for i in idx]
        )

    @staticmethod
    def empty() -> "LabeledFeatureSet":
        return LabeledFeatureSet(
            np.empty((0, FRAMES_PER_BLOCK, NUM_CEPS)), np.empty(0, dtype=np.int64), []
        )

    @staticmethod
    def from_matrices(matrices: list[FeatureMatrix]) -> "LabeledFeatureSet":
        if not matrices:
            return LabeledFeatureSet.empty()
        feats = np.stack([m.coeffs for m in matrices])
        labels = np.array([LABEL_TO_INT[m.label] for m in matrices], dtype=np.int64)
        refs = [
            BlockRef(m.source_id, m.block_index, m.label, m.condition) for m in matrices
        ]
        return LabeledFeatureSet(feats, labels, refs)

    @staticmethod
    def concat(sets) -> "LabeledFeatureSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return LabeledFeatureSet.empty()
        return LabeledFeatureSet(
            np.concatenate([s.features for s in sets]),
            np.concatenate([s.labels for s in sets]),
            [r for s in sets for r in s.refs],
        )


def truncate_balance(
    a: LabeledFeatureSet, b: LabeledFeatureSet, rng: np.random.Generator
) -> tuple[LabeledFeatureSet, LabeledFeatureSet]:
    """Down-sample the larger set to the size of the smaller.

    Selection is uniform without replacement from the seeded generator and
    keeps the surviving items in their original order; equal-size inputs
    pass through unchanged.
    """
    if not len(a) or not len(b):
        raise ValueError("truncate_balance needs two nonempty sets")
    target = min(len(a), len(b))

    def cut(s: LabeledFeatureSet) -> LabeledFeatureSet:
        if len(s) == target:
            return s
        keep = np.sort(rng.choice(len(s), size=target, replace=False))
        return s.subset(keep)

    return cut(a), cut(b)


# --- feature cache files ---
#
# Binary layout: header (magic, version, feature name, count, frames,
# coeffs) followed by count row-major float64 (31, 20) matrices, little
# endian. A CSV sidecar (<path>.manifest.csv) carries provenance and
# labels. Writing the same content twice is byte-identical.

def cache_sidecar_path(path) -> Path:
    return Path(str(path) + ".manifest.csv")


def write_cache(path, feature_name: str, feature_set: LabeledFeatureSet) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    name_bytes = feature_name.encode()
    if len(name_bytes) > 16:
        raise ValueError("feature name too long for cache header")
    header = _CACHE_HEADER.pack(
        CACHE_MAGIC,
        CACHE_VERSION,
        name_bytes.ljust(16, b"\0"),
        len(feature_set),
        FRAMES_PER_BLOCK,
        NUM_CEPS,
    )
    data = np.ascontiguousarray(feature_set.features, dtype="<f8").tobytes()
    path.write_bytes(header + data)
    with open(cache_sidecar_path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["index", "source_id", "block_index", "label", "attack", "noise", "snr_db", "part"]
        )
        for i, ref in enumerate(feature_set.refs):
            cond = ref.condition
            snr = "" if cond.snr_db is None else str(cond.snr_db)
            writer.writerow(
                [i, ref.source_id, ref.block_index, ref.label, cond.attack, cond.noise, snr, cond.part]
            )


def read_cache(path) -> tuple[str, LabeledFeatureSet]:
    path = Path(path)
    if not path.exists():
        raise MissingCache(f"cache file {path} does not exist")
    raw = path.read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise MissingCache(f"cache file {path} is truncated")
    magic, version, name_bytes, count, frames, coeffs = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise MissingCache(f"cache file {path} has wrong magic/version")
    if frames != FRAMES_PER_BLOCK or coeffs != NUM_CEPS:
        raise MissingCache(f"cache file {path} has unexpected shape {frames}x{coeffs}")
    feature_name = name_bytes.rstrip(b"\0").decode()
    expected = count * frames * coeffs * 8
    body = raw[_CACHE_HEADER.size :]
    if len(body) != expected:
        raise MissingCache(f"cache file {path}: expected {expected} data bytes")
    feats = np.frombuffer(body, dtype="<f8").reshape(count, frames, coeffs).copy()

    sidecar = cache_sidecar_path(path)
    if not sidecar.exists():
        raise MissingCache(f"cache sidecar {sidecar} does not exist")
    refs: list[BlockRef] = []
    labels = np.empty(count, dtype=np.int64)
    with open(sidecar, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            snr = int(row["snr_db"]) if row["snr_db"] else None
            cond = Condition(row["attack"], row["noise"], snr, row["part"])
            refs.append(BlockRef(row["source_id"], int(row["block_index"]), row["label"], cond))
            labels[i] = LABEL_TO_INT[row["label"]]
    if len(refs) != count:
        raise MissingCache(f"cache sidecar {sidecar} row count != {count}")
    return feature_name, LabeledFeatureSet(feats, labels, refs)


@dataclass(frozen=True)
class ConditionFilter:
    """Per-field allow-lists; None admits every value of that field."""

    attacks: tuple | None = None
    noises: tuple | None = None
    snrs: tuple | None = None
    parts: tuple | None = None

    def admits(self, cond: Condition) -> bool:
        if self.attacks is not None and cond.attack not in self.attacks:
            return False
        if self.noises is not None and cond.noise not in self.noises:
            return False
        if self.snrs is not None and cond.snr_db not in self.snrs:
            return False
        if self.parts is not None and cond.part not in self.parts:
            return False
        return True

    @staticmethod
    def from_dict(d: dict | None) -> "ConditionFilter":
        d = d or {}
        as_tuple = lambda v: None if v is None else tuple(v)
        return ConditionFilter(
            attacks=as_tuple(d.get("attack")),
            noises=as_tuple(d.get("noise")),
            snrs=as_tuple(d.get("snr_db")),
            parts=as_tuple(d.get("part")),
        )

    def to_dict(self) -> dict:
        out = {}
        if self.attacks is not None:
            out["attack"] = list(self.attacks)
        if self.noises is not None:
            out["noise"] = list(self.noises)
        if self.snrs is not None:
            out["snr_db"] = list(self.snrs)
        if self.parts is not None:
            out["part"] = list(self.parts)
        return out


def cache_files_for(cache_dir, split: str, feature_name: str) -> list[Path]:
    split_dir = Path(cache_dir) / split
    return sorted(split_dir.glob(f"*__{feature_name}.fbc"))


def assemble_condition(
    cache_dir, feature_name: str, split: str, flt: ConditionFilter = ConditionFilter()
) -> LabeledFeatureSet:
    """Load every cache of a (split, feature) and keep matching rows.

    Rows are ordered by (source_id, block_index, condition key) so the
    assembled set is stable regardless of cache file layout.
    """
    split_dir = Path(cache_dir) / split
    if not split_dir.is_dir():
        raise MissingCache(f"cache directory {split_dir} does not exist")
    parts = []
    for path in cache_files_for(cache_dir, split, feature_name):
        name, feature_set = read_cache(path)
        if name != feature_name:
            raise MissingCache(f"{path}: header says {name}, expected {feature_name}")
        keep = [i for i, ref in enumerate(feature_set.refs) if flt.admits(ref.condition)]
        if keep:
            parts.append(feature_set.subset(keep))
    merged = LabeledFeatureSet.concat(parts)
    if not len(merged):
        return merged
    order = sorted(
        range(len(merged)),
        key=lambda i: (
            merged.refs[i].source_id,
            merged.refs[i].block_index,
            merged.refs[i].condition.key(),
        ),
    )
    return merged.subset(order)


# --- labels manifests (CSV descriptions of a WAV tree) ---

@dataclass(frozen=True)
class UtteranceEntry:
    source_id: str
    path: str  # relative to the manifest's directory
    label: str
    condition: Condition


def write_labels_manifest(entries, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "path", "label", "attack", "noise", "snr_db", "part"])
        for e in entries:
            snr = "" if e.condition.snr_db is None else str(e.condition.snr_db)
            writer.writerow(
                [e.source_id, e.path, e.label, e.condition.attack, e.condition.noise, snr, e.condition.part]
            )


def read_labels_manifest(path) -> list[UtteranceEntry]:
    path = Path(path)
    if not path.exists():
        raise MissingCache(f"labels manifest {path} does not exist")
    entries = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            snr = int(row["snr_db"]) if row.get("snr_db") else None
            cond = Condition(
                row.get("attack", "none"), row.get("noise", "none"), snr, row.get("part", "full")
            )
            entries.append(UtteranceEntry(row["source_id"], row["path"], row["label"], cond))
    return entries


def with_condition(entry: UtteranceEntry, **changes) -> UtteranceEntry:
    return UtteranceEntry(
        entry.source_id, entry.path, entry.label, replace(entry.condition, **changes)
    )
