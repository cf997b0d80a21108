"""ROCAUC scoring, seed aggregation and the experiment matrix runner.

ROCAUC is computed as the Mann-Whitney statistic via a rank sum with
average ranks on ties (ties count 1/2), so it equals the all-pairs
fraction of positives scored above negatives. Each experiment cell is
trained once per seed; reports carry the per-seed values plus their mean
and population (N-normalized) standard deviation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import ConditionFilter, LabeledFeatureSet, assemble_condition, truncate_balance
from .errors import LengthMismatch, SingleClass
from .filterbanks import FEATURE_NAMES
from .model import TrainConfig, predict_scores, train
from .noise import NOISE_NAMES, SNR_LEVELS_DB

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def rocauc(scores, labels) -> float:
    """Area under the ROC curve of binary labels against real scores."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise LengthMismatch(f"scores {s.shape} vs labels {y.shape}")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("need at least one positive and one negative")

    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    n = s.size
    # average rank per tie group: a group spanning sorted positions
    # [start, end) gets rank (start + 1 + end) / 2 (ranks are 1-based)
    group_start = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    group_end = np.r_[group_start[1:], n]
    avg_rank = (group_start + 1 + group_end) / 2.0
    group_of = np.cumsum(np.r_[True, sorted_s[1:] != sorted_s[:-1]]) - 1
    ranks = np.empty(n)
    ranks[order] = avg_rank[group_of]

    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def aggregate_seeds(values) -> tuple[float, float]:
    """Mean and population standard deviation of per-seed metric values.

    Sums use math.fsum so the result is exactly permutation-invariant.
    """
    v = [float(x) for x in values]
    n = len(v)
    mean = math.fsum(v) / n
    var = math.fsum((x - mean) ** 2 for x in v) / n
    return mean, math.sqrt(var)


@dataclass(frozen=True)
class ExperimentCell:
    """One train/test combination of the experiment matrix.

    balance_train_with names a counterpart condition: each split of this
    cell's data is truncated to the size of the counterpart's same split,
    the protocol that keeps results comparable across attack types or
    signal parts. group labels rows that report pages pool into averages.
    """

    cell_id: str
    train: ConditionFilter
    test: ConditionFilter
    validation: ConditionFilter | None = None
    balance_train_with: ConditionFilter | None = None
    group: str = ""

    @staticmethod
    def from_dict(d: dict) -> "ExperimentCell":
        return ExperimentCell(
            cell_id=d["id"],
            train=ConditionFilter.from_dict(d.get("train")),
            test=ConditionFilter.from_dict(d.get("test")),
            validation=ConditionFilter.from_dict(d["validation"]) if d.get("validation") else None,
            balance_train_with=(
                ConditionFilter.from_dict(d["balance_with"]) if d.get("balance_with") else None
            ),
            group=d.get("group", ""),
        )

    def to_dict(self) -> dict:
        out = {"id": self.cell_id, "train": self.train.to_dict(), "test": self.test.to_dict()}
        if self.validation is not None:
            out["validation"] = self.validation.to_dict()
        if self.balance_train_with is not None:
            out["balance_with"] = self.balance_train_with.to_dict()
        if self.group:
            out["group"] = self.group
        return out


@dataclass
class ExperimentDescriptor:
    name: str
    cells: list[ExperimentCell]
    features: tuple = FEATURE_NAMES
    seeds: tuple = DEFAULT_SEEDS

    @staticmethod
    def from_json(path) -> "ExperimentDescriptor":
        d = json.loads(Path(path).read_text())
        return ExperimentDescriptor(
            name=d["name"],
            cells=[ExperimentCell.from_dict(c) for c in d["cells"]],
            features=tuple(d.get("features", FEATURE_NAMES)),
            seeds=tuple(d.get("seeds", DEFAULT_SEEDS)),
        )

    def to_json(self, path) -> None:
        d = {
            "name": self.name,
            "features": list(self.features),
            "seeds": list(self.seeds),
            "cells": [c.to_dict() for c in self.cells],
        }
        Path(path).write_text(json.dumps(d, indent=1) + "\n")


@dataclass
class EvalReport:
    """Per-(cell, feature) metric summary over the seed runs."""

    cell_id: str
    feature_name: str
    seeds: tuple
    values: tuple
    mean: float
    std: float
    group: str = ""

    @staticmethod
    def from_values(cell_id, feature_name, seeds, values, group="") -> "EvalReport":
        mean, std = aggregate_seeds(values)
        return EvalReport(cell_id, feature_name, tuple(seeds), tuple(values), mean, std, group)


def _truncation_rng(descriptor_name: str, cell_id: str) -> np.random.Generator:
    # truncation must not vary with the training seed: the paper's runs
    # share one fixed split and reshuffle only init and batch order
    import hashlib

    digest = hashlib.sha256(f"truncate:{descriptor_name}:{cell_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def assemble_cell_sets(
    cache_dir, cell: ExperimentCell, feature_name: str, descriptor_name: str = ""
) -> tuple[LabeledFeatureSet, LabeledFeatureSet, LabeledFeatureSet]:
    """Train/validation/test sets of one cell, truncated when configured."""
    val_filter = cell.validation if cell.validation is not None else cell.train
    sets = {
        "train": assemble_condition(cache_dir, feature_name, "train", cell.train),
        "validation": assemble_condition(cache_dir, feature_name, "validation", val_filter),
        "test": assemble_condition(cache_dir, feature_name, "test", cell.test),
    }
    if cell.balance_train_with is not None:
        rng = _truncation_rng(descriptor_name, cell.cell_id)
        for split, flt in (("train", cell.balance_train_with),
                           ("validation", cell.balance_train_with),
                           ("test", cell.balance_train_with)):
            other = assemble_condition(cache_dir, feature_name, split, flt)
            if len(other) and len(sets[split]):
                sets[split], _ = truncate_balance(sets[split], other, rng)
    return sets["train"], sets["validation"], sets["test"]


def run_cell_seed(
    cache_dir, cell: ExperimentCell, feature_name: str, seed: int,
    base_cfg: TrainConfig, descriptor_name: str = "",
) -> float:
    """Train one (cell, feature, seed) job and return its test ROCAUC."""
    train_set, val_set, test_set = assemble_cell_sets(
        cache_dir, cell, feature_name, descriptor_name
    )
    cfg = replace(base_cfg, seed=seed)
    detector = train(train_set, val_set, cfg)
    detector.feature_name = feature_name
    pairs = predict_scores(detector, test_set)
    scores = [p for p, _ in pairs]
    labels = [l for _, l in pairs]
    return rocauc(scores, labels)


def run_experiment(
    descriptor: ExperimentDescriptor,
    cache_dir,
    results_dir=None,
    base_cfg: TrainConfig | None = None,
    jobs: int = 1,
) -> list[EvalReport]:
    """Run every (cell, feature, seed) job of the matrix and aggregate.

    When results_dir is given, each job's metric is persisted as a small
    JSON file written atomically (tmp + rename), and jobs whose file
    already exists are skipped, so interrupted runs resume. Jobs may run
    concurrently; each one is internally deterministic and the report
    order never depends on completion order.
    """
    base_cfg = base_cfg or TrainConfig()
    run_dir = None
    if results_dir is not None:
        run_dir = Path(results_dir) / "runs"
        run_dir.mkdir(parents=True, exist_ok=True)

    def job_path(cell, feature, seed) -> Path:
        safe = cell.cell_id.replace("/", "_").replace(" ", "_")
        return run_dir / f"{descriptor.name}__{safe}__{feature}__seed{seed}.json"

    def run_one(cell, feature, seed) -> float:
        if run_dir is not None:
            path = job_path(cell, feature, seed)
            if path.exists():
                return json.loads(path.read_text())["rocauc"]
        value = run_cell_seed(cache_dir, cell, feature, seed, base_cfg, descriptor.name)
        if run_dir is not None:
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(
                {"cell": cell.cell_id, "feature": feature, "seed": seed, "rocauc": value}
            ))
            tmp.replace(path)
        return value

    tasks = [
        (cell, feature, seed)
        for cell in descriptor.cells
        for feature in descriptor.features
        for seed in descriptor.seeds
    ]
    results: dict[tuple, float] = {}
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for task, value in zip(tasks, pool.map(lambda t: run_one(*t), tasks)):
                results[task] = value
    else:
        for task in tasks:
            results[task] = run_one(*task)

    reports = []
    for cell in descriptor.cells:
        for feature in descriptor.features:
            values = [results[(cell, feature, seed)] for seed in descriptor.seeds]
            reports.append(
                EvalReport.from_values(cell.cell_id, feature, descriptor.seeds, values, cell.group)
            )
    return reports


def reports_to_csv_rows(reports) -> list[list[str]]:
    """One CSV row per report; float fields use repr for byte stability."""
    rows = [["cell_id", "feature", "n_seeds", "mean", "std", "values"]]
    for r in sorted(reports, key=lambda r: (r.cell_id, r.feature_name)):
        rows.append(
            [
                r.cell_id,
                r.feature_name,
                str(len(r.seeds)),
                repr(r.mean),
                repr(r.std),
                ";".join(repr(v) for v in r.values),
            ]
        )
    return rows


# --- descriptor builders mirroring the study's experiment designs ---

def whitebox_blackbox_descriptor(seeds=DEFAULT_SEEDS, features=FEATURE_NAMES) -> ExperimentDescriptor:
    """Seven train/test rows over white-box, black-box and their union."""
    white = ConditionFilter(attacks=("white",))
    black = ConditionFilter(attacks=("black",))
    both = ConditionFilter(attacks=("white", "black"))
    cells = [
        ExperimentCell("white/white", white, white, balance_train_with=black),
        ExperimentCell("white/black", white, black, balance_train_with=black),
        ExperimentCell("black/white", black, white, balance_train_with=white),
        ExperimentCell("black/black", black, black, balance_train_with=white),
        ExperimentCell("white&black/white&black", both, both),
        ExperimentCell("white&black/white", both, white),
        ExperimentCell("white&black/black", both, black),
    ]
    return ExperimentDescriptor("whitebox_blackbox", cells, tuple(features), tuple(seeds))


def narrow_noise_descriptor(
    noises=NOISE_NAMES, snrs=SNR_LEVELS_DB, seeds=DEFAULT_SEEDS, features=FEATURE_NAMES
) -> ExperimentDescriptor:
    """Matched noise-and-SNR training: one cell per (noise, SNR)."""
    cells = []
    for noise in noises:
        for snr in snrs:
            flt = ConditionFilter(noises=(noise,), snrs=(snr,))
            cells.append(ExperimentCell(f"{noise}/{snr}db", flt, flt, group=noise))
    return ExperimentDescriptor("narrow_noise", cells, tuple(features), tuple(seeds))


def speech_nonspeech_descriptor(seeds=DEFAULT_SEEDS, features=FEATURE_NAMES) -> ExperimentDescriptor:
    """Speech-only vs non-speech-only parts, crossed, plus their union."""
    speech = ConditionFilter(parts=("speech",))
    nonspeech = ConditionFilter(parts=("nonspeech",))
    both = ConditionFilter(parts=("speech", "nonspeech"))
    cells = [
        ExperimentCell("nonspeech/nonspeech", nonspeech, nonspeech, balance_train_with=speech),
        ExperimentCell("nonspeech/speech", nonspeech, speech, balance_train_with=speech),
        ExperimentCell("speech/speech", speech, speech, balance_train_with=nonspeech),
        ExperimentCell("speech/nonspeech", speech, nonspeech, balance_train_with=nonspeech),
        ExperimentCell("speech&ns/speech&ns", both, both),
        ExperimentCell("speech&ns/nonspeech", both, nonspeech),
        ExperimentCell("speech&ns/speech", both, speech),
    ]
    return ExperimentDescriptor("speech_nonspeech", cells, tuple(features), tuple(seeds))


def noise_generalisation_descriptor(
    held_out: str = "bbl", snrs=SNR_LEVELS_DB, seeds=DEFAULT_SEEDS, features=FEATURE_NAMES
) -> ExperimentDescriptor:
    """Leave-one-noise-out: train on the rest at all SNRs, test per SNR."""
    rest = tuple(n for n in NOISE_NAMES if n != held_out)
    cells = []
    train_rest = ConditionFilter(noises=rest, snrs=tuple(snrs))
    train_held = ConditionFilter(noises=(held_out,), snrs=tuple(snrs))
    for snr in snrs:
        cells.append(
            ExperimentCell(
                f"rest_all_snr/{held_out}@{snr}db",
                train_rest,
                ConditionFilter(noises=(held_out,), snrs=(snr,)),
                group="rest_all_snr",
            )
        )
        cells.append(
            ExperimentCell(
                f"{held_out}_all_snr/rest@{snr}db",
                train_held,
                ConditionFilter(noises=rest, snrs=(snr,)),
                group=f"{held_out}_all_snr",
            )
        )
    return ExperimentDescriptor(f"noise_generalisation_{held_out}", cells, tuple(features), tuple(seeds))
