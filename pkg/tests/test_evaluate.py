import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advdetect.dataset import ConditionFilter, LabeledFeatureSet, write_cache
from advdetect.errors import LengthMismatch, SingleClass
from advdetect.evaluate import (
    EvalReport,
    ExperimentCell,
    ExperimentDescriptor,
    aggregate_seeds,
    narrow_noise_descriptor,
    noise_generalisation_descriptor,
    reports_to_csv_rows,
    rocauc,
    run_experiment,
    speech_nonspeech_descriptor,
    whitebox_blackbox_descriptor,
)
from advdetect.filterbanks import extract_features
from advdetect.model import TrainConfig
from advdetect.synth import detection_blocks
from oracles import rocauc_pairwise


class TestRocauc:
    def test_perfect_separation(self):
        scores = [0.9, 0.8, 0.2, 0.1]
        labels = [1, 1, 0, 0]
        assert rocauc(scores, labels) == 1.0

    def test_all_ties(self):
        assert rocauc([0.5] * 10, [1, 0] * 5) == 0.5

    def test_matches_pairwise_oracle(self, rng):
        for trial in range(200):
            n = int(rng.integers(2, 200))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            if trial % 3 == 0:
                scores = rng.integers(0, 5, n).astype(float)  # heavy ties
            else:
                scores = rng.standard_normal(n)
            fast = rocauc(scores, labels)
            slow = rocauc_pairwise(scores, labels)
            assert abs(fast - slow) < 1e-12

    def test_single_class(self):
        with pytest.raises(SingleClass):
            rocauc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rocauc([0.1, 0.2, 0.3], [1, 0])

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_monotone_transform_invariance(self, seed):
        gen = np.random.default_rng(seed)
        n = int(gen.integers(4, 60))
        scores = gen.standard_normal(n)
        labels = gen.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = rocauc(scores, labels)
        for transform in (lambda s: 2.0 * s + 3.0, np.tanh, lambda s: s**3):
            assert abs(rocauc(transform(scores), labels) - base) < 1e-12

    def test_negation_complement_without_ties(self, rng):
        scores = rng.permutation(np.linspace(0.01, 0.99, 40))
        labels = rng.integers(0, 2, 40)
        labels[0], labels[1] = 0, 1
        assert abs(rocauc(scores, labels) + rocauc(-scores, labels) - 1.0) < 1e-12


class TestAggregateSeeds:
    def test_equal_values(self):
        mean, std = aggregate_seeds([0.7] * 5)
        assert mean == 0.7
        assert std == 0.0

    def test_population_normalization(self):
        mean, std = aggregate_seeds([0, 0, 0, 0, 1])
        assert abs(mean - 0.2) < 1e-15
        assert abs(std - 0.4) < 1e-15

    def test_permutation_invariance(self, rng):
        v = rng.uniform(0, 1, 5)
        assert aggregate_seeds(v) == aggregate_seeds(v[::-1])

    def test_report_consistency(self):
        r = EvalReport.from_values("c", "MFCC", (0, 1, 2, 3, 4), (0.9, 0.91, 0.92, 0.93, 0.94))
        mean, std = aggregate_seeds(r.values)
        assert abs(r.mean - mean) < 1e-12
        assert abs(r.std - std) < 1e-12


class TestDescriptors:
    def test_whitebox_blackbox_seven_rows(self):
        desc = whitebox_blackbox_descriptor()
        assert [c.cell_id for c in desc.cells] == [
            "white/white",
            "white/black",
            "black/white",
            "black/black",
            "white&black/white&black",
            "white&black/white",
            "white&black/black",
        ]
        assert desc.features == ("GFCC", "IGFCC", "IMFCC", "LFCC", "MFCC")
        assert desc.seeds == (0, 1, 2, 3, 4)

    def test_narrow_noise_30_cells_with_groups(self):
        desc = narrow_noise_descriptor()
        assert len(desc.cells) == 6 * 5
        groups = {c.group for c in desc.cells}
        assert groups == {"cafeteria", "bus", "square", "kitchen", "ssn", "bbl"}
        for cell in desc.cells:
            assert cell.train == cell.test

    def test_speech_nonspeech_rows(self):
        desc = speech_nonspeech_descriptor()
        assert len(desc.cells) == 7

    def test_noise_generalisation(self):
        desc = noise_generalisation_descriptor("bbl")
        assert len(desc.cells) == 10
        rest = [c for c in desc.cells if c.cell_id.startswith("rest_all_snr")]
        assert len(rest) == 5
        assert all("bbl" not in c.train.noises for c in rest)

    def test_json_round_trip(self, tmp_path):
        desc = whitebox_blackbox_descriptor(seeds=(0, 1), features=("MFCC",))
        path = tmp_path / "d.json"
        desc.to_json(path)
        back = ExperimentDescriptor.from_json(path)
        assert back.name == desc.name
        assert back.seeds == desc.seeds
        assert back.features == desc.features
        assert back.cells == desc.cells


def build_synthetic_caches(cache_dir, n=40):
    """Tiny feature caches from the synthetic corpus, all three splits."""
    from advdetect.dataset import split_of

    blocks = detection_blocks(n, n, seed=1)
    by_key = {}
    for block in blocks:
        split = split_of(block.source_id)
        by_key.setdefault((split, block.condition.key()), []).append(block)
    for (split, cond_key), group in by_key.items():
        for feature in ("IMFCC", "MFCC"):
            matrices = [extract_features(b, feature) for b in group]
            write_cache(
                cache_dir / split / f"{cond_key}__{feature}.fbc",
                feature,
                LabeledFeatureSet.from_matrices(matrices),
            )


class TestRunExperiment:
    def make_descriptor(self, seeds=(0,), features=("IMFCC",)):
        flt = ConditionFilter(attacks=("synthetic",))
        return ExperimentDescriptor(
            "unit", [ExperimentCell("syn/syn", flt, flt)], tuple(features), tuple(seeds)
        )

    def test_single_cell_single_seed(self, tmp_path, rng):
        build_synthetic_caches(tmp_path / "cache")
        desc = self.make_descriptor()
        cfg = TrainConfig(seed=0, max_epochs=2, patience=5)
        reports = run_experiment(desc, tmp_path / "cache", base_cfg=cfg)
        assert len(reports) == 1
        assert reports[0].cell_id == "syn/syn"
        assert len(reports[0].values) == 1
        assert 0.0 <= reports[0].values[0] <= 1.0

    def test_resume_skips_finished_jobs(self, tmp_path):
        build_synthetic_caches(tmp_path / "cache")
        desc = self.make_descriptor()
        cfg = TrainConfig(seed=0, max_epochs=2, patience=5)
        first = run_experiment(desc, tmp_path / "cache", tmp_path / "res", cfg)
        run_files = sorted((tmp_path / "res" / "runs").glob("*.json"))
        assert len(run_files) == 1
        stamp = run_files[0].stat().st_mtime_ns
        payload = json.loads(run_files[0].read_text())
        second = run_experiment(desc, tmp_path / "cache", tmp_path / "res", cfg)
        assert run_files[0].stat().st_mtime_ns == stamp  # not rewritten
        assert second[0].values == first[0].values
        assert payload["rocauc"] == first[0].values[0]

    def test_csv_rows_sorted_and_stable(self):
        reports = [
            EvalReport.from_values("b", "MFCC", (0,), (0.5,)),
            EvalReport.from_values("a", "IMFCC", (0,), (0.75,)),
        ]
        rows = reports_to_csv_rows(reports)
        assert rows[0] == ["cell_id", "feature", "n_seeds", "mean", "std", "values"]
        assert rows[1][0] == "a"
        assert rows[2][0] == "b"
        assert rows[1][3] == repr(0.75)

    def test_parallel_jobs_match_sequential(self, tmp_path):
        build_synthetic_caches(tmp_path / "cache", n=25)
        desc = self.make_descriptor(seeds=(0, 1))
        cfg = TrainConfig(seed=0, max_epochs=2, patience=5)
        sequential = run_experiment(desc, tmp_path / "cache", base_cfg=cfg, jobs=1)
        parallel = run_experiment(desc, tmp_path / "cache", base_cfg=cfg, jobs=2)
        assert sequential == parallel
