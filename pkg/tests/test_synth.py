import numpy as np

from advdetect.audio_io import read_wav, rms
from advdetect.dataset import read_labels_manifest, split_of
from advdetect.synth import (
    add_band_perturbation,
    bandlimited_noise,
    detection_blocks,
    speech_shaped_noise,
    write_smoke_corpus,
)


class TestGenerators:
    def test_speech_shaped_spectrum_tilt(self, rng):
        x = speech_shaped_noise(rng, 65536)
        spec = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(65536, 1 / 16000)
        low = spec[(f > 100) & (f < 400)].mean()
        high = spec[(f > 6000) & (f < 8000)].mean()
        assert low / high > 100.0  # strong low-frequency emphasis
        assert abs(rms(x) - 1.0) < 1e-9

    def test_bandlimited_energy_confined(self, rng):
        x = bandlimited_noise(rng, 16384, 6000, 8000)
        spec = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(16384, 1 / 16000)
        inside = spec[(f >= 6000) & (f <= 8000)].sum()
        outside = spec[f < 6000].sum()
        assert inside / max(outside, 1e-30) > 1e6

    def test_perturbation_level(self, rng):
        base = speech_shaped_noise(rng, 8192) * 0.1
        attacked = add_band_perturbation(base.copy(), rng)
        delta = attacked - base
        rel_db = 20 * np.log10(rms(delta) / rms(base))
        assert abs(rel_db - (-30.0)) < 0.5

    def test_detection_blocks_layout(self):
        blocks = detection_blocks(10, 12, seed=0)
        assert len(blocks) == 22
        labels = [b.label for b in blocks]
        assert labels.count("benign") == 10
        assert labels.count("adversarial") == 12
        assert len({b.source_id for b in blocks}) == 22

    def test_detection_blocks_deterministic(self):
        a = detection_blocks(5, 5, seed=3)
        b = detection_blocks(5, 5, seed=3)
        for x, y in zip(a, b):
            assert np.array_equal(x.samples, y.samples)


class TestSmokeCorpus:
    def test_writes_everything(self, tmp_path):
        manifest = write_smoke_corpus(tmp_path, n_utterances=20, seed=0)
        entries = read_labels_manifest(manifest)
        assert len(entries) == 20
        splits = {}
        labels_by_split = {}
        for e in entries:
            split = split_of(e.source_id)
            splits[split] = splits.get(split, 0) + 1
            labels_by_split.setdefault(split, set()).add(e.label)
        assert set(splits) == {"train", "validation", "test"}
        # every split holds both classes so training and scoring work
        for split, labels in labels_by_split.items():
            assert labels == {"benign", "adversarial"}
        for e in entries:
            signal = read_wav(tmp_path / "clean" / e.path)
            assert len(signal) >= 16000
        for name in ("ssn", "bbl"):
            noise = read_wav(tmp_path / "noise" / f"{name}.wav")
            assert len(noise) == 160000

    def test_deterministic_bytes(self, tmp_path):
        write_smoke_corpus(tmp_path / "a", n_utterances=8, seed=1)
        write_smoke_corpus(tmp_path / "b", n_utterances=8, seed=1)
        files_a = sorted((tmp_path / "a").rglob("*.wav"))
        files_b = sorted((tmp_path / "b").rglob("*.wav"))
        assert [f.name for f in files_a] == [f.name for f in files_b]
        for fa, fb in zip(files_a, files_b):
            assert fa.read_bytes() == fb.read_bytes()
