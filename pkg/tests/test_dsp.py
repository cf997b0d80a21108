import numpy as np
import pytest

from advdetect.dsp import (
    FRAME_LENGTH,
    FRAME_SHIFT,
    FRAMES_PER_BLOCK,
    SPECTRUM_BINS,
    dct2,
    frame_block,
    frame_signal,
    idct2,
    num_frames,
    power_spectra,
    power_spectrum,
)
from advdetect.errors import BadCoeffCount
from oracles import dct2_direct, idct2_direct, power_spectrum_direct


class TestFraming:
    def test_zero_block(self):
        frames = frame_block(np.zeros(8192))
        assert frames.shape == (31, 512)
        assert np.all(frames == 0.0)

    def test_ones_block_gives_window(self):
        frames = frame_block(np.ones(8192))
        window = np.hamming(512)
        for row in frames:
            assert np.array_equal(row, window)

    def test_frame_count_is_31(self, rng):
        frames = frame_block(rng.standard_normal(8192))
        assert frames.shape == (FRAMES_PER_BLOCK, FRAME_LENGTH)
        assert FRAMES_PER_BLOCK == 31

    def test_frame_offsets(self, rng):
        x = rng.standard_normal(8192)
        raw = frame_signal(x)
        for i, row in enumerate(raw):
            assert np.array_equal(row, x[i * FRAME_SHIFT : i * FRAME_SHIFT + FRAME_LENGTH])

    def test_num_frames(self):
        assert num_frames(511) == 0
        assert num_frames(512) == 1
        assert num_frames(512 + 255) == 1
        assert num_frames(512 + 256) == 2
        assert num_frames(8192) == 31

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            frame_block(np.zeros(8000))


class TestPowerSpectrum:
    def test_zero_frame(self):
        assert np.all(power_spectrum(np.zeros(512)) == 0.0)

    def test_bin_centered_cosine(self):
        # 1000 Hz = bin 32 exactly; unwindowed unit cosine
        n = np.arange(512)
        frame = np.cos(2 * np.pi * 32 * n / 512)
        p = power_spectrum(frame)
        assert abs(p[32] - 128.0) < 1e-9  # N/4 = 512/4
        others = np.delete(p, 32)
        assert np.all(others < 1e-9)

    def test_parseval(self, rng):
        for _ in range(20):
            frame = rng.standard_normal(512)
            p = power_spectrum(frame)
            # two-sided total: interior one-sided bins appear twice
            two_sided = p[0] + p[256] + 2.0 * p[1:256].sum()
            energy = np.sum(frame**2)
            assert abs(two_sided - energy) <= 1e-9 * energy

    def test_against_direct_dft(self, rng):
        for _ in range(100):
            frame = rng.standard_normal(512)
            p = power_spectrum(frame)
            ref = power_spectrum_direct(frame)
            scale = np.maximum(np.abs(ref), 1e-12)
            assert np.max(np.abs(p - ref) / scale) < 1e-9

    def test_conjugate_symmetry(self, rng):
        x = rng.standard_normal(512)
        spec = np.fft.fft(x)
        for k in range(1, 256):
            assert abs(spec[k] - np.conj(spec[512 - k])) < 1e-10 * (1 + abs(spec[k]))

    def test_batch_matches_single(self, rng):
        frames = rng.standard_normal((31, 512))
        batch = power_spectra(frames)
        assert batch.shape == (31, SPECTRUM_BINS)
        for i in range(31):
            assert np.allclose(batch[i], power_spectrum(frames[i]), rtol=0, atol=1e-12)

    def test_nonnegative(self, rng):
        assert np.all(power_spectra(rng.standard_normal((31, 512))) >= 0.0)


class TestDct2:
    def test_constant_vector(self):
        c = dct2(np.ones(20), 20)
        assert abs(c[0] - np.sqrt(20)) < 1e-12
        assert np.all(np.abs(c[1:]) < 1e-12)

    def test_full_order_inverse(self, rng):
        x = rng.standard_normal(20)
        c = dct2(x, 20)
        assert np.max(np.abs(idct2(c) - x)) < 1e-10

    def test_single_mode(self):
        m = np.arange(20)
        x = np.cos(np.pi * 1 * (m + 0.5) / 20)
        c = dct2(x, 20)
        assert abs(c[1] - np.sqrt(10)) < 1e-10
        others = np.delete(c, 1)
        assert np.all(np.abs(others) < 1e-10)

    def test_orthonormal_norm_preserved(self, rng):
        for _ in range(50):
            x = rng.standard_normal(20)
            c = dct2(x, 20)
            assert abs(np.linalg.norm(x) - np.linalg.norm(c)) < 1e-10

    def test_against_direct_sum(self, rng):
        for _ in range(20):
            x = rng.standard_normal(20)
            c = dct2(x, 20)
            ref = dct2_direct(x, 20)
            assert np.max(np.abs(c - ref)) < 1e-10

    def test_inverse_against_direct(self, rng):
        c = rng.standard_normal(20)
        assert np.max(np.abs(idct2(c) - idct2_direct(c))) < 1e-10

    def test_truncation(self, rng):
        x = rng.standard_normal(25)
        c = dct2(x, 7)
        assert c.shape == (7,)
        assert np.array_equal(c, dct2(x, 25)[:7])

    def test_bad_coeff_count(self):
        with pytest.raises(BadCoeffCount):
            dct2(np.ones(20), 0)
        with pytest.raises(BadCoeffCount):
            dct2(np.ones(20), 21)

    def test_2d_rows(self, rng):
        x = rng.standard_normal((31, 20))
        c = dct2(x, 20)
        for i in range(31):
            assert np.allclose(c[i], dct2(x[i], 20), rtol=0, atol=1e-14)
