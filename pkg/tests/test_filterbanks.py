import numpy as np
import pytest

from advdetect.audio_io import Block, rms
from advdetect.dsp import frame_block, power_spectra
from advdetect.errors import BadSpec, ShapeMismatch
from advdetect.filterbanks import (
    FEATURE_NAMES,
    FEATURE_TO_FAMILY,
    FilterBankSpec,
    LOG_FLOOR,
    cepstra,
    erb,
    extract_features,
    gammatone_center_freqs,
    gammatone_filterbank,
    get_filterbank,
    invert_filterbank,
    linear_boundaries,
    linear_filterbank,
    make_filterbank,
    mel_filterbank,
    mel_inverse,
    mel_scale,
    supervector,
)
from advdetect.synth import add_band_perturbation, speech_shaped_noise


def spec_for(family, **kw):
    return FilterBankSpec(family=family, **kw)


class TestScales:
    def test_mel_zero(self):
        assert mel_scale(0.0) == 0.0

    def test_mel_700_is_1125_ln2(self):
        assert abs(mel_scale(700.0) - 1125.0 * np.log(2.0)) < 1e-9

    def test_mel_round_trip(self):
        for f in (100.0, 1000.0, 4000.0, 7999.0):
            assert abs(mel_inverse(mel_scale(f)) - f) <= 1e-9 * f

    def test_erb_1000(self):
        assert abs(erb(1000.0) - (1000.0 / 9.26 + 24.7)) < 1e-12
        assert abs(erb(1000.0) - 132.6913606911447) < 1e-9


class TestTriangularBanks:
    def test_linear_boundary_spacing(self):
        spec = spec_for("linear")
        bins = linear_boundaries(spec)
        hz = bins * spec.sample_rate / spec.frame_length
        spacing = np.diff(hz)
        assert np.allclose(spacing, 8000.0 / 21.0, rtol=0, atol=1e-9)

    def test_zero_outside_support(self):
        spec = spec_for("linear")
        fb = linear_filterbank(spec)
        bounds = linear_boundaries(spec)
        k = np.arange(spec.fft_bins)
        for m in range(spec.num_filters):
            outside = (k < bounds[m]) | (k > bounds[m + 2])
            assert np.all(fb.gains[m][outside] == 0.0)

    def test_peak_near_center_boundary(self):
        spec = spec_for("linear")
        fb = linear_filterbank(spec)
        bounds = linear_boundaries(spec)
        for m in range(spec.num_filters):
            peak_bin = int(np.argmax(fb.gains[m]))
            assert abs(peak_bin - bounds[m + 1]) <= 1.0

    @pytest.mark.parametrize("feature", ["LFCC", "MFCC", "IMFCC"])
    def test_rows_unimodal_nonnegative(self, feature):
        fb = get_filterbank(feature)
        for row in fb.gains:
            assert np.all(row >= 0.0)
            support = np.flatnonzero(row)
            assert support.size > 0
            assert np.array_equal(support, np.arange(support[0], support[-1] + 1))
            inner = row[support]
            peak = int(np.argmax(inner))
            assert np.all(np.diff(inner[: peak + 1]) >= 0)
            assert np.all(np.diff(inner[peak:]) <= 0)

    def test_mel_support_widths_monotone(self):
        widths = [np.flatnonzero(r).size for r in get_filterbank("MFCC").gains]
        assert all(b >= a for a, b in zip(widths, widths[1:]))
        inv_widths = [np.flatnonzero(r).size for r in get_filterbank("IMFCC").gains]
        assert all(b <= a for a, b in zip(inv_widths, inv_widths[1:]))

    def test_narrow_filters_warn_when_empty(self):
        with pytest.warns(UserWarning, match="cover no integer bin"):
            mel_filterbank(spec_for("mel", num_filters=200))


class TestGammatone:
    def test_center_frequency_formula(self):
        spec = spec_for("gammatone")
        fc = gammatone_center_freqs(spec)
        c = spec.gammatone_c
        g = np.arange(1, 21)
        expected = -c + (8000.0 + c) * np.exp(
            g * np.log10((0.0 + c) / (8000.0 + c)) / 20.0
        )
        assert np.allclose(fc, expected, rtol=0, atol=1e-9)

    def test_rows_peak_normalized(self):
        fb = gammatone_filterbank(spec_for("gammatone"))
        assert np.allclose(fb.gains.max(axis=1), 1.0, rtol=0, atol=0)

    def test_argmax_near_center_frequency(self):
        spec = spec_for("gammatone")
        fb = gammatone_filterbank(spec)
        fc = gammatone_center_freqs(spec)
        bin_hz = spec.sample_rate / spec.frame_length
        for g in range(spec.num_filters):
            peak_bin = int(np.argmax(fb.gains[g]))
            assert abs(peak_bin - fc[g] / bin_hz) <= 2.0

    def test_strictly_positive(self):
        fb = gammatone_filterbank(spec_for("gammatone"))
        assert np.all(fb.gains > 0.0)
        assert np.all(np.isfinite(fb.gains))


class TestInversion:
    @pytest.mark.parametrize("feature", FEATURE_NAMES)
    def test_involution_exact(self, feature):
        fb = get_filterbank(feature)
        back = invert_filterbank(invert_filterbank(fb))
        assert np.array_equal(back.gains, fb.gains)
        assert back.spec == fb.spec

    def test_double_flip_definition(self):
        fb = get_filterbank("MFCC")
        inv = invert_filterbank(fb)
        m, k = fb.gains.shape
        for i in range(m):
            assert np.array_equal(inv.gains[i], fb.gains[m - 1 - i][::-1])

    def test_inverse_mel_narrowest_at_high_frequencies(self):
        inv = get_filterbank("IMFCC")
        widths = [np.flatnonzero(r).size for r in inv.gains]
        narrowest = int(np.argmin(widths))
        support = np.flatnonzero(inv.gains[narrowest])
        assert support.mean() > 0.8 * inv.gains.shape[1]

    def test_symmetric_linear_bank_maps_to_itself(self):
        fb = linear_filterbank(spec_for("linear"))
        inv = invert_filterbank(fb)
        assert np.allclose(inv.gains, fb.gains, rtol=0, atol=1e-12)

    def test_make_filterbank_inverse_families(self):
        for family in ("inverse_mel", "inverse_gammatone"):
            fb = make_filterbank(spec_for(family))
            assert fb.spec.family == family


class TestSpecValidation:
    def test_bad_range(self):
        with pytest.raises(BadSpec):
            spec_for("mel", f_low=5000.0, f_high=4000.0)
        with pytest.raises(BadSpec):
            spec_for("mel", f_high=9000.0)

    def test_bad_family(self):
        with pytest.raises(BadSpec):
            spec_for("triangle")

    def test_all_banks_share_geometry(self):
        for feature in FEATURE_NAMES:
            fb = get_filterbank(feature)
            assert fb.gains.shape == (20, 257)
            assert fb.spec.f_low == 0.0
            assert fb.spec.f_high == 8000.0


class TestCepstra:
    def test_zero_power(self):
        fb = get_filterbank("MFCC")
        features = cepstra(np.zeros((31, 257)), fb)
        expected_c0 = np.sqrt(20.0) * np.log(LOG_FLOOR)
        assert np.allclose(features.coeffs[:, 0], expected_c0, rtol=0, atol=1e-9)
        assert np.all(np.abs(features.coeffs[:, 1:]) < 1e-9)

    def test_output_shape(self, rng):
        fb = get_filterbank("LFCC")
        features = cepstra(rng.uniform(0, 1, (31, 257)), fb)
        assert features.coeffs.shape == (31, 20)

    def test_scaling_shifts_only_c0(self, rng):
        fb = get_filterbank("MFCC")
        power = rng.uniform(0.5, 2.0, (31, 257))
        alpha = 7.3
        base = cepstra(power, fb).coeffs
        scaled = cepstra(alpha * power, fb).coeffs
        shift = np.sqrt(20.0) * np.log(alpha)
        assert np.allclose(scaled[:, 0] - base[:, 0], shift, rtol=0, atol=1e-6)
        assert np.max(np.abs(scaled[:, 1:] - base[:, 1:])) < 1e-6

    def test_shape_mismatch(self, rng):
        fb = get_filterbank("MFCC")
        with pytest.raises(ShapeMismatch):
            cepstra(rng.uniform(0, 1, (31, 129)), fb)
        with pytest.raises(ShapeMismatch):
            cepstra(rng.uniform(0, 1, (30, 257)), fb)

    def test_never_nan_for_nonnegative_power(self, rng):
        fb = get_filterbank("IGFCC")
        power = rng.uniform(0, 1e-12, (31, 257))  # near-silent
        features = cepstra(power, fb)
        assert np.all(np.isfinite(features.coeffs))


class TestExtractFeatures:
    def make_block(self, rng, perturbed=False):
        x = speech_shaped_noise(rng, 8192) * 0.1
        if perturbed:
            x = add_band_perturbation(x, rng)
        return Block(x, "benign", "t", 0)

    def test_deterministic(self, rng):
        block = self.make_block(rng)
        a = extract_features(block, "GFCC")
        b = extract_features(block, "GFCC")
        assert np.array_equal(a.coeffs, b.coeffs)

    def test_zero_block(self):
        block = Block(np.zeros(8192), "benign", "z", 0)
        features = extract_features(block, "MFCC")
        expected_c0 = np.sqrt(20.0) * np.log(LOG_FLOOR)
        assert np.allclose(features.coeffs[:, 0], expected_c0, rtol=0, atol=1e-9)

    def test_provenance_carried(self, rng):
        block = self.make_block(rng)
        features = extract_features(block, "LFCC")
        assert features.source_id == "t"
        assert features.block_index == 0
        assert features.label == "benign"
        assert features.feature_name == "LFCC"

    def test_high_band_perturbation_moves_imfcc_more(self):
        # a -30 dB band-limited 6-8 kHz overlay must displace the
        # high-resolution inverse-Mel features more than Mel features
        rng = np.random.default_rng(99)
        base = speech_shaped_noise(rng, 8192) * 0.1
        perturbed = add_band_perturbation(base.copy(), rng, speech_rms=rms(base))
        clean_block = Block(base, "benign", "p", 0)
        attacked_block = Block(perturbed, "adversarial", "p", 0)
        dist = {}
        for feature in ("IMFCC", "MFCC"):
            a = extract_features(clean_block, feature).coeffs
            b = extract_features(attacked_block, feature).coeffs
            dist[feature] = np.linalg.norm(a - b)
        assert dist["IMFCC"] > dist["MFCC"]

    def test_pipeline_composition(self, rng):
        block = self.make_block(rng)
        fb = get_filterbank("MFCC")
        by_hand = cepstra(power_spectra(frame_block(block.samples)), fb)
        assert np.array_equal(
            extract_features(block, "MFCC").coeffs, by_hand.coeffs
        )

    def test_supervector(self, rng):
        features = extract_features(self.make_block(rng), "MFCC")
        sv = supervector(features)
        assert sv.shape == (620,)
        assert np.array_equal(sv[:20], features.coeffs[0])

    def test_feature_name_map(self):
        assert FEATURE_TO_FAMILY == {
            "LFCC": "linear",
            "MFCC": "mel",
            "IMFCC": "inverse_mel",
            "GFCC": "gammatone",
            "IGFCC": "inverse_gammatone",
        }
