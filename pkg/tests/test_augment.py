import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisy_sed.augment import (
    AugmentConfig, augment_batch, expected_masked_fraction, label_shift, mask_stripes, mixup,
    shift, spec_augment, time_freq_shift,
)


def _spec(seed=0, shape=(625, 128)):
    return np.random.default_rng(seed).normal(size=shape)


class TestSpecAugment:
    def test_zero_width_is_identity(self):
        x = _spec()
        cfg = AugmentConfig(time_mask_max=0, freq_mask_max=0)
        out = spec_augment(x, cfg, np.random.default_rng(0))
        assert out.tobytes() == x.tobytes()

    def test_single_stripe(self):
        x = _spec() + 10.0
        out = mask_stripes(x, [(100, 130)], [])
        assert not out[100:130].any()
        assert out[:100].tobytes() == x[:100].tobytes()
        assert out[130:].tobytes() == x[130:].tobytes()

    def test_masked_fraction_matches_expectation(self):
        cfg = AugmentConfig()
        rng = np.random.default_rng(0)
        ones = np.ones((625, 128))
        draws = [1.0 - spec_augment(ones, cfg, rng).mean() for _ in range(10000)]
        expected = expected_masked_fraction(625, 128, cfg.time_mask_max, cfg.freq_mask_max)
        assert abs(np.mean(draws) - expected) / expected < 0.02

    def test_mask_wider_than_axis(self):
        with pytest.raises(ValueError):
            spec_augment(np.ones((10, 8)), AugmentConfig(freq_mask_max=8), np.random.default_rng(0))


class TestMixup:
    def test_lambda_one(self):
        a = (_spec(1), np.ones((156, 10)))
        b = (_spec(2), np.zeros((156, 10)))
        x, y = mixup(a, b, 1.0)
        assert x.tobytes() == a[0].tobytes() and y.tobytes() == a[1].tobytes()

    def test_antisymmetric_cancels(self):
        x0 = _spec(3)
        x, _ = mixup((x0, None), (-x0, None), 0.5)
        assert not x.any()

    def test_label_cell(self):
        _, y = mixup((np.zeros(2), np.array([1.0])), (np.zeros(2), np.array([0.0])), 0.7)
        assert y[0] == pytest.approx(0.7, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mixup((np.zeros(3), None), (np.zeros(4), None), 0.5)
        with pytest.raises(ValueError):
            mixup((np.zeros(3), None), (np.zeros(3), None), 1.5)


class TestShift:
    def test_zero_shift(self):
        x, y = _spec(), (np.random.default_rng(0).uniform(size=(156, 10)) > 0.5).astype(float)
        xs, ys = shift(x, y, 0, 0)
        assert xs.tobytes() == x.tobytes() and ys.tobytes() == y.tobytes()

    def test_full_circle(self):
        x, y = _spec(), np.eye(156, 10)
        xs, ys = shift(x, y, 625, 0)
        assert xs.tobytes() == x.tobytes() and ys.tobytes() == y.tobytes()

    def test_four_frames_is_one_output_frame(self):
        assert label_shift(4, 625, 156) == 1
        y = np.zeros((156, 3))
        y[20, 1] = 1.0
        _, ys = shift(_spec(), y, 4, 0)
        assert ys[21, 1] == 1.0 and ys.sum() == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(-700, 700), st.integers(-130, 130), st.integers(0, 10_000))
    def test_preserves_values_and_label_mass(self, dt, df, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(625, 16))
        y = (rng.uniform(size=(156, 4)) > 0.7).astype(float)
        xs, ys = shift(x, y, dt, df)
        np.testing.assert_array_equal(np.sort(xs.ravel()), np.sort(x.ravel()))
        np.testing.assert_array_equal(ys.sum(axis=0), y.sum(axis=0))

    def test_zero_std_is_identity(self):
        cfg = AugmentConfig(shift_std_freq=0.0, shift_std_time=0.0)
        x = _spec()
        xs, _ = time_freq_shift(x, None, np.random.default_rng(0), cfg)
        assert xs.tobytes() == x.tobytes()


class TestBatch:
    def test_seeded_stream_is_reproducible(self):
        specs = np.stack([_spec(i, (625, 32)) for i in range(4)])
        labels = [np.zeros((156, 3)), np.ones((156, 3)), None, None]
        groups = ["strong", "strong", "unlabeled", "unlabeled"]
        a = augment_batch(specs, labels, groups, AugmentConfig(), np.random.default_rng(7))
        b = augment_batch(specs, labels, groups, AugmentConfig(), np.random.default_rng(7))
        assert a[0].tobytes() == b[0].tobytes()
        assert a[1][2] is None and a[1][0].shape == (156, 3)

    def test_all_off_is_identity(self):
        specs = np.stack([_spec(i, (625, 32)) for i in range(2)])
        out, _ = augment_batch(specs, [None, None], ["u", "u"], AugmentConfig(),
                               np.random.default_rng(0), masking=False, mixing=False, shifting=False)
        assert out.tobytes() == specs.tobytes()
