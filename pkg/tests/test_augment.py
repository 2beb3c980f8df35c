import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import beta as beta_fn

from actionseg.augment import (BatchItem, MixConfig, SmoothingConfig, apply_smoothlabelmix,
                               mix_pair, sample_mix_weight, smooth_labels)
from actionseg.data import one_hot


def make_batch(rng, n=4, t=12, k=3, v=2, tv=2, ci=4):
    items = []
    for _ in range(n):
        ids = rng.integers(k, size=t)
        items.append(BatchItem(
            motion=rng.normal(size=(t, v, 3)),
            valid=np.ones((t, v), dtype=bool),
            visual=rng.normal(size=(tv, ci)),
            labels=one_hot(ids, k)))
    return items


class TestSmoothingConfig:
    def test_even_linear_window_rejected(self):
        with pytest.raises(ValueError):
            SmoothingConfig(kind="linear", window=4)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError):
            SmoothingConfig(kind="gaussian", sigma=0.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            SmoothingConfig(kind="median")

    def test_gaussian_kernel_normalized(self):
        k = SmoothingConfig(kind="gaussian", sigma=1.5, radius=4).kernel()
        assert k.size == 9 and abs(k.sum() - 1.0) < 1e-12


class TestSmoothLabels:
    def test_constant_sequence_unchanged(self):
        labels = np.tile([0.0, 1.0], (10, 1))
        for cfg in (SmoothingConfig(kind="linear", window=3),
                    SmoothingConfig(kind="gaussian", sigma=1.0, radius=3)):
            np.testing.assert_allclose(smooth_labels(labels, cfg), labels, atol=1e-12)

    def test_step_with_linear_window3(self):
        labels = one_hot(np.array([0, 0, 1, 1]), 2)
        out = smooth_labels(labels, SmoothingConfig(kind="linear", window=3))
        np.testing.assert_allclose(out[:, 1], [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-12)
        np.testing.assert_allclose(out[:, 0], [1.0, 2 / 3, 1 / 3, 0.0], atol=1e-12)

    def test_symmetric_kernel_step_complement(self):
        labels = one_hot(np.array([0] * 6 + [1] * 6), 2)
        out = smooth_labels(labels, SmoothingConfig(kind="gaussian", sigma=1.2, radius=3))
        tau = 6
        assert abs(out[tau - 1, 1] + out[tau, 1] - 1.0) < 1e-9

    def test_original_returns_input(self, rng):
        labels = one_hot(rng.integers(3, size=8), 3)
        np.testing.assert_array_equal(smooth_labels(labels, SmoothingConfig(kind="original")),
                                      labels)

    @given(seed=st.integers(0, 10_000), kind=st.sampled_from(["linear", "gaussian"]))
    @settings(max_examples=50, deadline=None)
    def test_simplex_preserved(self, seed, kind):
        rng = np.random.default_rng(seed)
        labels = one_hot(rng.integers(4, size=20), 4)
        cfg = (SmoothingConfig(kind="linear", window=5) if kind == "linear"
               else SmoothingConfig(kind="gaussian", sigma=2.0, radius=5))
        out = smooth_labels(labels, cfg)
        assert np.all(out >= -1e-12)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)

    def test_mass_preserving_on_interior_constant_ends(self):
        # constant near both ends for >= kernel radius frames
        ids = np.array([0] * 5 + [1, 2, 1] + [2] * 5)
        labels = one_hot(ids, 3)
        cfg = SmoothingConfig(kind="gaussian", sigma=1.0, radius=3)
        out = smooth_labels(labels, cfg)
        np.testing.assert_allclose(out.sum(axis=0), labels.sum(axis=0), atol=1e-9)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_argmax_present_in_window(self, seed):
        rng = np.random.default_rng(seed)
        ids = rng.integers(4, size=15)
        cfg = SmoothingConfig(kind="linear", window=5)
        out = smooth_labels(one_hot(ids, 4), cfg)
        r = 2
        for t in range(15):
            window = ids[max(0, t - r):t + r + 1]
            assert np.argmax(out[t]) in window


class TestMixWeight:
    def test_deterministic_per_seed(self):
        cfg = MixConfig(beta_alpha=0.2)
        w1 = sample_mix_weight(np.random.default_rng(42), cfg)
        w2 = sample_mix_weight(np.random.default_rng(42), cfg)
        assert w1 == w2 and 0.0 < w1 < 1.0

    def test_empirical_mean(self):
        rng = np.random.default_rng(7)
        ws = rng.beta(0.2, 0.2, size=100_000)
        assert abs(ws.mean() - 0.5) < 0.01

    def test_tail_mass_matches_numerical_integration(self):
        a = 0.2
        pdf = lambda x: x ** (a - 1) * (1 - x) ** (a - 1) / beta_fn(a, a)
        tail, _ = integrate.quad(pdf, 0.0, 0.1)
        expected = 2 * tail  # symmetry: P(w<0.1) == P(w>0.9)
        rng = np.random.default_rng(3)
        ws = rng.beta(a, a, size=100_000)
        empirical = np.mean(ws < 0.1) + np.mean(ws > 0.9)
        assert abs(empirical - expected) < 0.03

    def test_invalid_alpha(self):
        with pytest.raises(ValueError):
            MixConfig(beta_alpha=0.0)


class TestMixPair:
    def test_endpoints(self, rng):
        x1, x2 = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        y1, y2 = one_hot(rng.integers(2, size=4), 2), one_hot(rng.integers(2, size=4), 2)
        xm, ym = mix_pair(x1, y1, x2, y2, 1.0)
        np.testing.assert_array_equal(xm, x1)
        np.testing.assert_array_equal(ym, y1)
        xm, ym = mix_pair(x1, y1, x2, y2, 0.0)
        np.testing.assert_array_equal(xm, x2)
        np.testing.assert_array_equal(ym, y2)

    def test_idempotent_on_equal_pair(self, rng):
        x = rng.normal(size=(3, 2))
        y = one_hot(rng.integers(2, size=3), 2)
        xm, ym = mix_pair(x, y, x, y, 0.37)
        np.testing.assert_allclose(xm, x)
        np.testing.assert_allclose(ym, y)

    def test_convex_combination(self):
        # w weights the first element: 0.25*2 + 0.75*6
        xm, _ = mix_pair(np.array(2.0), np.array([1.0]), np.array(6.0), np.array([1.0]), 0.25)
        assert xm == 5.0

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            mix_pair(np.zeros((2, 2)), np.zeros(2), np.zeros((3, 2)), np.zeros(2), 0.5)

    @given(seed=st.integers(0, 10_000), w=st.floats(0, 1))
    @settings(max_examples=50, deadline=None)
    def test_elementwise_convexity(self, seed, w):
        rng = np.random.default_rng(seed)
        x1, x2 = rng.normal(size=6), rng.normal(size=6)
        xm, _ = mix_pair(x1, np.zeros(1), x2, np.zeros(1), w)
        assert np.all(xm >= np.minimum(x1, x2) - 1e-12)
        assert np.all(xm <= np.maximum(x1, x2) + 1e-12)


class TestApplySmoothLabelMix:
    def test_identity_configuration(self, rng):
        batch = make_batch(rng)
        out = apply_smoothlabelmix(batch, SmoothingConfig(kind="original"),
                                   MixConfig(enabled=False), np.random.default_rng(0))
        for a, b in zip(batch, out):
            np.testing.assert_array_equal(a.motion, b.motion)
            np.testing.assert_array_equal(a.labels, b.labels)

    def test_forced_full_weight_recovers_smoothed(self, rng, monkeypatch):
        batch = make_batch(rng)
        smoothing = SmoothingConfig(kind="gaussian", sigma=1.0, radius=2)
        monkeypatch.setattr("actionseg.augment.sample_mix_weight", lambda r, c: 1.0)
        mixed = apply_smoothlabelmix(batch, smoothing, MixConfig(), np.random.default_rng(0))
        plain = apply_smoothlabelmix(batch, smoothing, MixConfig(enabled=False),
                                     np.random.default_rng(0))
        for a, b in zip(mixed, plain):
            np.testing.assert_allclose(a.motion, b.motion)
            np.testing.assert_allclose(a.labels, b.labels)
            np.testing.assert_allclose(a.visual, b.visual)

    def test_seeded_determinism(self, rng):
        batch = make_batch(rng)
        outs = []
        for _ in range(2):
            out = apply_smoothlabelmix(batch, SmoothingConfig(), MixConfig(),
                                       np.random.default_rng(99))
            outs.append(out)
        for a, b in zip(*outs):
            assert np.array_equal(a.motion, b.motion)
            assert np.array_equal(a.labels, b.labels)

    def test_small_batch_rejected(self, rng):
        with pytest.raises(ValueError, match="at least 2"):
            apply_smoothlabelmix(make_batch(rng, n=1), SmoothingConfig(), MixConfig(),
                                 np.random.default_rng(0))

    def test_no_self_pairing_and_simplex(self, rng):
        batch = make_batch(rng, n=5)
        for seed in range(20):
            out = apply_smoothlabelmix(batch, SmoothingConfig(), MixConfig(),
                                       np.random.default_rng(seed))
            for item in out:
                np.testing.assert_allclose(item.labels.sum(axis=1), 1.0, atol=1e-9)
                assert np.all(item.labels >= -1e-12)

    def test_simplex_preserved_many_batches(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            out = apply_smoothlabelmix(make_batch(rng, n=3), SmoothingConfig(),
                                       MixConfig(), rng)
            for item in out:
                np.testing.assert_allclose(item.labels.sum(axis=1), 1.0, atol=1e-9)
