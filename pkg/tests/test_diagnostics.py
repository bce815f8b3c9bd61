"""Tests for depth-based outlier detection and the evaluation metrics."""

import numpy as np
import pytest

from robfunc.diagnostics import (auc, default_bandwidth, fgg_detect, hmodal_depth, mspe,
                                 pairwise_l2, risee, risee_bar)
from robfunc.errors import GridMismatch, InsufficientData, UndefinedAUC, ZeroTruth
from robfunc.fd import FunctionalSample, Grid


def _constant_curves(levels, J=11):
    g = Grid.uniform(J)
    return FunctionalSample(np.repeat(np.asarray(levels, float)[:, None], J, axis=1), g)


class TestDepth:
    def test_pairwise_distances_of_constants(self):
        """On [0, 1] the L2 distance of two constants is their difference."""
        D = pairwise_l2(_constant_curves([0.0, 1.0, 3.0]))
        assert np.allclose(D, [[0, 1, 3], [1, 0, 2], [3, 2, 0]], atol=1e-12)

    def test_four_point_oracle(self):
        """Hand-computed depths for four constant curves with h = 1."""
        levels = np.array([0.0, 1.0, 2.0, 10.0])
        d = hmodal_depth(_constant_curves(levels), h=1.0)
        K = lambda u: np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)  # noqa: E731
        expected = [sum(K(a - b) for b in levels) for a in levels]
        assert np.allclose(d, expected, rtol=1e-12)
        assert np.argmin(d) == 3

    def test_self_term_included(self):
        d = hmodal_depth(_constant_curves([0.0, 100.0]), h=1.0)
        assert np.allclose(d, 1 / np.sqrt(2 * np.pi))

    def test_default_bandwidth(self):
        D = pairwise_l2(_constant_curves(np.arange(10.0)))
        off = D[np.triu_indices(10, 1)]
        assert default_bandwidth(D) == pytest.approx(np.quantile(off, 0.15))

    def test_needs_two_curves(self):
        with pytest.raises(InsufficientData):
            hmodal_depth(_constant_curves([1.0]))


class TestFGG:
    def _sample(self, seed, n=100, shift=0.0, n_out=0):
        rng = np.random.default_rng(seed)
        g = Grid.uniform(51)
        V = rng.standard_normal((n, 3)) @ np.vstack(
            [np.sin(np.pi * g.points), np.cos(np.pi * g.points), np.sin(2 * np.pi * g.points)])
        V[:n_out] += shift
        return FunctionalSample(V, g)

    def test_flags_shifted_curves(self):
        rep = fgg_detect(self._sample(0, shift=8.0, n_out=8), n_boot=50, seed=1)
        assert set(range(8)) <= set(rep.outliers)
        assert auc(-rep.depths, np.arange(100) < 8) >= 0.95

    def test_null_flags_few(self):
        """Under the null the bootstrap cutoff flags only a small share."""
        rep = fgg_detect(self._sample(1), n_boot=50, seed=2)
        assert rep.flagged.sum() <= 10

    def test_deterministic(self):
        s = self._sample(2, shift=5.0, n_out=5)
        a = fgg_detect(s, n_boot=20, seed=3)
        b = fgg_detect(s, n_boot=20, seed=3)
        assert a.cutoff == b.cutoff and np.array_equal(a.flagged, b.flagged)

    def test_no_bootstrap_uses_empirical_quantile(self):
        s = self._sample(3)
        rep = fgg_detect(s, n_boot=0)
        assert rep.cutoff == pytest.approx(np.quantile(rep.depths, 0.01))

    def test_small_sample(self):
        with pytest.raises(InsufficientData):
            fgg_detect(self._sample(4, n=5))

    def test_csv(self, tmp_path):
        rep = fgg_detect(self._sample(5), n_boot=0)
        lines = rep.to_csv(tmp_path / "depth.csv").read_text().splitlines()
        assert lines[0] == "id,depth,flagged" and len(lines) == 101


class TestRISEE:
    def test_exact_estimate(self):
        B = np.outer(np.arange(5.0), np.ones(7)) + 1
        assert risee(B, B) == 0.0

    def test_zero_estimate_is_one(self):
        B = np.random.default_rng(0).standard_normal((9, 9))
        assert risee(B, np.zeros_like(B)) == pytest.approx(1.0)

    def test_scaled_estimate(self):
        """beta_hat = 1.5 beta gives relative error 0.25."""
        B = np.ones((11, 11))
        assert risee(B, 1.5 * B) == pytest.approx(0.25)

    def test_zero_truth(self):
        with pytest.raises(ZeroTruth):
            risee(np.zeros((3, 3)), np.ones((3, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(GridMismatch):
            risee(np.ones((3, 3)), np.ones((3, 4)))

    def test_bar_median_then_mean(self):
        V = np.array([[0.1, 1.0], [0.2, 2.0], [0.9, 3.0]])
        assert risee_bar(V) == pytest.approx((0.2 + 2.0) / 2)

    def test_bar_ignores_missing(self):
        V = np.array([[0.1, np.nan], [0.3, 2.0]])
        assert risee_bar(V) == pytest.approx((0.2 + 2.0) / 2)


class TestMSPE:
    def test_constant_error(self):
        g = Grid.uniform(21)
        a = FunctionalSample(np.zeros((4, 21)), g)
        b = FunctionalSample(np.full((4, 21), 2.0), g)
        assert mspe(a, b) == pytest.approx(4.0)

    def test_arrays(self):
        assert mspe(np.zeros((2, 5)), np.ones((2, 5))) == pytest.approx(1.0)

    def test_grid_mismatch(self):
        a = FunctionalSample(np.zeros((2, 5)), Grid.uniform(5))
        b = FunctionalSample(np.zeros((2, 6)), Grid.uniform(6))
        with pytest.raises(GridMismatch):
            mspe(a, b)


class TestAUC:
    def test_perfect(self):
        assert auc([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1]) == 1.0

    def test_ties_count_half(self):
        """One tied pair out of four pairs: (3 + 0.5) / 4."""
        assert auc([0.5, 0.1, 0.5, 0.9], [0, 0, 1, 1]) == pytest.approx(0.875)

    def test_all_tied(self):
        assert auc(np.ones(6), [0, 1, 0, 1, 0, 1]) == pytest.approx(0.5)

    def test_reversed(self):
        assert auc([0.9, 0.8, 0.1, 0.2], [0, 0, 1, 1]) == 0.0

    def test_single_class(self):
        with pytest.raises(UndefinedAUC):
            auc([0.1, 0.2], [1, 1])
