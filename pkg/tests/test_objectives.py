import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vstpp.model import LEVELS, LevelPrediction, PredictionSet
from vstpp.objectives import (
    BETA2,
    GroundTruth,
    bce,
    boundary_gt,
    f_measure_curve,
    mae,
    max_f,
    sgd_step,
    total_loss,
)
from vstpp.tensor import Param, Tensor, backward
from vstpp import tensor as T

GRIDS = {"1/16": (2, 2), "1/8": (4, 4), "1/4": (8, 8), "1": (32, 32)}


def constant_predictions(value):
    levels = {}
    for lv in LEVELS:
        m = Tensor(np.full(GRIDS[lv], value))
        levels[lv] = LevelPrediction(m, m, m, m)
    return PredictionSet(levels)


def brute_max_f(pred, gt, n=256, beta2=0.3):
    best = 0.0
    pos = gt > 0.5
    for t in np.linspace(0, 1, n):
        tp = fp = 0
        for p, g in zip(pred.reshape(-1), pos.reshape(-1)):
            if p > t:
                if g:
                    tp += 1
                else:
                    fp += 1
        if tp + fp == 0:
            continue
        prec = tp / (tp + fp)
        rec = tp / pos.sum()
        if beta2 * prec + rec == 0:
            continue
        best = max(best, (1 + beta2) * prec * rec / (beta2 * prec + rec))
    return best


def brute_sobel(s):
    h, w = s.shape
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    out = np.zeros_like(s)
    for i in range(h):
        for j in range(w):
            gx = gy = 0.0
            for a in range(3):
                for b in range(3):
                    v = s[min(max(i + a - 1, 0), h - 1), min(max(j + b - 1, 0), w - 1)]
                    gx += kx[a][b] * v
                    gy += kx[b][a] * v
            out[i, j] = 1.0 if math.hypot(gx, gy) > 0 else 0.0
    return out


binary_maps = arrays(np.float64, (6, 7), elements=st.sampled_from([0.0, 1.0]))


class TestBce:
    def test_half_is_ln2(self):
        assert math.isclose(bce(np.full((3, 3), 0.5), np.ones((3, 3))).item(), math.log(2), rel_tol=1e-15)

    def test_closed_form(self):
        p, g = np.array([0.2, 0.9]), np.array([0.0, 1.0])
        assert math.isclose(bce(p, g).item(), -(math.log(0.8) + math.log(0.9)) / 2, rel_tol=1e-14)

    def test_clamp(self):
        assert math.isclose(bce(np.array([0.0]), np.array([1.0])).item(), -math.log(1e-7), rel_tol=1e-12)
        assert math.isfinite(bce(np.array([1.0]), np.array([0.0])).item())

    def test_perfect_prediction_is_near_zero(self):
        assert bce(np.array([1.0, 0.0]), np.array([1.0, 0.0])).item() < 1e-6

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0, 1), st.sampled_from([0.0, 1.0]))
    def test_convex_in_prediction(self, a, b, lam, g):
        f = lambda p: bce(np.array([p]), np.array([g])).item()  # noqa: E731
        assert f(lam * a + (1 - lam) * b) <= lam * f(a) + (1 - lam) * f(b) + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bce(np.ones(3) * 0.5, np.ones(4))


class TestTotalLoss:
    def test_sixteen_ln2(self):
        gt = GroundTruth((np.random.default_rng(0).random((32, 32)) > 0.5).astype(float))
        report = total_loss(constant_predictions(0.5), gt)
        assert len(report.terms) == 16
        assert abs(report.total.item() - 16 * math.log(2)) < 1e-9
        assert abs(report.saliency.item() - 8 * math.log(2)) < 1e-9

    def test_kind_filter(self):
        gt = GroundTruth(np.zeros((32, 32)))
        report = total_loss(constant_predictions(0.5), gt, kinds=("sup",))
        assert {k[1] for k in report.terms} == {"sup"}
        assert abs(report.total.item() - 8 * math.log(2)) < 1e-12

    def test_downsampled_targets(self):
        sal = np.zeros((32, 32))
        sal[:16] = 1.0
        gt = GroundTruth(sal)
        s, b = gt.at((4, 4))
        np.testing.assert_array_equal(s, np.repeat([[1.0], [1.0], [0.0], [0.0]], 4, axis=1))
        assert b.shape == (4, 4)

    def test_values_dict(self):
        gt = GroundTruth(np.zeros((32, 32)))
        vals = total_loss(constant_predictions(0.5), gt).values()
        assert "1/4/den/boundary" in vals and "L_total" in vals


class TestBoundary:
    def test_matches_brute_force(self, rng):
        for _ in range(10):
            s = (rng.random((7, 9)) > 0.6).astype(float)
            np.testing.assert_array_equal(boundary_gt(s), brute_sobel(s))

    def test_constant_maps_have_no_boundary(self):
        assert not boundary_gt(np.zeros((5, 5))).any()
        assert not boundary_gt(np.ones((5, 5))).any()

    def test_square_edge_is_two_pixels_thick(self):
        s = np.zeros((8, 8))
        s[2:6, 2:6] = 1
        b = boundary_gt(s)
        assert b[1, 3] == 1 and b[2, 3] == 1 and b[3, 3] == 0 and b[0, 3] == 0

    @settings(max_examples=40, deadline=None)
    @given(binary_maps)
    def test_complement_invariant(self, s):
        np.testing.assert_array_equal(boundary_gt(s), boundary_gt(1 - s))

    def test_rejects_soft_maps(self):
        with pytest.raises(ValueError):
            boundary_gt(np.full((3, 3), 0.5))


class TestMetrics:
    def test_identities(self, rng):
        gt = (rng.random((8, 8)) > 0.5).astype(float)
        assert max_f(gt, gt) == 1.0
        assert max_f(1 - gt, gt) == 0.0
        assert mae(gt, gt) == 0.0

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            gt = (rng.random((8, 8)) > 0.5).astype(float)
            gt[0, 0] = 1.0
            pred = rng.random((8, 8))
            assert abs(max_f(pred, gt) - brute_max_f(pred, gt)) < 1e-12

    def test_strict_threshold(self):
        # a prediction of exactly 1 is never above the last threshold; 0 is never above the first
        _, f = f_measure_curve(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        assert f[-1] == 0.0
        expected = (1 + BETA2) * 1.0 * 1.0 / (BETA2 + 1.0)
        assert math.isclose(f[0], expected)

    def test_undefined_without_positives(self):
        with pytest.raises(ValueError):
            max_f(np.ones((2, 2)), np.zeros((2, 2)))

    def test_mae(self):
        assert math.isclose(mae(np.array([0.2, 0.6]), np.array([0.0, 1.0])), 0.3)
        with pytest.raises(ValueError):
            mae(np.ones(2), np.ones(3))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(0, 1)))
    def test_max_f_in_unit_interval(self, pred):
        gt = np.zeros((4, 4))
        gt[1:3, 1:3] = 1
        assert 0.0 <= max_f(pred, gt) <= 1.0


class TestSgd:
    def test_quadratic_converges(self):
        target = np.array([1.0, -2.0, 0.5])
        p = Param(np.zeros(3))
        for _ in range(200):
            diff = p - Tensor(target)
            backward(T.sum(T.mul(diff, diff)))
            sgd_step([p], 0.1)
        np.testing.assert_allclose(p.data, target, atol=1e-12)

    def test_single_step_and_reset(self):
        p = Param(np.array([1.0]))
        backward(T.sum(T.mul(p, p)))
        sgd_step([p], 0.25)
        np.testing.assert_allclose(p.data, [0.5])
        assert not p.grad.any()
