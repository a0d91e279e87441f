"""Loss tests: analytic values, seam continuity, finite-difference gradients,
and agreement between the numpy contract and the torch training path."""

import numpy as np
import numpy.testing as npt
import pytest
import torch

from s3po.erp_core import DistortionMap, build_distortion_map
from s3po.losses import (
    LossConfig,
    smooth_l1,
    smooth_l1_gradient,
    wss_l1,
    wss_l1_gradient,
    wss_l1_torch,
)

SUM = LossConfig(reduction="sum")
SUM_PLAIN = LossConfig(weighted=False, reduction="sum")


def _uniform_map(h, w, value=1.0):
    return DistortionMap(np.full((h, w), value))


class TestSmoothL1:
    def test_zero_at_equality(self):
        x = np.random.default_rng(0).random((4, 4, 3))
        assert smooth_l1(x, x, SUM_PLAIN) == 0.0

    def test_quadratic_branch_value(self):
        pred, gt = np.array([[[0.0]]]), np.array([[[0.5]]])
        npt.assert_allclose(smooth_l1(pred, gt, SUM_PLAIN), 0.125, atol=1e-15)

    def test_linear_branch_value(self):
        pred, gt = np.array([[[0.0]]]), np.array([[[2.0]]])
        npt.assert_allclose(smooth_l1(pred, gt, SUM_PLAIN), 1.5, atol=1e-15)

    def test_weighted_mean_is_plain_mean(self):
        rng = np.random.default_rng(1)
        pred, gt = rng.random((6, 8, 3)), rng.random((6, 8, 3))
        d = gt - pred
        terms = np.where(np.abs(d) < 1.0, 0.5 * d * d, np.abs(d) - 0.5)
        npt.assert_allclose(smooth_l1(pred, gt), terms.mean(), atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            smooth_l1(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestWssL1:
    def test_uniform_weights_match_plain(self):
        rng = np.random.default_rng(2)
        pred, gt = rng.random((6, 8, 3)), rng.random((6, 8, 3))
        dmap = _uniform_map(6, 8)
        npt.assert_allclose(wss_l1(pred, gt, dmap, SUM), smooth_l1(pred, gt, SUM_PLAIN), atol=1e-12)
        npt.assert_allclose(wss_l1(pred, gt, dmap), smooth_l1(pred, gt), atol=1e-12)

    def test_top_row_pixel_value(self):
        dmap = build_distortion_map(4, 4)
        gt = np.zeros((4, 4, 3))
        pred = np.zeros((4, 4, 3))
        pred[0, 0, 0] = -2.0  # d = 2 at a top-row pixel
        npt.assert_allclose(wss_l1(pred, gt, dmap, SUM), 1.5 * dmap.weights[0, 0], atol=1e-9)
        npt.assert_allclose(wss_l1(pred, gt, dmap, SUM), 0.57402, atol=1e-5)

    def test_zero_at_equality(self):
        rng = np.random.default_rng(3)
        x = rng.random((4, 6, 3))
        for beta in (0.5, 1.0, 2.0):
            assert wss_l1(x, x, build_distortion_map(4, 6), LossConfig(beta=beta)) == 0.0

    def test_nonnegative_and_strictly_positive_otherwise(self):
        rng = np.random.default_rng(4)
        dmap = build_distortion_map(5, 6)
        for _ in range(10):
            pred, gt = rng.random((5, 6, 3)), rng.random((5, 6, 3))
            value = wss_l1(pred, gt, dmap)
            assert value > 0

    def test_continuity_across_seam(self):
        beta = 1.0
        dmap = _uniform_map(1, 1, 0.7)
        gt = np.array([[[0.0]]])
        eps = 1e-9
        below = wss_l1(np.array([[[-(beta - eps)]]]), gt, dmap, SUM)
        above = wss_l1(np.array([[[-(beta + eps)]]]), gt, dmap, SUM)
        at = wss_l1(np.array([[[-beta]]]), gt, dmap, SUM)
        assert abs(below - at) < 1e-9 * 2
        assert abs(above - at) < 1e-9 * 2
        npt.assert_allclose(at, 0.5 * beta * 0.7, atol=1e-12)

    def test_monotone_in_error_scale(self):
        rng = np.random.default_rng(5)
        dmap = build_distortion_map(6, 6)
        gt = rng.random((6, 6, 3))
        d = rng.normal(0, 0.3, size=(6, 6, 3))
        values = [wss_l1(gt - s * d, gt, dmap) for s in (0.5, 1.0, 1.7, 2.5)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_doubling_weights(self):
        rng = np.random.default_rng(6)
        pred, gt = rng.random((4, 4, 3)), rng.random((4, 4, 3))
        base = build_distortion_map(4, 4)
        doubled = DistortionMap(base.weights * 2.0)
        npt.assert_allclose(
            wss_l1(pred, gt, doubled, SUM), 2.0 * wss_l1(pred, gt, base, SUM), rtol=1e-12
        )
        npt.assert_allclose(
            wss_l1(pred, gt, doubled), wss_l1(pred, gt, base), rtol=1e-12
        )


class TestGradient:
    def test_zero_at_equality(self):
        x = np.random.default_rng(7).random((4, 4, 3))
        grad = wss_l1_gradient(x, x, build_distortion_map(4, 4))
        npt.assert_array_equal(grad, np.zeros_like(x))

    def test_quadratic_branch_element(self):
        dmap = _uniform_map(1, 1)
        grad = wss_l1_gradient(np.array([[[0.0]]]), np.array([[[0.5]]]), dmap, SUM)
        npt.assert_allclose(grad, -0.5, atol=1e-15)

    @pytest.mark.parametrize("reduction", ["sum", "weighted_mean"])
    @pytest.mark.parametrize("beta", [0.5, 1.0])
    def test_matches_central_differences(self, reduction, beta):
        # |d| kept away from 0 so every per-element gradient stays well above
        # the cancellation noise of differencing the full scalar loss
        rng = np.random.default_rng(8)
        cfg = LossConfig(beta=beta, reduction=reduction)
        dmap = build_distortion_map(8, 8)
        gt = rng.random((8, 8, 3))
        magnitude = rng.uniform(0.15, 2.0, size=gt.shape)
        pred = gt - np.where(rng.random(gt.shape) < 0.5, -magnitude, magnitude)
        h = 1e-6
        analytic = wss_l1_gradient(pred, gt, dmap, cfg)
        seam = np.abs(np.abs(gt - pred) - beta) < 1e-6
        numeric = np.zeros_like(pred)
        for idx in np.ndindex(pred.shape):
            e = np.zeros_like(pred)
            e[idx] = h
            numeric[idx] = (wss_l1(pred + e, gt, dmap, cfg) - wss_l1(pred - e, gt, dmap, cfg)) / (2 * h)
        denom = np.maximum(np.abs(numeric), np.abs(analytic))
        rel = np.abs(numeric - analytic) / np.where(denom > 0, denom, 1.0)
        assert np.all(rel[~seam] < 1e-6)


class TestTorchParity:
    @pytest.mark.parametrize("reduction", ["sum", "weighted_mean"])
    def test_values_and_gradients_match(self, reduction):
        rng = np.random.default_rng(9)
        cfg = LossConfig(beta=1.0, reduction=reduction)
        dmap = build_distortion_map(6, 8)
        gt = rng.random((6, 8, 3))
        pred = gt + rng.normal(0, 0.7, size=gt.shape)
        expected = wss_l1(pred, gt, dmap, cfg)
        expected_grad = wss_l1_gradient(pred, gt, dmap, cfg)

        pred_t = torch.from_numpy(pred.transpose(2, 0, 1).copy()).requires_grad_(True)
        gt_t = torch.from_numpy(gt.transpose(2, 0, 1).copy())
        psi = torch.from_numpy(dmap.weights[None].copy())
        loss = wss_l1_torch(pred_t, gt_t, psi, cfg.beta, reduction)
        npt.assert_allclose(float(loss.detach()), expected, atol=1e-12)
        loss.backward()
        npt.assert_allclose(
            pred_t.grad.numpy().transpose(1, 2, 0), expected_grad, atol=1e-12
        )

    def test_unweighted_matches_plain(self):
        rng = np.random.default_rng(10)
        gt = rng.random((5, 7, 3))
        pred = gt + rng.normal(0, 0.4, size=gt.shape)
        pred_t = torch.from_numpy(pred.transpose(2, 0, 1).copy()).requires_grad_(True)
        gt_t = torch.from_numpy(gt.transpose(2, 0, 1).copy())
        loss = wss_l1_torch(pred_t, gt_t, None, 1.0, "weighted_mean")
        npt.assert_allclose(float(loss.detach()), smooth_l1(pred, gt), atol=1e-12)
        loss.backward()
        npt.assert_allclose(
            pred_t.grad.numpy().transpose(1, 2, 0),
            smooth_l1_gradient(pred, gt),
            atol=1e-12,
        )
