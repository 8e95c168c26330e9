import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sthdr.data_io import dihedral
from sthdr.errors import ConfigError, RangeError, ShapeError
from sthdr.objective import (PSNR_CAP, average_reports, evaluate_prediction, multiscale_l1, psnr,
                             ssim, tonemap)


def inverse_tonemap(t, mu=5000.0):
    return torch.expm1(t * math.log1p(mu)) / mu


class TestTonemap:
    def test_endpoints(self):
        out = tonemap(torch.tensor([0.0, 1.0], dtype=torch.float64))
        assert out[0] == 0 and abs(out[1] - 1) < 1e-12

    def test_reference_value(self):
        # log(501) / log(5001)
        assert abs(float(tonemap(torch.tensor(0.1, dtype=torch.float64))) - 0.729872) < 1e-5

    def test_numpy_input(self):
        assert torch.allclose(tonemap(np.array([0.1])), tonemap(torch.tensor([0.1], dtype=torch.float64)))

    @pytest.mark.parametrize("mu", [0.0, -1.0])
    def test_bad_mu(self, mu):
        with pytest.raises(ConfigError):
            tonemap(torch.tensor([0.5]), mu)

    def test_out_of_range(self):
        with pytest.raises(RangeError):
            tonemap(torch.tensor([1.01]))
        with pytest.raises(RangeError):
            tonemap(torch.tensor([-0.01]))
        # slightly outside is clamped
        assert float(tonemap(torch.tensor([1.0005]))) == pytest.approx(1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone_and_above_identity(self, a, b):
        lo, hi = sorted((a, b))
        t = tonemap(torch.tensor([lo, hi], dtype=torch.float64))
        assert t[0] <= t[1]
        assert t[0] >= lo - 1e-12 and t[1] >= hi - 1e-12


class TestLoss:
    def test_zero_for_exact_prediction(self):
        gt = torch.rand(2, 3, 16, 16)
        rep = multiscale_l1([gt], gt, (1.0,))
        assert rep.value == 0.0

    def test_constant_shift_in_tonemapped_domain(self):
        t_gt = torch.rand(1, 3, 8, 8, dtype=torch.float64) * 0.8
        gt, pred = inverse_tonemap(t_gt), inverse_tonemap(t_gt + 0.1)
        assert multiscale_l1([pred], gt, (1.0,)).value == pytest.approx(0.1, abs=1e-9)

    def test_constant_images_all_scales(self):
        gt = torch.full((1, 3, 16, 16), 0.05, dtype=torch.float64)
        pred = inverse_tonemap(tonemap(gt) + 0.2)
        preds = [pred, pred[..., ::2, ::2], pred[..., ::4, ::4]]
        rep = multiscale_l1(preds, gt, (1.0, 1.0, 1.0))
        assert rep.value == pytest.approx(0.6, abs=1e-9)
        assert rep.per_scale == pytest.approx([0.2] * 3, abs=1e-9)

    def test_total_is_weighted_sum(self):
        gen = torch.Generator().manual_seed(0)
        gt = torch.rand(1, 3, 16, 16, generator=gen)
        preds = [torch.rand(1, 3, 16 >> s, 16 >> s, generator=gen) for s in range(3)]
        lam = (1.0, 0.5, 0.25)
        rep = multiscale_l1(preds, gt, lam)
        assert rep.value == pytest.approx(sum(l * t for l, t in zip(lam, rep.per_scale)), rel=1e-6)

    def test_dihedral_invariance(self):
        gen = torch.Generator().manual_seed(1)
        gt, pred = torch.rand(2, 1, 3, 16, 16, generator=gen, dtype=torch.float64)
        base = multiscale_l1([pred], gt, (1.0,)).value
        for k in range(8):
            v = multiscale_l1([dihedral(pred, k)], dihedral(gt, k), (1.0,)).value
            assert v == pytest.approx(base, rel=1e-12)

    def test_stage1_terms(self):
        gt = torch.rand(1, 3, 8, 8)
        rep = multiscale_l1([gt], gt, (1.0,), stage1=[torch.zeros_like(gt)])
        assert rep.per_stage[1] == 0 and rep.value == pytest.approx(rep.per_stage[0])

    def test_shape_errors(self):
        gt = torch.rand(1, 3, 8, 8)
        with pytest.raises(ShapeError):
            multiscale_l1([gt, gt], gt, (1.0,))
        with pytest.raises(ShapeError):
            multiscale_l1([gt, gt], gt, (1.0, 1.0))

    def test_differentiable(self):
        pred = torch.rand(1, 3, 8, 8, requires_grad=True)
        multiscale_l1([pred], torch.rand(1, 3, 8, 8), (1.0,)).total.backward()
        assert pred.grad is not None and torch.isfinite(pred.grad).all()


class TestMetrics:
    def test_psnr_reference(self):
        a = torch.zeros(3, 8, 8, dtype=torch.float64)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_psnr_cap(self):
        a = torch.rand(3, 8, 8)
        assert psnr(a, a) == PSNR_CAP

    def test_psnr_decreases_with_noise(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0.2, 0.8, (3, 16, 16))
        noise = rng.standard_normal(a.shape)
        vals = [psnr(a, a + s * noise) for s in (0.001, 0.01, 0.1)]
        assert vals[0] > vals[1] > vals[2]

    def test_ssim_self(self):
        a = torch.rand(3, 32, 32)
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_ssim_constant_pair(self):
        # zero variance: (2ab + C1) / (a^2 + b^2 + C1)
        a, b = torch.full((1, 16, 16), 0.2), torch.full((1, 16, 16), 0.8)
        assert ssim(a, b) == pytest.approx(0.470666, abs=1e-5)

    def test_ssim_symmetric(self):
        gen = torch.Generator().manual_seed(0)
        a, b = torch.rand(2, 3, 20, 20, generator=gen)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_ssim_small_image(self):
        with pytest.raises(ShapeError):
            ssim(torch.rand(3, 8, 8), torch.rand(3, 8, 8))

    def test_evaluate_identity(self):
        gt = torch.rand(3, 16, 16)
        r = evaluate_prediction(gt, gt, "s")
        assert (r.psnr_mu, r.psnr_l) == (PSNR_CAP, PSNR_CAP)
        assert r.ssim_mu == pytest.approx(1.0) and r.ssim_l == pytest.approx(1.0)

    def test_average(self):
        gt = torch.rand(3, 16, 16)
        r1 = evaluate_prediction(gt * 0.9, gt, "a")
        r2 = evaluate_prediction(gt * 0.8, gt, "b")
        avg = average_reports([r1, r2])
        assert avg.scene_id == "average"
        assert avg.psnr_l == pytest.approx((r1.psnr_l + r2.psnr_l) / 2)
        assert len(avg.row()) == 5
