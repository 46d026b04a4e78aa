import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from unmixsr.errors import InvalidArgumentError
from unmixsr.warp import (bilinear_resize, bilinear_sample, bilinear_warp,
                          fractional_flow, positional_encode)


def rand_feat(shape, seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=gen, dtype=dtype)


class TestBilinearWarp:
    def test_zero_flow_identity(self):
        feat = rand_feat((2, 3, 6, 7))
        flow = torch.zeros(2, 2, 6, 7, dtype=torch.float64)
        assert torch.equal(bilinear_warp(feat, flow), feat)

    def test_integer_flow_shifts_indices(self):
        feat = rand_feat((1, 2, 8, 9))
        flow = torch.zeros(1, 2, 8, 9, dtype=torch.float64)
        flow[:, 0] = 2.0  # dx
        flow[:, 1] = 1.0  # dy
        out = bilinear_warp(feat, flow)
        assert torch.equal(out[:, :, :7, :7], feat[:, :, 1:, 2:])

    def test_half_pixel_flow_on_ramp_is_midpoint(self):
        ramp = torch.arange(8, dtype=torch.float64).view(1, 1, 1, 8).repeat(1, 1, 5, 1)
        flow = torch.zeros(1, 2, 5, 8, dtype=torch.float64)
        flow[:, 0] = 0.5
        out = bilinear_warp(ramp, flow)
        expected = ramp[:, :, :, :7] + 0.5
        assert torch.allclose(out[:, :, :, :7], expected, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            bilinear_warp(rand_feat((1, 2, 4, 4)), torch.zeros(1, 2, 4, 5))

    def test_border_replication(self):
        feat = rand_feat((1, 1, 4, 4))
        flow = torch.full((1, 2, 4, 4), 10.0, dtype=torch.float64)
        out = bilinear_warp(feat, flow)
        assert torch.equal(out[0, 0, -1, -1], feat[0, 0, -1, -1])
        assert torch.allclose(out, feat[0, 0, -1, -1].expand_as(out))

    def test_flow_gradient_matches_finite_differences(self):
        # non-integer sampling points only: bilinear has kinks at integers
        feat = rand_feat((1, 2, 6, 6), seed=3)
        gen = torch.Generator().manual_seed(4)
        flow = (torch.rand(1, 2, 6, 6, generator=gen, dtype=torch.float64)
                * 0.6 + 0.2)
        flow.requires_grad_(True)
        proj = rand_feat((1, 2, 6, 6), seed=5)
        loss = (bilinear_warp(feat, flow) * proj).sum()
        (grad,) = torch.autograd.grad(loss, flow)
        eps = 1e-6
        gen2 = torch.Generator().manual_seed(6)
        for _ in range(12):
            c = int(torch.randint(0, 2, (1,), generator=gen2))
            i = int(torch.randint(1, 5, (1,), generator=gen2))
            j = int(torch.randint(1, 5, (1,), generator=gen2))
            with torch.no_grad():
                plus = flow.detach().clone()
                plus[0, c, i, j] += eps
                minus = flow.detach().clone()
                minus[0, c, i, j] -= eps
                fd = ((bilinear_warp(feat, plus) * proj).sum()
                      - (bilinear_warp(feat, minus) * proj).sum()) / (2 * eps)
            analytic = grad[0, c, i, j]
            denom = max(abs(float(fd)), abs(float(analytic)), 1e-8)
            assert abs(float(fd) - float(analytic)) / denom < 1e-3


class TestBilinearResize:
    def test_matches_scalar_oracle(self):
        feat = rand_feat((1, 2, 3, 4), seed=9)
        out = bilinear_resize(feat, 6, 8)
        h_in, w_in = 3, 4
        for oy in range(6):
            sy = min(max((oy + 0.5) * (h_in / 6) - 0.5, 0.0), h_in - 1.0)
            y0 = int(math.floor(sy))
            y1 = min(y0 + 1, h_in - 1)
            fy = sy - y0
            for ox in range(8):
                sx = min(max((ox + 0.5) * (w_in / 8) - 0.5, 0.0), w_in - 1.0)
                x0 = int(math.floor(sx))
                x1 = min(x0 + 1, w_in - 1)
                fx = sx - x0
                for c in range(2):
                    v = ((1 - fy) * ((1 - fx) * feat[0, c, y0, x0]
                                     + fx * feat[0, c, y0, x1])
                         + fy * ((1 - fx) * feat[0, c, y1, x0]
                                 + fx * feat[0, c, y1, x1]))
                    assert float(out[0, c, oy, ox]) == pytest.approx(float(v), abs=1e-6)

    def test_identity_for_same_size(self):
        feat = rand_feat((1, 3, 5, 5))
        assert torch.equal(bilinear_resize(feat, 5, 5), feat)


class TestFractionalFlow:
    def test_examples(self):
        flow = torch.tensor([2.25, -1.75, 3.0, 0.0]).view(1, 2, 1, 2)
        frac = fractional_flow(flow)
        expected = torch.tensor([0.25, 0.25, 0.0, 0.0]).view(1, 2, 1, 2)
        assert torch.allclose(frac, expected, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(value=st.floats(-1e6, 1e6, allow_nan=False))
    def test_idempotent_and_bounded(self, value):
        flow = torch.full((1, 2, 1, 1), value, dtype=torch.float64)
        frac = fractional_flow(flow)
        assert torch.all(frac >= 0) and torch.all(frac < 1)
        assert torch.equal(fractional_flow(frac), frac)


class TestPositionalEncode:
    def test_zero_displacement(self):
        frac = torch.zeros(1, 2, 3, 3)
        pe = positional_encode(frac, omega=2.0, n_bands=3)
        assert pe.shape == (1, 12, 3, 3)
        assert torch.all(pe[:, :6] == 0.0)   # sin half
        assert torch.all(pe[:, 6:] == 1.0)   # cos half

    def test_worked_example(self):
        frac = torch.zeros(1, 2, 1, 1, dtype=torch.float64)
        frac[0, 0] = 0.25  # x component; y stays 0
        pe = positional_encode(frac, omega=2.0, n_bands=2)
        # channel layout: [sin x*2, sin x*4, sin y*2, sin y*4, cos ...]
        values = pe[0, :, 0, 0]
        expected = torch.tensor([math.sin(0.5), math.sin(1.0), 0.0, 0.0,
                                 math.cos(0.5), math.cos(1.0), 1.0, 1.0],
                                dtype=torch.float64)
        assert torch.allclose(values, expected, atol=1e-12)

    @pytest.mark.parametrize("n_bands", [1, 2, 4, 7])
    def test_channel_count_is_4n(self, n_bands):
        pe = positional_encode(torch.zeros(1, 2, 2, 2), 2.0, n_bands)
        assert pe.shape[1] == 4 * n_bands

    def test_bounded_and_periodic(self):
        gen = torch.Generator().manual_seed(11)
        frac = torch.rand(1, 2, 4, 4, generator=gen, dtype=torch.float64)
        omega, n = 2.0, 3
        pe = positional_encode(frac, omega, n)
        assert pe.min() >= -1.0 and pe.max() <= 1.0
        # each frequency channel is periodic with period 2*pi / omega**i
        for i in range(1, n + 1):
            shifted = positional_encode(frac + 2 * math.pi / omega ** i, omega, n)
            for comp in range(2):
                ch = comp * n + (i - 1)
                assert torch.allclose(pe[:, ch], shifted[:, ch], atol=1e-9)
                assert torch.allclose(pe[:, 2 * n + ch], shifted[:, 2 * n + ch],
                                      atol=1e-9)

    def test_invalid_parameters_rejected(self):
        frac = torch.zeros(1, 2, 2, 2)
        with pytest.raises(InvalidArgumentError):
            positional_encode(frac, 2.0, 0)
        with pytest.raises(InvalidArgumentError):
            positional_encode(frac, -1.0, 2)
