import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from unmixsr.cfda import (CFDA, CoarseFlowPredictor, ConcatFusion,
                          FlowSimilarityRefiner, SubpixelRefiner,
                          modulated_deform_conv)
from unmixsr.errors import InvalidArgumentError
from unmixsr.layers import perturb_parameters_


def rand(shape, seed, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=gen, dtype=dtype)


def deform_conv_oracle(feat, offsets, masks, weight, bias):
    """Brute-force per-pixel gather: scalar loops, clamped bilinear sampling."""
    feat = feat.numpy()
    offsets = offsets.numpy()
    masks = masks.numpy()
    weight = weight.numpy()
    bias = bias.numpy() if bias is not None else None
    n, cin, h, w = feat.shape
    cout, _, k, _ = weight.shape
    center = (k - 1) / 2.0

    def sample(b, c, y, x):
        x = min(max(x, 0.0), w - 1.0)
        y = min(max(y, 0.0), h - 1.0)
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
        fx, fy = x - x0, y - y0
        return ((1 - fy) * ((1 - fx) * feat[b, c, y0, x0] + fx * feat[b, c, y0, x1])
                + fy * ((1 - fx) * feat[b, c, y1, x0] + fx * feat[b, c, y1, x1]))

    out = np.zeros((n, cout, h, w))
    for b in range(n):
        for oc in range(cout):
            for y in range(h):
                for x in range(w):
                    acc = bias[oc] if bias is not None else 0.0
                    for j in range(k * k):
                        gy = j // k - center
                        gx = j % k - center
                        sy = y + gy + offsets[b, 2 * j + 1, y, x]
                        sx = x + gx + offsets[b, 2 * j, y, x]
                        m = masks[b, j, y, x]
                        for ic in range(cin):
                            acc += weight[oc, ic, j // k, j % k] * m * \
                                sample(b, ic, sy, sx)
                    out[b, oc, y, x] = acc
    return torch.from_numpy(out)


class TestModulatedDeformConv:
    def test_degenerate_equals_standard_conv(self):
        feat = rand((1, 3, 8, 8), 0)
        weight = rand((2, 3, 3, 3), 1) - 0.5
        bias = rand((2,), 2) - 0.5
        offsets = torch.zeros(1, 18, 8, 8, dtype=torch.float64)
        masks = torch.ones(1, 9, 8, 8, dtype=torch.float64)
        out = modulated_deform_conv(feat, offsets, masks, weight, bias)
        expected = F.conv2d(F.pad(feat, (1, 1, 1, 1), mode="replicate"), weight, bias)
        assert torch.allclose(out, expected, atol=1e-5)

    def test_uniform_integer_offset_shifts_input(self):
        feat = rand((1, 2, 8, 10), 3)
        weight = rand((2, 2, 3, 3), 4) - 0.5
        bias = torch.zeros(2, dtype=torch.float64)
        offsets = torch.zeros(1, 18, 8, 10, dtype=torch.float64)
        offsets[:, 0::2] = 3.0  # dx for every tap
        masks = torch.ones(1, 9, 8, 10, dtype=torch.float64)
        out = modulated_deform_conv(feat, offsets, masks, weight, bias)
        std = F.conv2d(F.pad(feat, (1, 1, 1, 1), mode="replicate"), weight, bias)
        assert torch.allclose(out[:, :, 1:-1, :5], std[:, :, 1:-1, 3:8], atol=1e-5)

    @pytest.mark.parametrize("seed", [10, 11, 12, 13, 14])
    def test_matches_brute_force_oracle(self, seed):
        gen = torch.Generator().manual_seed(seed)
        feat = torch.rand((1, 4, 8, 8), generator=gen, dtype=torch.float64)
        offsets = (torch.rand((1, 18, 8, 8), generator=gen, dtype=torch.float64)
                   * 4.0 - 2.0)
        masks = torch.rand((1, 9, 8, 8), generator=gen, dtype=torch.float64)
        weight = torch.rand((4, 4, 3, 3), generator=gen, dtype=torch.float64) - 0.5
        bias = torch.rand((4,), generator=gen, dtype=torch.float64) - 0.5
        out = modulated_deform_conv(feat, offsets, masks, weight, bias)
        expected = deform_conv_oracle(feat, offsets, masks, weight, bias)
        assert (out - expected).abs().max() < 1e-5

    def test_channel_mismatch_rejected(self):
        feat = rand((1, 3, 4, 4), 0)
        weight = rand((2, 4, 3, 3), 1)
        with pytest.raises(InvalidArgumentError):
            modulated_deform_conv(feat, torch.zeros(1, 18, 4, 4),
                                  torch.ones(1, 9, 4, 4), weight)

    def test_wrong_offset_channels_rejected(self):
        feat = rand((1, 3, 4, 4), 0)
        weight = rand((2, 3, 3, 3), 1)
        with pytest.raises(InvalidArgumentError):
            modulated_deform_conv(feat, torch.zeros(1, 6, 4, 4),
                                  torch.ones(1, 9, 4, 4), weight)


class TestCoarseFlowPredictor:
    def test_fresh_predictor_outputs_zero_flow(self):
        mod = CoarseFlowPredictor(width=6, down=2).double()
        flow = mod(rand((1, 6, 8, 8), 0), rand((1, 6, 8, 8), 1))
        assert flow.shape == (1, 2, 8, 8)
        assert torch.all(flow == 0.0)

    @pytest.mark.parametrize("width", [3, 6])
    def test_output_shape_for_any_width(self, width):
        mod = CoarseFlowPredictor(width=width, down=4).double()
        perturb_parameters_(mod, seed=2)
        flow = mod(rand((2, width, 8, 8), 0), rand((2, width, 8, 8), 1))
        assert flow.shape == (2, 2, 8, 8)

    def test_matches_interpolation_of_low_res_prediction(self):
        mod = CoarseFlowPredictor(width=4, down=4).double()
        perturb_parameters_(mod, seed=7)
        feat = rand((1, 4, 16, 16), 8)
        ref = rand((1, 4, 16, 16), 9)
        flow = mod(feat, ref)
        pooled = F.avg_pool2d(torch.cat([feat, ref], dim=1), 4)
        low = mod.predict(pooled)
        expected = F.interpolate(low, size=(16, 16), mode="bilinear",
                                 align_corners=False)
        assert torch.allclose(flow, expected, atol=1e-6)

    def test_bad_down_rejected(self):
        with pytest.raises(InvalidArgumentError):
            CoarseFlowPredictor(width=4, down=3)

    def test_non_divisible_raster_rejected(self):
        mod = CoarseFlowPredictor(width=4, down=4).double()
        with pytest.raises(InvalidArgumentError):
            mod(rand((1, 4, 10, 10), 0), rand((1, 4, 10, 10), 1))


class TestFlowSimilarityRefiner:
    def test_fresh_refiner_passes_flow_through(self):
        mod = FlowSimilarityRefiner(width=5).double()
        coarse = rand((1, 2, 6, 6), 0) * 2 - 1
        flow, sim = mod(rand((1, 5, 6, 6), 1), rand((1, 5, 6, 6), 2), coarse)
        assert torch.equal(flow, coarse)
        assert torch.all(sim == 0.5)

    def test_similarity_in_open_interval(self):
        mod = FlowSimilarityRefiner(width=5).double()
        perturb_parameters_(mod, seed=3, std=0.5)
        _, sim = mod(rand((1, 5, 6, 6), 1), rand((1, 5, 6, 6), 2),
                     torch.zeros(1, 2, 6, 6, dtype=torch.float64))
        assert torch.all(sim > 0.0) and torch.all(sim < 1.0)

    def test_gradient_wrt_features(self):
        mod = FlowSimilarityRefiner(width=3).double()
        perturb_parameters_(mod, seed=4, std=0.3)
        feat = rand((1, 3, 5, 5), 5).requires_grad_(True)
        ref = rand((1, 3, 5, 5), 6)
        coarse = rand((1, 2, 5, 5), 7) * 0.6 + 0.1
        proj_f = rand((1, 2, 5, 5), 8)
        proj_s = rand((1, 1, 5, 5), 9)
        flow, sim = mod(feat, ref, coarse)
        loss = (flow * proj_f).sum() + (sim * proj_s).sum()
        (grad,) = torch.autograd.grad(loss, feat)
        eps = 1e-6
        for (c, i, j) in [(0, 1, 1), (1, 2, 3), (2, 4, 4), (0, 0, 2)]:
            plus = feat.detach().clone()
            plus[0, c, i, j] += eps
            minus = feat.detach().clone()
            minus[0, c, i, j] -= eps
            with torch.no_grad():
                fp, sp = mod(plus, ref, coarse)
                fm, sm = mod(minus, ref, coarse)
                fd = ((fp * proj_f).sum() + (sp * proj_s).sum()
                      - (fm * proj_f).sum() - (sm * proj_s).sum()) / (2 * eps)
            denom = max(abs(float(fd)), abs(float(grad[0, c, i, j])), 1e-8)
            assert abs(float(fd) - float(grad[0, c, i, j])) / denom < 1e-3


class TestSubpixelRefiner:
    def test_fresh_refiner_broadcasts_flow(self):
        mod = SubpixelRefiner(width=4, kernel_size=3, omega=2.0, n_bands=2).double()
        flow = rand((1, 2, 6, 6), 0) * 3 - 1.5
        sim = torch.full((1, 1, 6, 6), 0.7, dtype=torch.float64)
        params = mod(rand((1, 4, 6, 6), 1), rand((1, 4, 6, 6), 2), flow, sim)
        assert params.offsets.shape == (1, 18, 6, 6)
        assert params.masks.shape == (1, 9, 6, 6)
        for j in range(9):
            assert torch.equal(params.offsets[:, 2 * j], flow[:, 0])
            assert torch.equal(params.offsets[:, 2 * j + 1], flow[:, 1])
        assert torch.all(params.masks == 0.5)

    def test_activation_bounds(self):
        mod = SubpixelRefiner(width=4, kernel_size=3, omega=2.0, n_bands=2).double()
        perturb_parameters_(mod, seed=5, std=0.5)
        flow = rand((1, 2, 6, 6), 3) * 4 - 2
        sim = rand((1, 1, 6, 6), 4) * 0.98 + 0.01
        params = mod(rand((1, 4, 6, 6), 1), rand((1, 4, 6, 6), 2), flow, sim)
        assert torch.all(params.masks > 0.0) and torch.all(params.masks < 1.0)
        broadcast = flow.unsqueeze(1).expand(1, 9, 2, 6, 6).reshape(1, 18, 6, 6)
        assert (params.offsets - broadcast).abs().max() <= 1.0

    def test_unit_similarity_reduces_to_sigmoid(self):
        mod = SubpixelRefiner(width=4, kernel_size=3, omega=2.0, n_bands=2).double()
        perturb_parameters_(mod, seed=6, std=0.5)
        flow = rand((1, 2, 6, 6), 3)
        ones = torch.ones(1, 1, 6, 6, dtype=torch.float64)
        params = mod(rand((1, 4, 6, 6), 1), rand((1, 4, 6, 6), 2), flow, ones)
        mask_np = params.masks.detach().numpy()
        raw_np = params.mask_residual.detach().numpy()
        for j in range(9):
            for y in range(6):
                for x in range(6):
                    expected = 1.0 / (1.0 + math.exp(-raw_np[0, j, y, x]))
                    assert abs(mask_np[0, j, y, x] - expected) < 1e-6


class TestCFDA:
    def test_all_zero_weights_give_zero_output(self):
        mod = CFDA(width=4, kernel_size=3, down=2, omega=2.0, n_bands=2).double()
        with torch.no_grad():
            for p in mod.parameters():
                p.zero_()
        out = mod(rand((1, 4, 8, 8), 0), rand((1, 4, 8, 8), 1))
        assert torch.all(out == 0.0)

    def test_output_shape_preserved(self):
        mod = CFDA(width=5, kernel_size=3, down=2, omega=2.0, n_bands=2).double()
        perturb_parameters_(mod, seed=1)
        feat = rand((2, 5, 8, 12), 2)
        out = mod(feat, rand((2, 5, 8, 12), 3))
        assert out.shape == feat.shape

    def test_deterministic(self):
        mod = CFDA(width=4, kernel_size=3, down=2, omega=2.0, n_bands=2).double()
        perturb_parameters_(mod, seed=2)
        feat = rand((1, 4, 8, 8), 4)
        ref = rand((1, 4, 8, 8), 5)
        assert torch.equal(mod(feat, ref), mod(feat, ref))

    def test_gradient_wrt_reference(self):
        mod = CFDA(width=3, kernel_size=3, down=2, omega=2.0, n_bands=2).double()
        perturb_parameters_(mod, seed=7, std=0.2)
        feat = rand((1, 3, 6, 6), 8)
        ref = rand((1, 3, 6, 6), 9).requires_grad_(True)
        proj = rand((1, 3, 6, 6), 10)
        loss = (mod(feat, ref) * proj).sum()
        (grad,) = torch.autograd.grad(loss, ref)
        eps = 1e-6
        checked = 0
        for (c, i, j) in [(0, 1, 1), (1, 3, 2), (2, 4, 4), (0, 2, 5), (1, 0, 0)]:
            plus = ref.detach().clone()
            plus[0, c, i, j] += eps
            minus = ref.detach().clone()
            minus[0, c, i, j] -= eps
            with torch.no_grad():
                fd = ((mod(feat, plus) * proj).sum()
                      - (mod(feat, minus) * proj).sum()) / (2 * eps)
            analytic = float(grad[0, c, i, j])
            denom = max(abs(float(fd)), abs(analytic), 1e-8)
            assert abs(float(fd) - analytic) / denom < 1e-3
            checked += 1
        assert checked == 5


class TestConcatFusion:
    def test_shape_and_mismatch(self):
        mod = ConcatFusion(width=4).double()
        out = mod(rand((1, 4, 6, 6), 0), rand((1, 4, 6, 6), 1))
        assert out.shape == (1, 4, 6, 6)
        with pytest.raises(InvalidArgumentError):
            mod(rand((1, 4, 6, 6), 0), rand((1, 4, 5, 6), 1))
