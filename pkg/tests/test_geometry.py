"""Pairwise geometry relations: hand oracles, exact invariances, mixing."""

import math

import numpy as np
import pytest
import torch

from radm.core import ModelConfig
from radm.geometry import GeometryRelationEncoder, relative_geometry, sin_cos_embed
from fdcheck import finite_diff_check

CFG = ModelConfig(roi_channels=4, roi_width=3, roi_height=3, geo_embed_dim=64,
                  geo_feature_dim=16)
EPS = CFG.eps_geo


def dyadic_boxes(seed: int, n: int, scale_bits: int = 10) -> torch.Tensor:
    """Random boxes whose coordinates are exact multiples of 2^-scale_bits,
    so translation by another dyadic value is exact in float64."""
    rng = np.random.default_rng(seed)
    q = 2**scale_bits
    cx = rng.integers(q // 8, q - q // 8, n) / q
    cy = rng.integers(q // 8, q - q // 8, n) / q
    w = rng.integers(q // 64, q // 4, n) / q
    h = rng.integers(q // 64, q // 4, n) / q
    return torch.tensor(np.stack([cx, cy, w, h], axis=-1), dtype=torch.float64)


class TestRelativeGeometry:
    def test_hand_oracle(self):
        boxes = torch.tensor([[0.5, 0.5, 0.2, 0.2], [0.3, 0.5, 0.1, 0.1]],
                             dtype=torch.float64)
        r = relative_geometry(boxes, EPS)
        want = [math.log(2.0), math.log(0.01), math.log(2.0), math.log(2.0)]
        assert r[0, 1].tolist() == pytest.approx(want, abs=1e-9)

    def test_diagonal(self):
        boxes = torch.tensor([[0.4, 0.6, 0.25, 0.5]], dtype=torch.float64)
        r = relative_geometry(boxes, EPS)
        assert float(r[0, 0, 2]) == 0.0  # log(w/w) exactly
        assert float(r[0, 0, 3]) == 0.0
        assert float(r[0, 0, 0]) == pytest.approx(math.log(EPS / 0.25), abs=1e-12)
        assert float(r[0, 0, 1]) == pytest.approx(math.log(EPS / 0.5), abs=1e-12)

    def test_translation_invariance_exact(self):
        for seed in range(10):
            boxes = dyadic_boxes(seed, n=8)
            shifted = boxes.clone()
            shifted[:, 0] += 0.0625   # exact dyadic shift
            shifted[:, 1] -= 0.03125
            assert torch.equal(relative_geometry(boxes, EPS),
                               relative_geometry(shifted, EPS))

    def test_scale_invariance_exact(self):
        # power-of-two scales keep every float op exact; off-diagonal centers
        # are kept far enough apart that the eps clamp never binds there (the
        # diagonal always clamps |dx| = 0 to eps, so it is excluded)
        off = ~torch.eye(6, dtype=torch.bool)
        for seed in range(10):
            boxes = dyadic_boxes(seed, n=6)
            # distinct centers on a 1/64 grid: every off-diagonal |dx|, |dy|
            # is >= 1/64 > eps / s for all tested s
            rng = np.random.default_rng(seed + 1000)
            boxes[:, 0] = torch.tensor(rng.permutation(np.arange(8, 56))[:6] / 64.0)
            boxes[:, 1] = torch.tensor(rng.permutation(np.arange(8, 56))[:6] / 64.0)
            base = relative_geometry(boxes, EPS)
            for s in (0.5, 2.0, 4.0):
                scaled = relative_geometry(boxes * s, EPS)
                assert torch.equal(base[off], scaled[off])
                # size-ratio components are scale-free even on the diagonal
                assert torch.equal(base[..., 2:], scaled[..., 2:])

    def test_batched_matches_single(self):
        a = dyadic_boxes(1, 5)
        b = dyadic_boxes(2, 5)
        batched = relative_geometry(torch.stack([a, b]), EPS)
        assert torch.equal(batched[0], relative_geometry(a, EPS))
        assert torch.equal(batched[1], relative_geometry(b, EPS))


class TestSinCosEmbed:
    def test_zero_gives_alternating_01(self):
        r = torch.zeros(1, 1, 4, dtype=torch.float64)
        e = sin_cos_embed(r, 64)[0, 0]
        assert torch.equal(e[0::2], torch.zeros(32, dtype=torch.float64))
        assert torch.equal(e[1::2], torch.ones(32, dtype=torch.float64))

    def test_unit_position_first_pair(self):
        r = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64)
        e = sin_cos_embed(r, 64)
        assert float(e[0]) == pytest.approx(math.sin(1.0), abs=1e-12)
        assert float(e[1]) == pytest.approx(math.cos(1.0), abs=1e-12)

    def test_range_bounded(self):
        r = torch.randn(3, 5, 5, 4, dtype=torch.float64) * 10
        e = sin_cos_embed(r, 64)
        assert e.shape == (3, 5, 5, 64)
        assert float(e.abs().max()) <= 1.0

    def test_frequency_ladder_matches_definition(self):
        # entry (component c, pair k) uses denominator 10000^(8k/d_h)
        d_h = 32
        val = 0.7
        r = torch.tensor([val, 0.0, 0.0, 0.0], dtype=torch.float64)
        e = sin_cos_embed(r, d_h)
        per = d_h // 4
        for k in range(d_h // 8):
            denom = 10000.0 ** (8.0 * k / d_h)
            assert float(e[2 * k]) == pytest.approx(math.sin(val / denom), abs=1e-12)
            assert float(e[2 * k + 1]) == pytest.approx(math.cos(val / denom), abs=1e-12)
        # second component occupies the next block of d_h/4 entries
        r2 = torch.tensor([0.0, val, 0.0, 0.0], dtype=torch.float64)
        e2 = sin_cos_embed(r2, d_h)
        assert float(e2[per]) == pytest.approx(math.sin(val), abs=1e-12)

    def test_bad_width(self):
        with pytest.raises(ValueError):
            sin_cos_embed(torch.zeros(1, 1, 4), 30)


class TestRelationWeights:
    def make(self, seed: int = 0) -> GeometryRelationEncoder:
        torch.manual_seed(seed)
        return GeometryRelationEncoder(CFG)

    def test_singleton(self):
        mod = self.make()
        w = mod.relation_weights(torch.tensor([[[0.5, 0.5, 0.2, 0.2]]]))
        assert w.shape == (1, 1, 1)
        assert float(w[0, 0, 0]) == 1.0

    def test_identical_boxes_uniform(self):
        mod = self.make()
        boxes = torch.tensor([[[0.5, 0.5, 0.2, 0.2]] * 4])
        w = mod.relation_weights(boxes)
        assert torch.allclose(w, torch.full_like(w, 0.25), atol=1e-9)

    def test_row_stochastic_random(self):
        mod = self.make()
        for seed in range(20):
            boxes = dyadic_boxes(seed, n=9).to(torch.float32)[None]
            w = mod.relation_weights(boxes)
            assert float(w.min()) >= 0.0
            sums = w.sum(dim=-1)
            assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_matches_scalar_softmax_oracle(self):
        mod = self.make().double()
        boxes = dyadic_boxes(3, n=5)[None]
        rel = relative_geometry(boxes, EPS)
        emb = sin_cos_embed(rel, CFG.geo_embed_dim)
        logits = mod.logit_project(emb).squeeze(-1)[0]
        w = mod.relation_weights(boxes)[0]
        for i in range(5):
            row = [math.exp(float(v)) for v in logits[i]]
            z = sum(row)
            for j in range(5):
                assert float(w[i, j]) == pytest.approx(row[j] / z, rel=1e-9)


class TestMixing:
    def make(self, seed: int = 0) -> GeometryRelationEncoder:
        torch.manual_seed(seed)
        return GeometryRelationEncoder(CFG)

    def rois(self, seed: int, n: int) -> torch.Tensor:
        g = torch.Generator().manual_seed(seed)
        return torch.randn(1, n, CFG.roi_channels, CFG.roi_height, CFG.roi_width,
                           generator=g)

    def test_identity_weights(self):
        mod = self.make()
        rois = self.rois(0, 4)
        eye = torch.eye(4)[None]
        with torch.no_grad():
            mixed = mod.mix(eye, rois)
            direct = mod.feature_project(rois.flatten(2))
        assert torch.allclose(mixed, direct, atol=1e-6)

    def test_uniform_weights_average(self):
        mod = self.make()
        rois = self.rois(1, 4)
        uniform = torch.full((1, 4, 4), 0.25)
        with torch.no_grad():
            mixed = mod.mix(uniform, rois)
            mean = mod.feature_project(rois.flatten(2)).mean(dim=1, keepdim=True)
        assert torch.allclose(mixed, mean.expand_as(mixed), atol=1e-6)

    def test_double_loop_oracle(self):
        mod = self.make().double()
        g = torch.Generator().manual_seed(2)
        n = 5
        rois = torch.randn(1, n, CFG.roi_channels, CFG.roi_height, CFG.roi_width,
                           dtype=torch.float64, generator=g)
        w = torch.rand(1, n, n, dtype=torch.float64, generator=g)
        with torch.no_grad():
            mixed = mod.mix(w, rois)
            proj = mod.feature_project(rois.flatten(2))[0]
        for i in range(n):
            want = sum(float(w[0, i, j]) * proj[j] for j in range(n))
            assert torch.allclose(mixed[0, i], want, atol=1e-6)

    def test_shape_errors(self):
        mod = self.make()
        with pytest.raises(ValueError):
            mod.mix(torch.eye(3)[None], self.rois(3, 4))
        with pytest.raises(ValueError):
            mod(torch.rand(1, 3, 4), self.rois(4, 4))


class TestGradients:
    def test_finite_difference_end_to_end(self):
        torch.manual_seed(21)
        mod = GeometryRelationEncoder(CFG).double()
        boxes = dyadic_boxes(5, n=4)[None]
        g = torch.Generator().manual_seed(22)
        rois = torch.randn(1, 4, CFG.roi_channels, CFG.roi_height, CFG.roi_width,
                           dtype=torch.float64, generator=g)
        probe = torch.randn(1, 4, CFG.geo_feature_dim, dtype=torch.float64, generator=g)

        def loss():
            return (mod(boxes, rois) * probe).sum()

        worst = finite_diff_check(loss, list(mod.parameters()), n_probes=25)
        assert worst <= 1e-3
