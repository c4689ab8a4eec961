"""Image, RoI, and text feature extraction.

Small self-contained encoders stand in for heavyweight pretrained backbones:
a strided conv pyramid over the resized background raster, a hand-rolled
bilinear RoI pooler with scale-based pyramid level selection, and a hashed
bag-of-tokens text encoder with a sinusoidal length embedding. All are
ordinary torch modules, trainable end-to-end, and every consumer talks to
them through FeaturePyramid / TextFeatures so alternative feature producers
(e.g. precomputed tensors from a real backbone) can be dropped in.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import MIN_BOX_SIZE, ModelConfig

# Default raster size every background image is resized to (width, height).
CANVAS_W = 384
CANVAS_H = 600


@dataclass
class FeaturePyramid:
    """Multi-scale image features: (stride, (B, C, H_l, W_l)) per level."""

    levels: list[tuple[int, torch.Tensor]]

    def __post_init__(self) -> None:
        if not self.levels:
            raise ValueError("pyramid needs at least one level")
        strides = [s for s, _ in self.levels]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"strides must be strictly increasing, got {strides}")
        channels = {f.shape[1] for _, f in self.levels}
        if len(channels) != 1:
            raise ValueError(f"all levels must share channel count, got {channels}")

    @property
    def batch_size(self) -> int:
        return self.levels[0][1].shape[0]

    @property
    def channels(self) -> int:
        return self.levels[0][1].shape[1]


@dataclass
class TextFeatures:
    """Padded per-slogan feature rows: tokens (B, D_n, d), mask (B, D_n).

    mask[b, j] is True for real slogans; padding rows are exactly zero.
    """

    tokens: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self) -> None:
        if self.tokens.ndim != 3 or self.mask.shape != self.tokens.shape[:2]:
            raise ValueError(
                f"inconsistent shapes: tokens {tuple(self.tokens.shape)}, "
                f"mask {tuple(self.mask.shape)}"
            )


def _to_canvas_batch(images) -> torch.Tensor:
    """Rasters -> float32 (B, 3, CANVAS_H, CANVAS_W) in [0, 1].

    Accepts a single (H, W, 3) uint8 array, a stacked (B, H, W, 3) array, or
    a list of (H, W, 3) arrays of possibly different sizes.
    """
    if isinstance(images, (list, tuple)):
        singles = [_to_canvas_batch(im) for im in images]
        return torch.cat(singles, dim=0)
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3 or arr.shape[1] == 0 or arr.shape[2] == 0:
        raise ValueError(f"expected (B, H, W, 3) RGB raster, got shape {arr.shape}")
    t = torch.from_numpy(np.ascontiguousarray(arr).copy()).to(torch.float32) / 255.0
    t = t.permute(0, 3, 1, 2)
    if t.shape[2:] != (CANVAS_H, CANVAS_W):
        t = F.interpolate(
            t, size=(CANVAS_H, CANVAS_W), mode="bilinear", align_corners=False
        )
    return t


class ConvPyramidEncoder(nn.Module):
    """Strided conv net producing a 3-level feature pyramid (strides 8/16/32).

    The input raster is resized to CANVAS_W x CANVAS_H first, so box
    coordinates stay resolution-independent.
    """

    def __init__(self, cfg: ModelConfig, stem_channels: int = 16):
        super().__init__()
        c = cfg.roi_channels
        self.stem_channels = stem_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, stem_channels, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(stem_channels, c, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.down16 = nn.Sequential(
            nn.Conv2d(c, c, 3, stride=2, padding=1), nn.ReLU(inplace=True)
        )
        self.down32 = nn.Sequential(
            nn.Conv2d(c, c, 3, stride=2, padding=1), nn.ReLU(inplace=True)
        )
        self.lateral = nn.ModuleList([nn.Conv2d(c, c, 1) for _ in range(3)])

    def forward(self, images) -> FeaturePyramid:
        x = _to_canvas_batch(images)
        f8 = self.stem(x)
        f16 = self.down16(f8)
        f32 = self.down32(f16)
        return FeaturePyramid(
            levels=[
                (8, self.lateral[0](f8)),
                (16, self.lateral[1](f16)),
                (32, self.lateral[2](f32)),
            ]
        )


def _bilinear_pool_level(
    feat: torch.Tensor, boxes: torch.Tensor, out_h: int, out_w: int
) -> torch.Tensor:
    """Pool every box against one feature map.

    feat (B, C, H_l, W_l), boxes (B, N, 4) center-format normalized ->
    (B, N, C, out_h, out_w). One bilinear sample per output cell, taken at
    the cell center; sample points are clamped to the map border.
    """
    bsz, ch, hl, wl = feat.shape
    n = boxes.shape[1]
    cx, cy, w, h = boxes.unbind(-1)
    x1 = cx - w / 2.0
    y1 = cy - h / 2.0

    ux = (torch.arange(out_w, dtype=feat.dtype) + 0.5) / out_w  # (out_w,)
    uy = (torch.arange(out_h, dtype=feat.dtype) + 0.5) / out_h  # (out_h,)
    # normalized sample coordinates, then continuous pixel coordinates where
    # pixel i covers [i/wl, (i+1)/wl) with its center at (i + 0.5) / wl
    xs = x1[..., None] + ux * w[..., None]            # (B, N, out_w)
    ys = y1[..., None] + uy * h[..., None]            # (B, N, out_h)
    px = (xs * wl - 0.5).clamp(0.0, wl - 1.0)
    py = (ys * hl - 0.5).clamp(0.0, hl - 1.0)

    ix0 = px.floor()
    iy0 = py.floor()
    fx = px - ix0                                      # (B, N, out_w)
    fy = py - iy0                                      # (B, N, out_h)
    ix0 = ix0.long()
    iy0 = iy0.long()
    ix1 = (ix0 + 1).clamp(max=wl - 1)
    iy1 = (iy0 + 1).clamp(max=hl - 1)

    flat = feat.reshape(bsz, ch, hl * wl)

    def gather(iy: torch.Tensor, ix: torch.Tensor) -> torch.Tensor:
        # iy (B, N, out_h), ix (B, N, out_w) -> (B, N, C, out_h, out_w)
        idx = iy[..., :, None] * wl + ix[..., None, :]          # (B, N, oh, ow)
        idx = idx.reshape(bsz, 1, -1).expand(bsz, ch, -1)
        vals = flat.gather(2, idx)
        return vals.reshape(bsz, ch, n, out_h, out_w).permute(0, 2, 1, 3, 4)

    wx0, wx1 = (1.0 - fx), fx                         # (B, N, out_w)
    wy0, wy1 = (1.0 - fy), fy                         # (B, N, out_h)
    w00 = wy0[..., :, None] * wx0[..., None, :]       # (B, N, oh, ow)
    w01 = wy0[..., :, None] * wx1[..., None, :]
    w10 = wy1[..., :, None] * wx0[..., None, :]
    w11 = wy1[..., :, None] * wx1[..., None, :]
    out = (
        gather(iy0, ix0) * w00[:, :, None]
        + gather(iy0, ix1) * w01[:, :, None]
        + gather(iy1, ix0) * w10[:, :, None]
        + gather(iy1, ix1) * w11[:, :, None]
    )
    return out


def select_pyramid_level(boxes: torch.Tensor, num_levels: int) -> torch.Tensor:
    """Scale-based level index per box: bigger boxes pool from coarser maps.

    level = clamp(floor(l0 + log2(sqrt(w * h))), 0, num_levels - 1) with
    l0 = num_levels, which sends a half-canvas box (sqrt(area) = 0.5) to the
    coarsest level and boxes at 1/16 canvas or below to the finest.
    """
    w = boxes[..., 2].clamp(min=MIN_BOX_SIZE)
    h = boxes[..., 3].clamp(min=MIN_BOX_SIZE)
    raw = num_levels + 0.5 * torch.log2(w * h)
    return raw.floor().long().clamp(0, num_levels - 1)


def roi_pool(pyr: FeaturePyramid, boxes: torch.Tensor, cfg: ModelConfig) -> torch.Tensor:
    """Bilinear RoI pooling with per-box pyramid level selection.

    boxes (B, N, 4) center-format normalized (expected post-clamp) ->
    (B, N, C, Hr, Wr). Differentiable w.r.t. the feature maps and the boxes.
    """
    if boxes.ndim != 3 or boxes.shape[-1] != 4:
        raise ValueError(f"boxes must be (B, N, 4), got {tuple(boxes.shape)}")
    if pyr.batch_size != boxes.shape[0]:
        raise ValueError(
            f"batch mismatch: pyramid {pyr.batch_size}, boxes {boxes.shape[0]}"
        )
    boxes = boxes.to(pyr.levels[0][1].dtype)
    levels = select_pyramid_level(boxes, len(pyr.levels))  # (B, N)
    per_level = [
        _bilinear_pool_level(feat, boxes, cfg.roi_height, cfg.roi_width)
        for _, feat in pyr.levels
    ]
    stacked = torch.stack(per_level, dim=0)                 # (L, B, N, C, Hr, Wr)
    sel = levels[None, ..., None, None, None].expand(1, *stacked.shape[1:])
    return stacked.gather(0, sel).squeeze(0)


def hash_token(token: str, vocab: int) -> int:
    """Stable token -> bucket id (process-independent, unlike builtin hash)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % vocab


def sinusoidal_encoding(pos: float, dim: int) -> torch.Tensor:
    """Alternating sin/cos position code: out[2k] = sin(pos / 10000^(2k/dim))."""
    if dim % 2 != 0:
        raise ValueError(f"encoding dim must be even, got {dim}")
    k = torch.arange(dim // 2, dtype=torch.float64)
    freq = torch.pow(10000.0, -2.0 * k / dim)
    out = torch.empty(dim, dtype=torch.float64)
    out[0::2] = torch.sin(pos * freq)
    out[1::2] = torch.cos(pos * freq)
    return out.to(torch.float32)


class HashedTextEncoder(nn.Module):
    """Bag-of-hashed-tokens slogan encoder.

    Row for a slogan = concat(content, length): content (3d/4) is the mean of
    learned embeddings of blake2b-hashed whitespace tokens; length (d/4) is a
    fixed sinusoidal code of the character count. Rows beyond the real
    slogans are zero with mask False.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.content_dim = 3 * cfg.text_dim // 4
        self.length_dim = cfg.text_dim - self.content_dim
        self.embedding = nn.Embedding(cfg.text_vocab, self.content_dim)
        nn.init.normal_(self.embedding.weight, std=0.02)

    def encode_one(self, slogan: str) -> torch.Tensor:
        ids = [hash_token(t, self.cfg.text_vocab) for t in slogan.lower().split()]
        if ids:
            content = self.embedding(torch.tensor(ids, dtype=torch.long)).mean(0)
        else:
            content = torch.zeros(self.content_dim)
        length = sinusoidal_encoding(float(len(slogan)), self.length_dim)
        return torch.cat([content, length])

    def forward(self, batch: list[list[str]]) -> TextFeatures:
        d_n = self.cfg.max_slogans
        rows = []
        mask = torch.zeros(len(batch), d_n, dtype=torch.bool)
        for b, slogans in enumerate(batch):
            if len(slogans) > d_n:
                raise ValueError(
                    f"{len(slogans)} slogans exceed capacity {d_n}; truncate explicitly"
                )
            sample = torch.zeros(d_n, self.cfg.text_dim)
            for j, slogan in enumerate(slogans):
                sample[j] = self.encode_one(slogan)
                mask[b, j] = True
            rows.append(sample)
        return TextFeatures(tokens=torch.stack(rows), mask=mask)


def save_pyramid(directory: str | Path, sample_id: str, pyr: FeaturePyramid) -> Path:
    """Persist a single-sample pyramid as {sample_id}.npz (float32 arrays)."""
    if pyr.batch_size != 1:
        raise ValueError("precomputed pyramids are stored one sample at a time")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {
        f"level_{k}": feat[0].detach().numpy().astype(np.float32)
        for k, (_, feat) in enumerate(pyr.levels)
    }
    arrays["strides"] = np.array([s for s, _ in pyr.levels], dtype=np.int64)
    path = directory / f"{sample_id}.npz"
    np.savez(path, **arrays)
    return path


class PrecomputedPyramidProvider:
    """Serves pyramids from a directory of {sample_id}.npz files.

    Lets real pretrained backbone features replace the toy conv encoder
    without any change to downstream modules.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"no such feature directory: {self.directory}")

    def load(self, sample_ids: list[str]) -> FeaturePyramid:
        per_sample = []
        strides: np.ndarray | None = None
        for sid in sample_ids:
            path = self.directory / f"{sid}.npz"
            if not path.exists():
                raise FileNotFoundError(f"no precomputed features for sample {sid!r}")
            with np.load(path) as z:
                s = z["strides"]
                if strides is None:
                    strides = s
                elif not np.array_equal(strides, s):
                    raise ValueError(f"stride mismatch in {path}")
                per_sample.append(
                    [torch.from_numpy(z[f"level_{k}"]) for k in range(len(s))]
                )
        assert strides is not None
        levels = [
            (int(strides[k]), torch.stack([row[k] for row in per_sample]))
            for k in range(len(strides))
        ]
        return FeaturePyramid(levels=levels)
