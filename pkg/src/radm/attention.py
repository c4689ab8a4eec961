"""Cross-attention from per-box visual features to slogan text tokens.

Each RoI's feature map, augmented with a projection of its own box
coordinates, queries the text tokens position-by-position; the attended text
values are projected back to the visual channel count. The result is a
text-informed feature map per box, exactly zero when no text is present.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .core import ModelConfig
from .encoders import TextFeatures


class VisualTextualAttention(nn.Module):
    """Single-head scaled dot-product attention: vision queries, text keys.

    Queries: every spatial position of every RoI, after concatenating a
    learned projection of the RoI's box (4 -> C, broadcast spatially) to the
    C-channel visual feature and projecting 2C -> C. Keys/values: learned
    projections of the text rows (d -> C). Padding tokens are excluded from
    the softmax; samples with no real tokens produce an all-zero output.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.roi_channels
        self.channels = c
        self.pos_project = nn.Linear(4, c)
        self.q_project = nn.Linear(2 * c, c)
        self.k_project = nn.Linear(cfg.text_dim, c)
        self.v_project = nn.Linear(cfg.text_dim, c)
        self.out_project = nn.Linear(c, c)

    def forward(
        self, rois: torch.Tensor, boxes: torch.Tensor, texts: TextFeatures
    ) -> torch.Tensor:
        """rois (B, N, C, Hr, Wr), boxes (B, N, 4) -> (B, N, C, Hr, Wr)."""
        if rois.ndim != 5:
            raise ValueError(f"rois must be (B, N, C, Hr, Wr), got {tuple(rois.shape)}")
        bsz, n, c, hr, wr = rois.shape
        if boxes.shape != (bsz, n, 4):
            raise ValueError(
                f"boxes shape {tuple(boxes.shape)} inconsistent with rois ({bsz}, {n})"
            )
        if texts.tokens.shape[0] != bsz:
            raise ValueError("text batch size does not match rois")

        pos = self.pos_project(boxes)                              # (B, N, C)
        pos_map = pos[..., None, None].expand(bsz, n, c, hr, wr)
        v_ip = torch.cat([rois, pos_map], dim=2)                   # (B, N, 2C, Hr, Wr)
        q_tokens = v_ip.flatten(3).transpose(2, 3)                 # (B, N, S, 2C)
        q = self.q_project(q_tokens)                               # (B, N, S, C)

        k = self.k_project(texts.tokens)                           # (B, D, C)
        v = self.v_project(texts.tokens)                           # (B, D, C)

        logits = torch.einsum("bnsc,bdc->bnsd", q, k) / math.sqrt(c)
        # a very negative (but finite) fill keeps the softmax NaN-free even
        # when every token of a sample is padding
        fill = torch.finfo(logits.dtype).min
        logits = logits.masked_fill(~texts.mask[:, None, None, :], fill)
        attn = torch.softmax(logits, dim=-1)
        attn = attn * texts.mask[:, None, None, :].to(attn.dtype)

        ctx = torch.einsum("bnsd,bdc->bnsc", attn, v)
        out = self.out_project(ctx)                                # (B, N, S, C)
        has_text = texts.mask.any(dim=1)                           # (B,)
        out = torch.where(
            has_text[:, None, None, None], out, torch.zeros_like(out)
        )
        return out.transpose(2, 3).reshape(bsz, n, c, hr, wr)

    def attention_weights(
        self, rois: torch.Tensor, boxes: torch.Tensor, texts: TextFeatures
    ) -> torch.Tensor:
        """Expose the (B, N, S, D) attention matrix for inspection/tests."""
        bsz, n, c, hr, wr = rois.shape
        pos = self.pos_project(boxes)
        pos_map = pos[..., None, None].expand(bsz, n, c, hr, wr)
        v_ip = torch.cat([rois, pos_map], dim=2)
        q = self.q_project(v_ip.flatten(3).transpose(2, 3))
        k = self.k_project(texts.tokens)
        logits = torch.einsum("bnsc,bdc->bnsd", q, k) / math.sqrt(c)
        fill = torch.finfo(logits.dtype).min
        logits = logits.masked_fill(~texts.mask[:, None, None, :], fill)
        attn = torch.softmax(logits, dim=-1)
        return attn * texts.mask[:, None, None, :].to(attn.dtype)
