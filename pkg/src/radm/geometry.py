"""Pairwise box-geometry relations and relation-weighted feature mixing.

For every ordered box pair (i, j) a 4-component log-space relative position
vector is computed, expanded with a fixed sin/cos code, projected to a scalar
logit, and normalized row-wise into relation weights. Each box's geometry
feature is then the relation-weighted mixture of all boxes' projected RoI
features, letting spatially coupled elements (e.g. an underlay beneath a
text) inform each other.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .core import ModelConfig


def relative_geometry(boxes: torch.Tensor, eps_geo: float) -> torch.Tensor:
    """Log-space relative position features for all ordered pairs.

    boxes (..., N, 4) center-format -> (..., N, N, 4) where entry (i, j) is
    [log(max(|cx_i - cx_j|, eps) / w_j), log(max(|cy_i - cy_j|, eps) / h_j),
     log(w_i / w_j), log(h_i / h_j)].
    Translation-invariant; scale-invariant wherever the eps clamp does not
    bind. Sizes must be positive (boxes are expected post-clamp).
    """
    cx, cy, w, h = boxes.unbind(-1)
    dx = (cx.unsqueeze(-1) - cx.unsqueeze(-2)).abs().clamp(min=eps_geo)
    dy = (cy.unsqueeze(-1) - cy.unsqueeze(-2)).abs().clamp(min=eps_geo)
    r1 = torch.log(dx / w.unsqueeze(-2))
    r2 = torch.log(dy / h.unsqueeze(-2))
    r3 = torch.log(w.unsqueeze(-1) / w.unsqueeze(-2))
    r4 = torch.log(h.unsqueeze(-1) / h.unsqueeze(-2))
    return torch.stack([r1, r2, r3, r4], dim=-1)


def sin_cos_embed(rel: torch.Tensor, d_h: int) -> torch.Tensor:
    """Expand each of the 4 relation components into d_h/4 sin/cos values.

    Component value v contributes pairs (sin(v / 10000^(8k/d_h)),
    cos(v / 10000^(8k/d_h))) for k = 0 .. d_h/8 - 1, alternating sin/cos,
    components concatenated in order: (..., 4) -> (..., d_h).
    """
    if d_h % 8 != 0:
        raise ValueError(f"embedding width must be divisible by 8, got {d_h}")
    pairs = d_h // 8
    k = torch.arange(pairs, dtype=rel.dtype)
    freq = torch.pow(torch.tensor(10000.0, dtype=rel.dtype), -8.0 * k / d_h)
    ang = rel.unsqueeze(-1) * freq                        # (..., 4, pairs)
    emb = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1)
    return emb.flatten(-3)                                # (..., d_h)


class GeometryRelationEncoder(nn.Module):
    """Relation weights from pairwise geometry + weighted RoI feature mixing."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.logit_project = nn.Linear(cfg.geo_embed_dim, 1)
        flat = cfg.roi_channels * cfg.roi_width * cfg.roi_height
        self.feature_project = nn.Linear(flat, cfg.geo_feature_dim)

    def relation_weights(self, boxes: torch.Tensor) -> torch.Tensor:
        """boxes (B, N, 4) -> row-stochastic weights (B, N, N)."""
        rel = relative_geometry(boxes, self.cfg.eps_geo)
        emb = sin_cos_embed(rel, self.cfg.geo_embed_dim)
        logits = self.logit_project(emb).squeeze(-1)
        return torch.softmax(logits, dim=-1)

    def mix(self, weights: torch.Tensor, rois: torch.Tensor) -> torch.Tensor:
        """Relation-weighted mixture: weights (B, N, N), rois (B, N, C, Hr, Wr)
        -> (B, N, d_t) where row i = sum_j weights[i, j] * project(flat(roi_j))."""
        if weights.shape[1] != rois.shape[1] or weights.shape[1] != weights.shape[2]:
            raise ValueError(
                f"weights {tuple(weights.shape)} and rois {tuple(rois.shape)} disagree on N"
            )
        projected = self.feature_project(rois.flatten(2))  # (B, N, d_t)
        return torch.einsum("bij,bjd->bid", weights, projected)

    def forward(self, boxes: torch.Tensor, rois: torch.Tensor) -> torch.Tensor:
        """boxes (B, N, 4), rois (B, N, C, Hr, Wr) -> features (B, N, d_t)."""
        if boxes.shape[:2] != rois.shape[:2]:
            raise ValueError(
                f"boxes {tuple(boxes.shape)} and rois {tuple(rois.shape)} disagree on (B, N)"
            )
        return self.mix(self.relation_weights(boxes), rois)
