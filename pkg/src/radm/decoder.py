"""Per-box prediction head and the weighted training loss.

The decoder fuses, per box, the text-attended feature map, the geometry
relation feature, and the raw RoI feature by flattening and concatenation,
adds a projected sinusoidal embedding of the diffusion step, and runs a
shared MLP that emits class logits and a clean-signal box reconstruction.
The loss combines focal classification over all slots with L1 and
generalized-IoU box terms over the non-background slots, weighted 5/5/1.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .core import BACKGROUND_INDEX, ModelConfig
from .diffusion import SignalCodec

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
WEIGHT_CLS = 5.0
WEIGHT_L1 = 5.0
WEIGHT_GIOU = 1.0

TIME_EMBED_DIM = 128


@dataclass
class DecoderOutput:
    """class_logits (B, N, num_classes); box_pred (B, N, 4) in signal space.

    box_pred is raw network output; the sampler clamps it to the signal range
    before the reverse update.
    """

    class_logits: torch.Tensor
    box_pred: torch.Tensor


@dataclass
class LossBreakdown:
    """Scalar loss terms (torch tensors so callers can backprop total)."""

    cls: torch.Tensor
    l1: torch.Tensor
    giou: torch.Tensor
    total: torch.Tensor

    def to_floats(self) -> dict[str, float]:
        return {
            "cls": float(self.cls.detach()),
            "l1": float(self.l1.detach()),
            "giou": float(self.giou.detach()),
            "total": float(self.total.detach()),
        }


def time_embedding(t: torch.Tensor, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal step embedding: t (B,) integer steps -> (B, dim)."""
    if dim % 2 != 0:
        raise ValueError(f"time embedding dim must be even, got {dim}")
    k = torch.arange(dim // 2, dtype=dtype)
    freq = torch.pow(torch.tensor(10000.0, dtype=dtype), -2.0 * k / dim)
    ang = t.to(dtype)[:, None] * freq
    out = torch.empty(t.shape[0], dim, dtype=dtype)
    out[:, 0::2] = torch.sin(ang)
    out[:, 1::2] = torch.cos(ang)
    return out


class BoxDecoder(nn.Module):
    """Shared per-box MLP over concat(flat(attended), geometry, flat(roi))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        flat = cfg.roi_channels * cfg.roi_width * cfg.roi_height
        fused = flat + cfg.geo_feature_dim + flat
        self.fused_dim = fused
        self.time_project = nn.Linear(TIME_EMBED_DIM, fused)
        self.trunk = nn.Sequential(
            nn.Linear(fused, cfg.decoder_hidden),
            nn.GELU(),
            nn.Linear(cfg.decoder_hidden, cfg.decoder_hidden),
            nn.GELU(),
        )
        self.cls_head = nn.Linear(cfg.decoder_hidden, cfg.num_classes)
        self.box_head = nn.Linear(cfg.decoder_hidden, 4)

    def forward(
        self,
        attended: torch.Tensor,
        geo: torch.Tensor,
        rois: torch.Tensor,
        t: torch.Tensor,
    ) -> DecoderOutput:
        """attended/rois (B, N, C, Hr, Wr), geo (B, N, d_t), t (B,) steps."""
        if attended.shape != rois.shape:
            raise ValueError(
                f"attended {tuple(attended.shape)} and rois {tuple(rois.shape)} differ"
            )
        if geo.shape[:2] != rois.shape[:2]:
            raise ValueError("geometry features disagree with rois on (B, N)")
        if t.shape != (rois.shape[0],):
            raise ValueError(f"t must be ({rois.shape[0]},), got {tuple(t.shape)}")
        fused = torch.cat([attended.flatten(2), geo, rois.flatten(2)], dim=-1)
        temb = self.time_project(
            time_embedding(t, TIME_EMBED_DIM, dtype=fused.dtype)
        )
        hidden = self.trunk(fused + temb[:, None, :])
        return DecoderOutput(
            class_logits=self.cls_head(hidden), box_pred=self.box_head(hidden)
        )


def focal_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> torch.Tensor:
    """Mean over all slots of -alpha * (1 - p_t)^gamma * log(p_t).

    logits (..., num_classes), targets (...) integer class indices; alpha is
    applied uniformly (gamma = 0, alpha = 1 reduces to cross-entropy).
    """
    logp = torch.log_softmax(logits, dim=-1)
    logp_t = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    p_t = logp_t.exp()
    return (-alpha * (1.0 - p_t) ** gamma * logp_t).mean()


def _corners(boxes: torch.Tensor) -> tuple[torch.Tensor, ...]:
    cx, cy, w, h = boxes.unbind(-1)
    w = w.clamp(min=0.0)
    h = h.clamp(min=0.0)
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def giou_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean of 1 - GIoU over box pairs, in [0, 2].

    pred/gt (..., 4) center-format in [0, 1] space. Degenerate sizes are
    treated as zero-area boxes.
    """
    px1, py1, px2, py2 = _corners(pred)
    gx1, gy1, gx2, gy2 = _corners(gt)
    pa = (px2 - px1) * (py2 - py1)
    ga = (gx2 - gx1) * (gy2 - gy1)
    iw = (torch.minimum(px2, gx2) - torch.maximum(px1, gx1)).clamp(min=0.0)
    ih = (torch.minimum(py2, gy2) - torch.maximum(py1, gy1)).clamp(min=0.0)
    inter = iw * ih
    union = pa + ga - inter
    ew = torch.maximum(px2, gx2) - torch.minimum(px1, gx1)
    eh = torch.maximum(py2, gy2) - torch.minimum(py1, gy1)
    enclose = ew * eh
    iou = inter / union.clamp(min=1e-12)
    giou = iou - (enclose - union) / enclose.clamp(min=1e-12)
    return (1.0 - giou).mean()


def training_loss(
    out: DecoderOutput,
    gt_boxes_sig: torch.Tensor,
    gt_cls: torch.Tensor,
    codec: SignalCodec,
) -> LossBreakdown:
    """Weighted loss: 5 * focal(all slots) + 5 * L1(fg) + 1 * GIoU(fg).

    gt_boxes_sig (B, N, 4) in signal space, gt_cls (B, N) class indices;
    slots whose target class is background contribute only to the focal term.
    """
    if out.class_logits.shape[:2] != gt_cls.shape:
        raise ValueError("class logits and targets disagree on (B, N)")
    cls = focal_loss(out.class_logits, gt_cls)
    fg = gt_cls != BACKGROUND_INDEX
    if bool(fg.any()):
        pred_sig = out.box_pred[fg]
        target_sig = gt_boxes_sig[fg]
        l1 = (pred_sig - target_sig).abs().mean()
        giou = giou_loss(codec.decode(pred_sig), codec.decode(target_sig))
    else:
        zero = out.box_pred.sum() * 0.0
        l1 = zero
        giou = zero.clone()
    total = WEIGHT_CLS * cls + WEIGHT_L1 * l1 + WEIGHT_GIOU * giou
    return LossBreakdown(cls=cls, l1=l1, giou=giou, total=total)
