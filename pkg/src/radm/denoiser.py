"""The full denoising model: encoders -> cross-attention -> geometry -> head.

Given noisy box signals and a diffusion step, the model decodes box features
from the background image, fuses text and geometry context, and predicts
class logits plus a clean-signal box reconstruction. Either fusion branch
can be disabled for ablations; a disabled branch contributes an all-zero
feature block of the same shape, so the decoder's input layout is stable and
the branch receives no gradients.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .attention import VisualTextualAttention
from .core import MIN_BOX_SIZE, ModelConfig
from .decoder import BoxDecoder, DecoderOutput
from .diffusion import DiffusionSchedule, SignalCodec, make_schedule
from .encoders import (
    ConvPyramidEncoder,
    FeaturePyramid,
    HashedTextEncoder,
    TextFeatures,
    roi_pool,
)
from .geometry import GeometryRelationEncoder


def clamp_boxes_tensor(boxes: torch.Tensor) -> torch.Tensor:
    """Tensor twin of core.clamp_box: sizes into [MIN_BOX_SIZE, 1], centers
    shifted so corners stay inside the canvas. boxes (..., 4)."""
    cx, cy, w, h = boxes.unbind(-1)
    w = w.clamp(MIN_BOX_SIZE, 1.0)
    h = h.clamp(MIN_BOX_SIZE, 1.0)
    cx = torch.minimum(torch.maximum(cx, w / 2), 1.0 - w / 2)
    cy = torch.minimum(torch.maximum(cy, h / 2), 1.0 - h / 2)
    return torch.stack([cx, cy, w, h], dim=-1)


class LayoutDenoiser(nn.Module):
    """End-to-end box-set denoiser over a background image and slogans."""

    def __init__(
        self,
        cfg: ModelConfig,
        schedule_kind: str = "cosine",
        use_text_attention: bool = True,
        use_geometry: bool = True,
        stem_channels: int = 16,
    ):
        super().__init__()
        self.cfg = cfg
        self.schedule: DiffusionSchedule = make_schedule(
            cfg.diffusion_steps, schedule_kind
        )
        self.schedule_kind = schedule_kind
        self.codec = SignalCodec(cfg.signal_scale)
        self.use_text_attention = use_text_attention
        self.use_geometry = use_geometry
        self.image_encoder = ConvPyramidEncoder(cfg, stem_channels=stem_channels)
        self.text_encoder = HashedTextEncoder(cfg)
        self.cross_attention = VisualTextualAttention(cfg)
        self.geometry = GeometryRelationEncoder(cfg)
        self.decoder = BoxDecoder(cfg)

    def encode_image(self, images) -> FeaturePyramid:
        """images: (H, W, 3) uint8, (B, H, W, 3) uint8, or list of (H, W, 3)."""
        return self.image_encoder(images)

    def encode_texts(self, batch: list[list[str]]) -> TextFeatures:
        return self.text_encoder(batch)

    def predict(
        self,
        pyramid: FeaturePyramid,
        texts: TextFeatures,
        x_sig: torch.Tensor,
        t: torch.Tensor,
    ) -> DecoderOutput:
        """x_sig (B, N, 4) noisy signal, t (B,) steps -> decoder output."""
        boxes = clamp_boxes_tensor(self.codec.decode(x_sig))
        rois = roi_pool(pyramid, boxes, self.cfg)
        if self.use_text_attention:
            attended = self.cross_attention(rois, boxes, texts)
        else:
            attended = torch.zeros_like(rois)
        if self.use_geometry:
            geo = self.geometry(boxes, rois)
        else:
            geo = rois.new_zeros(rois.shape[0], rois.shape[1], self.cfg.geo_feature_dim)
        return self.decoder(attended, geo, rois, t)

    def forward(
        self,
        pyramid: FeaturePyramid,
        texts: TextFeatures,
        x_sig: torch.Tensor,
        t: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (class_logits (B, N, num_classes), x0_hat (B, N, 4) signal)."""
        out = self.predict(pyramid, texts, x_sig, t)
        return out.class_logits, out.box_pred

    def ablation_name(self) -> str:
        if self.use_text_attention and self.use_geometry:
            return "full"
        if not self.use_text_attention and not self.use_geometry:
            return "neither"
        return "no-text-attention" if not self.use_text_attention else "no-geometry"
