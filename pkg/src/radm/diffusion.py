"""Forward box corruption, reverse denoising loop, and constraint-aware sampling.

The forward process corrupts a set of N boxes with Gaussian noise under a
variance schedule; the reverse loop reconstructs a layout from random boxes
with deterministic DDIM updates driven by a model that predicts the clean
signal. Pinned elements are re-imposed after every step (inpainting-style),
so user constraints survive sampling exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import (
    BACKGROUND_INDEX,
    BBox,
    Element,
    INDEX_TO_CLASS,
    Layout,
    ModelConfig,
    clamp_box,
)


class DegenerateScheduleError(ValueError):
    """Raised when a reverse update hits alpha_cumprod = 1 at a nonzero step."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule: betas[i-1] is beta_i, alphas_cumprod[i] is the
    running product of (1 - beta_j) for j <= i, with alphas_cumprod[0] = 1."""

    steps: int
    betas: np.ndarray           # (T,) float64, values in (0, 1)
    alphas_cumprod: np.ndarray  # (T + 1,) float64, strictly decreasing from 1

    def sqrt_acp(self, i: int) -> float:
        return math.sqrt(float(self.alphas_cumprod[i]))

    def sqrt_one_minus_acp(self, i: int) -> float:
        return math.sqrt(1.0 - float(self.alphas_cumprod[i]))


def make_schedule(steps: int, kind: str = "cosine") -> DiffusionSchedule:
    """Build a variance schedule of the given kind ("cosine" or "linear")."""
    if steps <= 0:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if kind == "linear":
        betas = np.linspace(1e-4, 0.02, steps, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        t = np.arange(steps + 1, dtype=np.float64) / steps
        f = np.cos((t + s) / (1.0 + s) * math.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    acp = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    return DiffusionSchedule(steps=steps, betas=betas, alphas_cumprod=acp)


@dataclass(frozen=True)
class SignalCodec:
    """Maps [0, 1] box coordinates to the zero-centered signal domain."""

    signal_scale: float = 1.0

    def encode(self, boxes01: torch.Tensor) -> torch.Tensor:
        return self.signal_scale * (2.0 * boxes01 - 1.0)

    def decode(self, signal: torch.Tensor) -> torch.Tensor:
        return (signal / self.signal_scale + 1.0) / 2.0

    def clamp_signal(self, signal: torch.Tensor) -> torch.Tensor:
        return signal.clamp(-self.signal_scale, self.signal_scale)


@dataclass(frozen=True)
class GenerationConstraints:
    """User constraints for one sampling run."""

    pinned: tuple[tuple[int, Element], ...] = ()
    slogans: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        slots = [slot for slot, _ in self.pinned]
        if len(set(slots)) != len(slots):
            raise ValueError(f"pinned slot indices must be unique, got {slots}")
        object.__setattr__(self, "pinned", tuple(self.pinned))
        object.__setattr__(self, "slogans", tuple(self.slogans))

    def validate(self, cfg: ModelConfig) -> None:
        for slot, _ in self.pinned:
            if not 0 <= slot < cfg.n_queries:
                raise ValueError(
                    f"pinned slot {slot} out of range for {cfg.n_queries} query slots"
                )
        if len(self.slogans) > cfg.max_slogans:
            raise ValueError(
                f"{len(self.slogans)} slogans exceed the maximum of {cfg.max_slogans}"
            )


def q_sample(
    x0: torch.Tensor, i: int, eps: torch.Tensor, sched: DiffusionSchedule
) -> torch.Tensor:
    """Corrupt a clean signal to step i: sqrt(acp_i) * x0 + sqrt(1 - acp_i) * eps."""
    if not 0 <= i <= sched.steps:
        raise ValueError(f"step {i} out of range [0, {sched.steps}]")
    return sched.sqrt_acp(i) * x0 + sched.sqrt_one_minus_acp(i) * eps


def q_sample_batch(
    x0: torch.Tensor, i: torch.Tensor, eps: torch.Tensor, sched: DiffusionSchedule
) -> torch.Tensor:
    """Per-sample corruption: x0 (B, N, 4), i (B,) long, eps like x0."""
    if i.min() < 0 or i.max() > sched.steps:
        raise ValueError("step indices out of schedule range")
    acp = torch.from_numpy(sched.alphas_cumprod).to(dtype=x0.dtype)[i]
    sa = acp.sqrt().view(-1, 1, 1)
    sb = (1.0 - acp).sqrt().view(-1, 1, 1)
    return sa * x0 + sb * eps


def ddim_step(
    x_i: torch.Tensor,
    x0_hat: torch.Tensor,
    i: int,
    i_prev: int,
    sched: DiffusionSchedule,
    *,
    eta: float = 0.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Deterministic reverse update from step i to i_prev given the model's
    clean-signal reconstruction. eta > 0 re-injects noise (stochastic variant)."""
    if i_prev >= i:
        raise ValueError(f"i_prev ({i_prev}) must be < i ({i})")
    acp_i = float(sched.alphas_cumprod[i])
    if i > 0 and acp_i >= 1.0:
        raise DegenerateScheduleError(
            f"alphas_cumprod[{i}] = 1 at a nonzero step; cannot recover noise direction"
        )
    acp_prev = float(sched.alphas_cumprod[i_prev])
    eps_hat = (x_i - math.sqrt(acp_i) * x0_hat) / math.sqrt(1.0 - acp_i)
    if eta > 0.0 and i_prev > 0:
        sigma = (
            eta
            * math.sqrt((1.0 - acp_prev) / (1.0 - acp_i))
            * math.sqrt(1.0 - acp_i / acp_prev)
        )
        dir_coef = math.sqrt(max(1.0 - acp_prev - sigma**2, 0.0))
        noise = torch.empty_like(x_i).normal_(generator=generator)
        return math.sqrt(acp_prev) * x0_hat + dir_coef * eps_hat + sigma * noise
    return math.sqrt(acp_prev) * x0_hat + math.sqrt(1.0 - acp_prev) * eps_hat


def sampling_times(total_steps: int, steps: int) -> list[int]:
    """Uniformly spaced decreasing step sequence from total_steps down to 0."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps > total_steps:
        raise ValueError(f"steps ({steps}) cannot exceed schedule length ({total_steps})")
    times = np.unique(np.round(np.linspace(0, total_steps, steps + 1)).astype(int))
    return [int(t) for t in times[::-1]]


@dataclass
class TrajectoryStep:
    """One record of the per-step trajectory dump."""

    step: int
    boxes: list[list[float]]   # (N, 4) decoded [0, 1] boxes
    scores: list[float]        # per-slot best foreground-class probability

    def to_json_dict(self) -> dict:
        return {"step": self.step, "boxes": self.boxes, "scores": self.scores}


def sample(
    model,
    image: np.ndarray,
    constraints: GenerationConstraints,
    steps: int,
    cfg: ModelConfig,
    *,
    score_threshold: float | None = None,
    eta: float = 0.0,
    trajectory: list[TrajectoryStep] | None = None,
) -> Layout:
    """Denoise N random boxes into a layout, honoring pinned constraints.

    model must expose `schedule`, `encode_image(images)`, `encode_texts(batch)`,
    and `forward(pyramid, texts, x_sig, t) -> (class_logits, x0_sig)` over a
    batch dimension (used here with B = 1). Pinned slots are overwritten with
    the forward-corrupted pinned boxes after every reverse step and appear
    verbatim in the output. Deterministic given (weights, inputs, seed).
    """
    constraints.validate(cfg)
    sched: DiffusionSchedule = model.schedule
    codec = SignalCodec(cfg.signal_scale)
    threshold = cfg.score_threshold if score_threshold is None else score_threshold

    gen = torch.Generator().manual_seed(constraints.seed)
    n = cfg.n_queries
    # The forward process ends at x_T ~ N(0, I) for any signal scale (the
    # noise term is unit-variance), so the reverse chain starts unscaled.
    x = torch.empty((1, n, 4), dtype=torch.float32).normal_(generator=gen)

    pinned_slots = [slot for slot, _ in constraints.pinned]
    pinned_sig = None
    if pinned_slots:
        pinned_boxes = torch.tensor(
            [list(el.box.as_tuple()) for _, el in constraints.pinned],
            dtype=torch.float32,
        )
        pinned_sig = codec.encode(pinned_boxes)

    was_training = getattr(model, "training", False)
    model.eval()
    try:
        with torch.no_grad():
            pyramid = model.encode_image(image[None])
            texts = model.encode_texts([list(constraints.slogans)])

            times = sampling_times(sched.steps, steps)
            class_logits = None
            for k in range(len(times) - 1):
                i, i_prev = times[k], times[k + 1]
                t = torch.full((1,), i, dtype=torch.long)
                class_logits, x0_hat = model.forward(pyramid, texts, x, t)
                x0_hat = codec.clamp_signal(x0_hat)
                x = ddim_step(x, x0_hat, i, i_prev, sched, eta=eta, generator=gen)
                if pinned_sig is not None:
                    if i_prev > 0:
                        eps = torch.empty_like(pinned_sig).normal_(generator=gen)
                        x[0, pinned_slots] = q_sample(pinned_sig, i_prev, eps, sched)
                    else:
                        x[0, pinned_slots] = pinned_sig
                if trajectory is not None:
                    probs = torch.softmax(class_logits[0], dim=-1)
                    fg = probs[:, :BACKGROUND_INDEX].max(dim=-1).values
                    boxes01 = codec.decode(x[0]).clamp(0.0, 1.0)
                    trajectory.append(
                        TrajectoryStep(
                            step=i_prev,
                            boxes=[[float(v) for v in row] for row in boxes01],
                            scores=[float(v) for v in fg],
                        )
                    )
    finally:
        if was_training:
            model.train()

    assert class_logits is not None
    probs = torch.softmax(class_logits[0], dim=-1)
    boxes01 = codec.decode(x[0])

    h, w = image.shape[:2]
    elements: list[Element] = []
    pinned_by_slot = dict(constraints.pinned)
    for slot in range(n):
        if slot in pinned_by_slot:
            elements.append(pinned_by_slot[slot])
            continue
        cls_idx = int(probs[slot].argmax())
        if cls_idx == BACKGROUND_INDEX:
            continue
        score = float(probs[slot, cls_idx])
        if score < threshold:
            continue
        box = clamp_box(
            BBox(
                float(boxes01[slot, 0]),
                float(boxes01[slot, 1]),
                float(boxes01[slot, 2]),
                float(boxes01[slot, 3]),
            )
        )
        elements.append(Element(box=box, cls=INDEX_TO_CLASS[cls_idx], score=score))
    return Layout(elements=tuple(elements), canvas_w=w, canvas_h=h)
