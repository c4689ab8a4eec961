"""Training loop, checkpointing and ablation sweeps.

The loop corrupts ground-truth box sets to a random schedule step per sample
and trains the denoiser to recover clean boxes and classes. Checkpoints are
a single self-describing file: a JSON manifest (configs, seed, build stamp,
tensor index, blob checksum) followed by shape-prefixed little-endian
float32 blobs, so a reload reconstructs the exact module graph and weights.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
import subprocess
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .core import CLASS_TO_INDEX, BACKGROUND_INDEX, ModelConfig, PosterSample
from .decoder import training_loss
from .denoiser import LayoutDenoiser, clamp_boxes_tensor
from .diffusion import GenerationConstraints, q_sample_batch, sample
from .encoders import FeaturePyramid
from .evalmetrics import evaluate

CHECKPOINT_MAGIC = b"LYTDCKPT"
CHECKPOINT_FORMAT_VERSION = 1

ABLATION_VARIANTS = {
    "full": (True, True),
    "no-text-attention": (False, True),
    "no-geometry": (True, False),
    "neither": (False, False),
}


class CheckpointError(RuntimeError):
    """Base class for unreadable or unusable checkpoint files."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class AblationMismatchError(CheckpointError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; ablation flags select the fusion branches."""

    epochs: int = 100
    batch_size: int = 16
    lr: float = 2.5e-5
    weight_decay: float = 1e-4
    seed: int = 0
    schedule: str = "cosine"
    use_text_attention: bool = True
    use_geometry: bool = True
    # When set, train exactly this many optimizer steps instead of epochs.
    max_steps: int | None = None
    # Keeps the conv backbone at its seeded initialization and reuses one
    # feature pyramid per sample across steps; roughly 7x faster per step.
    freeze_image_encoder: bool = False
    stem_channels: int = 16

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ValueError("max_steps must be positive when set")

    def to_json_dict(self) -> dict:
        return asdict(self)


def build_model(model_cfg: ModelConfig, train_cfg: TrainConfig) -> LayoutDenoiser:
    """Seeded model construction so identical configs give identical weights."""
    torch.manual_seed(train_cfg.seed)
    return LayoutDenoiser(
        model_cfg,
        schedule_kind=train_cfg.schedule,
        use_text_attention=train_cfg.use_text_attention,
        use_geometry=train_cfg.use_geometry,
        stem_channels=train_cfg.stem_channels,
    )


def layout_targets(sample: PosterSample, n_queries: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Ground-truth boxes (k, 4) and class indices (k,) for one sample."""
    if sample.gt is None:
        raise ValueError(f"sample {sample.id} has no ground-truth layout")
    els = sample.gt.elements
    if len(els) > n_queries:
        raise ValueError(
            f"sample {sample.id} has {len(els)} elements, model has {n_queries} slots"
        )
    if not els:
        return torch.zeros(0, 4), torch.zeros(0, dtype=torch.long)
    boxes = torch.tensor([list(e.box.as_tuple()) for e in els], dtype=torch.float32)
    cls = torch.tensor([CLASS_TO_INDEX[e.cls] for e in els], dtype=torch.long)
    return boxes, cls


def _pad_batch(
    targets: list[tuple[torch.Tensor, torch.Tensor]],
    n_queries: int,
    generator: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad each target set to n_queries slots.

    Padding slots get the background class and a fresh random box, so the
    denoiser sees a full box set; their box coordinates never enter the
    regression terms (the loss masks on the class target).
    """
    b = len(targets)
    boxes = torch.empty(b, n_queries, 4)
    cls = torch.full((b, n_queries), BACKGROUND_INDEX, dtype=torch.long)
    for row, (gt_boxes, gt_cls) in enumerate(targets):
        k = gt_boxes.shape[0]
        pad = clamp_boxes_tensor(torch.rand(n_queries - k, 4, generator=generator))
        boxes[row] = torch.cat([gt_boxes, pad], dim=0)
        cls[row, :k] = gt_cls
    return boxes, cls


def _cat_pyramids(pyramids: Sequence[FeaturePyramid]) -> FeaturePyramid:
    levels = []
    for idx, (stride, _) in enumerate(pyramids[0].levels):
        feats = torch.cat([p.levels[idx][1] for p in pyramids], dim=0)
        levels.append((stride, feats))
    return FeaturePyramid(levels=levels)


def train(
    samples: Sequence[PosterSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    log_path: str | Path | None = None,
) -> tuple[LayoutDenoiser, list[dict]]:
    """Train a denoiser from scratch; returns (model, per-step loss records).

    Each record is {"step", "cls", "l1", "giou", "total", "lr"} and is also
    appended to log_path as JSON lines when given. A non-finite loss aborts
    with TrainingDivergedError after writing a diagnostic dump next to the
    log (or embedding it in the exception).
    """
    if not samples:
        raise ValueError("need at least one training sample")
    model = build_model(model_cfg, train_cfg)
    sched = model.schedule
    codec = model.codec

    if train_cfg.freeze_image_encoder:
        for p in model.image_encoder.parameters():
            p.requires_grad_(False)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(
        params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay
    )

    gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    shuffle_rng = np.random.default_rng(train_cfg.seed)

    targets = [layout_targets(s, model_cfg.n_queries) for s in samples]
    pyramid_cache: dict[str, FeaturePyramid] = {}

    def batch_pyramid(chunk: list[int]) -> FeaturePyramid:
        if not train_cfg.freeze_image_encoder:
            return model.encode_image([samples[i].image for i in chunk])
        for i in chunk:
            sid = samples[i].id
            if sid not in pyramid_cache:
                with torch.no_grad():
                    pyramid_cache[sid] = model.encode_image(samples[i].image[None])
        return _cat_pyramids([pyramid_cache[samples[i].id] for i in chunk])

    steps_per_epoch = math.ceil(len(samples) / train_cfg.batch_size)
    if train_cfg.max_steps is not None:
        total_steps = train_cfg.max_steps
    else:
        total_steps = train_cfg.epochs * steps_per_epoch

    history: list[dict] = []
    log_file = open(log_path, "w") if log_path is not None else None
    step = 0
    try:
        while step < total_steps:
            perm = shuffle_rng.permutation(len(samples))
            for start in range(0, len(samples), train_cfg.batch_size):
                if step >= total_steps:
                    break
                chunk = [int(i) for i in perm[start : start + train_cfg.batch_size]]
                boxes01, cls_t = _pad_batch(
                    [targets[i] for i in chunk], model_cfg.n_queries, gen
                )
                x0_sig = codec.encode(boxes01)
                t = torch.randint(
                    1, sched.steps + 1, (len(chunk),), generator=gen
                )
                eps = torch.randn(x0_sig.shape, generator=gen)
                x_t = q_sample_batch(x0_sig, t, eps, sched)

                pyr = batch_pyramid(chunk)
                texts = model.encode_texts([list(samples[i].slogans) for i in chunk])
                out = model.predict(pyr, texts, x_t, t)
                losses = training_loss(out, x0_sig, cls_t, codec)

                if not bool(torch.isfinite(losses.total)):
                    dump = {
                        "step": step,
                        "losses": {
                            k: float(v) for k, v in losses.to_floats().items()
                        },
                        "lr": opt.param_groups[0]["lr"],
                        "seed": train_cfg.seed,
                        "timesteps": t.tolist(),
                        "sample_ids": [samples[i].id for i in chunk],
                        "ablation": model.ablation_name(),
                    }
                    if log_path is not None:
                        dump_path = Path(str(log_path) + ".diverged.json")
                        dump_path.write_text(json.dumps(dump, indent=2))
                        where = f"; diagnostics written to {dump_path}"
                    else:
                        where = ""
                    raise TrainingDivergedError(
                        f"non-finite loss at step {step}{where}", dump
                    )

                opt.zero_grad()
                losses.total.backward()
                opt.step()

                record = {"step": step, "lr": opt.param_groups[0]["lr"]}
                record.update(losses.to_floats())
                history.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
                step += 1
    finally:
        if log_file is not None:
            log_file.close()
    model.eval()
    return model, history


# ----------------------------------------------------------- checkpointing


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _pack_tensor(t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().contiguous().to(torch.float32).numpy().astype("<f4")
    shape = arr.shape
    head = struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    return head + arr.tobytes()


def _unpack_tensor(blob: bytes, offset: int) -> tuple[torch.Tensor, int]:
    (ndim,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    shape = struct.unpack_from(f"<{ndim}I", blob, offset)
    offset += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
    offset += 4 * count
    return torch.from_numpy(arr.copy()), offset


def save_checkpoint(
    path: str | Path,
    model: LayoutDenoiser,
    train_cfg: TrainConfig | None = None,
    extra: dict | None = None,
) -> Path:
    """Write model weights plus everything needed to rebuild the module."""
    names = []
    blob_parts = []
    offset = 0
    for name, tensor in model.state_dict().items():
        packed = _pack_tensor(tensor)
        names.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "offset": offset,
                "nbytes": len(packed),
            }
        )
        blob_parts.append(packed)
        offset += len(packed)
    blob = b"".join(blob_parts)

    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": model.cfg.to_json_dict(),
        "denoiser": {
            "schedule_kind": model.schedule_kind,
            "use_text_attention": model.use_text_attention,
            "use_geometry": model.use_geometry,
            "stem_channels": model.image_encoder.stem_channels,
        },
        "ablation": model.ablation_name(),
        "train_config": train_cfg.to_json_dict() if train_cfg else None,
        "seed": train_cfg.seed if train_cfg else None,
        "git_describe": git_describe(),
        "tensors": names,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(blob)
    return out


def read_manifest(path: str | Path) -> dict:
    """Parse and verify the manifest without loading weights."""
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a layout-denoiser checkpoint")
    (head_len,) = struct.unpack_from("<I", raw, len(CHECKPOINT_MAGIC))
    head_start = len(CHECKPOINT_MAGIC) + 4
    manifest = json.loads(raw[head_start : head_start + head_len].decode("utf-8"))
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is not readable by this "
            f"build, which supports version {CHECKPOINT_FORMAT_VERSION}"
        )
    return manifest


def load_checkpoint(
    path: str | Path, require_ablation: str | None = None
) -> tuple[LayoutDenoiser, dict]:
    """Rebuild the model from a checkpoint file, verifying the blob checksum."""
    raw = Path(path).read_bytes()
    manifest = read_manifest(path)
    (head_len,) = struct.unpack_from("<I", raw, len(CHECKPOINT_MAGIC))
    blob = raw[len(CHECKPOINT_MAGIC) + 4 + head_len :]
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise CheckpointChecksumError(
            f"weight blob checksum mismatch in {path}: manifest says "
            f"{manifest['blob_sha256'][:12]}..., file hashes to {digest[:12]}..."
        )
    if require_ablation is not None and manifest["ablation"] != require_ablation:
        raise AblationMismatchError(
            f"checkpoint {path} holds the '{manifest['ablation']}' variant, "
            f"but '{require_ablation}' was requested"
        )

    cfg = ModelConfig(**manifest["model_config"])
    dn = manifest["denoiser"]
    model = LayoutDenoiser(
        cfg,
        schedule_kind=dn["schedule_kind"],
        use_text_attention=dn["use_text_attention"],
        use_geometry=dn["use_geometry"],
        stem_channels=dn["stem_channels"],
    )
    state = {}
    for entry in manifest["tensors"]:
        tensor, _ = _unpack_tensor(blob, entry["offset"])
        if list(tensor.shape) != entry["shape"]:
            raise CheckpointError(
                f"tensor {entry['name']} shape prefix {list(tensor.shape)} "
                f"disagrees with manifest {entry['shape']}"
            )
        state[entry["name"]] = tensor
    model.load_state_dict(state, strict=True)
    model.eval()
    return model, manifest


# --------------------------------------------------------------- ablation


def run_ablation(
    samples: Sequence[PosterSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    variants: Sequence[str] = ("full", "no-geometry", "no-text-attention"),
    seeds: Sequence[int] = (0, 1, 2),
    generate_steps: int = 20,
    csv_path: str | Path | None = None,
) -> list[dict]:
    """Train each variant at each seed and score its generations.

    Every run trains from scratch with the variant's fusion branches
    toggled, generates one layout per training sample, and aggregates the
    layout metrics; rows come back as dicts and optionally land in a CSV.
    """
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation variant {v!r}")
    rows: list[dict] = []
    for variant in variants:
        use_text, use_geo = ABLATION_VARIANTS[variant]
        for seed in seeds:
            cfg_run = replace(
                train_cfg,
                seed=seed,
                use_text_attention=use_text,
                use_geometry=use_geo,
            )
            model, _ = train(samples, model_cfg, cfg_run, log_path=None)
            layouts = []
            for idx, s in enumerate(samples):
                constraints = GenerationConstraints(
                    slogans=tuple(s.slogans), seed=seed * 100003 + idx
                )
                layouts.append(
                    sample(model, s.image, constraints, generate_steps, model_cfg)
                )
            report = evaluate(
                layouts,
                [s.image for s in samples],
                [s.saliency for s in samples],
            )
            row = {"variant": variant, "seed": seed}
            row.update(report.to_json_dict())
            rows.append(row)
    if csv_path is not None and rows:
        out = Path(csv_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return rows
