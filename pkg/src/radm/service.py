"""HTTP service: generation over a loaded checkpoint, dataset browsing, UI.

Error mapping: schema-level problems (wrong types, unknown fields, bad class
names) come back as 400 with field-level messages; semantically infeasible
constraints (pinned slot beyond the model's slot count, too many slogans,
steps beyond the schedule) come back as 422 naming the offending part; an
unknown sample id is 404; generation without a loaded model is 503.
"""

from __future__ import annotations

import base64
import io
import os
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .core import BBox, Element, ElementClass, FOREGROUND_CLASSES, ModelConfig
from .diffusion import GenerationConstraints, TrajectoryStep, sample
from .synthdata import load_dataset
from .training import load_checkpoint

ENV_CHECKPOINT = "RADM_CHECKPOINT"
ENV_PORT = "RADM_PORT"
ENV_DATASET = "RADM_DATASET_DIR"

_CLASS_NAMES = {c.value for c in FOREGROUND_CLASSES}


class PinnedElement(BaseModel):
    model_config = ConfigDict(extra="forbid")

    slot: int = Field(ge=0)
    cls: str
    box: list[float] = Field(min_length=4, max_length=4)

    @field_validator("cls")
    @classmethod
    def _known_class(cls, v: str) -> str:
        if v not in _CLASS_NAMES:
            raise ValueError(
                f"unknown element class {v!r}; expected one of {sorted(_CLASS_NAMES)}"
            )
        return v

    @field_validator("box")
    @classmethod
    def _finite_box(cls, v: list[float]) -> list[float]:
        if not all(np.isfinite(x) for x in v):
            raise ValueError("box coordinates must be finite")
        return v


class GenerateRequest(BaseModel):
    """One generation call; doubles as the CLI constraint-file schema."""

    model_config = ConfigDict(extra="forbid")

    sample_id: str | None = None
    image_b64: str | None = None
    slogans: list[str] = Field(default_factory=list)
    pinned: list[PinnedElement] = Field(default_factory=list)
    steps: int = Field(default=25, ge=1)
    seed: int = 0
    trajectory: bool = False


def constraints_from_request(
    req: GenerateRequest, cfg: ModelConfig
) -> GenerationConstraints:
    """Check a request against a model's capacity; ValueError when infeasible."""
    n = cfg.n_queries
    seen: set[int] = set()
    pinned = []
    for idx, pin in enumerate(req.pinned):
        if pin.slot >= n:
            raise ValueError(
                f"pinned[{idx}].slot = {pin.slot} is out of range for a model "
                f"with {n} slots"
            )
        if pin.slot in seen:
            raise ValueError(f"pinned[{idx}].slot = {pin.slot} is pinned twice")
        seen.add(pin.slot)
        box = BBox(*pin.box)
        x1, y1, x2, y2 = box.to_corners()
        if not box.is_valid() or x1 < 0.0 or y1 < 0.0 or x2 > 1.0 or y2 > 1.0:
            raise ValueError(
                f"pinned[{idx}].box = {pin.box} does not lie on the canvas"
            )
        pinned.append((pin.slot, Element(box=box, cls=ElementClass.from_name(pin.cls))))
    if len(req.slogans) > cfg.max_slogans:
        raise ValueError(
            f"{len(req.slogans)} slogans exceed the model's capacity of "
            f"{cfg.max_slogans}"
        )
    return GenerationConstraints(
        pinned=tuple(pinned), slogans=tuple(req.slogans), seed=req.seed
    )


def build_constraints(req: GenerateRequest, cfg: ModelConfig) -> GenerationConstraints:
    """Validate a request against a model's capacity; 422 on infeasibility."""
    try:
        return constraints_from_request(req, cfg)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


class ServiceState:
    def __init__(self) -> None:
        self.model = None
        self.manifest: dict | None = None
        self.cfg: ModelConfig | None = None
        self.samples: dict = {}
        self._image_png: dict[str, bytes] = {}

    def load_model(self, checkpoint: str | Path) -> None:
        self.model, self.manifest = load_checkpoint(checkpoint)
        self.cfg = self.model.cfg

    def load_samples(self, dataset_dir: str | Path) -> None:
        self.samples = {s.id: s for s in load_dataset(dataset_dir)}

    def image_png(self, sample_id: str) -> bytes:
        if sample_id not in self._image_png:
            buf = io.BytesIO()
            Image.fromarray(self.samples[sample_id].image).save(buf, format="PNG")
            self._image_png[sample_id] = buf.getvalue()
        return self._image_png[sample_id]


def _decode_image_b64(payload: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:
        raise HTTPException(
            status_code=400,
            detail=[{"field": "image_b64", "message": f"not a decodable image: {exc}"}],
        ) from None
    return np.asarray(img)


def _static_dir(explicit: str | Path | None) -> Path | None:
    candidates = [
        Path(explicit) if explicit else None,
        Path(__file__).parent / "static",
        Path.cwd() / "frontend" / "dist",
    ]
    for c in candidates:
        if c is not None and c.is_dir():
            return c
    return None


def create_app(
    checkpoint: str | Path | None = None,
    dataset_dir: str | Path | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    """Build the service; falls back to RADM_* env vars for unset paths."""
    app = FastAPI(title="poster layout generation service")
    state = ServiceState()
    app.state.service = state

    ck = checkpoint or os.environ.get(ENV_CHECKPOINT)
    if ck:
        state.load_model(ck)
    ds = dataset_dir or os.environ.get(ENV_DATASET)
    if ds:
        state.load_samples(ds)

    @app.exception_handler(RequestValidationError)
    async def _malformed(request: Request, exc: RequestValidationError):
        detail = [
            {
                "field": ".".join(str(p) for p in err["loc"] if p != "body"),
                "message": err["msg"],
            }
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.get("/api/health")
    def health():
        cfg = state.cfg
        return {
            "status": "ok",
            "model_loaded": state.model is not None,
            "config_digest": cfg.digest() if cfg else None,
            "ablation": state.model.ablation_name() if state.model else None,
            "n_samples": len(state.samples),
            # capacities the editor needs for inline validation
            "max_slogans": cfg.max_slogans if cfg else None,
            "n_slots": cfg.n_queries if cfg else None,
            "schedule_steps": state.model.schedule.steps if state.model else None,
        }

    @app.get("/api/samples")
    def samples():
        return {
            "samples": [
                {
                    "id": s.id,
                    "canvas": [s.gt.canvas_w, s.gt.canvas_h]
                    if s.gt
                    else [s.image.shape[1], s.image.shape[0]],
                    "slogans": list(s.slogans),
                }
                for s in state.samples.values()
            ]
        }

    @app.get("/api/samples/{sample_id}/image")
    def sample_image(sample_id: str):
        if sample_id not in state.samples:
            raise HTTPException(404, detail=f"unknown sample_id {sample_id!r}")
        return Response(content=state.image_png(sample_id), media_type="image/png")

    @app.post("/api/generate")
    def generate(req: GenerateRequest):
        if state.model is None:
            raise HTTPException(503, detail="no model checkpoint is loaded")
        cfg = state.cfg
        assert cfg is not None

        if req.steps > state.model.schedule.steps:
            raise HTTPException(
                status_code=422,
                detail=(
                    f"steps = {req.steps} exceeds the schedule length "
                    f"{state.model.schedule.steps}"
                ),
            )
        constraints = build_constraints(req, cfg)

        if req.sample_id is not None:
            if req.sample_id not in state.samples:
                raise HTTPException(
                    404, detail=f"unknown sample_id {req.sample_id!r}"
                )
            image = state.samples[req.sample_id].image
        elif req.image_b64 is not None:
            image = _decode_image_b64(req.image_b64)
        else:
            raise HTTPException(
                status_code=400,
                detail=[
                    {
                        "field": "sample_id",
                        "message": "provide sample_id or image_b64",
                    }
                ],
            )

        traj: list[TrajectoryStep] | None = [] if req.trajectory else None
        layout = sample(
            state.model, image, constraints, req.steps, cfg, trajectory=traj
        )
        body = {
            "layout": layout.to_json_dict(),
            "constraints": req.model_dump(),
        }
        if traj is not None:
            body["trajectory"] = [step.to_json_dict() for step in traj]
        return JSONResponse(content=body)

    ui = _static_dir(static_dir)
    if ui is not None:
        app.mount("/", StaticFiles(directory=ui, html=True), name="ui")
    else:

        @app.get("/")
        def index():
            return {"service": "poster layout generation", "ui": "not bundled"}

    return app
