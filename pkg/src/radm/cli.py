"""Command-line entry points: synthesize data, train, generate, evaluate, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import Layout, ModelConfig
from .diffusion import sample
from .evalmetrics import evaluate, per_layout_metrics
from .render import render_layout
from .synthdata import SynthSpec, generate, load_dataset, save_dataset
from .training import (
    ABLATION_VARIANTS,
    TrainConfig,
    load_checkpoint,
    run_ablation,
    save_checkpoint,
    train,
)


def _load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _read_slogans(args: argparse.Namespace) -> list[str] | None:
    """Slogans from flags; None means 'not given on the command line'."""
    if args.slogans_file:
        lines = Path(args.slogans_file).read_text().splitlines()
        return [line.strip() for line in lines if line.strip()]
    if args.slogans is not None:
        return list(args.slogans)
    return None


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        count=args.count,
        seed=args.seed,
        canvas_w=args.canvas_w,
        canvas_h=args.canvas_h,
        underlay_prob=args.underlay_prob,
        embellish_prob=args.embellish_prob,
    )
    samples = generate(spec)
    out = save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _model_config(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(
        n_queries=args.queries,
        diffusion_steps=args.diffusion_steps,
    )


def cmd_train(args: argparse.Namespace) -> int:
    samples = load_dataset(args.dataset)
    cfg = _model_config(args)
    train_cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        schedule=args.schedule,
        use_text_attention=not args.no_text_attention,
        use_geometry=not args.no_geometry,
        max_steps=args.max_steps,
        freeze_image_encoder=args.freeze_image_encoder,
        stem_channels=args.stem_channels,
    )
    model, history = train(samples, cfg, train_cfg, log_path=args.log)
    path = save_checkpoint(args.out, model, train_cfg)
    final = history[-1]["total"] if history else float("nan")
    print(f"wrote checkpoint {path} after {len(history)} steps, loss {final:.4f}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    # The pydantic request model is shared with the HTTP service so a saved
    # request body works unchanged as a --constraints file.
    from .service import GenerateRequest, constraints_from_request

    model, manifest = load_checkpoint(args.checkpoint)
    cfg = ModelConfig(**manifest["model_config"])

    if args.constraints:
        req = GenerateRequest.model_validate_json(
            Path(args.constraints).read_text()
        )
    else:
        req = GenerateRequest()
    slogans = _read_slogans(args)
    if slogans is not None:
        req = req.model_copy(update={"slogans": slogans})
    if args.steps is not None:
        req = req.model_copy(update={"steps": args.steps})
    if args.seed is not None:
        req = req.model_copy(update={"seed": args.seed})
    if args.sample_id is not None:
        req = req.model_copy(update={"sample_id": args.sample_id})

    if args.image:
        image = _load_image(args.image)
    elif req.sample_id is not None:
        if not args.dataset:
            raise ValueError("--sample-id requires --dataset")
        by_id = {s.id: s for s in load_dataset(args.dataset)}
        if req.sample_id not in by_id:
            raise ValueError(f"unknown sample id {req.sample_id!r}")
        image = by_id[req.sample_id].image
    elif req.image_b64 is not None:
        import base64
        import io

        raw = base64.b64decode(req.image_b64)
        with Image.open(io.BytesIO(raw)) as im:
            image = np.asarray(im.convert("RGB"), dtype=np.uint8)
    else:
        raise ValueError("provide --image, or --dataset with --sample-id")

    if not 1 <= req.steps <= model.schedule.steps:
        raise ValueError(
            f"steps = {req.steps} outside [1, {model.schedule.steps}]"
        )
    constraints = constraints_from_request(req, cfg)
    trajectory = [] if args.trajectory else None
    layout = sample(
        model, image, constraints, req.steps, cfg, trajectory=trajectory
    )

    text = json.dumps(layout.to_json_dict(), sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if args.render:
        Image.fromarray(render_layout(image, layout)).save(args.render)
    if args.trajectory:
        with open(args.trajectory, "w") as fh:
            for step in trajectory:
                fh.write(json.dumps(step.to_json_dict(), sort_keys=True) + "\n")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    samples = load_dataset(args.dataset)
    if args.gt:
        layouts = []
        for s in samples:
            if s.gt is None:
                raise ValueError(f"sample {s.id} has no ground-truth layout")
            layouts.append(s.gt)
    else:
        layouts = []
        for s in samples:
            path = Path(args.layouts) / f"{s.id}.json"
            if not path.exists():
                raise ValueError(f"no layout file for sample {s.id}: {path}")
            layouts.append(Layout.from_json(path.read_text()))

    report = evaluate(
        layouts,
        [s.image for s in samples],
        [s.saliency for s in samples],
    )
    text = json.dumps(report.to_json_dict(), sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    if args.csv:
        import csv as _csv

        with open(args.csv, "w", newline="") as fh:
            if args.per_sample:
                rows = [
                    {"id": s.id, **per_layout_metrics(lay, s.image, s.saliency)}
                    for s, lay in zip(samples, layouts)
                ]
            else:
                rows = [report.to_json_dict()]
            writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    samples = load_dataset(args.dataset)
    cfg = _model_config(args)
    train_cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=0,
        max_steps=args.max_steps,
        freeze_image_encoder=args.freeze_image_encoder,
        stem_channels=args.stem_channels,
    )
    rows = run_ablation(
        samples,
        cfg,
        train_cfg,
        variants=tuple(args.variants),
        seeds=tuple(args.seeds),
        generate_steps=args.generate_steps,
        csv_path=args.out,
    )
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import os

    import uvicorn

    from .service import ENV_PORT, create_app

    port = args.port
    if port is None:
        port = int(os.environ.get(ENV_PORT, "8000"))
    app = create_app(
        checkpoint=args.checkpoint,
        dataset_dir=args.dataset,
        static_dir=args.static_dir,
    )
    uvicorn.run(app, host=args.host, port=port)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radm",
        description="Content-aware poster layout generation by box denoising.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic poster dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--canvas-w", type=int, default=192)
    p.add_argument("--canvas-h", type=int, default=300)
    p.add_argument("--underlay-prob", type=float, default=0.7)
    p.add_argument("--embellish-prob", type=float, default=0.3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a denoiser on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=2.5e-5)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule", choices=("cosine", "linear"), default="cosine")
    p.add_argument("--max-steps", type=int, default=None,
                   help="exact optimizer steps; overrides --epochs")
    p.add_argument("--no-text-attention", action="store_true",
                   help="zero out the text cross-attention branch")
    p.add_argument("--no-geometry", action="store_true",
                   help="zero out the relative-geometry branch")
    p.add_argument("--freeze-image-encoder", action="store_true")
    p.add_argument("--stem-channels", type=int, default=16)
    p.add_argument("--queries", type=int, default=16,
                   help="denoised box slots per layout")
    p.add_argument("--diffusion-steps", type=int, default=1000)
    p.add_argument("--log", default=None, help="JSONL training log path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample a layout from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", default=None, help="background image file")
    p.add_argument("--dataset", default=None)
    p.add_argument("--sample-id", default=None,
                   help="dataset sample to use as the background")
    p.add_argument("--slogans", nargs="*", default=None)
    p.add_argument("--slogans-file", default=None,
                   help="file with one slogan per line")
    p.add_argument("--constraints", default=None,
                   help="JSON file in the /api/generate request format")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="layout JSON file (default stdout)")
    p.add_argument("--render", default=None, help="write an overlay PNG here")
    p.add_argument("--trajectory", default=None,
                   help="write per-step boxes as JSONL here")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score layouts against a dataset")
    p.add_argument("--dataset", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--layouts", default=None,
                       help="directory of <sample_id>.json layout files")
    group.add_argument("--gt", action="store_true",
                       help="score the dataset's own ground-truth layouts")
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--csv", default=None, help="report CSV path")
    p.add_argument("--per-sample", action="store_true",
                   help="CSV rows per sample instead of one aggregate row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score fusion-branch variants")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variants", nargs="+",
                   choices=sorted(ABLATION_VARIANTS),
                   default=["full", "no-geometry", "no-text-attention"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=2.5e-5)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--freeze-image-encoder", action="store_true")
    p.add_argument("--stem-channels", type=int, default=16)
    p.add_argument("--queries", type=int, default=16)
    p.add_argument("--diffusion-steps", type=int, default=1000)
    p.add_argument("--generate-steps", type=int, default=20)
    p.add_argument("--out", default=None, help="CSV table path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint", default=None,
                   help="defaults to $RADM_CHECKPOINT")
    p.add_argument("--dataset", default=None,
                   help="defaults to $RADM_DATASET_DIR")
    p.add_argument("--static-dir", default=None, help="UI bundle directory")
    p.add_argument("--port", type=int, default=None,
                   help="defaults to $RADM_PORT or 8000")
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures exit nonzero with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
