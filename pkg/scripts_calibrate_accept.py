"""Throwaway: calibrate the 32-sample overfit protocol end to end."""

import json
import time

import numpy as np
import torch

from radm.core import ModelConfig, ElementClass
from radm.diffusion import GenerationConstraints, sample
from radm.evalmetrics import evaluate, greedy_match_mean_iou, occupancy
from radm.synthdata import SynthSpec, generate
from radm.training import TrainConfig, save_checkpoint, train

CFG = ModelConfig(diffusion_steps=100)
TRAIN = TrainConfig(
    epochs=1,
    batch_size=32,
    lr=2e-3,
    seed=0,
    max_steps=2000,
    freeze_image_encoder=False,
    stem_channels=16,
)


def main() -> None:
    corpus = generate(SynthSpec(count=32, seed=7))
    t0 = time.time()
    model, history = train(corpus, CFG, TRAIN, log_path="/tmp/accept_train.jsonl")
    print(f"train {time.time() - t0:.0f}s", flush=True)
    save_checkpoint("/tmp/accept_model.ckpt", model, TRAIN)
    for rec in history:
        if rec["step"] % 200 == 0 or rec["step"] == len(history) - 1:
            print(
                f"  {rec['step']} total {rec['total']:.3f} cls {rec['cls']:.3f} "
                f"l1 {rec['l1']:.3f} giou {rec['giou']:.3f}",
                flush=True,
            )

    for steps in (25, 50, 100):
        layouts = []
        for i, s in enumerate(corpus):
            cons = GenerationConstraints(slogans=s.slogans, seed=1000 + i)
            layouts.append(sample(model, s.image, cons, steps, CFG))
        ious = [
            greedy_match_mean_iou(lay, s.gt)
            for lay, s in zip(layouts, corpus)
        ]
        text_ok = sum(
            sum(1 for e in lay.elements if e.cls is ElementClass.TEXT)
            == len(s.slogans)
            for lay, s in zip(layouts, corpus)
        )
        occ = occupancy(layouts)
        print(
            f"steps={steps}: mean IoU {np.mean(ious):.3f}  "
            f"IoU>=0.5 on {sum(i >= 0.5 for i in ious)}/32  "
            f"text match {text_ok}/32  occ {occ:.3f}",
            flush=True,
        )
        if steps == 50:
            rep = evaluate(
                layouts,
                [s.image for s in corpus],
                [s.saliency for s in corpus],
            )
            print("  metrics", json.dumps(rep.to_json_dict()), flush=True)
            print("  per-sample IoU", [round(v, 2) for v in ious], flush=True)
    print(f"total {time.time() - t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
