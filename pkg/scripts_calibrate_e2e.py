"""Calibration: does end-to-end encoder training lift the regression floor?"""

import time

import numpy as np

from radm.core import ElementClass, ModelConfig
from radm.diffusion import GenerationConstraints, sample
from radm.evalmetrics import greedy_match_mean_iou, occupancy
from radm.synthdata import SynthSpec, generate
from radm.training import TrainConfig, train

t0 = time.time()
corpus = generate(SynthSpec(count=8, seed=7))
model_cfg = ModelConfig()
train_cfg = TrainConfig(
    batch_size=8, lr=1e-3, seed=0, freeze_image_encoder=False, max_steps=600
)
model, hist = train(corpus, model_cfg, train_cfg)
print(f"train {time.time()-t0:.0f}s", flush=True)
for k in (0, 100, 200, 400, 590):
    w = hist[k:k+10]
    print(" ", k, " ".join(f"{x} {np.mean([r[x] for r in w]):.3f}"
                           for x in ("total", "cls", "l1", "giou")), flush=True)

ious, text_ok, layouts = [], 0, []
for idx, s in enumerate(corpus):
    lay = sample(model, s.image,
                 GenerationConstraints(slogans=tuple(s.slogans), seed=1000 + idx),
                 steps=25, cfg=model_cfg)
    layouts.append(lay)
    ious.append(greedy_match_mean_iou(lay, s.gt))
    text_ok += int(sum(1 for e in lay.elements if e.cls is ElementClass.TEXT)
                   == len(s.slogans))
print(f"mean greedy IoU: {np.mean(ious):.3f}")
print(f"per-sample: {[round(v, 2) for v in ious]}")
print(f"text count match: {text_ok}/8")
print(f"occupancy: {occupancy(layouts):.3f}")
print(f"total {time.time()-t0:.0f}s")
