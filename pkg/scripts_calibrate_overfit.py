"""Calibration run: 32-sample overfit at acceptance scale (throwaway script)."""

import json
import time

import numpy as np

from radm.core import ModelConfig
from radm.diffusion import GenerationConstraints, sample
from radm.evalmetrics import greedy_match_mean_iou, occupancy
from radm.synthdata import SynthSpec, generate
from radm.training import TrainConfig, train
from radm.core import ElementClass

t_start = time.time()
corpus = generate(SynthSpec(count=32, seed=7))
model_cfg = ModelConfig()  # full defaults: 16 slots, 64ch, 7x7, hidden 512
train_cfg = TrainConfig(
    batch_size=16, lr=1e-3, seed=0, freeze_image_encoder=True, max_steps=2000
)
model, hist = train(corpus, model_cfg, train_cfg, log_path="/tmp/overfit.jsonl")
tot = [r["total"] for r in hist]
first, last = float(np.mean(tot[:10])), float(np.mean(tot[-10:]))
print(f"train {time.time()-t_start:.0f}s  loss {first:.3f} -> {last:.3f} "
      f"drop {(1-last/first)*100:.1f}%", flush=True)
for k in (0, 250, 500, 1000, 1500, 1990):
    w = hist[k:k+10]
    print(" ", k, " ".join(f"{x} {np.mean([r[x] for r in w]):.3f}"
                           for x in ("total", "cls", "l1", "giou")), flush=True)

ious, text_ok, layouts = [], 0, []
t0 = time.time()
for idx, s in enumerate(corpus):
    lay = sample(model, s.image,
                 GenerationConstraints(slogans=tuple(s.slogans), seed=1000 + idx),
                 steps=25, cfg=model_cfg)
    layouts.append(lay)
    ious.append(greedy_match_mean_iou(lay, s.gt))
    n_text = sum(1 for e in lay.elements if e.cls is ElementClass.TEXT)
    text_ok += int(n_text == len(s.slogans))
print(f"generate {time.time()-t0:.0f}s")
print(f"mean greedy IoU: {np.mean(ious):.3f}  (need >= 0.5)")
print(f"per-sample IoU: {[round(v, 2) for v in ious]}")
print(f"text count match: {text_ok}/32 = {text_ok/32:.2f} (need >= 0.8)")
print(f"occupancy: {occupancy(layouts):.3f} (need >= 0.95)")
print(f"total time {time.time()-t_start:.0f}s")
