"""Throwaway: short training probes to pick the overfit protocol levers."""
import json
import time

import numpy as np
import torch

from radm.core import ModelConfig
from radm.diffusion import GenerationConstraints, q_sample, sample
from radm.evalmetrics import greedy_match_mean_iou
from radm.synthdata import SynthSpec, generate
from radm.training import TrainConfig, layout_targets, train

corpus = generate(SynthSpec(count=32, seed=7))


def tf_readout(model, cfg, levels):
    """Teacher-forced reconstruction quality at the given noise levels."""
    codec = model.codec
    model.eval()
    rows = []
    with torch.no_grad():
        for i_step in levels:
            ious, cls_ok, scores, n_fg = [], 0, [], 0
            for s in corpus[:8]:
                gt_boxes, gt_cls = layout_targets(s, cfg.n_queries)
                k = gt_boxes.shape[0]
                x0 = torch.full((cfg.n_queries, 4), 0.5)
                x0[:k] = gt_boxes
                x0_sig = codec.encode(x0)
                torch.manual_seed(1234 + i_step)
                eps = torch.randn_like(x0_sig)
                x_i = q_sample(x0_sig, i_step, eps, model.schedule)
                pyr = model.encode_image(s.image[None])
                texts = model.encode_texts([list(s.slogans)])
                logits, x0_hat = model.forward(pyr, texts, x_i[None], torch.tensor([i_step]))
                pred = codec.decode(x0_hat[0]).clamp(0, 1)
                probs = torch.softmax(logits[0], dim=-1)
                for j in range(k):
                    a, b = pred[j].tolist(), x0[j].tolist()
                    ax1, ay1, ax2, ay2 = a[0]-a[2]/2, a[1]-a[3]/2, a[0]+a[2]/2, a[1]+a[3]/2
                    bx1, by1, bx2, by2 = b[0]-b[2]/2, b[1]-b[3]/2, b[0]+b[2]/2, b[1]+b[3]/2
                    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
                    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
                    inter = iw * ih
                    union = a[2]*a[3] + b[2]*b[3] - inter
                    ious.append(inter/union if union > 0 else 0.0)
                    cls_ok += int(int(probs[j].argmax()) == int(gt_cls[j]))
                    scores.append(float(probs[j, :4].max()))
                    n_fg += 1
            rows.append((i_step, float(np.mean(ious)), cls_ok / n_fg, float(np.mean(scores))))
    return rows


def gen_readout(model, cfg, steps):
    ious, text_ok, occ = [], 0, 0
    for i, s in enumerate(corpus):
        cons = GenerationConstraints(slogans=s.slogans, seed=1000 + i)
        lay = sample(model, s.image, cons, steps, cfg)
        ious.append(greedy_match_mean_iou(lay, s.gt))
        n_text = sum(1 for e in lay.elements if e.cls.name == "TEXT")
        text_ok += int(n_text == len(s.slogans))
        occ += int(len(lay.elements) > 0)
    return float(np.mean(ious)), text_ok, occ


def run(tag, cfg, tcfg, steps_gen):
    t0 = time.time()
    model, hist = train(corpus, cfg, tcfg)
    dt = time.time() - t0
    first = np.mean([h["total"] for h in hist[:20]])
    last = np.mean([h["total"] for h in hist[-20:]])
    print(f"[{tag}] {len(hist)} steps in {dt:.0f}s   loss {first:.3f} -> {last:.3f}", flush=True)
    for lev, iou, acc, sc in tf_readout(model, cfg, (1, max(1, cfg.diffusion_steps//4), max(1, cfg.diffusion_steps//2), cfg.diffusion_steps)):
        print(f"[{tag}]   tf i={lev:3d}  IoU {iou:.3f}  cls {acc:.2f}  score {sc:.3f}", flush=True)
    miou, tok, occ = gen_readout(model, cfg, steps_gen)
    print(f"[{tag}]   gen steps={steps_gen}: mean IoU {miou:.3f}  text {tok}/32  occ {occ}/32", flush=True)


BASE = dict(n_queries=8, diffusion_steps=25, signal_scale=4.0)
run("P1 s4 lr1e-3", ModelConfig(**BASE), TrainConfig(epochs=1, batch_size=32, lr=1e-3, seed=0, max_steps=400), 25)
run("P2 s4 lr3e-3", ModelConfig(**BASE), TrainConfig(epochs=1, batch_size=32, lr=3e-3, seed=0, max_steps=400), 25)
run("P3 s1 lr1e-3", ModelConfig(n_queries=8, diffusion_steps=25, signal_scale=1.0), TrainConfig(epochs=1, batch_size=32, lr=1e-3, seed=0, max_steps=400), 25)
print("done", flush=True)
