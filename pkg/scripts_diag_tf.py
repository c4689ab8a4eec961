"""Throwaway: teacher-forced reconstruction probe on the calibration checkpoint."""
import torch
import numpy as np
from radm.core import ModelConfig
from radm.synthdata import generate, SynthSpec
from radm.training import load_checkpoint, layout_targets
from radm.diffusion import q_sample, SignalCodec

torch.manual_seed(0)
model, manifest = load_checkpoint("/tmp/accept_model.ckpt")
cfg = model.cfg
codec = model.codec
corpus = generate(SynthSpec(count=32, seed=7))
model.eval()

def iou(a, b):
    ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2
    ax2, ay2 = a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2
    bx2, by2 = b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0

with torch.no_grad():
    for i_step in (1, 5, 10, 25, 50, 75, 100):
        ious, cls_ok, fg_scores, n_fg = [], 0, [], 0
        for s in corpus[:8]:
            gt_boxes, gt_cls = layout_targets(s, cfg.n_queries)
            k = gt_boxes.shape[0]
            x0 = torch.full((cfg.n_queries, 4), 0.5)
            x0[:k] = gt_boxes
            x0_sig = codec.encode(x0)
            eps = torch.randn_like(x0_sig)
            x_i = q_sample(x0_sig, i_step, eps, model.schedule)
            pyr = model.encode_image(s.image[None])
            texts = model.encode_texts([list(s.slogans)])
            logits, x0_hat = model.forward(pyr, texts, x_i[None], torch.tensor([i_step]))
            pred_boxes = codec.decode(x0_hat[0]).clamp(0, 1)
            probs = torch.softmax(logits[0], dim=-1)
            for j in range(k):
                ious.append(iou(pred_boxes[j].tolist(), x0[j].tolist()))
                pred_c = int(probs[j].argmax())
                cls_ok += int(pred_c == int(gt_cls[j]))
                fg_scores.append(float(probs[j, :4].max()))
                n_fg += 1
        print(f"i={i_step:4d}  tf-IoU {np.mean(ious):.3f}  cls-acc {cls_ok/n_fg:.2f}  fg-score {np.mean(fg_scores):.3f}")
