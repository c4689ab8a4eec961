"""Shared finite-difference gradient checker (float64, central differences)."""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch


def finite_diff_check(
    make_loss: Callable[[], torch.Tensor],
    params: list[torch.nn.Parameter],
    n_probes: int = 25,
    h: float = 1e-4,
    rtol: float = 1e-3,
    seed: int = 0,
) -> float:
    """Compare autograd gradients against central finite differences.

    make_loss must rebuild the scalar loss from scratch on every call (it is
    re-evaluated under perturbed parameters). All params must be float64.
    Returns the worst relative error seen; raises AssertionError beyond rtol.
    """
    assert params, "nothing to check"
    for p in params:
        assert p.dtype == torch.float64, "gradient checks require float64 parameters"
        p.grad = None
    loss = make_loss()
    loss.backward()
    grads = [
        p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        for p in params
    ]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    bounds = np.cumsum(sizes)
    worst = 0.0
    for _ in range(n_probes):
        flat = int(rng.integers(bounds[-1]))
        pi = int(np.searchsorted(bounds, flat, side="right"))
        local = flat - (int(bounds[pi - 1]) if pi > 0 else 0)
        p = params[pi]
        with torch.no_grad():
            orig = float(p.view(-1)[local])
            p.view(-1)[local] = orig + h
            lp = float(make_loss())
            p.view(-1)[local] = orig - h
            lm = float(make_loss())
            p.view(-1)[local] = orig
        fd = (lp - lm) / (2.0 * h)
        g = float(grads[pi].view(-1)[local])
        err = abs(fd - g) / max(abs(fd), abs(g), 1e-6)
        worst = max(worst, err)
        assert err <= rtol, (
            f"gradient mismatch: param {pi} entry {local}: "
            f"finite-diff {fd:.8g} vs autograd {g:.8g} (rel {err:.3g})"
        )
    return worst
