"""Central finite-difference check of analytic parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric))
        return 0.0 if scale == 0 else abs(self.analytic - self.numeric) / scale


def check_parameter_gradients(model: torch.nn.Module, loss_fn: Callable[[], torch.Tensor], n: int = 20,
                              eps: float = 1e-6, seed: int = 0, min_abs: float = 1e-9) -> list[GradCheckResult]:
    """Compare autograd against ``(L(p + eps) - L(p - eps)) / 2eps`` for ``n`` random entries.

    The model should be in float64. Entries are drawn uniformly over all
    parameter elements; entries whose analytic and numeric gradients are
    both below ``min_abs`` are redrawn, since relative error is meaningless
    there.
    """
    named = [(k, p) for k, p in model.named_parameters() if p.requires_grad]
    model.zero_grad()
    loss_fn().backward()
    grads = {k: p.grad.detach().clone() for k, p in named}
    sizes = np.array([p.numel() for _, p in named])
    rng = np.random.default_rng(seed)
    results: list[GradCheckResult] = []
    tries = 0
    while len(results) < n and tries < 50 * n:
        tries += 1
        flat = int(rng.integers(sizes.sum()))
        which = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        name, p = named[which]
        idx = np.unravel_index(flat - int(sizes[:which].sum()), tuple(p.shape))
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + eps
            up = loss_fn().item()
            p[idx] = orig - eps
            down = loss_fn().item()
            p[idx] = orig
        numeric = (up - down) / (2 * eps)
        analytic = grads[name][idx].item()
        if max(abs(numeric), abs(analytic)) < min_abs:
            continue
        results.append(GradCheckResult(name, tuple(int(i) for i in idx), analytic, numeric))
    return results
