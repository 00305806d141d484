"""Central finite-difference checks of autograd gradients (float64)."""
from __future__ import annotations

from typing import Callable, Iterable

import torch

FLOOR = 1e-6


def max_relative_error(
    fn: Callable[[], torch.Tensor],
    tensors: Iterable[torch.Tensor],
    h: float = 1e-5,
    seed: int = 0,
    floor: float = FLOOR,
) -> float:
    """Largest ``|analytic - numeric| / max(|analytic|, |numeric|, floor)`` over all entries.

    ``fn`` is evaluated with no arguments; a fixed random projection of its
    output gives the scalar being differentiated.  Every tensor in
    ``tensors`` (inputs or parameters) must require grad.
    """
    tensors = list(tensors)
    out = fn()
    weights = torch.randn(out.shape, generator=torch.Generator().manual_seed(seed), dtype=out.dtype)

    def scalar() -> torch.Tensor:
        return (fn() * weights).sum()

    analytic = torch.autograd.grad(scalar(), tensors, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for t, a in zip(tensors, analytic):
            a = torch.zeros_like(t) if a is None else a
            flat = t.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + h
                up = scalar().item()
                flat[k] = orig - h
                down = scalar().item()
                flat[k] = orig
                numeric = (up - down) / (2 * h)
                ak = a.reshape(-1)[k].item()
                err = abs(ak - numeric) / max(abs(ak), abs(numeric), floor)
                worst = max(worst, err)
    return worst


def module_tensors(module: torch.nn.Module, *inputs: torch.Tensor) -> list[torch.Tensor]:
    """Parameters of ``module`` followed by the floating inputs, all requiring grad."""
    ts = [p for p in module.parameters() if p.requires_grad]
    for x in inputs:
        if x.is_floating_point():
            x.requires_grad_(True)
            ts.append(x)
    return ts
