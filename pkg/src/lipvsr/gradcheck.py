"""Finite-difference validation of autograd gradients on randomly drawn parameters.

Rectifiers make the loss non-differentiable on a measure-zero set; a probe
whose perturbation flips the state of any ``nn.ReLU`` is discarded and another
parameter entry is drawn, since a difference quotient across a kink does not
estimate the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn


@dataclass
class Probe:
    name: str
    index: int
    analytic: float
    numeric: float

    def rel_error(self, floor: float) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), floor)
        return abs(self.analytic - self.numeric) / scale


class _KinkRecorder:
    def __init__(self, model: nn.Module):
        self.patterns: list[torch.Tensor] = []
        self.handles = [
            m.register_forward_pre_hook(self._hook) for m in model.modules() if isinstance(m, nn.ReLU)
        ]

    def _hook(self, module, inputs):
        self.patterns.append(inputs[0].detach() > 0)

    def take(self) -> list[torch.Tensor]:
        out, self.patterns = self.patterns, []
        return out

    def close(self):
        for h in self.handles:
            h.remove()


def _same(a: list[torch.Tensor], b: list[torch.Tensor]) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def check_gradients(
    model: nn.Module,
    loss_fn: Callable[[], torch.Tensor],
    num_probes: int = 50,
    step: float = 1e-5,
    seed: int = 0,
    max_draws: int = 10_000,
) -> list[Probe]:
    """Compare autograd against a fourth-order central difference

    ``(-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h``

    on ``num_probes`` parameter entries drawn uniformly over all scalar
    parameters of ``model``.  Use double precision.
    """
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    model.zero_grad()
    recorder = _KinkRecorder(model)
    try:
        loss = loss_fn()
        base = recorder.take()
        loss.backward()
        sizes = np.array([p.numel() for _, p in named])
        offsets = np.cumsum(sizes) - sizes
        rng = np.random.default_rng(seed)
        order = rng.permutation(int(sizes.sum()))[:max_draws]
        probes = []
        for flat in order:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            j = int(flat - offsets[k])
            name, p = named[k]
            analytic = float(p.grad.reshape(-1)[j])
            values, kinked = [], False
            with torch.no_grad():
                orig = p.reshape(-1)[j].item()
                for mult in (2, 1, -1, -2):
                    p.reshape(-1)[j] = orig + mult * step
                    values.append(float(loss_fn()))
                    if not _same(recorder.take(), base):
                        kinked = True
                p.reshape(-1)[j] = orig
            if kinked:
                continue
            f2, f1, fm1, fm2 = values
            numeric = (-f2 + 8 * f1 - 8 * fm1 + fm2) / (12 * step)
            probes.append(Probe(name, j, analytic, numeric))
            if len(probes) == num_probes:
                break
    finally:
        recorder.close()
    if len(probes) < num_probes:
        raise RuntimeError(f"only {len(probes)} kink-free probes found")
    return probes
