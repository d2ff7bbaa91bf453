"""CTC loss, label-smoothed attention cross-entropy and the joint objective."""

from __future__ import annotations

import warnings
from typing import Sequence

import torch

from .config import LossWeights
from .decoder import IGNORE_ID
from .errors import ShapeError

# finite stand-in for log(0); keeps gradients of unreachable states at exactly 0
NEG_INF = -1e30


class InfeasibleAlignmentWarning(RuntimeWarning):
    """A label cannot be aligned within the available frames; its CTC loss is inf."""


def min_ctc_frames(label: Sequence[int]) -> int:
    """Fewest frames that can emit ``label``: one per token plus a blank between repeats."""
    label = list(label)
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def ctc_nll(
    log_probs: torch.Tensor,
    labels: Sequence[Sequence[int]],
    input_lengths: Sequence[int] | torch.Tensor,
    blank: int = 0,
) -> torch.Tensor:
    """Per-item negative log-likelihood, ``-log sum_alignments prod_t p_t``.

    Log-space forward recursion over the blank-augmented label.  Items whose
    label is longer than their frames admit get ``inf`` and raise an
    :class:`InfeasibleAlignmentWarning`.
    """
    b, t_max, _ = log_probs.shape
    input_lengths = [int(x) for x in input_lengths]
    labels = [list(map(int, l)) for l in labels]
    if len(labels) != b or len(input_lengths) != b:
        raise ShapeError(f"batch of {b} needs {b} labels and lengths")
    if any(not 1 <= n <= t_max for n in input_lengths):
        raise ShapeError(f"input lengths must lie in [1, {t_max}]")
    s_max = 2 * max((len(l) for l in labels), default=0) + 1

    ext = torch.full((b, s_max), blank, dtype=torch.long)
    skip = torch.zeros((b, s_max), dtype=torch.bool)
    for i, lab in enumerate(labels):
        for j, tok in enumerate(lab):
            ext[i, 2 * j + 1] = tok
            if j > 0 and tok != lab[j - 1]:
                skip[i, 2 * j + 1] = True

    neg = torch.tensor(NEG_INF, dtype=log_probs.dtype)
    emit = log_probs.gather(2, ext[:, None, :].expand(b, t_max, s_max))  # B x T x S
    alpha = torch.full((b, s_max), NEG_INF, dtype=log_probs.dtype)
    alpha = torch.cat([emit[:, 0, :2], alpha[:, 2:]], dim=1) if s_max > 1 else emit[:, 0, :1]
    finals = [None] * b
    for i in range(b):
        if input_lengths[i] == 1:
            finals[i] = alpha[i]
    for t in range(1, t_max):
        stay = alpha
        step = torch.cat([neg.expand(b, 1), alpha[:, :-1]], dim=1)
        jump = torch.cat([neg.expand(b, 2), alpha[:, :-2]], dim=1)[:, :s_max]
        jump = torch.where(skip, jump, neg)
        alpha = torch.logsumexp(torch.stack([stay, step, jump]), dim=0) + emit[:, t]
        for i in range(b):
            if input_lengths[i] == t + 1:
                finals[i] = alpha[i]

    out = []
    for i, lab in enumerate(labels):
        if min_ctc_frames(lab) > input_lengths[i]:
            warnings.warn(
                f"item {i}: label of {len(lab)} tokens needs {min_ctc_frames(lab)} frames, "
                f"only {input_lengths[i]} available",
                InfeasibleAlignmentWarning,
                stacklevel=2,
            )
            out.append(torch.tensor(float("inf"), dtype=log_probs.dtype))
            continue
        end = 2 * len(lab)
        last = finals[i][end : end + 1] if end == 0 else finals[i][end - 1 : end + 1]
        out.append(-torch.logsumexp(last, dim=0))
    return torch.stack(out)


def ctc_loss(
    log_probs: torch.Tensor,
    labels: Sequence[Sequence[int]],
    input_lengths: Sequence[int] | torch.Tensor,
    blank: int = 0,
) -> torch.Tensor:
    """Mean over batch items of :func:`ctc_nll`."""
    return ctc_nll(log_probs, labels, input_lengths, blank).mean()


def label_smoothing_ce(
    log_probs: torch.Tensor, targets: torch.Tensor, smoothing: float
) -> torch.Tensor:
    """Cross-entropy against a smoothed target (1-eps on the label, eps/(V-1) elsewhere),
    averaged over non-ignored positions."""
    v = log_probs.size(-1)
    valid = targets != IGNORE_ID
    safe = targets.masked_fill(~valid, 0)
    nll = -log_probs.gather(-1, safe[..., None]).squeeze(-1)
    if smoothing > 0:
        others = -(log_probs.sum(-1)) - nll
        per_pos = (1.0 - smoothing) * nll + smoothing / (v - 1) * others
    else:
        per_pos = nll
    per_pos = torch.where(valid, per_pos, torch.zeros_like(per_pos))
    return per_pos.sum() / valid.sum().clamp(min=1)


def joint_loss(loss_ctc, loss_l2r, loss_r2l, weights: LossWeights | None = None):
    """``lam*ctc + (1-lam) * (alpha*r2l + (1-alpha)*l2r)``."""
    w = weights or LossWeights()
    lam, alpha = w.ctc_weight, w.reverse_weight
    return lam * loss_ctc + (1 - lam) * (alpha * loss_r2l + (1 - alpha) * loss_l2r)
