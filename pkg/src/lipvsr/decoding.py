"""CTC prefix beam search and two-direction attention rescoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .config import DecodeConfig
from .decoder import IGNORE_ID, BiTransformerDecoder, add_sos_eos
from .frontend import FeatureSequence

NEG_INF = float("-inf")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    ctc_score: float
    l2r_score: float | None = None
    r2l_score: float | None = None
    final_score: float | None = None


def _logaddexp(*xs: float) -> float:
    m = max(xs)
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(sum(math.exp(x - m) for x in xs))


def ctc_prefix_beam_search(
    log_probs: np.ndarray | torch.Tensor, config: DecodeConfig, blank: int = 0
) -> list[Hypothesis]:
    """N-best prefixes (at most ``beam_size``), sorted by descending CTC score.

    Each prefix tracks the log-probability of ending in blank and in its last
    token.  Per frame only the ``beam_size`` most likely tokens are expanded.
    Ties keep the order in which prefixes were first generated.
    """
    if isinstance(log_probs, torch.Tensor):
        log_probs = log_probs.detach().to(torch.float64).cpu().numpy()
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[0] == 0:
        raise ValueError("log_probs must be a non-empty T x V array")
    beam = config.beam_size
    v = log_probs.shape[1]
    k = min(beam, v)

    beams: list[tuple[tuple[int, ...], float, float]] = [((), 0.0, NEG_INF)]
    for frame in log_probs:
        # stable descending order; equal probabilities keep ascending token id
        top = np.argsort(-frame, kind="stable")[:k]
        nxt: dict[tuple[int, ...], list[float]] = {}

        def add(prefix, pb=NEG_INF, pnb=NEG_INF):
            if pb == NEG_INF and pnb == NEG_INF:
                return  # unreachable extension; keep it out of the beam
            cur = nxt.setdefault(prefix, [NEG_INF, NEG_INF])
            cur[0] = _logaddexp(cur[0], pb)
            cur[1] = _logaddexp(cur[1], pnb)

        for prefix, pb, pnb in beams:
            last = prefix[-1] if prefix else None
            for s in top:
                s = int(s)
                p = frame[s]
                if s == blank:
                    add(prefix, pb=_logaddexp(pb + p, pnb + p))
                elif s == last:
                    add(prefix, pnb=pnb + p)
                    add(prefix + (s,), pnb=pb + p)
                else:
                    add(prefix + (s,), pnb=_logaddexp(pb + p, pnb + p))
        ranked = sorted(nxt.items(), key=lambda kv: -_logaddexp(*kv[1]))
        beams = [(prefix, pb, pnb) for prefix, (pb, pnb) in ranked[:beam]]

    return [Hypothesis(prefix, _logaddexp(pb, pnb)) for prefix, pb, pnb in beams]


def ctc_greedy_search(log_probs: np.ndarray | torch.Tensor, blank: int = 0) -> tuple[int, ...]:
    """Best path, with repeats merged and blanks removed."""
    if isinstance(log_probs, torch.Tensor):
        log_probs = log_probs.detach().cpu().numpy()
    best = np.argmax(log_probs, axis=-1)
    out, prev = [], None
    for s in best:
        s = int(s)
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return tuple(out)


@torch.no_grad()
def score_with_decoders(
    nbest: Sequence[Hypothesis],
    encoder_out: FeatureSequence,
    decoder: BiTransformerDecoder,
    sos: int,
    eos: int,
) -> list[Hypothesis]:
    """Fill ``l2r_score`` / ``r2l_score``: teacher-forced sums of token log-probs
    (end marker included) for one utterance (``encoder_out`` has batch size 1)."""
    if not nbest:
        raise ValueError("empty N-best list")
    n = len(nbest)
    memory = FeatureSequence(
        encoder_out.values.expand(n, -1, -1), encoder_out.lengths.expand(n)
    )
    seqs = [list(h.tokens) for h in nbest]
    scores = {}
    for direction, module, reverse in (("l2r", decoder.left, False), ("r2l", decoder.right, True)):
        ys_in, ys_out = add_sos_eos(seqs, sos, eos, reverse=reverse)
        lp = module(memory, ys_in)
        valid = ys_out != IGNORE_ID
        tok = lp.gather(-1, ys_out.masked_fill(~valid, 0)[..., None]).squeeze(-1)
        scores[direction] = torch.where(valid, tok, torch.zeros_like(tok)).sum(-1).tolist()
    return [
        replace(h, l2r_score=float(scores["l2r"][i]), r2l_score=float(scores["r2l"][i]))
        for i, h in enumerate(nbest)
    ]


def rescore(nbest: Sequence[Hypothesis], config: DecodeConfig) -> Hypothesis:
    """Pick the hypothesis maximizing
    ``(1-rw)*l2r + rw*r2l + ctc_weight*ctc``; the earliest wins ties."""
    if not nbest:
        raise ValueError("empty N-best list")
    rw, cw = config.reverse_weight, config.ctc_weight
    best = None
    for h in nbest:
        if h.l2r_score is None or h.r2l_score is None:
            raise ValueError("hypothesis has no attention scores; run score_with_decoders first")
        final = (1 - rw) * h.l2r_score + rw * h.r2l_score + cw * h.ctc_score
        if best is None or final > best.final_score:
            best = replace(h, final_score=final)
    return best


def attention_rescore(
    nbest: Sequence[Hypothesis],
    encoder_out: FeatureSequence,
    config: DecodeConfig,
    decoder: BiTransformerDecoder,
    sos: int,
    eos: int,
) -> Hypothesis:
    return rescore(score_with_decoders(nbest, encoder_out, decoder, sos, eos), config)


@torch.no_grad()
def recognize(model, video: torch.Tensor, lengths: torch.Tensor, config: DecodeConfig) -> list[Hypothesis]:
    """Beam search + rescoring for every item of a batch; ``model`` must be in eval mode."""
    enc = model.encode(video, lengths)
    log_probs = model.ctc_log_probs(enc)
    out = []
    for i in range(video.size(0)):
        t = int(enc.lengths[i])
        nbest = ctc_prefix_beam_search(log_probs[i, :t], config, blank=model.blank)
        single = FeatureSequence(enc.values[i : i + 1, :t], enc.lengths[i : i + 1].clamp(max=t))
        out.append(attention_rescore(nbest, single, config, model.decoder, model.sos, model.eos))
    return out


# ---------------------------------------------------------------------------
# hypothesis files: "utterance-id<TAB>space-joined tokens"


def write_hyp_file(hyps: Mapping[str, Sequence[str]], path: str | Path) -> None:
    lines = [f"{uid}\t{' '.join(tokens)}" for uid, tokens in hyps.items()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_hyp_file(path: str | Path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        uid, _, text = line.partition("\t")
        if not uid:
            raise ValueError(f"{path}:{lineno}: missing utterance id")
        if uid in out:
            raise ValueError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        out[uid] = text.split()
    return out
