"""Transformer attention decoders: a left-to-right and a right-to-left stack."""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .config import DecoderConfig
from .errors import LengthError, ShapeError
from .frontend import FeatureSequence

IGNORE_ID = -1


def reverse_sequence(
    labels: Sequence[int], sos: int | None = None, eos: int | None = None
) -> list[int]:
    """Reverse the content tokens, keeping a leading ``sos`` / trailing ``eos`` in place."""
    labels = list(labels)
    head = [labels.pop(0)] if labels and sos is not None and labels[0] == sos else []
    tail = [labels.pop()] if labels and eos is not None and labels[-1] == eos else []
    return head + labels[::-1] + tail


def add_sos_eos(
    targets: Sequence[Sequence[int]], sos: int, eos: int, reverse: bool = False
) -> tuple[torch.Tensor, torch.Tensor]:
    """Teacher-forcing inputs ``[sos] + y`` (padded with eos) and outputs
    ``y + [eos]`` (padded with IGNORE_ID); ``y`` is reversed when ``reverse``."""
    seqs = [list(t)[::-1] if reverse else list(t) for t in targets]
    width = max(len(s) for s in seqs) + 1
    ys_in = torch.full((len(seqs), width), eos, dtype=torch.long)
    ys_out = torch.full((len(seqs), width), IGNORE_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        ys_in[i, : len(s) + 1] = torch.tensor([sos] + s, dtype=torch.long)
        ys_out[i, : len(s) + 1] = torch.tensor(s + [eos], dtype=torch.long)
    return ys_in, ys_out


class PositionalEncoding(nn.Module):
    def __init__(self, d_model: int, dropout: float, max_len: int):
        super().__init__()
        self.xscale = math.sqrt(d_model)
        pos = torch.arange(max_len, dtype=torch.float64)[:, None]
        div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * -(math.log(10000.0) / d_model))
        pe = torch.zeros(max_len, d_model, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)
        self.register_buffer("pe", pe, persistent=False)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.dropout(x * self.xscale + self.pe[: x.size(1)].to(x.dtype))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.model_dim
        self.self_attn = nn.MultiheadAttention(d, cfg.num_heads, dropout=cfg.dropout, batch_first=True)
        self.src_attn = nn.MultiheadAttention(d, cfg.num_heads, dropout=cfg.dropout, batch_first=True)
        self.ff = nn.Sequential(
            nn.Linear(d, cfg.feedforward_dim), nn.ReLU(), nn.Dropout(cfg.dropout),
            nn.Linear(cfg.feedforward_dim, d),
        )
        self.norm1, self.norm2, self.norm3 = nn.LayerNorm(d), nn.LayerNorm(d), nn.LayerNorm(d)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, causal_mask, memory, memory_pad):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, h, attn_mask=causal_mask, need_weights=False)[0])
        h = self.norm2(x)
        x = x + self.dropout(
            self.src_attn(h, memory, memory, key_padding_mask=memory_pad, need_weights=False)[0]
        )
        return x + self.dropout(self.ff(self.norm3(x)))


class TransformerDecoder(nn.Module):
    """Pre-norm autoregressive decoder returning per-position log-probabilities."""

    def __init__(self, vocab_size: int, config: DecoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.embed = nn.Embedding(vocab_size, config.model_dim)
        self.pos_enc = PositionalEncoding(config.model_dim, config.dropout, config.max_len + 1)
        self.layers = nn.ModuleList(DecoderLayer(config) for _ in range(config.num_layers))
        self.after_norm = nn.LayerNorm(config.model_dim)
        self.output = nn.Linear(config.model_dim, vocab_size)

    def forward(self, memory: FeatureSequence, ys_in: torch.Tensor) -> torch.Tensor:
        length = ys_in.size(1)
        if length > self.config.max_len:
            raise LengthError(f"target length {length} exceeds max_len {self.config.max_len}")
        if memory.values.size(-1) != self.config.model_dim:
            raise ShapeError("encoder width does not match decoder model_dim")
        causal = torch.triu(torch.ones(length, length, dtype=torch.bool), diagonal=1)
        x = self.pos_enc(self.embed(ys_in))
        memory_pad = ~memory.mask
        for layer in self.layers:
            x = layer(x, causal, memory.values, memory_pad)
        return F.log_softmax(self.output(self.after_norm(x)), dim=-1)


class BiTransformerDecoder(nn.Module):
    def __init__(self, vocab_size: int, config: DecoderConfig):
        super().__init__()
        self.left = TransformerDecoder(vocab_size, config)
        self.right = TransformerDecoder(vocab_size, config)

    def forward(self, memory, ys_in, direction="l2r"):
        return decoder_forward(memory, ys_in, direction, self)


def decoder_forward(
    encoder_out: FeatureSequence,
    targets: torch.Tensor,
    direction: str,
    decoder: BiTransformerDecoder,
) -> torch.Tensor:
    """Teacher-forced log-probs (B x L x V).  For ``r2l`` the caller passes the
    reversed targets (see :func:`add_sos_eos`)."""
    if direction == "l2r":
        return decoder.left(encoder_out, targets)
    if direction == "r2l":
        return decoder.right(encoder_out, targets)
    raise ValueError(f"direction must be 'l2r' or 'r2l', got {direction!r}")
