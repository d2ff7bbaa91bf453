"""Conformer, Branchformer and E-Branchformer encoders with relative-position attention.

All three share the same contract: B x T x D in, B x T x D out, no temporal
subsampling, and padded frames never influence valid ones (keys are masked in
attention and padded frames are zeroed before every temporal convolution).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import EncoderConfig
from .errors import ShapeError
from .frontend import FeatureSequence


class RelPositionalEncoding(nn.Module):
    """Scales the input by sqrt(d) and returns sinusoidal embeddings of relative
    offsets ``T-1, ..., 0, ..., -(T-1)``."""

    def __init__(self, d_model: int, dropout: float):
        super().__init__()
        self.d_model = d_model
        self.xscale = math.sqrt(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        t = x.size(1)
        pos = torch.arange(t - 1, -t, -1, dtype=x.dtype, device=x.device)[:, None]
        div = torch.exp(
            torch.arange(0, self.d_model, 2, dtype=x.dtype, device=x.device)
            * -(math.log(10000.0) / self.d_model)
        )
        pe = torch.zeros(2 * t - 1, self.d_model, dtype=x.dtype, device=x.device)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)
        return self.dropout(x * self.xscale), self.dropout(pe[None])


class RelPositionMultiHeadedAttention(nn.Module):
    """Self-attention with content and position bias terms (Transformer-XL style)."""

    def __init__(self, n_head: int, d_model: int, dropout: float):
        super().__init__()
        self.h = n_head
        self.d_k = d_model // n_head
        self.linear_q = nn.Linear(d_model, d_model)
        self.linear_k = nn.Linear(d_model, d_model)
        self.linear_v = nn.Linear(d_model, d_model)
        self.linear_out = nn.Linear(d_model, d_model)
        self.linear_pos = nn.Linear(d_model, d_model, bias=False)
        self.pos_bias_u = nn.Parameter(torch.empty(n_head, self.d_k))
        self.pos_bias_v = nn.Parameter(torch.empty(n_head, self.d_k))
        nn.init.xavier_uniform_(self.pos_bias_u)
        nn.init.xavier_uniform_(self.pos_bias_v)
        self.dropout = nn.Dropout(dropout)

    @staticmethod
    def rel_shift(x: torch.Tensor) -> torch.Tensor:
        """Map scores over relative offsets (..., T, 2T-1) to (..., T, T) with
        entry (i, j) taken at offset i - j."""
        t = x.size(-2)
        i = torch.arange(t, device=x.device)
        idx = (t - 1) - (i[:, None] - i[None, :])
        return x.gather(-1, idx.expand(*x.shape[:-1], t))

    def forward(self, x, pos_emb, mask):
        """``mask`` is B x T, True at valid frames."""
        b, t, _ = x.shape
        q = self.linear_q(x).view(b, t, self.h, self.d_k)
        k = self.linear_k(x).view(b, t, self.h, self.d_k).transpose(1, 2)
        v = self.linear_v(x).view(b, t, self.h, self.d_k).transpose(1, 2)
        p = self.linear_pos(pos_emb).view(1, -1, self.h, self.d_k).transpose(1, 2)

        q_u = (q + self.pos_bias_u).transpose(1, 2)
        q_v = (q + self.pos_bias_v).transpose(1, 2)
        ac = torch.matmul(q_u, k.transpose(-2, -1))
        bd = self.rel_shift(torch.matmul(q_v, p.transpose(-2, -1)))
        scores = (ac + bd) / math.sqrt(self.d_k)

        pad = ~mask[:, None, None, :]
        attn = torch.softmax(scores.masked_fill(pad, float("-inf")), dim=-1)
        attn = self.dropout(attn.masked_fill(pad, 0.0))
        out = torch.matmul(attn, v).transpose(1, 2).reshape(b, t, -1)
        return self.linear_out(out)


class FeedForward(nn.Module):
    def __init__(self, d_model, d_ff, dropout, activation=nn.SiLU):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, d_ff), activation(), nn.Dropout(dropout), nn.Linear(d_ff, d_model)
        )

    def forward(self, x):
        return self.net(x)


def _zero_pad(x, mask):
    return x.masked_fill(~mask[..., None], 0.0)


class ConvModule(nn.Module):
    """Conformer convolution: pointwise + GLU, depthwise, BatchNorm, Swish, pointwise."""

    def __init__(self, d_model, kernel, dropout):
        super().__init__()
        self.pw1 = nn.Conv1d(d_model, 2 * d_model, 1)
        self.dw = nn.Conv1d(d_model, d_model, kernel, padding=kernel // 2, groups=d_model)
        self.norm = nn.BatchNorm1d(d_model)
        self.pw2 = nn.Conv1d(d_model, d_model, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        x = F.glu(self.pw1(_zero_pad(x, mask).transpose(1, 2)), dim=1)
        x = x.masked_fill(~mask[:, None, :], 0.0)
        x = F.silu(self.norm(self.dw(x)))
        return self.dropout(self.pw2(x).transpose(1, 2))


class ConvolutionalGatingMLP(nn.Module):
    """cgMLP: channel projection, spatial gating with a depthwise conv, projection back."""

    def __init__(self, d_model, units, kernel, dropout):
        super().__init__()
        self.proj_in = nn.Linear(d_model, units)
        self.gate_norm = nn.LayerNorm(units // 2)
        self.gate_conv = nn.Conv1d(
            units // 2, units // 2, kernel, padding=kernel // 2, groups=units // 2
        )
        self.proj_out = nn.Linear(units // 2, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        x = F.gelu(self.proj_in(x))
        x_r, x_g = x.chunk(2, dim=-1)
        x_g = _zero_pad(self.gate_norm(x_g), mask)
        x_g = self.gate_conv(x_g.transpose(1, 2)).transpose(1, 2)
        return self.proj_out(self.dropout(x_r * x_g))


class ConformerLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.model_dim
        self.ff1 = FeedForward(d, cfg.feedforward_dim, cfg.dropout)
        self.ff2 = FeedForward(d, cfg.feedforward_dim, cfg.dropout)
        self.attn = RelPositionMultiHeadedAttention(cfg.num_heads, d, cfg.dropout)
        self.conv = ConvModule(d, cfg.conv_kernel, cfg.dropout)
        self.norm_ff1, self.norm_attn, self.norm_conv, self.norm_ff2, self.norm_out = (
            nn.LayerNorm(d) for _ in range(5)
        )
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, pos_emb, mask):
        x = x + 0.5 * self.dropout(self.ff1(self.norm_ff1(x)))
        x = x + self.dropout(self.attn(self.norm_attn(x), pos_emb, mask))
        x = x + self.conv(self.norm_conv(x), mask)
        x = x + 0.5 * self.dropout(self.ff2(self.norm_ff2(x)))
        return self.norm_out(x)


class BranchformerLayer(nn.Module):
    """Parallel attention and cgMLP branches merged by concatenation + projection."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.model_dim
        self.norm_attn = nn.LayerNorm(d)
        self.norm_mlp = nn.LayerNorm(d)
        self.attn = RelPositionMultiHeadedAttention(cfg.num_heads, d, cfg.dropout)
        self.cgmlp = ConvolutionalGatingMLP(d, cfg.cgmlp_dim, cfg.conv_kernel, cfg.dropout)
        self.merge = nn.Linear(2 * d, d)
        self.norm_out = nn.LayerNorm(d)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, pos_emb, mask):
        x1 = self.dropout(self.attn(self.norm_attn(x), pos_emb, mask))
        x2 = self.dropout(self.cgmlp(self.norm_mlp(x), mask))
        x = x + self.dropout(self.merge(torch.cat([x1, x2], dim=-1)))
        return self.norm_out(x)


class EBranchformerLayer(nn.Module):
    """Branchformer with macaron feed-forwards and a depthwise-conv merge module."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.model_dim
        self.ff1 = FeedForward(d, cfg.feedforward_dim, cfg.dropout)
        self.ff2 = FeedForward(d, cfg.feedforward_dim, cfg.dropout)
        self.norm_ff1, self.norm_attn, self.norm_mlp, self.norm_ff2, self.norm_out = (
            nn.LayerNorm(d) for _ in range(5)
        )
        self.attn = RelPositionMultiHeadedAttention(cfg.num_heads, d, cfg.dropout)
        self.cgmlp = ConvolutionalGatingMLP(d, cfg.cgmlp_dim, cfg.conv_kernel, cfg.dropout)
        k = cfg.merge_kernel
        self.merge_conv = nn.Conv1d(2 * d, 2 * d, k, padding=k // 2, groups=2 * d)
        self.merge_proj = nn.Linear(2 * d, d)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, pos_emb, mask):
        x = x + 0.5 * self.dropout(self.ff1(self.norm_ff1(x)))
        x1 = self.dropout(self.attn(self.norm_attn(x), pos_emb, mask))
        x2 = self.dropout(self.cgmlp(self.norm_mlp(x), mask))
        cat = _zero_pad(torch.cat([x1, x2], dim=-1), mask)
        cat = cat + self.merge_conv(cat.transpose(1, 2)).transpose(1, 2)
        x = x + self.dropout(self.merge_proj(cat))
        x = x + 0.5 * self.dropout(self.ff2(self.norm_ff2(x)))
        return self.norm_out(x)


LAYERS = {
    "conformer": ConformerLayer,
    "branchformer": BranchformerLayer,
    "e_branchformer": EBranchformerLayer,
}


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.pos_enc = RelPositionalEncoding(config.model_dim, config.dropout)
        self.layers = nn.ModuleList(LAYERS[config.variant](config) for _ in range(config.num_layers))
        self.after_norm = nn.LayerNorm(config.model_dim)

    def forward(self, features: FeatureSequence) -> FeatureSequence:
        x = features.values
        if x.size(-1) != self.config.model_dim:
            raise ShapeError(
                f"feature width {x.size(-1)} != encoder model_dim {self.config.model_dim}"
            )
        mask = features.mask
        x, pos_emb = self.pos_enc(x)
        for layer in self.layers:
            x = layer(x, pos_emb, mask)
        return FeatureSequence(self.after_norm(x), features.lengths)


def encoder_forward(
    features: FeatureSequence, config: EncoderConfig, module: Encoder | None = None
) -> FeatureSequence:
    if module is None:
        module = Encoder(config).to(features.values.dtype).eval()
    return module(features)
