"""End-to-end recognizer: frontend -> encoder -> (CTC head, L2R/R2L decoders)."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .decoder import BiTransformerDecoder, add_sos_eos
from .encoder import Encoder
from .frontend import FeatureSequence, VisualFrontend
from .losses import ctc_loss, joint_loss, label_smoothing_ce
from .vocab import Vocabulary


class VSRModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        config.validate()
        self.config = config
        self.vocab_size = vocab_size
        self.sos = self.eos = vocab_size - 1
        self.blank = 0
        self.frontend = VisualFrontend(config.frontend)
        self.encoder = Encoder(config.encoder)
        self.ctc_head = nn.Linear(config.encoder.model_dim, vocab_size)
        self.decoder = BiTransformerDecoder(vocab_size, config.decoder)

    @classmethod
    def build(cls, config: ModelConfig, vocab: Vocabulary) -> "VSRModel":
        return cls(config, len(vocab))

    def encode(self, video: torch.Tensor, lengths: torch.Tensor) -> FeatureSequence:
        return self.encoder(self.frontend(video, lengths))

    def ctc_log_probs(self, enc: FeatureSequence) -> torch.Tensor:
        return F.log_softmax(self.ctc_head(enc.values), dim=-1)

    def forward(
        self,
        video: torch.Tensor,
        lengths: torch.Tensor,
        targets: Sequence[Sequence[int]],
    ) -> dict[str, torch.Tensor]:
        """Component losses and the joint loss for one batch."""
        enc = self.encode(video, lengths)
        loss_ctc = ctc_loss(self.ctc_log_probs(enc), targets, enc.lengths, self.blank)
        smoothing = self.config.loss.label_smoothing

        ys_in, ys_out = add_sos_eos(targets, self.sos, self.eos)
        loss_l2r = label_smoothing_ce(self.decoder.left(enc, ys_in), ys_out, smoothing)
        ys_in, ys_out = add_sos_eos(targets, self.sos, self.eos, reverse=True)
        loss_r2l = label_smoothing_ce(self.decoder.right(enc, ys_in), ys_out, smoothing)

        loss = joint_loss(loss_ctc, loss_l2r, loss_r2l, self.config.loss)
        return {"loss": loss, "ctc": loss_ctc, "l2r": loss_l2r, "r2l": loss_r2l}
