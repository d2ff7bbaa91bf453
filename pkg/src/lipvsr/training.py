"""Training stages, checkpoint files and checkpoint averaging.

Checkpoint file layout (all integers little-endian)::

    magic    8 bytes   b"LVSRCKPT"
    version  uint32    1
    hlen     uint64    length of the JSON header in bytes
    header   hlen      UTF-8 JSON, see below
    payload  ...       float32 little-endian arrays, concatenated

The header holds ``params`` (a list of ``{"name", "shape", "offset",
"nbytes"}`` in name order, offsets relative to the payload start), the
metadata fields ``epoch``, ``dev_loss``, ``config_digest`` and ``meta``, and
``payload_sha256``, the digest of the payload bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import AugmentConfig, DecodeConfig, TrainConfig
from .data import VideoClip, apply_dynamic_augmentation, speed_perturb
from .decoding import recognize
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

MAGIC = b"LVSRCKPT"
VERSION = 1


class CheckpointMismatchError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Non-finite loss; ``checkpoints`` holds every completed epoch."""

    def __init__(self, report: str, checkpoints: list["Checkpoint"]):
        super().__init__(report)
        self.report = report
        self.checkpoints = checkpoints

    @property
    def last_checkpoint(self) -> "Checkpoint | None":
        return self.checkpoints[-1] if self.checkpoints else None


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    epoch: int
    dev_loss: float
    config_digest: str
    meta: dict = field(default_factory=dict)

    def payload_bytes(self) -> bytes:
        return b"".join(
            np.ascontiguousarray(self.params[name], dtype="<f4").tobytes()
            for name in sorted(self.params)
        )

    def digest(self) -> str:
        return hashlib.sha256(self.payload_bytes()).hexdigest()

    @classmethod
    def from_model(cls, model: torch.nn.Module, epoch: int, dev_loss: float, config_digest: str, **meta) -> "Checkpoint":
        params = {
            name: t.detach().cpu().to(torch.float32).numpy().copy()
            for name, t in model.state_dict().items()
        }
        return cls(params, epoch, float(dev_loss), config_digest, dict(meta))

    def load_into(self, model: torch.nn.Module) -> None:
        state = model.state_dict()
        if set(state) != set(self.params):
            missing = sorted(set(state) ^ set(self.params))
            raise CheckpointMismatchError(f"parameter names differ, e.g. {missing[:3]}")
        new_state = {}
        for name, ref in state.items():
            arr = self.params[name]
            if tuple(arr.shape) != tuple(ref.shape):
                raise CheckpointMismatchError(f"{name}: shape {arr.shape} != {tuple(ref.shape)}")
            new_state[name] = torch.from_numpy(np.array(arr)).to(ref.dtype)
        model.load_state_dict(new_state)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    for name in sorted(ckpt.params):
        arr = ckpt.params[name]
        nbytes = int(arr.size) * 4
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    payload = ckpt.payload_bytes()
    header = json.dumps(
        {
            "params": entries,
            "epoch": ckpt.epoch,
            "dev_loss": ckpt.dev_loss,
            "config_digest": ckpt.config_digest,
            "meta": ckpt.meta,
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        f.write(payload)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20 : 20 + hlen].decode("utf-8"))
    payload = data[20 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError(f"{path}: payload digest mismatch")
    params = {}
    for e in header["params"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        params[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).astype(np.float32)
    return Checkpoint(params, header["epoch"], header["dev_loss"], header["config_digest"], header["meta"])


def select_and_average(
    checkpoints: Sequence[Checkpoint], k: int | None = None, selection: str = "lowest_dev_loss"
) -> Checkpoint:
    """Parameter-wise mean of the ``k`` lowest-dev-loss checkpoints (ties: earlier
    epoch first), or of all of them with ``selection="all"``.

    Sums run in float64 over epoch-sorted inputs, so the result does not depend
    on input order.
    """
    if not checkpoints:
        raise ValueError("no checkpoints to average")
    if selection == "lowest_dev_loss":
        if k is None or not 1 <= k <= len(checkpoints):
            raise ValueError(f"k={k} is invalid for {len(checkpoints)} checkpoints")
        chosen = sorted(checkpoints, key=lambda c: (c.dev_loss, c.epoch))[:k]
    elif selection == "all":
        chosen = list(checkpoints)
    else:
        raise ValueError(f"unknown selection {selection!r}")
    chosen.sort(key=lambda c: c.epoch)

    ref = chosen[0]
    for c in chosen[1:]:
        if c.config_digest != ref.config_digest:
            raise CheckpointMismatchError("checkpoints come from different model configs")
        if set(c.params) != set(ref.params):
            raise CheckpointMismatchError("checkpoints have different parameter names")
        for name in ref.params:
            if c.params[name].shape != ref.params[name].shape:
                raise CheckpointMismatchError(f"{name}: shapes differ between checkpoints")

    params = {}
    for name in sorted(ref.params):
        acc = np.zeros(ref.params[name].shape, dtype=np.float64)
        for c in chosen:
            acc += c.params[name]
        params[name] = (acc / len(chosen)).astype(np.float32)
    epochs = [c.epoch for c in chosen]
    return Checkpoint(
        params,
        epoch=max(epochs),
        dev_loss=float(np.mean([c.dev_loss for c in chosen])),
        config_digest=ref.config_digest,
        meta={"averaged_epochs": epochs, "selection": selection},
    )


# ---------------------------------------------------------------------------
# batching


@dataclass
class Example:
    id: str
    frames: np.ndarray  # T x H x W x C
    tokens: list[int]


def make_examples(
    corpus: Sequence[tuple[VideoClip, object]], vocab: Vocabulary, speed_factors: Sequence[float] = (1.0,)
) -> list[Example]:
    """Expand (clip, manifest entry) pairs offline by each speed factor."""
    out = []
    for clip, entry in corpus:
        tokens = vocab.encode(entry.transcript)
        for factor in speed_factors:
            c = speed_perturb(clip, factor)
            suffix = "" if factor == 1.0 else f"-sp{factor:g}"
            out.append(Example(clip.id + suffix, c.frames, tokens))
    return out


def collate(frames: Sequence[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    """Zero-pad to the longest clip: B x T x C x H x W video and B lengths."""
    t_max = max(f.shape[0] for f in frames)
    _, h, w, c = frames[0].shape
    video = np.zeros((len(frames), t_max, c, h, w), dtype=np.float32)
    for i, f in enumerate(frames):
        video[i, : f.shape[0]] = f.transpose(0, 3, 1, 2)
    return torch.from_numpy(video), torch.tensor([f.shape[0] for f in frames], dtype=torch.long)


def _batches(n: int, batch_size: int, order: np.ndarray) -> list[np.ndarray]:
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


class WarmupLR:
    """Linear warmup to ``peak`` over ``warmup`` steps, then inverse-sqrt decay."""

    def __init__(self, peak: float, warmup: int):
        self.peak = peak
        self.warmup = warmup

    def __call__(self, step: int) -> float:
        step = max(step, 1)
        return self.peak * min(step / self.warmup, math.sqrt(self.warmup / step))


@torch.no_grad()
def evaluate_loss(model, examples: Sequence[Example], batch_size: int) -> float:
    """Joint loss in inference mode, averaged over utterances."""
    was_training = model.training
    model.eval()
    total = 0.0
    for idx in _batches(len(examples), batch_size, np.arange(len(examples))):
        batch = [examples[i] for i in idx]
        video, lengths = collate([e.frames for e in batch])
        out = model(video, lengths, [e.tokens for e in batch])
        total += float(out["loss"]) * len(batch)
    model.train(was_training)
    return total / len(examples)


def run_training_stage(
    model,
    train_examples: Sequence[Example],
    dev_examples: Sequence[Example],
    config: TrainConfig,
    epochs: int,
    lr: float,
    augment: AugmentConfig | None,
    config_digest: str,
    stage: int = 1,
) -> list[Checkpoint]:
    """Train ``epochs`` epochs and return one checkpoint (with dev loss) per epoch.

    Randomness comes only from ``config.seed`` and ``stage``: the batch order
    of epoch ``e`` and the augmentation of each clip are drawn from generators
    keyed on (seed, stage, e[, clip index]).
    """
    if not train_examples:
        raise ValueError("empty training corpus")
    if epochs == 0:
        return []
    dev = list(dev_examples) or list(train_examples)
    torch.manual_seed(config.seed * 1000 + stage)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.98), eps=1e-9)
    schedule = WarmupLR(lr, config.warmup_steps)
    step = 0
    checkpoints: list[Checkpoint] = []
    for epoch in range(1, epochs + 1):
        model.train()
        order = np.random.default_rng([config.seed, stage, epoch]).permutation(len(train_examples))
        running = 0.0
        for idx in _batches(len(train_examples), config.batch_size, order):
            frames = []
            for i in idx:
                ex = train_examples[i]
                if augment is not None:
                    rng = np.random.default_rng([config.seed, stage, epoch, int(i)])
                    ex_frames = apply_dynamic_augmentation(VideoClip(ex.id, ex.frames), augment, rng).frames
                else:
                    ex_frames = ex.frames
                frames.append(ex_frames)
            video, lengths = collate(frames)
            out = model(video, lengths, [train_examples[i].tokens for i in idx])
            loss = out["loss"]
            if not torch.isfinite(loss):
                report = (
                    f"stage {stage} epoch {epoch} step {step}: non-finite loss "
                    + ", ".join(f"{k}={float(v.detach()):.4g}" for k, v in out.items())
                )
                logger.error(report)
                raise TrainingDiverged(report, checkpoints)
            step += 1
            for group in optimizer.param_groups:
                group["lr"] = schedule(step)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            running += float(loss.detach()) * len(idx)
        dev_loss = evaluate_loss(model, dev, config.batch_size)
        logger.info(
            "stage %d epoch %d: train %.4f dev %.4f", stage, epoch, running / len(train_examples), dev_loss
        )
        checkpoints.append(Checkpoint.from_model(model, epoch, dev_loss, config_digest, stage=stage))
    return checkpoints


def decode_examples(
    model, examples: Sequence[Example], vocab: Vocabulary, config: DecodeConfig, batch_size: int = 8
) -> dict[str, list[str]]:
    model.eval()
    out = {}
    for idx in _batches(len(examples), batch_size, np.arange(len(examples))):
        batch = [examples[i] for i in idx]
        video, lengths = collate([e.frames for e in batch])
        for ex, hyp in zip(batch, recognize(model, video, lengths, config)):
            out[ex.id] = vocab.decode(hyp.tokens)
    return out
