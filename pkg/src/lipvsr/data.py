"""Synthetic lip-video corpus, manifest/raw-clip I/O and video augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .config import SUPPORTED_CROPS, AugmentConfig, ConfigError
from .errors import ShapeError
from .vocab import Vocabulary

SPLITS = ("train", "dev", "eval")
DEFAULT_FRAME_RATE = 25.0


class EmptyClipError(ValueError):
    pass


@dataclass
class VideoClip:
    id: str
    frames: np.ndarray  # T x H x W x C, float32 in [0, 1]
    frame_rate: float = DEFAULT_FRAME_RATE

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4:
            raise ShapeError(f"clip {self.id}: expected T x H x W x C, got shape {f.shape}")
        t, h, w, c = f.shape
        if t < 1:
            raise EmptyClipError(f"clip {self.id} has no frames")
        if h != w:
            raise ShapeError(f"clip {self.id}: frames must be square, got {h}x{w}")
        if h not in SUPPORTED_CROPS:
            raise ShapeError(f"clip {self.id}: crop {h} not in {SUPPORTED_CROPS}")
        if c not in (1, 3):
            raise ShapeError(f"clip {self.id}: channels must be 1 or 3, got {c}")
        if f.min() < 0.0 or f.max() > 1.0:
            raise ValueError(f"clip {self.id}: intensities outside [0, 1]")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class ManifestEntry:
    id: str
    media_path: str
    transcript: str
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"entry {self.id}: unknown split {self.split!r}")
        if self.split in ("train", "dev") and not self.transcript.strip():
            raise ValueError(f"entry {self.id}: empty transcript in {self.split} split")


# ---------------------------------------------------------------------------
# synthetic corpus


GLYPH_PATTERNS = ("solid", "hstripes", "vstripes", "checker")
GLYPH_SIZES = (0.25, 0.4, 0.55)  # fraction of the crop
MAX_SYNTHETIC_TOKENS = len(GLYPH_PATTERNS) * len(GLYPH_SIZES) * 2 * 4


def _glyph_style(token_index: int) -> tuple[str, float, int, float]:
    """(pattern, size fraction, vertical drift sign, intensity) of a token, mixed radix."""
    j = token_index
    pattern = GLYPH_PATTERNS[j % 4]
    size = GLYPH_SIZES[(j // 4) % 3]
    drift = 1 if (j // 12) % 2 == 0 else -1
    intensity = 1.0 - 0.2 * (j // 24)
    return pattern, size, drift, intensity


def render_token(
    token_index: int, num_tokens: int, crop: int, frames_per_token: int
) -> np.ndarray:
    """Frames (F x H x W) for one token: a textured square drifting vertically.

    Tokens differ in texture, size, drift direction and intensity, never in
    where they sit: the glyph is centred and mirror-symmetric, so identity
    survives spatial pooling and horizontal flips.
    """
    if not 0 <= token_index < num_tokens <= MAX_SYNTHETIC_TOKENS:
        raise ConfigError("vocab", f"synthetic rendering supports up to {MAX_SYNTHETIC_TOKENS} tokens")
    pattern, frac, drift, intensity = _glyph_style(token_index)
    size = max(4, int(round(crop * frac / 2)) * 2)
    period = max(2, crop // 20) * 2
    yy, xx = np.mgrid[0:size, 0:size]
    xx = np.minimum(xx, size - 1 - xx)  # mirror-symmetric texture coordinates
    if pattern == "solid":
        glyph = np.ones((size, size))
    elif pattern == "hstripes":
        glyph = (yy // (period // 2)) % 2 == 0
    elif pattern == "vstripes":
        glyph = (xx // (period // 2)) % 2 == 0
    else:
        glyph = (yy // (period // 2) + xx // (period // 2)) % 2 == 0
    glyph = glyph.astype(np.float32) * intensity

    top, left = (crop - size) // 2, (crop - size) // 2
    step = max(1, size // (2 * frames_per_token))
    out = np.zeros((frames_per_token, crop, crop), dtype=np.float32)
    for i in range(frames_per_token):
        r0 = int(np.clip(top + drift * (i - frames_per_token // 2) * step, 0, crop - size))
        out[i, r0 : r0 + size, left : left + size] = glyph
    return out


def generate_synthetic_corpus(
    seed: int,
    num_utterances: int,
    vocab: Vocabulary,
    crop: int,
    max_len: int,
    frames_per_token: int = 4,
    channels: int = 1,
    split: str = "train",
    id_prefix: str | None = None,
    noise: float = 0.05,
) -> list[tuple[VideoClip, ManifestEntry]]:
    if num_utterances < 1:
        raise ConfigError("num_utterances", "must be >= 1")
    if crop not in SUPPORTED_CROPS:
        raise ConfigError("crop", f"expected one of {SUPPORTED_CROPS}")
    content = vocab.content_ids
    if len(content) < 2:
        raise ConfigError("vocab", "need at least 2 non-special tokens")
    if max_len < 1 or frames_per_token < 1:
        raise ConfigError("max_len", "max_len and frames_per_token must be >= 1")

    rng = np.random.default_rng(seed)
    prefix = id_prefix if id_prefix is not None else split
    glyphs = [render_token(j, len(content), crop, frames_per_token) for j in range(len(content))]
    corpus = []
    for n in range(num_utterances):
        length = int(rng.integers(1, max_len + 1))
        picks = rng.integers(0, len(content), size=length)
        video = np.concatenate([glyphs[j] for j in picks], axis=0)
        video = video + noise * rng.standard_normal(video.shape).astype(np.float32)
        video = np.clip(video, 0.0, 1.0).astype(np.float32)
        video = np.repeat(video[..., None], channels, axis=-1)
        uid = f"{prefix}{n:05d}"
        transcript = " ".join(vocab.tokens[content[j]] for j in picks)
        corpus.append(
            (VideoClip(uid, video), ManifestEntry(uid, f"{uid}.f32", transcript, split))
        )
    return corpus


# ---------------------------------------------------------------------------
# raw clip files and manifests


def write_clip(clip: VideoClip, directory: str | Path) -> Path:
    """Raw little-endian float32 payload ``<id>.f32`` plus ``<id>.shape`` ("T H W C fps")."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{clip.id}.f32"
    clip.frames.astype("<f4").tofile(path)
    shape = " ".join(str(s) for s in clip.frames.shape)
    path.with_suffix(".shape").write_text(f"{shape} {clip.frame_rate}\n", encoding="utf-8")
    return path


def read_clip(path: str | Path, clip_id: str | None = None) -> VideoClip:
    path = Path(path)
    header = path.with_suffix(".shape").read_text(encoding="utf-8").split()
    shape = tuple(int(v) for v in header[:4])
    fps = float(header[4]) if len(header) > 4 else DEFAULT_FRAME_RATE
    frames = np.fromfile(path, dtype="<f4")
    if frames.size != math.prod(shape):
        raise ShapeError(f"{path}: payload has {frames.size} values, header says {shape}")
    return VideoClip(clip_id or path.stem, frames.reshape(shape).astype(np.float32), fps)


def write_manifest(entries: Sequence[ManifestEntry], path: str | Path) -> None:
    lines = [f"{e.id}\t{e.media_path}\t{e.transcript}\t{e.split}" for e in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries, seen = [], set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
        entry = ManifestEntry(*fields)
        if entry.id in seen:
            raise ValueError(f"{path}:{lineno}: duplicate id {entry.id!r}")
        seen.add(entry.id)
        entries.append(entry)
    return entries


def load_split(
    manifest: str | Path, splits: Sequence[str]
) -> list[tuple[VideoClip, ManifestEntry]]:
    root = Path(manifest).parent
    return [
        (read_clip(root / e.media_path, e.id), e)
        for e in read_manifest(manifest)
        if e.split in splits
    ]


# ---------------------------------------------------------------------------
# transforms


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def speed_perturb(clip: VideoClip, factor: float) -> VideoClip:
    """Resample the time axis by nearest index; factor > 1 plays faster (fewer frames)."""
    if factor <= 0:
        raise ValueError("speed factor must be > 0")
    t = clip.num_frames
    new_t = _round_half_up(t / factor)
    if new_t == 0:
        raise EmptyClipError(f"clip {clip.id}: speed factor {factor} leaves no frames")
    if factor == 1.0:
        return VideoClip(clip.id, clip.frames.copy(), clip.frame_rate)
    src = np.minimum(np.floor(np.arange(new_t) * factor + 0.5).astype(int), t - 1)
    return VideoClip(clip.id, clip.frames[src], clip.frame_rate)


def apply_dynamic_augmentation(
    clip: VideoClip, config: AugmentConfig, rng: np.random.Generator
) -> VideoClip:
    """Rotate, then flip, then brightness/contrast; one draw per clip.

    All four random numbers are always drawn so that the stream consumed from
    ``rng`` does not depend on the config.
    """
    angle = rng.uniform(-config.rotation_degrees, config.rotation_degrees)
    flip = rng.random() < config.flip_probability
    brightness = rng.uniform(1.0 - config.color_jitter, 1.0 + config.color_jitter)
    contrast = rng.uniform(1.0 - config.color_jitter, 1.0 + config.color_jitter)

    x = clip.frames
    if config.rotation_degrees > 0 and angle != 0.0:
        x = ndimage.rotate(x, angle, axes=(1, 2), reshape=False, order=1, mode="constant")
    if flip:
        x = x[:, :, ::-1, :]
    if config.color_jitter > 0:
        mean = x.mean()
        x = (x - mean) * contrast + mean
        x = x * brightness
    x = np.clip(x, 0.0, 1.0).astype(np.float32)
    return VideoClip(clip.id, np.ascontiguousarray(x), clip.frame_rate)


def crop_and_normalize(
    frames: np.ndarray, crop: int, to_grayscale: bool = False, clip_id: str = "clip"
) -> VideoClip:
    """Center crop a T x H x W x C array and scale it into [0, 1].

    Integer inputs are divided by their dtype maximum; float inputs are
    assumed to be on a unit scale already and are clipped.
    """
    if frames.ndim == 3:
        frames = frames[..., None]
    t, h, w, _ = frames.shape
    if h < crop or w < crop:
        raise ShapeError(f"source {h}x{w} is smaller than crop {crop}")
    top, left = (h - crop) // 2, (w - crop) // 2
    x = frames[:, top : top + crop, left : left + crop, :]
    if np.issubdtype(x.dtype, np.integer):
        x = x.astype(np.float64) / np.iinfo(x.dtype).max
    x = x.astype(np.float32)
    if to_grayscale:
        x = x.mean(axis=-1, keepdims=True, dtype=np.float32)
    return VideoClip(clip_id, np.clip(x, 0.0, 1.0), DEFAULT_FRAME_RATE)
