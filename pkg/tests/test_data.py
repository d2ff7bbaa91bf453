import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipvsr.config import AugmentConfig, ConfigError
from lipvsr.data import (
    EmptyClipError,
    ManifestEntry,
    VideoClip,
    apply_dynamic_augmentation,
    crop_and_normalize,
    generate_synthetic_corpus,
    MAX_SYNTHETIC_TOKENS,
    load_split,
    render_token,
    read_clip,
    read_manifest,
    speed_perturb,
    write_clip,
    write_manifest,
)
from lipvsr.errors import ShapeError
from lipvsr.vocab import Vocabulary

VOCAB = Vocabulary.synthetic(12)


def _clip(t=6, size=80, c=1, seed=0):
    rng = np.random.default_rng(seed)
    return VideoClip("u", rng.random((t, size, size, c), dtype=np.float32))


def test_corpus_is_deterministic():
    a = generate_synthetic_corpus(7, 4, VOCAB, 96, 5)
    b = generate_synthetic_corpus(7, 4, VOCAB, 96, 5)
    for (ca, ea), (cb, eb) in zip(a, b):
        assert np.array_equal(ca.frames, cb.frames)
        assert ea == eb


def test_corpus_depends_on_seed():
    a = generate_synthetic_corpus(7, 4, VOCAB, 96, 5)
    b = generate_synthetic_corpus(8, 4, VOCAB, 96, 5)
    assert any(ea.transcript != eb.transcript for (_, ea), (_, eb) in zip(a, b))


def test_frames_grow_linearly_with_transcript():
    corpus = generate_synthetic_corpus(3, 30, VOCAB, 80, 6, frames_per_token=4)
    lengths = {len(e.transcript.split()) for _, e in corpus}
    assert 5 in lengths
    for clip, entry in corpus:
        assert clip.num_frames == 4 * len(entry.transcript.split())


@pytest.mark.parametrize("crop", [80, 128])
def test_tokens_render_distinct_mirror_symmetric_patterns(crop):
    glyphs = [render_token(j, MAX_SYNTHETIC_TOKENS, crop, 4) for j in range(MAX_SYNTHETIC_TOKENS)]
    for i in range(len(glyphs)):
        assert np.array_equal(glyphs[i], glyphs[i][:, :, ::-1])
        for j in range(i + 1, len(glyphs)):
            assert not np.array_equal(glyphs[i], glyphs[j])


def test_token_identity_survives_spatial_pooling():
    # translation-free summaries of the glyphs already separate the tokens
    pooled = {render_token(j, 12, 80, 4).mean(axis=(1, 2)).round(6).tobytes() for j in range(12)}
    energy = {np.abs(np.diff(render_token(j, 12, 80, 4), axis=2)).sum().round(3) for j in range(12)}
    assert len(pooled) + len(energy) > 12


def test_render_rejects_oversized_vocab():
    with pytest.raises(ConfigError):
        render_token(0, MAX_SYNTHETIC_TOKENS + 1, 80, 4)


def test_corpus_rejects_tiny_vocab():
    with pytest.raises(ConfigError):
        generate_synthetic_corpus(0, 1, Vocabulary.from_content(["a"]), 80, 3)
    with pytest.raises(ConfigError):
        generate_synthetic_corpus(0, 1, VOCAB, 64, 3)


@pytest.mark.parametrize("factor,expected", [(1.0, 30), (0.9, 33), (1.1, 27)])
def test_speed_perturb_lengths(factor, expected):
    clip = _clip(t=30)
    out = speed_perturb(clip, factor)
    assert out.num_frames == expected
    assert out.frames.shape[1:] == clip.frames.shape[1:]
    if factor == 1.0:
        assert np.array_equal(out.frames, clip.frames)
    # every output frame is a copy of some input frame
    for frame in out.frames:
        assert any(np.array_equal(frame, f) for f in clip.frames)


def test_speed_perturb_errors():
    with pytest.raises(EmptyClipError):
        speed_perturb(_clip(t=1), 3.0)
    with pytest.raises(ValueError):
        speed_perturb(_clip(), 0.0)


def test_augmentation_identity_config():
    clip = _clip()
    cfg = AugmentConfig(rotation_degrees=0, flip_probability=0, color_jitter=0)
    out = apply_dynamic_augmentation(clip, cfg, np.random.default_rng(0))
    assert np.array_equal(out.frames, clip.frames)


def test_augmentation_flip_mirrors_width():
    clip = _clip()
    cfg = AugmentConfig(rotation_degrees=0, flip_probability=1, color_jitter=0)
    out = apply_dynamic_augmentation(clip, cfg, np.random.default_rng(0))
    w = clip.frames.shape[2]
    for x in (0, 5, w - 1):
        assert np.array_equal(out.frames[:, :, x], clip.frames[:, :, w - 1 - x])


def test_augmentation_reproducible():
    clip = _clip()
    cfg = AugmentConfig(rotation_degrees=10, flip_probability=0.5, color_jitter=0.2)
    a = apply_dynamic_augmentation(clip, cfg, np.random.default_rng(42))
    b = apply_dynamic_augmentation(clip, cfg, np.random.default_rng(42))
    assert np.array_equal(a.frames, b.frames)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    rotation=st.floats(0, 45),
    flip=st.floats(0, 1),
    jitter=st.floats(0, 0.9),
    t=st.integers(1, 4),
    c=st.sampled_from([1, 3]),
)
def test_augmentation_preserves_shape_and_range(seed, rotation, flip, jitter, t, c):
    clip = _clip(t=t, c=c, seed=seed % 1000)
    cfg = AugmentConfig(rotation_degrees=rotation, flip_probability=flip, color_jitter=jitter)
    out = apply_dynamic_augmentation(clip, cfg, np.random.default_rng(seed))
    assert out.frames.shape == clip.frames.shape
    assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0


def test_center_crop_window():
    src = np.random.default_rng(0).random((3, 128, 128, 1), dtype=np.float32)
    out = crop_and_normalize(src, 96)
    assert out.frames.shape == (3, 96, 96, 1)
    assert np.array_equal(out.frames, src[:, 16:112, 16:112])
    same = crop_and_normalize(src, 128)
    assert np.array_equal(same.frames, src)


def test_crop_grayscale_constant():
    out = crop_and_normalize(np.full((2, 100, 100, 3), 0.5, np.float32), 80, to_grayscale=True)
    assert out.frames.shape == (2, 80, 80, 1)
    assert np.all(out.frames == 0.5)


def test_crop_scales_integers():
    out = crop_and_normalize(np.full((1, 80, 80, 1), 255, np.uint8), 80)
    assert np.all(out.frames == 1.0)


def test_crop_too_small():
    with pytest.raises(ShapeError):
        crop_and_normalize(np.zeros((1, 64, 64, 1), np.float32), 80)


@pytest.mark.parametrize(
    "frames",
    [
        np.zeros((0, 80, 80, 1), np.float32),
        np.zeros((1, 80, 96, 1), np.float32),
        np.zeros((1, 64, 64, 1), np.float32),
        np.zeros((1, 80, 80, 2), np.float32),
        np.full((1, 80, 80, 1), 1.5, np.float32),
    ],
)
def test_video_clip_invariants(frames):
    with pytest.raises(ValueError):
        VideoClip("x", frames)


def test_clip_and_manifest_round_trip(tmp_path):
    corpus = generate_synthetic_corpus(1, 3, VOCAB, 80, 3, channels=3, split="dev")
    for clip, _ in corpus:
        write_clip(clip, tmp_path)
    write_manifest([e for _, e in corpus], tmp_path / "manifest.tsv")
    assert read_manifest(tmp_path / "manifest.tsv") == [e for _, e in corpus]
    loaded = load_split(tmp_path / "manifest.tsv", ["dev"])
    assert len(loaded) == 3
    for (clip, entry), (orig, _) in zip(loaded, corpus):
        assert clip.id == entry.id == orig.id
        assert np.array_equal(clip.frames, orig.frames)
    assert load_split(tmp_path / "manifest.tsv", ["train"]) == []
    raw = (tmp_path / f"{corpus[0][0].id}.f32").read_bytes()
    assert raw == corpus[0][0].frames.astype("<f4").tobytes()
    assert read_clip(tmp_path / f"{corpus[0][0].id}.f32").frame_rate == 25.0


def test_manifest_rejects_duplicates_and_bad_entries(tmp_path):
    e = ManifestEntry("a", "a.f32", "x y", "train")
    write_manifest([e, e], tmp_path / "m.tsv")
    with pytest.raises(ValueError, match="duplicate"):
        read_manifest(tmp_path / "m.tsv")
    with pytest.raises(ValueError):
        ManifestEntry("b", "b.f32", "", "train")
    with pytest.raises(ValueError):
        ManifestEntry("b", "b.f32", "x", "test")
    ManifestEntry("b", "b.f32", "", "eval")
