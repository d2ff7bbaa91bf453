import pytest

from lipvsr.config import (
    ConfigError,
    DecodeConfig,
    ExperimentConfig,
    TrainConfig,
    load_config,
    parse_lines,
    save_config,
)


def test_defaults_follow_the_recipe():
    cfg = ExperimentConfig().validate()
    assert (cfg.model.loss.ctc_weight, cfg.model.loss.reverse_weight) == (0.3, 0.3)
    assert (cfg.decode.beam_size, cfg.decode.ctc_weight) == (64, 0.3)
    assert (cfg.model.encoder.num_layers, cfg.model.decoder.num_layers) == (12, 3)
    assert (cfg.train.stage1_epochs, cfg.train.stage2_epochs, cfg.train.average_top_k) == (50, 10, 15)
    assert cfg.model.encoder.variant == "e_branchformer"


def test_parse_lines_with_comments_and_types():
    cfg = parse_lines([
        "# comment",
        "model.encoder.variant = conformer",
        "model.frontend.block_depths = 1, 1, 2, 1   # trailing comment",
        "train.augment = false",
        "train.lr = 3e-3",
        "",
    ])
    assert cfg.model.encoder.variant == "conformer"
    assert cfg.model.frontend.block_depths == (1, 1, 2, 1)
    assert cfg.train.augment is False
    assert cfg.train.lr == 3e-3


@pytest.mark.parametrize(
    "line,key",
    [
        ("model.encoder.colour = red", "model.encoder.colour"),
        ("nosection.x = 1", "nosection.x"),
        ("train.batch_size = many", "train.batch_size"),
        ("model.encoder = 3", "model.encoder"),
        ("train.augment = maybe", "train.augment"),
        ("model.frontend.stem_kernel = 3,3", "model.frontend.stem_kernel"),
        ("just words", "line 1"),
    ],
)
def test_errors_name_the_key(line, key):
    with pytest.raises(ConfigError) as info:
        parse_lines([line])
    assert info.value.key == key
    assert key in str(info.value)


@pytest.mark.parametrize(
    "override,key",
    [
        ("model.encoder.variant=transformer", "model.encoder.variant"),
        ("model.encoder.num_heads=3", "model.encoder.model_dim"),
        ("model.decoder.model_dim=128", "model.decoder.model_dim"),
        ("model.loss.ctc_weight=1.5", "model.loss.ctc_weight"),
        ("data.crop=100", "data.crop"),
        ("data.augment.flip_probability=2", "data.augment.flip_probability"),
        ("data.augment.speed_factors=1.0,0", "data.augment.speed_factors"),
        ("train.average_top_k=100", "train.average_top_k"),
        ("decode.beam_size=0", "decode.beam_size"),
        ("data.grayscale=false", "model.frontend.input_channels"),
    ],
)
def test_validation_names_the_key(override, key):
    with pytest.raises(ConfigError) as info:
        load_config(overrides=[override], environ={}).validate()
    assert info.value.key == key


def test_precedence_file_env_override(tmp_path):
    path = tmp_path / "x.conf"
    path.write_text("train.seed = 1\ntrain.batch_size = 4\ndecode.beam_size = 5\n")
    env = {"LIPVSR_TRAIN__SEED": "2", "LIPVSR_DECODE__BEAM_SIZE": "6", "OTHER": "x"}
    cfg = load_config(path, ["train.seed=3"], environ=env)
    assert (cfg.train.seed, cfg.decode.beam_size, cfg.train.batch_size) == (3, 6, 4)


def test_env_errors_name_the_key():
    with pytest.raises(ConfigError) as info:
        load_config(environ={"LIPVSR_TRAIN__BOGUS": "1"})
    assert info.value.key == "train.bogus"


def test_missing_file():
    with pytest.raises(ConfigError) as info:
        load_config("/nonexistent/x.conf", environ={})
    assert info.value.key == "config"


def test_save_and_reload_round_trip(tmp_path):
    cfg = load_config(overrides=["model.frontend.block_channels=4,8,16,32", "model.frontend.stem_channels=4",
                                 "train.stage1_splits=train,dev"], environ={})
    save_config(cfg, tmp_path / "c.conf")
    again = load_config(tmp_path / "c.conf", environ={})
    assert again == cfg
    assert again.digest() == cfg.digest()
    assert again.model.digest() == cfg.model.digest()


def test_model_digest_tracks_model_fields_only():
    a = load_config(environ={})
    b = load_config(overrides=["train.seed=9"], environ={})
    c = load_config(overrides=["model.encoder.variant=branchformer"], environ={})
    assert a.model.digest() == b.model.digest() != c.model.digest()
    assert a.digest() != b.digest()


def test_section_validation():
    with pytest.raises(ConfigError):
        TrainConfig(stage1_epochs=-1).validate()
    with pytest.raises(ConfigError):
        DecodeConfig(reverse_weight=1.5).validate()
