import pytest

from motionssl.config import (ConfigError, GenerateConfig, ModelConfig, TrainConfig,
                              config_to_dict, load_config, model_config_from_dict,
                              train_config_from_dict)


def test_defaults():
    m, t, g = load_config()
    assert (m.width, m.heads, m.window) == (256, 8, 32)
    assert (m.agent_depth, m.lane_depth, m.light_depth) == (3, 6, 1)
    assert t.objectives == ("similarity", "reconstruction")
    assert (t.similarity_weight, t.redundancy_weight) == (0.01, 0.005)
    assert (t.lr, t.lr_decay, t.lr_step_epochs) == (1e-4, 0.5, 25)
    assert (g.dialect, g.scenes) == ("dialect-W", 512)


def test_file_parsing_and_comments(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("""
# a comment line
model.width = 64     # trailing comment
model.heads = 4
train.objectives = reconstruction
train.mask_ratio = 0.5
generate.dialect = dialect-A
generate.lights = 0
""")
    m, t, g = load_config(cfg)
    assert (m.width, m.heads) == (64, 4)
    assert t.objectives == ("reconstruction",)
    assert t.mask_ratio == 0.5
    assert (g.dialect, g.lights) == ("dialect-A", 0)


def test_overrides_win_over_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model.width = 64\nmodel.heads = 4\ntrain.epochs = 7\n")
    m, t, _ = load_config(cfg, ["model.width=128", "train.epochs = 3"])
    assert m.width == 128
    assert t.epochs == 3
    assert m.heads == 4  # untouched file value survives


def test_objectives_comma_list_and_window_none():
    _, t, _ = load_config(None, ["train.objectives=similarity, reconstruction"])
    assert t.objectives == ("similarity", "reconstruction")
    m, _, _ = load_config(None, ["model.window=none"])
    assert m.window is None
    m, _, _ = load_config(None, ["model.window=16"])
    assert m.window == 16


@pytest.mark.parametrize("override", [
    "model.widht=64",                 # misspelled key
    "nosuch.width=64",                # unknown section
    "width=64",                       # missing section prefix
    "model.width",                    # no '='
    "model.width=abc",                # unparseable int
    "generate.overwrite=maybe",       # unparseable bool
])
def test_bad_overrides_raise(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_validation_errors():
    with pytest.raises(ConfigError):
        ModelConfig(width=30, heads=4)
    with pytest.raises(ConfigError):
        TrainConfig(fusion="middle")
    with pytest.raises(ConfigError):
        TrainConfig(objectives=("similarity", "contrastive"))
    with pytest.raises(ConfigError):
        TrainConfig(mask_ratio=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        GenerateConfig(scenes=0)
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.cfg")


def test_round_trip_through_dicts(small_cfg):
    m2 = model_config_from_dict(config_to_dict(small_cfg))
    assert m2 == small_cfg
    t = TrainConfig(objectives=("reconstruction",), epochs=3, lr=2e-4)
    t2 = train_config_from_dict(config_to_dict(t))
    assert t2 == t
    assert isinstance(t2.objectives, tuple)
