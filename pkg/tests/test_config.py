import pytest

from kgpose.config import RunConfig, load_config, parse_config
from kgpose.errors import ConfigError


def test_defaults_build_every_component():
    cfg = RunConfig()
    assert cfg.network().num_modules == 11
    assert cfg.training().lr == 2.5e-4
    assert cfg.head().tap_channels == 64
    assert cfg.decoding().scales == (1.0, 0.75)


def test_comments_and_blank_lines():
    cfg = parse_config("""
        # a run
        steps = 40   # short
        flip = false

        scales = 1.0, 0.5
    """)
    assert cfg.steps == 40
    assert cfg.flip is False
    assert cfg.scales == (1.0, 0.5)


def test_unknown_key_names_line():
    with pytest.raises(ConfigError, match="line 2: unknown key 'stepz'"):
        parse_config("steps = 3\nstepz = 4\n")


@pytest.mark.parametrize("text", ["steps = many", "flip = maybe", "lr"])
def test_bad_values(text):
    with pytest.raises(ConfigError, match="line 1"):
        parse_config(text)


def test_invalid_combination():
    with pytest.raises(ConfigError):
        parse_config("input_size = 60")


def test_round_trip(tmp_path):
    cfg = RunConfig(steps=77, lr=1e-3, flip=False, scales=(1.0, 0.5, 0.25), seed=9)
    path = tmp_path / "run.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg
