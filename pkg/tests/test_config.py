from dataclasses import dataclass

import pytest

from deskvsr.config import read_config, write_config
from deskvsr.errors import ConfigError
from deskvsr.models import ModelConfig
from deskvsr.training import TrainConfig


@dataclass
class Knobs:
    width: int = 3
    rate: float = 0.5
    name: str = "x"
    on: bool = False
    sizes: tuple = (1, 2)


SCHEMA = {"knobs": Knobs}


def _write(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return p


def test_defaults_for_missing_section(tmp_path):
    assert read_config(_write(tmp_path, ""), SCHEMA)["knobs"] == Knobs()


def test_parse_types(tmp_path):
    p = _write(tmp_path, "[knobs]\nwidth = 7\nrate = 1e-3\nname = abc\non = yes\nsizes = 4, 5, 6\n")
    assert read_config(p, SCHEMA)["knobs"] == Knobs(7, 1e-3, "abc", True, (4, 5, 6))


def test_unknown_key_named(tmp_path):
    with pytest.raises(ConfigError, match="hieght"):
        read_config(_write(tmp_path, "[knobs]\nhieght = 3\n"), SCHEMA)


def test_unknown_section_named(tmp_path):
    with pytest.raises(ConfigError, match="extra"):
        read_config(_write(tmp_path, "[extra]\na = 1\n"), SCHEMA)


def test_bad_value(tmp_path):
    with pytest.raises(ConfigError, match="width"):
        read_config(_write(tmp_path, "[knobs]\nwidth = wide\n"), SCHEMA)


def test_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        read_config(_write(tmp_path, "width = 3\n"), SCHEMA)


def test_round_trip_real_configs(tmp_path):
    m = ModelConfig(propagation="coupled", refill=True, flow_widths=(8, 4), dtype="float64")
    t = TrainConfig(total_iters=10, freeze_iters=3, lr_main=3.3e-4, flip=True)
    p = tmp_path / "rt.ini"
    write_config(p, {"model": m, "train": t})
    back = read_config(p, {"model": ModelConfig, "train": TrainConfig})
    assert back == {"model": m, "train": t}


def test_validation_runs_on_load(tmp_path):
    p = _write(tmp_path, "[model]\npropagation = sideways\n")
    with pytest.raises(ConfigError, match="propagation"):
        read_config(p, {"model": ModelConfig})
