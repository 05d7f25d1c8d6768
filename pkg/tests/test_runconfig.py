import pytest

from whitebench.errors import ConfigError
from whitebench.runconfig import parse_config


CONFIG = """
[experiment]
id = demo
master_seed = 3
seeds = 0 1 2
output_dir = out

[data]
source = synthetic
d = 16
n_train = 32
n_val = 8
n_test = 8
alpha = 2.0
label_noise = 0.1
classes = 4

[whitening]
modes = none, train, full
transform = pca
rank_policy = manual

[flow]
precondition = none
grid_points = 50
"""


def test_parse_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(CONFIG, encoding="utf-8")
    cfg = parse_config(path)
    assert cfg.experiment_id == "demo"
    assert cfg.master_seed == 3
    assert cfg.seeds == [0, 1, 2]
    assert cfg.whitening_modes == ["none", "train", "full"]
    assert cfg.data["alpha"] == 2.0
    assert cfg.flow["grid_points"] == 50


def test_unknown_key_is_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[data]\nsource = synthetic\nnsamples = 7\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="nsamples"):
        parse_config(path)


def test_unknown_section_is_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[dataz]\nd = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="dataz"):
        parse_config(path)


def test_bad_value_is_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[data]\nd = three\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="'d'"):
        parse_config(path)


def test_bad_whitening_mode_is_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[whitening]\nmodes = nonexistent\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="nonexistent"):
        parse_config(path).whitening_modes


def test_batch_size_full_keyword(tmp_path):
    path = tmp_path / "ok.cfg"
    path.write_text("[optimizer]\nbatch_size = full\n", encoding="utf-8")
    assert parse_config(path).optimizer["batch_size"] is None
    path.write_text("[optimizer]\nbatch_size = 16\n", encoding="utf-8")
    assert parse_config(path).optimizer["batch_size"] == 16


def test_missing_file_error():
    with pytest.raises(ConfigError, match="no such config"):
        parse_config("/nonexistent.cfg")
