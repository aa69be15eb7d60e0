import pytest

from gansweep.config import (
    ENV_PREFIX,
    KNOWN_KEYS,
    TOY_PROFILE,
    ExperimentConfig,
    env_overrides,
    load_config,
    parse_config,
    parse_ratios,
)
from gansweep.data import RATIO_ROWS, BlendSpec
from gansweep.errors import ConfigurationError


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_minimal_file_gets_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "dataset_root = /data/mri\n"), environ={})
    assert cfg.dataset_root == "/data/mri" and not cfg.toy
    assert cfg.cnn.learning_rate == 1e-4 and cfg.gan.learning_rate == 2e-4
    assert cfg.cnn.batch_size == cfg.gan.batch_size == 64
    assert cfg.ratios == RATIO_ROWS and len(cfg.ratios) == 11
    assert cfg.threshold == 0.5 and cfg.auc_tie_rule == "strict"


def test_comments_blank_lines_and_values(tmp_path):
    text = "# a comment\n\ndataset_root = d\nseed = 7\ncnn.patience = none\ngan.sample_epochs = 1, 10, 100\nratios = 1000:0, 0:1000\n"
    cfg = load_config(write(tmp_path, text), environ={})
    assert cfg.seed == 7 and cfg.cnn.patience is None
    assert cfg.gan.sample_epochs == (1, 10, 100)
    assert cfg.ratios == (BlendSpec(1000, 0), BlendSpec(0, 1000))


def test_ratio_row_not_summing_to_1000():
    with pytest.raises(ConfigurationError, match="900"):
        parse_ratios("800:100")
    with pytest.raises(ConfigurationError):
        parse_ratios("1000:0, 1000:0")
    with pytest.raises(ConfigurationError):
        parse_ratios("1000")
    with pytest.raises(ConfigurationError):
        parse_ratios("")


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigurationError, match="'foo'"):
        load_config(write(tmp_path, "dataset_root = d\nfoo = 1\n"), environ={})


def test_malformed_lines_and_values(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(write(tmp_path, "dataset_root d\n"), environ={})
    with pytest.raises(ConfigurationError, match="cnn.epochs"):
        load_config(write(tmp_path, "dataset_root = d\ncnn.epochs = many\n"), environ={})
    with pytest.raises(ConfigurationError):
        load_config(write(tmp_path, "dataset_root = d\ncnn.epochs = 0\n"), environ={})
    with pytest.raises(ConfigurationError):
        load_config(write(tmp_path, "dataset_root = d\nauc_tie_rule = mean\n"), environ={})


def test_missing_dataset_root_without_toy(tmp_path):
    with pytest.raises(ConfigurationError, match="dataset_root"):
        load_config(write(tmp_path, "seed = 1\n"), environ={})
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.cfg", environ={})


def test_toy_profile_and_precedence(tmp_path):
    path = write(tmp_path, "toy = true\ncnn.epochs = 4\nseed = 1\n")
    cfg = load_config(path, environ={})
    assert cfg.toy and cfg.cnn.epochs == 4 and cfg.gan.epochs == int(TOY_PROFILE["gan.epochs"])
    env = {ENV_PREFIX + "CNN__EPOCHS": "6", ENV_PREFIX + "SEED": "2"}
    cfg = load_config(path, environ=env)
    assert cfg.cnn.epochs == 6 and cfg.seed == 2
    cfg = load_config(path, overrides={"cnn.epochs": "8"}, environ=env)
    assert cfg.cnn.epochs == 8 and cfg.seed == 2


def test_toy_flag_argument():
    cfg = load_config(toy=True, environ={})
    assert cfg.toy and cfg.gan.base_width == int(TOY_PROFILE["gan.base_width"])


def test_environment_unknown_key():
    assert env_overrides({"PATH": "/bin", ENV_PREFIX + "OUT_DIR": "x"}) == {"out_dir": "x"}
    with pytest.raises(ConfigurationError, match="bogus"):
        env_overrides({ENV_PREFIX + "BOGUS": "1"})


def test_parse_config_reads_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_PREFIX + "THRESHOLD", "0.25")
    assert parse_config(write(tmp_path, "dataset_root = d\n")).threshold == 0.25


def test_flat_rendering_round_trips(tmp_path):
    cfg = load_config(write(tmp_path, "toy = true\nseed = 3\nratios = 600:400, 0:1000\n"), environ={})
    flat = cfg.as_flat()
    assert set(flat) == set(KNOWN_KEYS)
    flat.pop("dataset_root")
    again = load_config(write(tmp_path, "".join(f"{k} = {v}\n" for k, v in flat.items())), environ={})
    assert again == cfg


def test_validation_of_synthetic_supply():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(toy=True, synthetic_per_class=100).validate()
