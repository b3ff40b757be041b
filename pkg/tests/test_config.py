import pytest

from gsli.config import KEYS, RunConfig, build_config, parse_floats, parse_seeds, read_config_file, resolve_dataset
from gsli.errors import ConfigError


def test_parse_seeds():
    assert parse_seeds("3407..3411") == [3407, 3408, 3409, 3410, 3411]
    assert parse_seeds("1,2,5") == [1, 2, 5]
    assert parse_seeds("7") == [7]
    for bad in ("5..1", "a,b"):
        with pytest.raises(ConfigError):
            parse_seeds(bad)


def test_parse_floats():
    assert parse_floats("0.1,0.4") == [0.1, 0.4]
    with pytest.raises(ConfigError):
        parse_floats("0.1,x")


def test_file_then_flags(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\ntrain.epochs = 7\nmodel.channels = 4  # trailing\nseeds = 1..3\n")
    values = read_config_file(path)
    cfg = build_config(values, {"train.epochs": "9", "model.layers": None})
    assert cfg.epochs == 9 and cfg.channels == 4 and cfg.seeds == [1, 2, 3] and cfg.layers == 2


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("no equals sign\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        read_config_file(bad)
    bad.write_text("bogus.key = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        read_config_file(bad)


@pytest.mark.parametrize("key,value", [
    ("mask.ratio", "1.5"), ("missing.mechanism", "sometimes"), ("mask.pattern", "zigzag"),
    ("variant", "no-such"), ("model.dtype", "float16"), ("train.epochs", "0"), ("train.epochs", "ten"),
    ("missing.rates", "0.1,1.0"), ("adjacency.metric", "manhattan"), ("model.k_steps", "-1"),
])
def test_validation(key, value):
    with pytest.raises(ConfigError):
        build_config({}, {key: value})


def test_round_trip_and_digest():
    cfg = build_config({}, {"model.channels": "8"})
    again = build_config({k: str(v) if not isinstance(v, list) else ",".join(map(str, v)) for k, v in cfg.to_keys().items() if v is not None})
    assert again == cfg and again.digest() == cfg.digest()
    assert build_config().digest() != cfg.digest()
    assert set(cfg.to_keys()) == set(KEYS)


def test_derived_configs():
    cfg = build_config({}, {"seeds": "11..12", "model.channels": "4", "train.epochs": "3", "missing.conditioning_feature": "2"})
    exp = cfg.experiment_config()
    assert exp.seeds == [11, 12] and exp.model.channels == 4 and exp.training.epochs == 3
    assert exp.conditioning_feature == 2
    assert RunConfig().validate().window_length == 24


def test_resolve_dataset(tmp_path, monkeypatch):
    (tmp_path / "dutch").mkdir()
    monkeypatch.setenv("GSLI_DATA_DIR", str(tmp_path))
    assert resolve_dataset("dutch") == tmp_path / "dutch"
    with pytest.raises(ConfigError):
        resolve_dataset("absent")
