import pytest

from vprtempo.config import RunConfig, load_config, parse_override, tomllib
from vprtempo.errors import ConfigError
from vprtempo.snn import Hyperparams


def test_defaults_match_hyperparams():
    cfg = RunConfig()
    assert cfg.hyperparams() == Hyperparams()
    assert cfg.places_per_module == 1000
    assert cfg.preprocess().size == 784


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('epochs = 2\nseed = 9\nhomeostasis = "literal"\nlam = 1\n')
    cfg = load_config(path, ["seed=11"], env={})
    assert (cfg.epochs, cfg.seed, cfg.homeostasis, cfg.lam) == (2, 11, "literal", 1.0)
    assert isinstance(cfg.lam, float)


def test_flags_win_over_set(tmp_path):
    cfg = load_config(None, ["workers=2"], {"workers": 4}, env={})
    assert cfg.workers == 4


def test_env_workers():
    assert load_config(None, env={"VPRTEMPO_WORKERS": "3"}).workers == 3
    assert load_config(None, ["workers=2"], env={"VPRTEMPO_WORKERS": "3"}).workers == 2
    with pytest.raises(ConfigError):
        load_config(None, env={"VPRTEMPO_WORKERS": "many"})


@pytest.mark.parametrize("text", ["bogus = 1\n", "epochs = 'four'\n", "[table]\nx = 1\n", "epochs = 0\n",
                                  "f_min = 0.9\nf_max = 0.1\n", "lam = 2.0\n", "not toml ==="])
def test_rejections(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path, env={})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml", env={})


def test_override_parsing():
    assert parse_override("eta_stdp_init=0.01") == ("eta_stdp_init", 0.01)
    assert parse_override("homeostasis=literal") == ("homeostasis", "literal")
    assert parse_override("train_variants=['a', 'b']") == ("train_variants", ["a", "b"])
    with pytest.raises(ConfigError):
        parse_override("nonsense")
    with pytest.raises(ConfigError):
        parse_override("colour=red")


def test_toml_dump_round_trips():
    cfg = RunConfig(seed=4, query_exclude=((0, 10),), train_variants=("summer",))
    again = RunConfig(**tomllib.loads(cfg.to_toml()))
    assert again == cfg


def test_bool_is_not_int():
    with pytest.raises(ConfigError):
        RunConfig(seed=True)
