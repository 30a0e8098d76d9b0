import pytest

from prunekit.config import RunConfig, dump_config, load_config
from prunekit.errors import ConfigError


def _ini(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


def test_defaults():
    cfg = load_config(environ={})
    assert cfg == RunConfig()
    assert cfg.run.max_prune_fraction == 0.25 and cfg.run.epsilon is None


def test_file_values_are_typed(tmp_path):
    path = _ini(tmp_path, "[train]\nreg_lambda = 0.05\n[anneal]\niterations = 1_000\n[run]\nplots = no\nkeep_m = 7\n")
    cfg = load_config(path, environ={})
    assert cfg.train.reg_lambda == 0.05
    assert cfg.anneal.iterations == 1000
    assert cfg.run.plots is False and cfg.run.keep_m == 7


@pytest.mark.parametrize(
    "text",
    ["[train]\nreg_lamda = 0.1\n", "[trian]\nreg_lambda = 0.1\n", "[anneal]\niterations = many\n", "not an ini"],
)
def test_bad_files(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_ini(tmp_path, text), environ={})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.ini", environ={})


def test_layering_order(tmp_path):
    path = _ini(tmp_path, "[train]\nreg_lambda = 0.05\n[anneal]\nseed = 1\nrestarts = 2\n")
    env = {"PRUNEKIT_TRAIN_REG_LAMBDA": "0.2", "PRUNEKIT_ANNEAL_SEED": "3", "HOME": "/x"}
    sources = set()
    cfg = load_config(path, environ=env, overrides={"anneal.seed": 9, "run.epsilon": None}, sources=sources)
    assert cfg.train.reg_lambda == 0.2
    assert cfg.anneal.seed == 9
    assert cfg.anneal.restarts == 2
    assert {"train.reg_lambda", "anneal.seed", "anneal.restarts"} <= sources
    assert "run.epsilon" not in sources


def test_unknown_environment_key():
    with pytest.raises(ConfigError):
        load_config(environ={"PRUNEKIT_TRAIN_REG": "1"})
    with pytest.raises(ConfigError):
        load_config(environ={"PRUNEKIT_NOPE_X": "1"})


def test_none_clears_optional(tmp_path):
    cfg = load_config(_ini(tmp_path, "[run]\nepsilon = none\n"), environ={})
    assert cfg.run.epsilon is None
    with pytest.raises(ConfigError):
        load_config(_ini(tmp_path, "[anneal]\niterations = none\n"), environ={})


def test_invalid_values_are_rejected(tmp_path):
    for text in ("[run]\nmax_prune_fraction = 2\n", "[run]\nhessian_mode = sparse\n", "[anneal]\nrestarts = 0\n"):
        with pytest.raises(ConfigError):
            load_config(_ini(tmp_path, text), environ={})


def test_dump_round_trips(tmp_path):
    cfg = load_config(environ={}, overrides={"run.epsilon": 0.3, "anneal.t_initial": 2.0, "ihvp.method": "cg"})
    back = load_config(_ini(tmp_path, dump_config(cfg)), environ={})
    assert back == cfg


def test_override_type_errors():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"anneal.iterations": "x"})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"anneal.iterations": 1.5})
    assert RunConfig().with_overrides({"train.reg_lambda": 1}).train.reg_lambda == 1.0
