import pytest

from dqndesign import ConfigError
from dqndesign.config import list_profiles, load_config, parse_config, resolve_config_path

MINIMAL = """
[env]
T = 2
u = 2920
c_om = 300
c_inv = 20
mu1 = 0.05
sigma1 = 0.1
p1 = 0.1
"""


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.env.horizon == 2 and cfg.env.max_capacity == 1 and not cfg.env.demand_enabled
    assert cfg.env.interest == 0.05
    assert cfg.training.episodes == 150_000
    assert cfg.oracle == {"price_nodes": 400, "demand_nodes": 200, "coverage": 4.0}


def test_demand_section_enables_variant():
    cfg = parse_config(MINIMAL + "K = 2\n[demand]\nmu2 = 0.2\nsigma2 = 0.1\nd1 = 1\nc_p = 1\n")
    assert cfg.env.demand_enabled and cfg.env.max_capacity == 2


@pytest.mark.parametrize("text,key", [
    (MINIMAL.replace("u = 2920\n", ""), "u"),
    (MINIMAL + "bogus = 1\n", "bogus"),
    (MINIMAL.replace("T = 2", "T = 2.5"), "T"),
    (MINIMAL + "[training]\nepisodes = -1\n", "episodes"),
    (MINIMAL + "[extra]\n", "extra"),
    ("[training]\nepisodes = 3\n", "env"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key
    assert str(exc.value).startswith(f"{key}:")


def test_training_overrides():
    cfg = parse_config(MINIMAL + "[training]\nhidden_layers = 32, 16\nreward_scale = auto\n")
    assert cfg.training.hidden_layers == (32, 16) and cfg.training.reward_scale is None
    over = cfg.with_overrides(episodes=10, seed=None)
    assert over.training.episodes == 10 and over.training.seed == cfg.training.seed


def test_shipped_profiles_load():
    names = list_profiles()
    for expected in ("price_only_T2.cfg", "price_only_T3.cfg", "price_demand_T3_K2.cfg",
                     "price_demand_T5_K4.cfg"):
        assert expected in names
    for name in names:
        load_config(name)
    assert load_config("price_only_T3").env.horizon == 3
    cfg = load_config("price_demand_T4_K3.cfg")
    assert (cfg.env.horizon, cfg.env.max_capacity, cfg.env.demand_enabled) == (4, 3, True)


def test_unknown_profile():
    with pytest.raises(ConfigError):
        resolve_config_path("no_such_profile")
