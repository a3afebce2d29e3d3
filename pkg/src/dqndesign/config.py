"""Experiment configuration files.

Profiles are INI-style text with three sections::

    [env]          T, u, c_om, c_inv, i, mu1, sigma1, p1, K, pool_size
    [demand]       mu2, sigma2, d1, c_p        (presence enables the demand variant)
    [training]     any TrainingConfig field (episodes, gamma, learning_rate, ...)
    [oracle]       price_nodes, demand_nodes, coverage

Keys in ``[env]`` and ``[demand]`` use the usual engineering-economics
symbols. Missing required keys and unknown keys raise :class:`ConfigError`
naming the key.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .dqn import TrainingConfig
from .env import EnvParams
from .exceptions import ConfigError

__all__ = ["RunConfig", "load_config", "parse_config", "resolve_config_path", "list_profiles"]

# config symbol -> (EnvParams field, type, required)
ENV_KEYS = {
    "T": ("horizon", int, True),
    "u": ("unit_output", float, True),
    "c_om": ("op_cost", float, True),
    "c_inv": ("inv_cost", float, True),
    "i": ("interest", float, False),
    "mu1": ("price_drift", float, True),
    "sigma1": ("price_vol", float, True),
    "p1": ("initial_price", float, True),
    "K": ("max_capacity", int, False),
    "pool_size": ("pool_size", int, False),
}
DEMAND_KEYS = {
    "mu2": ("demand_drift", float, True),
    "sigma2": ("demand_vol", float, True),
    "d1": ("initial_demand", float, True),
    "c_p": ("capacity_per_unit", float, True),
}
ORACLE_KEYS = {"price_nodes": int, "demand_nodes": int, "coverage": float}


@dataclass(frozen=True)
class RunConfig:
    env: EnvParams
    training: TrainingConfig = field(default_factory=TrainingConfig)
    oracle: dict = field(default_factory=lambda: {"price_nodes": 400, "demand_nodes": 200,
                                                  "coverage": 4.0})

    def with_overrides(self, **overrides) -> "RunConfig":
        """Replace training fields by name, skipping ``None`` values."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, training=replace(self.training, **changes)) if changes else self


def _convert(section, key, raw, typ):
    try:
        if typ is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if typ is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if typ is tuple:
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return typ(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} in [{section}]", key=key) from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive: K, T
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {source}: {exc}") from None
    unknown_sections = set(cp.sections()) - {"env", "demand", "training", "oracle"}
    if unknown_sections:
        name = sorted(unknown_sections)[0]
        raise ConfigError(f"unknown section [{name}]", key=name)
    if not cp.has_section("env"):
        raise ConfigError("missing [env] section", key="env")

    env_kwargs = {}
    tables = [("env", ENV_KEYS)]
    if cp.has_section("demand"):
        tables.append(("demand", DEMAND_KEYS))
        env_kwargs["demand_enabled"] = True
    for section, table in tables:
        items = dict(cp.items(section))
        for key in items:
            if key not in table:
                raise ConfigError(f"unknown key in [{section}]", key=key)
        for key, (attr, typ, required) in table.items():
            if key in items:
                env_kwargs[attr] = _convert(section, key, items[key], typ)
            elif required:
                raise ConfigError(f"missing required key in [{section}]", key=key)
    env = EnvParams(**env_kwargs)

    training = TrainingConfig()
    if cp.has_section("training"):
        types = {f.name: f.type for f in fields(TrainingConfig)}
        kw = {}
        for key, raw in cp.items("training"):
            if key not in types:
                raise ConfigError("unknown key in [training]", key=key)
            if key == "hidden_layers":
                kw[key] = _convert("training", key, raw, tuple)
            elif key == "reward_scale":
                kw[key] = None if raw.strip().lower() == "auto" else _convert("training", key, raw, float)
            elif key in ("activation", "optimizer"):
                kw[key] = raw.strip()
            else:
                typ = int if "int" in str(types[key]) else float
                kw[key] = _convert("training", key, raw, typ)
        training = TrainingConfig(**kw)

    oracle = dict(RunConfig.__dataclass_fields__["oracle"].default_factory())
    if cp.has_section("oracle"):
        for key, raw in cp.items("oracle"):
            if key not in ORACLE_KEYS:
                raise ConfigError("unknown key in [oracle]", key=key)
            oracle[key] = _convert("oracle", key, raw, ORACLE_KEYS[key])
    return RunConfig(env, training, oracle)


def list_profiles() -> list[str]:
    root = resources.files("dqndesign") / "profiles"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))


def resolve_config_path(name) -> Path:
    """A filesystem path, or the name of a shipped profile (``.cfg`` optional)."""
    path = Path(name)
    if path.exists():
        return path
    fname = path.name if path.name.endswith(".cfg") else path.name + ".cfg"
    shipped = resources.files("dqndesign") / "profiles" / fname
    if shipped.is_file():
        return Path(str(shipped))
    raise ConfigError(f"no such config file or profile: {name}", key="config")


def load_config(name) -> RunConfig:
    path = resolve_config_path(name)
    return parse_config(path.read_text(), str(path))
