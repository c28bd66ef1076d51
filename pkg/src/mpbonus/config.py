"""Flat ``key = value`` experiment configuration with dotted section names.

Example::

    # comments start with '#'
    env.name = pixel_chain
    env.length = 20
    strategy.kind = model_bonus
    strategy.beta = 5.0
    agent.total_epochs = 100
    run.seeds = 0, 1, 2

Every key has a type and a default (see :data:`SCHEMA`); unknown keys and
malformed values raise :class:`ConfigError` naming the offending field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentConfig, DynamicsConfig, EncoderConfig
from .errors import ConfigError
from .envs import ENVIRONMENTS, make_env
from .exploration import EpsilonSchedule, StrategyConfig


def _int(v):
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    if isinstance(v, str):
        return int(v.strip())
    if isinstance(v, float) and not v.is_integer():
        raise ValueError("expected an integer")
    return int(v)


def _float(v):
    if isinstance(v, bool):
        raise ValueError("expected a number")
    return float(v.strip()) if isinstance(v, str) else float(v)


def _str(v):
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v.strip()


def _int_list(v):
    if isinstance(v, str):
        v = [p for p in v.replace(",", " ").split()]
    out = tuple(_int(p) for p in v)
    if not out:
        raise ValueError("expected at least one integer")
    return out


def _optional(parse):
    def inner(v):
        if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none", "auto")):
            return None
        return parse(v)
    return inner


# key -> (parser, default)
SCHEMA = {
    "env.name": (_str, "pixel_chain"),
    "env.length": (_optional(_int), None),
    "env.layout": (_optional(_str), None),
    "env.width": (_optional(_int), None),
    "env.height": (_optional(_int), None),
    "strategy.kind": (_str, "epsilon_greedy"),
    "strategy.epsilon.start": (_float, 1.0),
    "strategy.epsilon.end": (_float, 0.1),
    "strategy.epsilon.anneal_steps": (_int, 40_000),
    "strategy.temperature": (_float, 0.1),
    "strategy.dropout_rate": (_float, 0.5),
    "strategy.beta": (_float, 50.0),
    "strategy.decay": (_optional(_float), None),
    "agent.gamma": (_float, 0.99),
    "agent.epoch_length": (_int, 2000),
    "agent.test_steps": (_int, 400),
    "agent.total_epochs": (_int, 100),
    "agent.capacity": (_int, 50_000),
    "agent.replay_batch": (_int, 32),
    "agent.replay_updates_per_epoch": (_int, 500),
    "agent.target_sync_period": (_int, 1),
    "agent.q_hidden_widths": (_int_list, (64,)),
    "agent.lr": (_float, 0.05),
    "agent.momentum": (_float, 0.0),
    "agent.td_clip": (_optional(_float), 1.0),
    "encoder.regime": (_str, "dynamic"),
    "encoder.hidden_widths": (_optional(_int_list), None),
    "encoder.tap_index": (_int, 6),
    "encoder.bottleneck_index": (_int, 4),
    "encoder.epochs": (_int, 10),
    "encoder.learning_rate": (_float, 0.1),
    "encoder.momentum": (_float, 0.9),
    "encoder.n_frames": (_int, 5500),
    "encoder.retrain_period": (_int, 5),
    "encoder.retrain_epochs": (_int, 1),
    "encoder.recent_frames": (_optional(_int), None),
    "dynamics.hidden_widths": (_optional(_int_list), None),
    "dynamics.learning_rate": (_float, 0.05),
    "dynamics.momentum": (_float, 0.9),
    "dynamics.batch_size": (_int, 32),
    "dynamics.epochs": (_int, 1),
    "run.seeds": (_int_list, (0, 1, 2)),
    "run.output_dir": (_str, "runs"),
}

ENV_PARAMS = {
    "pixel_chain": ("length",),
    "grid_maze": ("layout", "width", "height"),
    "locked_treasure": ("layout",),
}

PAPER_SCALE = {"agent.epoch_length": 50_000, "agent.test_steps": 10_000,
               "agent.total_epochs": 100}


def parse_text(text):
    """Raw ``{key: string}`` mapping from config text (no validation of keys)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def resolve(values=None, paper_scale=False):
    """Validate ``values`` against :data:`SCHEMA` and fill in defaults.

    Returns a flat ``{key: value}`` dict with native Python values. ``C``
    (``strategy.decay``) is resolved to ``1 / epoch_length`` when left unset
    so that manifests always record the value in effect.
    """
    values = dict(values or {})
    unknown = sorted(set(values) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if paper_scale:
        values.update(PAPER_SCALE)
    flat = {}
    for key, (parse, default) in SCHEMA.items():
        if key not in values:
            flat[key] = default
            continue
        try:
            flat[key] = parse(values[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: invalid value {values[key]!r} ({exc})") from None
    name = flat["env.name"]
    if name not in ENV_PARAMS:
        raise ConfigError(f"env.name: unknown environment {name!r}; "
                          f"choose from {sorted(ENVIRONMENTS)}")
    for p in ("length", "layout", "width", "height"):
        if flat[f"env.{p}"] is not None and p not in ENV_PARAMS[name]:
            raise ConfigError(f"env.{p} does not apply to {name}")
    if flat["strategy.decay"] is None and flat["agent.epoch_length"] > 0:
        flat["strategy.decay"] = 1.0 / flat["agent.epoch_length"]
    return flat


@dataclass
class ExperimentConfig:
    """Validated experiment: environment, agent settings, seeds and output directory."""

    env_name: str
    env_params: dict
    agent: AgentConfig
    seeds: tuple
    output_dir: Path
    flat: dict = field(default_factory=dict, repr=False)

    def make_env(self):
        return make_env(self.env_name, **self.env_params)

    def with_overrides(self, **overrides):
        """Copy with some flat keys replaced (e.g. ``{"strategy.kind": "thompson"}``)."""
        values = dict(self.flat)
        values.update(overrides)
        return from_flat(values)


def from_flat(values, paper_scale=False):
    flat = resolve(values, paper_scale)
    try:
        strategy = StrategyConfig(
            kind=flat["strategy.kind"],
            epsilon=EpsilonSchedule(flat["strategy.epsilon.start"], flat["strategy.epsilon.end"],
                                    flat["strategy.epsilon.anneal_steps"]),
            temperature=flat["strategy.temperature"], dropout_rate=flat["strategy.dropout_rate"],
            beta=flat["strategy.beta"], decay=flat["strategy.decay"])
        encoder = EncoderConfig(**_section(flat, "encoder"))
        dynamics = DynamicsConfig(**_section(flat, "dynamics"))
        agent = AgentConfig(strategy=strategy, encoder=encoder, dynamics=dynamics,
                            **_section(flat, "agent"))
        cfg = ExperimentConfig(flat["env.name"], env_params(flat), agent, flat["run.seeds"],
                               Path(flat["run.output_dir"]), flat)
        env = cfg.make_env()
        if strategy.uses_bonus and encoder.regime != "raw_pixels":
            encoder.spec(env.frame_width)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def env_params(flat):
    """Constructor keyword arguments of the configured environment."""
    return {p: flat[f"env.{p}"] for p in ENV_PARAMS[flat["env.name"]]
            if flat[f"env.{p}"] is not None}


def env_from_flat(flat):
    return make_env(flat["env.name"], **env_params(flat))


def _section(flat, name):
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in flat.items() if k.startswith(prefix)}


def load(path=None, overrides=None, paper_scale=False):
    """Read a config file (text, or a run's ``manifest.json``) plus overrides."""
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if path.suffix == ".json":
            try:
                values = dict(json.loads(text)["config"])
            except (ValueError, KeyError, TypeError):
                raise ConfigError(f"{path} is not a run manifest") from None
        else:
            values = parse_text(text)
    values.update(overrides or {})
    return from_flat(values, paper_scale)


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dumps(flat):
    """Config text for a flat mapping; ``load`` of the result reproduces it."""
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in flat.items())


def to_json(flat):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in flat.items()}
