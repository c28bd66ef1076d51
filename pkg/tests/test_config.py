import json

import pytest
from hypothesis import given, settings, strategies as st

from mpbonus import config as config_mod
from mpbonus.config import PAPER_SCALE, SCHEMA, dumps, from_flat, load, parse_text, resolve
from mpbonus.errors import ConfigError


def test_defaults_cover_every_key():
    flat = resolve()
    assert set(flat) == set(SCHEMA)
    assert flat["agent.epoch_length"] == 2000 and flat["agent.capacity"] == 50_000
    assert flat["strategy.decay"] == 1 / 2000


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="agent.epochs"):
        resolve({"agent.epochs": 3})


def test_bad_value_names_field():
    with pytest.raises(ConfigError, match="agent.gamma"):
        resolve({"agent.gamma": "high"})


def test_integer_field_rejects_fraction():
    with pytest.raises(ConfigError):
        resolve({"agent.total_epochs": 2.5})


def test_env_param_must_match_env():
    with pytest.raises(ConfigError, match="env.length"):
        resolve({"env.name": "grid_maze", "env.length": 5})


def test_unknown_env():
    with pytest.raises(ConfigError, match="unknown environment"):
        resolve({"env.name": "pong"})


def test_paper_scale_preset():
    flat = resolve({"agent.epoch_length": 10}, paper_scale=True)
    for key, value in PAPER_SCALE.items():
        assert flat[key] == value
    assert flat["strategy.decay"] == 1 / 50_000


def test_explicit_decay_kept():
    assert resolve({"strategy.decay": "0.25"})["strategy.decay"] == 0.25


def test_parse_text_comments_and_errors():
    assert parse_text("# top\na.b = 1  # tail\n\n") == {"a.b": "1"}
    with pytest.raises(ConfigError, match="line 2"):
        parse_text("a = 1\nnot a pair\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_text("a = 1\na = 2\n")


def test_from_flat_builds_nested_configs():
    cfg = from_flat({"strategy.kind": "model_bonus", "strategy.beta": "0.5",
                     "encoder.regime": "static", "agent.q_hidden_widths": "32, 16",
                     "run.seeds": "4 5", "env.length": "12"})
    assert cfg.agent.strategy.beta == 0.5
    assert cfg.agent.encoder.regime == "static"
    assert cfg.agent.q_hidden_widths == (32, 16)
    assert cfg.seeds == (4, 5)
    assert cfg.make_env().length == 12


def test_from_flat_rejects_invalid_nested_values():
    with pytest.raises(ConfigError):
        from_flat({"strategy.kind": "thompson", "strategy.dropout_rate": 1.5})
    with pytest.raises(ConfigError):
        from_flat({"strategy.kind": "model_bonus", "encoder.hidden_widths": "32, 64, 16"})
    with pytest.raises(ConfigError):
        from_flat({"agent.td_clip": -1})


def test_td_clip_can_be_disabled():
    assert from_flat({"agent.td_clip": "none"}).agent.td_clip is None


def test_with_overrides_copies():
    cfg = from_flat({"strategy.kind": "boltzmann"})
    other = cfg.with_overrides(**{"strategy.kind": "thompson"})
    assert cfg.agent.strategy.kind == "boltzmann"
    assert other.agent.strategy.kind == "thompson"


@settings(max_examples=25, deadline=None)
@given(st.fixed_dictionaries({}, optional={
    "agent.gamma": st.floats(0.0, 0.999),
    "agent.total_epochs": st.integers(1, 500),
    "strategy.beta": st.floats(0.0, 10.0),
    "strategy.kind": st.sampled_from(["epsilon_greedy", "boltzmann", "model_bonus"]),
    "run.seeds": st.lists(st.integers(0, 1000), min_size=1, max_size=4).map(tuple),
}))
def test_text_round_trip(values):
    flat = resolve(values)
    assert resolve(parse_text(dumps(flat))) == flat


def test_load_file_and_manifest(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("strategy.kind = boltzmann\nagent.total_epochs = 7\n")
    cfg = load(path, {"agent.total_epochs": "9"})
    assert cfg.agent.total_epochs == 9 and cfg.agent.strategy.kind == "boltzmann"
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"config": config_mod.to_json(cfg.flat)}))
    assert load(manifest).flat == cfg.flat


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.json"
    bad.write_text("[]")
    with pytest.raises(ConfigError):
        load(bad)
