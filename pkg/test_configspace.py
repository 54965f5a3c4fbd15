"""
Tests for configuration spaces: sampling, defaults, encoding.

Usage:
  pytest test_configspace.py
"""
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.configspace import (ConfigSpace, ParameterDef, compute_config_id, decode, default_config,
                             encode, sample_encoded, sample_random)
from src.errors import DomainError, ValidationError
from src.simulator import default_space


def mixed_space():
    return ConfigSpace([
        ParameterDef("ratio", "continuous", 0.0, 100.0, default=10.0),
        ParameterDef("threads", "integer", 1, 64, default=4),
        ParameterDef("cache_mb", "continuous", 1.0, 10000.0, log_scale=True),
        ParameterDef("mode", "categorical", choices=("a", "b", "c")),
    ])


def test_sample_random_is_deterministic():
    space = ConfigSpace([ParameterDef("x", "continuous", 0.0, 1.0)])
    first = sample_random(space, 7, 3)
    second = sample_random(space, 7, 3)
    assert [c.values for c in first] == [c.values for c in second]
    assert all(0.0 <= c["x"] <= 1.0 for c in first)


def test_sample_random_covers_every_choice():
    space = ConfigSpace([ParameterDef("flag", "categorical", choices=("a", "b"))])
    seen = {c["flag"] for c in sample_random(space, 3, 1000)}
    assert seen == {"a", "b"}


def test_sample_random_rejects_bad_input():
    with pytest.raises(DomainError):
        sample_random(mixed_space(), 0, 0)
    with pytest.raises(DomainError):
        sample_random(ConfigSpace([]), 0, 1)


@pytest.mark.parametrize("seed", [0, 1, 42, 2024])
def test_sampled_configs_validate(seed):
    space = mixed_space()
    for config in sample_random(space, seed, 50):
        assert space.validate(config.values) == dict(config.values)


def test_integer_sampling_reaches_both_endpoints():
    space = ConfigSpace([ParameterDef("k", "integer", 0, 2)])
    values = [c["k"] for c in sample_random(space, 5, 600)]
    assert set(values) == {0, 1, 2}


def test_default_config_uses_declared_defaults():
    space = ConfigSpace([ParameterDef("p", "integer", 0, 10, default=5)])
    config = default_config(space)
    assert config.to_dict() == {"p": 5}
    assert default_config(space).config_id == config.config_id


def test_missing_defaults_fall_back_to_midpoint():
    space = ConfigSpace([
        ParameterDef("lin", "continuous", 0.0, 10.0),
        ParameterDef("log", "continuous", 1.0, 100.0, log_scale=True),
        ParameterDef("cat", "categorical", choices=("x", "y")),
    ])
    values = default_config(space).values
    assert values["lin"] == pytest.approx(5.0)
    assert values["log"] == pytest.approx(10.0)
    assert values["cat"] == "x"


def test_encode_examples():
    space = mixed_space()
    config = space.make_config({"ratio": 25.0, "threads": 1, "cache_mb": 100.0, "mode": "b"})
    vector = encode(space, config)
    assert len(vector) == space.encoded_width == 6
    assert vector[0] == pytest.approx(0.25)
    assert vector[1] == pytest.approx(0.0)
    assert vector[2] == pytest.approx(0.5)
    assert list(vector[3:]) == [0.0, 1.0, 0.0]


def test_encode_decode_round_trip():
    space = mixed_space()
    for config in sample_random(space, 11, 100):
        decoded = decode(space, encode(space, config))
        assert decoded["threads"] == config["threads"]
        assert decoded["mode"] == config["mode"]
        assert decoded["ratio"] == pytest.approx(config["ratio"], abs=1e-9)
        assert decoded["cache_mb"] == pytest.approx(config["cache_mb"], rel=1e-9)


def test_sample_encoded_rows_decode_to_valid_configs():
    space = default_space()
    rows = sample_encoded(space, np.random.default_rng(0), 200)
    assert rows.shape == (200, space.encoded_width)
    for row in rows:
        config = decode(space, row)
        assert space.validate(config.values)


def test_out_of_domain_values_are_rejected():
    space = mixed_space()
    with pytest.raises(ValidationError):
        space.make_config({"ratio": 101.0, "threads": 1, "cache_mb": 10.0, "mode": "a"})
    with pytest.raises(ValidationError):
        space.make_config({"ratio": 1.0, "threads": 1.5, "cache_mb": 10.0, "mode": "a"})
    with pytest.raises(ValidationError):
        space.make_config({"ratio": 1.0, "threads": 1, "cache_mb": 10.0, "mode": "z"})
    with pytest.raises(ValidationError):
        space.make_config({"ratio": 1.0, "threads": 1, "cache_mb": 10.0})


@pytest.mark.parametrize("kwargs", [
    dict(name="x", kind="continuous", lower=1.0, upper=1.0),
    dict(name="x", kind="continuous", lower=0.0, upper=1.0, log_scale=True),
    dict(name="x", kind="categorical", choices=("only",)),
    dict(name="x", kind="integer", lower=0, upper=10, default=11),
    dict(name="x y", kind="integer", lower=0, upper=10),
    dict(name="x", kind="fuzzy", lower=0, upper=1),
])
def test_invalid_parameter_definitions(kwargs):
    with pytest.raises(ValidationError):
        ParameterDef(**kwargs)


def test_duplicate_names_rejected():
    with pytest.raises(ValidationError):
        ConfigSpace([ParameterDef("a", "integer", 0, 1), ParameterDef("a", "integer", 0, 2)])


def test_config_id_ignores_key_order():
    assert compute_config_id({"a": 1, "b": "x"}) == compute_config_id({"b": "x", "a": 1})
    assert compute_config_id({"a": 1, "b": "x"}) != compute_config_id({"a": 2, "b": "x"})


def test_space_document_round_trip():
    space = mixed_space()
    restored = ConfigSpace.from_dict(space.to_dict())
    assert restored.to_dict() == space.to_dict()
    assert default_config(restored).config_id == default_config(space).config_id
