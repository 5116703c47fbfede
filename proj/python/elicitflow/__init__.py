"""Python access to the flow-based prior elicitation core.

Configurations and expert data travel as plain dicts (their JSON form)."""

import json

from . import _core
from ._core import ConfigError, DivergenceError, Run, ShapeError, averaging_weights, load_run, loss_slope, mmd_energy

__all__ = [
    "ConfigError", "DivergenceError", "Run", "ShapeError", "averaging_weights", "config_hash",
    "load_run", "loss_slope", "mmd_energy", "preset", "sample_true_prior", "simulate_expert", "train",
]


def preset(study, reduced=False):
    return json.loads(_core.preset(study, reduced))


def config_hash(config):
    return _core.config_hash(json.dumps(config))


def simulate_expert(config, seed=0):
    return json.loads(_core.simulate_expert(json.dumps(config), seed))


def sample_true_prior(config, count, seed=0):
    return _core.sample_true_prior(json.dumps(config), count, seed)


def train(config, expert, seed=1):
    return _core.train(json.dumps(config), json.dumps(expert), seed)
