import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from src.action_set import action_set_for_bundle
from src.data import load_dataset, write_toy_dataset
from src.network import init_params


def write_dataset(directory, csv_text, config):
    """Write a CSV and a config pointing at it; returns the config path"""
    directory = Path(directory)
    (directory / "data.csv").write_text(csv_text)
    config = {"csv": "data.csv", **config}
    config_path = directory / "config.json"
    config_path.write_text(json.dumps(config))
    return config_path


@pytest.fixture
def workdir():
    with tempfile.TemporaryDirectory() as d:
        yield Path(d)


@pytest.fixture
def toy_paths(workdir):
    return write_toy_dataset(workdir / "toy", n=200, seed=0, separation=2.0)


@pytest.fixture
def toy_bundle(toy_paths):
    config_path, _ = toy_paths
    return load_dataset(str(config_path), seed=0)


@pytest.fixture
def toy_aset(toy_bundle):
    return action_set_for_bundle(toy_bundle)


@pytest.fixture
def small_params():
    """A randomly initialized 3-input network with narrow hidden layers"""
    return init_params(3, widths=(8, 6), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
