"""Run configuration: thread resolution, JSON replay and data loading."""

import json

import numpy as np
import pytest

from calibforge.config import (
    THREADS_ENV,
    DataSource,
    RunConfig,
    load_source,
    load_splits,
    resolve_threads,
)
from calibforge.data import gen_blobs, save_csv
from calibforge.errors import ConfigError, DataFormatError
from calibforge.loss import LossConfig


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads() == 1
    assert resolve_threads(3) == 3
    monkeypatch.setenv(THREADS_ENV, "2")
    assert resolve_threads() == 2
    assert resolve_threads(5) == 5
    assert resolve_threads(0) >= 1
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_threads()
    with pytest.raises(ConfigError):
        resolve_threads(-1)


def test_data_source_validation():
    with pytest.raises(ConfigError):
        DataSource(kind="parquet")
    with pytest.raises(ConfigError):
        DataSource(kind="csv")
    with pytest.raises(ConfigError):
        DataSource(label_noise=1.5)


def test_json_round_trip(tmp_path):
    run = RunConfig.from_preset("smoke", loss=LossConfig(kind="ci", beta=0.1, samples=3), seed=4,
                                data_seed=9, epochs=2, bins=15, bin_key="truth")
    path = run.write_json(tmp_path / "config.json")
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1
    assert "host" not in doc
    assert RunConfig.read_json(path) == run
    host = json.loads((tmp_path / "host.json").read_text())
    assert host["cpus_logical"] >= 1


def test_read_json_errors(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{")
    with pytest.raises(DataFormatError):
        RunConfig.read_json(path)
    path.write_text(json.dumps({"format_version": 7}))
    with pytest.raises(DataFormatError):
        RunConfig.read_json(path)
    path.write_text(json.dumps({"format_version": 1, "model": {}}))
    with pytest.raises(DataFormatError):
        RunConfig.read_json(path)


def test_with_seed_keeps_the_data():
    run = RunConfig.from_preset("smoke", seed=1)
    other = run.with_seed(2)
    assert other.seed == 2 and other.stochastic.seed == 2
    assert other.data_seed == run.data_seed == 1
    a, b = load_splits(run), load_splits(other)
    assert np.array_equal(a.train.x, b.train.x)


def test_run_config_validation():
    run = RunConfig.from_preset("smoke")
    with pytest.raises(ConfigError):
        RunConfig(run.model, run.train, run.split, bins=0)
    with pytest.raises(ConfigError):
        RunConfig(run.model, run.train, run.split, bin_key="mode")


def test_load_splits_from_preset():
    splits = load_splits(RunConfig.from_preset("smoke", seed=0))
    assert (len(splits.train), len(splits.holdout), len(splits.test)) == (120, 30, 30)
    assert splits.standardizer is None


def test_csv_source_with_standardisation(tmp_path):
    path = save_csv(tmp_path / "data.csv", gen_blobs(2, 50, 3, 5.0, 1.0, seed=0))
    source = DataSource(kind="csv", path=str(path), standardize=True)
    assert len(load_source(source, 0)) == 100
    run = RunConfig.from_preset("smoke")
    run = RunConfig(run.model, run.train, run.split, source=source)
    splits = load_splits(run)
    assert splits.standardizer is not None
    assert np.allclose(splits.train.x.mean(axis=0), 0.0, atol=1e-12)
