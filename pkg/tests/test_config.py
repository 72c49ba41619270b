import json
from pathlib import Path

import pytest

from srbfl.config import (
    ConfigSyntaxError,
    SimConfig,
    config_from_dict,
    config_to_dict,
    read_config_file,
)
from srbfl.errors import ConfigError
from srbfl.fl_core import LossKind

SAMPLE = Path(__file__).resolve().parents[1] / "configs" / "sample.json"


def sample_dict():
    return json.loads(SAMPLE.read_text())


def key_of(raw):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(raw)
    return exc.value.key


def test_sample_loads():
    cfg = read_config_file(SAMPLE)
    assert cfg.seed == 7 and cfg.shard_count == 4 and cfg.gating


def test_round_trip_through_dict():
    cfg = read_config_file(SAMPLE)
    again = config_from_dict(config_to_dict(cfg))
    assert config_to_dict(again) == config_to_dict(cfg)
    assert again.resolved_tasks() == cfg.resolved_tasks()


@pytest.mark.parametrize(
    "patch, key",
    [
        ({"rounds": 0}, "rounds"),
        ({"rounds": 2.5}, "rounds"),
        ({"shard_count": 0}, "shard_count"),
        ({"device_count": 2}, "device_count"),
        ({"strategy": "nearest"}, "strategy"),
        ({"quorum": 0}, "quorum"),
        ({"gating": "yes"}, "gating"),
        ({"bogus": 1}, "bogus"),
        ({"adversaries": {"label_flip": 0.6, "free_rider": 0.3, "lazy": 0.3}}, "adversaries"),
        ({"adversaries": {"label_flip": -0.1}}, "adversaries.label_flip"),
        ({"adversaries": {"colluding": 0.1}}, "adversaries.colluding"),
        ({"train": {"step_size": -1}}, "train.step_size"),
        ({"train": {"loss": "hinge"}}, "train.loss"),
        ({"data": {"data_types": []}}, "data.data_types"),
        ({"tasks": [{"task_id": 0, "publisher": "p", "param_dim": 5, "loss": "squared_error"}]}, "tasks[0].loss"),
        ({"tasks": [{"task_id": 0, "publisher": "p", "param_dim": 5, "max_rounds": 0}]}, "tasks[0].max_rounds"),
    ],
)
def test_invalid_configs_name_their_key(patch, key):
    raw = sample_dict()
    raw.update(patch)
    assert key_of(raw) == key


def test_root_must_be_object():
    assert key_of([1, 2]) == "<root>"


def test_syntax_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": 1,,}')
    with pytest.raises(ConfigSyntaxError):
        read_config_file(bad)


def test_manifest_is_a_config(tmp_path):
    cfg = read_config_file(SAMPLE)
    doc = {"artifact_version": "x", "config": config_to_dict(cfg)}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    assert config_to_dict(read_config_file(path)) == config_to_dict(cfg)


def test_default_tasks_one_per_shard():
    tasks = SimConfig(shard_count=3, rounds=7).resolved_tasks()
    assert [t.task_id for t in tasks] == [0, 1, 2]
    assert all(t.loss is LossKind.LOGISTIC_BINARY and t.max_rounds == 7 for t in tasks)


def test_overrides():
    cfg = SimConfig()
    assert cfg.with_overrides() is cfg
    assert cfg.with_overrides(seed=3, gating=False) == SimConfig(seed=3, gating=False)
