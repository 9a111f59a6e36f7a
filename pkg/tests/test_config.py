from __future__ import annotations

import pytest

from hiermem.config import Config
from hiermem.core import ValidationError
from hiermem.fixtures import CONFIG, SCRIPT


def default_settings() -> dict:
    c = Config()
    return {
        "k": c.retrieval.k,
        "temperature": c.provider.temperature,
        "excluded": list(c.eval.exclude_categories),
        "k_grid": list(c.eval.k_grid),
        "strategy": c.retrieval.strategy,
    }


def test_defaults():
    assert default_settings() == {
        "k": 10,
        "temperature": 0.0,
        "excluded": ["adversarial"],
        "k_grid": [5, 10, 15, 20, 25],
        "strategy": "hybrid",
    }


def test_unknown_keys_rejected():
    with pytest.raises(ValidationError, match="unknown"):
        Config.from_dict({"retrieval": {"kk": 3}})
    with pytest.raises(ValidationError, match="unknown"):
        Config.from_dict({"bogus": {}})


@pytest.mark.parametrize("data", [
    {"retrieval": {"k": 0}},
    {"retrieval": {"strategy": "greedy"}},
    {"provider": {"kind": "scripted"}},
    {"provider": {"temperature": 0.7}},
    {"evolution": {"mode": "later"}},
    {"embedding": {"dim": 1}},
    {"retrieval": 5},
])
def test_invalid_values(data):
    with pytest.raises(ValidationError):
        Config.from_dict(data)


def test_strategy_spelling_normalized():
    assert Config.from_dict({"retrieval": {"strategy": "best-effort"}}).retrieval.strategy == "best_effort"


def test_budgets_merge_with_defaults():
    c = Config.from_dict({"provider": {"budgets": {"answer": 99}}})
    assert c.provider.budgets["answer"] == 99 and len(c.provider.budgets) > 1


def test_file_paths_relative_to_config(tmp_path):
    cfg = Config.from_file(CONFIG)
    assert cfg.provider.script_path == str(SCRIPT) and cfg.seed == 7
    f = tmp_path / "c.yaml"
    f.write_text("storage:\n  path: store\n")
    assert Config.from_file(f).storage.path == str(tmp_path / "store")


def test_round_trip():
    c = Config.from_file(CONFIG)
    assert Config.from_dict(c.to_dict()).to_dict() == c.to_dict()
