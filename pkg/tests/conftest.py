import numpy as np
import pytest

from reciprocity_lab.harness import config_from_dict


def small_config(env="coins", roster=None, **overrides):
    """A tiny, fast experiment config; keyword blocks are merged over the defaults."""
    if roster is None:
        roster = [{"kind": "innovator"}, {"kind": "imitator"}]
    data = {
        "environment": {"name": env},
        "roster": roster,
        "learner": {"num_envs": 4, "unroll_length": 10, "hidden_sizes": [8]},
        "seeds": [0],
        "episodes": 8,
        "eval_every": 4,
    }
    if env != "coins":
        data["environment"].update({"map": "desk", "episode_length": 20, "view_size": 5, "view_back": 1})
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return config_from_dict(data)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    _ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
