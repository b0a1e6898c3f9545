import numpy as np
import pytest

from rvqsta.core import toy_config
from rvqsta.training import init_state, toy_batch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_cfg():
    return toy_config()


@pytest.fixture
def toy_state(toy_cfg):
    return init_state(toy_cfg)


@pytest.fixture
def batch(toy_cfg):
    return toy_batch(toy_cfg, seed=3)


def f32_matrix(rng, rows, cols, scale=3.0):
    """Random matrix whose entries are exactly representable in float32."""
    return (rng.normal(size=(rows, cols)) * scale).astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------- acceptance summary

_VERDICTS: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    if rep.passed:
        detail = dict(item.user_properties).get("detail", "")
    else:
        lines = rep.longreprtext.strip().splitlines()
        detail = lines[-1] if lines else "failed"
    prev = _VERDICTS.get(number)
    ok = rep.passed and (prev is None or prev[1])
    _VERDICTS[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, ok, detail = _VERDICTS[number]
        line = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
