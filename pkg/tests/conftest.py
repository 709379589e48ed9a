import numpy as np
import pytest

from unseenfall import data

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, text = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _ACCEPTANCE.get(number, (text, "PASS"))[1]
        status = "PASS" if rep.outcome == "passed" and prev == "PASS" else "FAIL"
        _ACCEPTANCE[number] = (text, status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        text, status = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {text}")


@pytest.fixture(scope="session")
def small_dataset():
    """Three short subjects; fast enough for end-to-end tests."""
    return data.generate_synthetic(data.SynthConfig(subjects=3, duration_s=40, fall_count=5, seed=11))


@pytest.fixture(scope="session")
def normal_windows():
    recs = data.generate_synthetic(data.SynthConfig(subjects=2, duration_s=40, fall_count=0, seed=5))
    return [w for r in recs for w in data.slide_windows(r)]


def make_window(values, label="normal", subject="s", view=data.SIX_RAW):
    """SixRaw window from a (n, 6) array."""
    values = np.asarray(values, dtype=float)
    return data.Window(subject, label, view, {c: values[:, i].copy() for i, c in enumerate(data.CHANNELS)})
