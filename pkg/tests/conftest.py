import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bemi.core import Architecture, LabeledSample  # noqa: E402

REPO = Path(__file__).resolve().parent.parent
MNIST_DIR = REPO / "data" / "mnist5k"


def tiny_instance(seed: int, n: int = 4, lo: int = -3, hi: int = 3):
    """``n`` random nonzero integer points in 2-D with random +-1 targets."""
    rng = np.random.default_rng(seed)
    samples = []
    while len(samples) < n:
        x = rng.integers(lo, hi + 1, size=2)
        if not x.any():
            continue
        y = int(rng.choice([-1, 1]))
        samples.append(LabeledSample(x, (y,), y))
    return samples


@pytest.fixture
def arch221():
    return Architecture((2, 2, 1), 1)


@pytest.fixture
def tiny():
    return tiny_instance(0)


# acceptance reporting ------------------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    warned = any(k == "warning" for k, _ in item.user_properties)
    verdict = "PASS" if rep.passed else "FAIL"
    if rep.passed and warned:
        verdict = "WARN"
    _CRITERIA[number] = (verdict, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        verdict, title, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
