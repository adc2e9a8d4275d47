import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile(
    "pixgan", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("pixgan")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, n, p, c):
    return rng.uniform(-1, 1, size=(n, p, c))


def random_map(rng, n, p, c, density=0.2):
    from pixgan.constraints import ConstraintMap

    mask = rng.random((n, p)) < density
    values = np.where(mask[..., None], rng.uniform(-1, 1, size=(n, p, c)), 0.0)
    return ConstraintMap(values, mask)


image_shapes = st.tuples(st.integers(1, 12), st.integers(1, 12), st.sampled_from([1, 3]))
seeds = st.integers(0, 2**32 - 1)


# -- acceptance reporting: one PASS/FAIL line per criterion --------------------------

_acceptance: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call" and call.excinfo is None:
        return
    n, title = marker.args
    failed = call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception)
    prev = _acceptance.get(n, (title, True, ""))
    detail = "" if not failed else str(call.excinfo.value).splitlines()[0][:120]
    _acceptance[n] = (title, prev[1] and not failed, prev[2] or detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        title, ok, detail = _acceptance[n]
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {title}"
        terminalreporter.write_line(line + ("" if ok else f"  ({detail})"))
