import warnings

import numpy as np
import pytest

from regionstack.synth import SynthConfig, generate


def small_config(**kw):
    base = dict(
        n_sites=3,
        n_per_site=36,
        age_ranges=((20.0, 80.0), (25.0, 85.0), (30.0, 70.0)),
        n_regions=4,
        voxels_per_region=5,
    )
    base.update(kw)
    return SynthConfig(**base)


@pytest.fixture(scope="session")
def small_data():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return generate(small_config(), seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
