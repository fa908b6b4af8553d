import sys

import numpy as np
import pytest

from margda import data


def make_split(seed=0, scenario="SS", d=5, classes=3, per_class=12, shift=3.0, angle=0.3, standardize=True):
    source, target = data.synth_shift(seed, d, classes, per_class, shift, angle)
    split = data.build_scenario(source, target, scenario, labeled_per_class=3, seed=seed)
    return data.standardize_split(split) if standardize else split


def random_split(rng, scenario=None):
    scenario = scenario or rng.choice(data.SCENARIOS)
    return make_split(
        seed=int(rng.integers(0, 2**31)),
        scenario=scenario,
        d=int(rng.integers(2, 7)),
        classes=int(rng.integers(2, 4)),
        per_class=int(rng.integers(5, 15)),
        shift=float(rng.uniform(0, 4)),
        angle=float(rng.uniform(0, 1)),
    )


@pytest.fixture
def split_ss():
    return make_split(scenario="SS")


@pytest.fixture
def split_sup():
    return make_split(scenario="SUP")


@pytest.fixture
def split_us():
    return make_split(scenario="US")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[number])
