import sys

import numpy as np
import pytest

from gsbudget.model import Activation, ChannelSchema, GaussianModel
from gsbudget.synth import synthetic_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    return synthetic_model(3000, 10, seed=7)


def make_model(n, channels=4, seed=0):
    r = np.random.default_rng(seed)
    schema = [ChannelSchema("opacity", 1, Activation.SIGMOID), ChannelSchema("scale", 3, Activation.EXP)]
    if channels > 4:
        schema.append(ChannelSchema("f", channels - 4))
    return GaussianModel(r.normal(size=(n, 3)), r.normal(size=(channels, n)), tuple(schema))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
