import sys

import pytest

from refinemcts.domain import PlannerConfig, RegionSpec, WorldInstance


def make_world(regions, vocab_size=8, max_length=5, eos=None, sigma=0.0, world_id="w"):
    """``regions`` is a list of (attribute tokens, weight)."""
    eos = vocab_size - 1 if eos is None else eos
    specs = tuple(RegionSpec(i, frozenset(toks), w) for i, (toks, w) in enumerate(regions))
    return WorldInstance(world_id, vocab_size, eos, max_length, specs, sigma)


@pytest.fixture
def three_region_world():
    return make_world([({0, 1}, 0.5), ({2}, 0.3), ({3}, 0.2)], vocab_size=8, max_length=5)


@pytest.fixture
def config():
    return PlannerConfig()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
