import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from swgsd.config import builtin_config_path, load_design, load_scenario
from swgsd.model import AllocationSchedule, AnalysisSchedule, \
    GroupSequentialDesign, StoppingBoundaries, VarianceComponents


@pytest.fixture(scope="session")
def tds1_scenario():
    return load_scenario(builtin_config_path("tds1"))


@pytest.fixture(scope="session")
def tds2_scenario():
    return load_scenario(builtin_config_path("tds2"))


@pytest.fixture(scope="session")
def tiny_scenario():
    return load_scenario(builtin_config_path("tiny"))


@pytest.fixture(scope="session")
def tds1_designs():
    return [load_design(builtin_config_path(f"designs/tds1_design{i}"))
            for i in (1, 2, 3)]


@pytest.fixture(scope="session")
def tds2_designs():
    return [load_design(builtin_config_path(f"designs/tds2_design{i}"))
            for i in (1, 2, 3)]


@pytest.fixture(scope="session")
def tiny_design():
    # A feasible design for the tiny scenario (alpha 0.2, power 0.8),
    # kept small so simulation-based tests stay fast.
    return GroupSequentialDesign(
        allocation=AllocationSchedule((1, 2, 4), 3),
        schedule=AnalysisSchedule((2, 3)),
        boundaries=StoppingBoundaries((0.8483, -1.3158), (7.6597, -1.3158)),
        m=3,
        vc=VarianceComponents(0.1, 1.0),
    )


@pytest.fixture(scope="session")
def single_stage_design():
    # One analysis only: the stage-wise adjusted procedures must collapse
    # to the naive ones.
    return GroupSequentialDesign(
        allocation=AllocationSchedule((2, 3, 4), 4),
        schedule=AnalysisSchedule((4,)),
        boundaries=StoppingBoundaries((1.6449,), (1.6449,)),
        m=5,
        vc=VarianceComponents(0.05, 1.0),
    )
