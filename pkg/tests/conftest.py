import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from storage_bidding.case_io import (DC, Branch, Bus, Generator, Load, LoadProfile, Network, StorageSpec,
                                     build_instance, load_case, read_profile)
from storage_bidding.schemas import SolveOptions


def two_bus(rate=None, second_cost=None, load=1.0, cost=10.0, quad=0.0):
    """Generator at bus 1, load at bus 2, one line; optional expensive generator at bus 2."""
    gens = [Generator(1, 0.0, 2.0, -2.0, 2.0, cost_lin=cost, cost_quad=quad)]
    if second_cost is not None:
        gens.append(Generator(2, 0.0, 2.0, -2.0, 2.0, cost_lin=second_cost))
    return Network(
        name="two_bus",
        base_power=100.0,
        buses=(Bus(1, 3, 0.9, 1.1), Bus(2, 1, 0.9, 1.1)),
        generators=tuple(gens),
        branches=(Branch(1, 2, 0.01, 0.1, rate=rate),),
        loads=(Load(2, load, 0.2),),
    )


@pytest.fixture
def dc_two_bus():
    return build_instance(two_bus(), LoadProfile.flat(1), StorageSpec(bus=2), model=DC)


@pytest.fixture
def dc_congested():
    return build_instance(two_bus(rate=0.5, second_cost=20.0), LoadProfile.flat(1), StorageSpec(bus=2), model=DC)


@pytest.fixture(scope="session")
def case3():
    return load_case("case3_lmbd.m")


@pytest.fixture(scope="session")
def case5():
    return load_case("case5_pjm.m")


@pytest.fixture(scope="session")
def winter_profile():
    return read_profile("rts96_winter_weekday.txt")


@pytest.fixture
def opts():
    return SolveOptions(seed=7)
