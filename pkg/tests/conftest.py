import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modexp import DESK_PARAMS, AlgorithmParams, build_config  # noqa: E402
from residue import Modulus, random_semiprime  # noqa: E402

DESK_BITS = (24, 32, 40)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run long reproduction checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def desk_params(N, **overrides):
    values = {**DESK_PARAMS, **overrides}
    return AlgorithmParams(n=Modulus(N).bit_length, **values)


@pytest.fixture(scope="session")
def semiprimes():
    return {bits: random_semiprime(bits, seed=bits) for bits in DESK_BITS}


@pytest.fixture(scope="session")
def desk_configs(semiprimes):
    """One execution config per desk-scale semiprime, built once."""
    return {bits: build_config(N, 2, desk_params(N), seed=7, workers=1)
            for bits, N in semiprimes.items()}


@pytest.fixture(scope="session")
def config32(desk_configs):
    return desk_configs[32]
