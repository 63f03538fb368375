import numpy as np
import pytest

from odbayes.core import CostBins, MarginData

# zone costs and margins of the four-zone worked example
ZONE4_COSTS = np.array(
    [[3, 11, 18, 22], [12, 3, 13, 19], [15.5, 13, 5, 7], [24, 18, 8, 5]], dtype=float
)
ZONE4_O = [400, 460, 400, 702]
ZONE4_D = [260, 400, 500, 802]
TLD_COUNTS = [365, 962, 160, 150, 230, 95]
BIN_EDGES = [0, 4, 8, 12, 16, 20, 24]

TWO_ZONE_O = [40, 40]
TWO_ZONE_D = [60, 20]
TWO_ZONE_P = np.array([[0.1, 0.2], [0.3, 0.4]])


@pytest.fixture
def zone4():
    return MarginData(ZONE4_O, ZONE4_D)


@pytest.fixture
def costs():
    return ZONE4_COSTS.copy()


@pytest.fixture
def bins():
    return CostBins(BIN_EDGES)


@pytest.fixture
def two_zone():
    return MarginData(TWO_ZONE_O, TWO_ZONE_D)
