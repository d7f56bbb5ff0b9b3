import os
import sys

import pytest

# Add parent directory to path to import the package modules
ROOT = os.path.join(os.path.dirname(__file__), "..")
sys.path.insert(0, ROOT)

from cluster_data import GroupData, TwoGroupStudy  # noqa: E402
from study_io import read_study  # noqa: E402

DATA_DIR = os.path.join(ROOT, "data")
CONFIG_DIR = os.path.join(ROOT, "configs")


@pytest.fixture
def table1_study():
    """20 clusters of size 100 per arm; MR3 gives an unusually wide interval."""
    return read_study(os.path.join(DATA_DIR, "table1_study.csv"))


@pytest.fixture
def table2_study():
    """16 small clusters per arm; MR3 has no interval."""
    return read_study(os.path.join(DATA_DIR, "table2_study.csv"))


@pytest.fixture
def moderate_study():
    return TwoGroupStudy(
        GroupData.from_counts([20, 25, 18, 30, 22, 27], [6, 9, 4, 12, 7, 10]),
        GroupData.from_counts([21, 19, 26, 24, 23, 20], [3, 5, 4, 7, 2, 6]),
    )
