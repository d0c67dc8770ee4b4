import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app import db  # noqa: E402
from app.bifunctions import ProxBifunction  # noqa: E402
from app.geometry import BoxSet  # noqa: E402
from app.operators import zero_map  # noqa: E402
from app.services_fbf import BepInstance  # noqa: E402
from app.services_saddle import build_saddle_bep, example_problem  # noqa: E402

CONFIGS = ROOT / "configs"


@pytest.fixture
def unit2():
    return BoxSet.unit(2)


@pytest.fixture
def saddle():
    return example_problem()


@pytest.fixture
def saddle_bep(saddle):
    """Example saddle problem with the prox upper level centred at (0.5, 0.5)."""
    return build_saddle_bep(saddle, ProxBifunction(np.array([0.5, 0.5]), 1.0, saddle.k))


@pytest.fixture
def selection_bep(unit2):
    """B = 0, so the BEP reduces to projecting (0.3, 0.7) onto the box."""
    return BepInstance(zero_map(2), ProxBifunction(np.array([0.3, 0.7]), 1.0, unit2), unit2,
                       name="selection")


@pytest.fixture
def memory_store():
    db.configure(None)
    db.reset_db()
    yield
    db.configure(None)


@pytest.fixture
def config_path():
    def _path(name: str) -> str:
        return str(CONFIGS / name)
    return _path
