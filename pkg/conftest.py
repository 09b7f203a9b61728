# conftest.py — shared fixtures; keeps the repository root importable.
import os
import sys

import pytest

ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

os.environ.setdefault("TIDECAL_LOGFILE", "0")
os.environ.setdefault("TIDECAL_LOG", "WARNING")

from tidal_cheat_sheet import TIDAL_SHEET  # noqa: E402
from tidecal_core.dike_model import default_model, strip_model  # noqa: E402
from tidecal_core.synthetic_sensors import synthetic_tide  # noqa: E402
from tidecal_core.units import FluidProperties  # noqa: E402

PERIOD = TIDAL_SHEET["tide"]["period_s"]


@pytest.fixture
def fluid():
    return FluidProperties()


@pytest.fixture
def period():
    return PERIOD


@pytest.fixture
def tide_factory():
    """Harmonic tide in cm covering `periods` tidal periods."""
    def make(periods=8, amplitude_cm=100.0, dt=300.0, **kw):
        return synthetic_tide(amplitude_cm, PERIOD, 0.0, periods * PERIOD, dt, **kw)
    return make


@pytest.fixture
def coarse_section():
    """Default cross-section on a coarse grid for quick 2D runs."""
    return default_model().with_grid(2.0, 0.5)


@pytest.fixture
def small_strip():
    return strip_model(d=1.0, length=60.0, y_bottom=-4.0, y_top=-2.0, probes=(20.0,), dx=2.0, dy=0.5)
