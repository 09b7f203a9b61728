"""
Van Genuchten–Mualem closures in pressure form.
"""

import numpy as np
import pytest

from tidecal_core.dike_model import VanGenuchtenParams
from tidecal_core.errors import InvalidParameter
from tidecal_core.van_genuchten import (
    d_permeability_dp, vg_capacity, vg_effective_saturation, vg_relative_permeability, vg_water_content,
)

SAND = VanGenuchtenParams()


class TestClosures:
    def test_saturated_branch(self, fluid):
        assert vg_effective_saturation(100.0, SAND, fluid) == 1.0
        assert vg_capacity(100.0, SAND, fluid) == 0.0
        assert vg_relative_permeability(1.0, SAND) == 1.0

    def test_continuous_at_zero(self, fluid):
        eps = 1e-6
        assert vg_effective_saturation(-eps, SAND, fluid) == pytest.approx(1.0, abs=1e-6)
        assert vg_capacity(-eps, SAND, fluid) == pytest.approx(0.0, abs=1e-6)

    def test_saturation_decreases_with_suction(self, fluid):
        p = -np.linspace(0.0, 5e4, 50)
        se = vg_effective_saturation(p, SAND, fluid)
        assert np.all(np.diff(se) <= 0)
        assert np.all((se > 0) & (se <= 1))

    def test_relative_permeability_bounds(self, fluid):
        se = np.linspace(0.0, 1.0, 21)
        kr = vg_relative_permeability(se, SAND)
        assert kr[0] == pytest.approx(0.0)
        assert kr[-1] == 1.0
        assert np.all(np.diff(kr) >= 0)

    def test_water_content_limits(self, fluid):
        assert vg_water_content(0.0, SAND, fluid) == pytest.approx(SAND.theta_s)
        assert vg_water_content(-1e9, SAND, fluid) == pytest.approx(SAND.theta_r, abs=1e-3)

    def test_capacity_matches_finite_difference(self, fluid):
        p, h = -2000.0, 1.0
        fd = (vg_water_content(p + h, SAND, fluid) - vg_water_content(p - h, SAND, fluid)) / (2 * h)
        assert vg_capacity(p, SAND, fluid) == pytest.approx(fd, rel=1e-4)

    def test_permeability_slope_is_capped_and_non_negative(self, fluid):
        slope = d_permeability_dp(-np.logspace(-3, 5, 40), SAND, fluid)
        assert np.all(np.isfinite(slope))
        assert np.all(slope >= 0)
        assert np.all(d_permeability_dp(np.array([0.0, 10.0]), SAND, fluid) == 0.0)

    def test_invalid_n(self):
        with pytest.raises(InvalidParameter):
            VanGenuchtenParams(n=1.0)
