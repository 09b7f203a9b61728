# tidecal_core/van_genuchten.py
"""
Van Genuchten–Mualem closures in pressure form (p in Pa, head = p/ρg).

C is returned in 1/Pa (dθ/dp): the per-metre-head capacity divided by ρg.
All functions accept scalars or arrays and are vectorised.
"""

import numpy as np

from tidecal_core.dike_model import VanGenuchtenParams
from tidecal_core.units import FluidProperties

# Cap on |dk_r/dp| used by the Newton Jacobian; the exact slope is unbounded
# as p -> 0- for n < 2. Expressed as head: 1 / (ρg · KR_SLOPE_HEAD_M).
KR_SLOPE_HEAD_M = 1e-3


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def vg_effective_saturation(p, vg: VanGenuchtenParams, fluid: FluidProperties):
    pa = np.asarray(p, dtype=float)
    head = np.abs(np.minimum(pa, 0.0)) / fluid.rho_g
    theta_e = (1.0 + (vg.a * head) ** vg.n) ** (-vg.m)
    return _out(np.where(pa >= 0.0, 1.0, theta_e), p)


def vg_relative_permeability(theta_e, vg: VanGenuchtenParams):
    se = np.clip(np.asarray(theta_e, dtype=float), 0.0, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = 1.0 - (1.0 - se ** (1.0 / vg.m)) ** vg.m
        kr = se ** vg.l * g ** 2
    return _out(np.where(se >= 1.0, 1.0, kr), theta_e)


def vg_capacity(p, vg: VanGenuchtenParams, fluid: FluidProperties):
    pa = np.asarray(p, dtype=float)
    se = np.asarray(vg_effective_saturation(pa, vg, fluid))
    u = se ** (1.0 / vg.m)
    c = (vg.a * vg.m / (1.0 - vg.m)) * (vg.theta_s - vg.theta_r) * u * (1.0 - u) ** vg.m / fluid.rho_g
    return _out(np.where(pa >= 0.0, 0.0, c), p)


def vg_water_content(p, vg: VanGenuchtenParams, fluid: FluidProperties):
    se = np.asarray(vg_effective_saturation(p, vg, fluid))
    return _out(vg.theta_r + (vg.theta_s - vg.theta_r) * se, p)


# --- derivatives for the Newton Jacobian ---------------------------------
def d_saturation_dp(p, vg, fluid):
    return np.asarray(vg_capacity(p, vg, fluid)) / (vg.theta_s - vg.theta_r)


def d_permeability_dp(p, vg, fluid):
    """dk_r/dp, clipped to 1/(ρg·KR_SLOPE_HEAD_M); zero on the saturated branch."""
    pa = np.asarray(p, dtype=float)
    se = np.asarray(vg_effective_saturation(pa, vg, fluid))
    m, l = vg.m, vg.l
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        u = se ** (1.0 / m)
        g = 1.0 - (1.0 - u) ** m
        dkr_dse = l * se ** (l - 1.0) * g ** 2 + 2.0 * se ** l * g * (1.0 - u) ** (m - 1.0) * u / se
        slope = dkr_dse * d_saturation_dp(pa, vg, fluid)
    cap = 1.0 / (fluid.rho_g * KR_SLOPE_HEAD_M)
    slope = np.where(np.isfinite(slope), np.clip(slope, 0.0, cap), cap)
    return np.where(pa >= 0.0, 0.0, slope)
