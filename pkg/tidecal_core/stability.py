# tidecal_core/stability.py
"""
Point-level Drucker-Prager evaluation of effective stress.

Stress and strain are plane-strain 4-vectors (xx, yy, zz, xy), compression
negative. Shear strain is the tensor component, not the engineering one.
The field estimator below uses geostatic stress, not a displacement solve.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.dike_model import DikeModel
from tidecal_core.errors import InvalidParameter, NonConvergent
from tidecal_core.mesh import build_mesh
from tidecal_core.snapshots import Snapshot
from tidecal_core.utils import debug

YIELD_TOL_PA = 1.0
_DIAG = np.array([1.0, 1.0, 1.0, 0.0])


def _check_elastic(E, nu):
    if not E > 0:
        raise InvalidParameter(f"Young's modulus must be positive, got {E}")
    if not 0.0 <= nu < 0.5:
        raise InvalidParameter(f"Poisson ratio must lie in [0, 0.5), got {nu}")


def _check_strength(c, phi):
    if c < 0:
        raise InvalidParameter(f"cohesion must be non-negative, got {c}")
    if not 0.0 <= phi < math.pi / 2:
        raise InvalidParameter(f"friction angle must lie in [0, pi/2), got {phi}")


def bulk_modulus(E, nu):
    return E / (3.0 * (1.0 - 2.0 * nu))


def shear_modulus(E, nu):
    return E / (2.0 * (1.0 + nu))


@dataclass
class MaterialPoint:
    stress: np.ndarray = field(default_factory=lambda: np.zeros(4))
    plastic_strain: np.ndarray = field(default_factory=lambda: np.zeros(4))
    E: float = TIDAL_SHEET["strength"]["E"]
    nu: float = TIDAL_SHEET["strength"]["nu"]
    c: float = TIDAL_SHEET["strength"]["c"]
    phi: float = math.radians(TIDAL_SHEET["strength"]["phi_deg"])
    rho_s: float = TIDAL_SHEET["strength"]["rho_s"]

    def __post_init__(self):
        _check_elastic(self.E, self.nu)
        _check_strength(self.c, self.phi)
        self.stress = np.asarray(self.stress, dtype=float).copy()
        self.plastic_strain = np.asarray(self.plastic_strain, dtype=float).copy()

    @property
    def K(self):
        return bulk_modulus(self.E, self.nu)

    @property
    def G(self):
        return shear_modulus(self.E, self.nu)

    def yield_value(self):
        return float(yield_function(self.stress, self.c, self.phi))

    def apply_strain(self, d_strain):
        """Elastic predictor on a strain increment, then the return map."""
        trial = self.stress + elastic_stress(d_strain, self.E, self.nu)
        self.stress, d_pl = return_map(trial, self.c, self.phi, self.E, self.nu)
        self.plastic_strain = self.plastic_strain + d_pl
        return d_pl


# --- invariants and yield surface ---------------------------------------
def stress_invariants(sigma):
    s = np.asarray(sigma, dtype=float)
    sxx, syy, szz, sxy = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    i1 = sxx + syy + szz
    i2 = sxx * syy + szz * syy + sxx * szz - sxy ** 2
    j2 = i1 ** 2 / 3.0 - i2
    return i1, i2, j2


def dp_constants(c, phi):
    """Drucker-Prager cone inscribed to Mohr-Coulomb: (alpha, F_DP)."""
    tan = math.tan(phi)
    root = math.sqrt(9.0 + 12.0 * tan * tan)
    return tan / root, 3.0 * c / root


def yield_function(sigma, c, phi):
    alpha, f_dp = dp_constants(c, phi)
    i1, _, j2 = stress_invariants(sigma)
    return alpha * i1 + np.sqrt(np.maximum(j2, 0.0)) - f_dp


# --- elasticity -----------------------------------------------------------
def elastic_stress(strain, E, nu):
    """Plane-strain stress from (exx, eyy, exy); a 4-vector must carry ezz = 0."""
    _check_elastic(E, nu)
    e = np.asarray(strain, dtype=float)
    if e.shape[-1] == 3:
        e = np.stack([e[..., 0], e[..., 1], np.zeros_like(e[..., 0]), e[..., 2]], axis=-1)
    elif e.shape[-1] != 4:
        raise InvalidParameter(f"strain must have 3 or 4 components, got {e.shape[-1]}")
    elif np.any(e[..., 2] != 0.0):
        raise InvalidParameter("plane strain requires ezz = 0")
    scale = E / (1.0 + nu)
    trace = e[..., 0] + e[..., 1] + e[..., 2]
    return scale * (nu / (1.0 - 2.0 * nu) * trace[..., None] * _DIAG + e)


def elastic_strain(sigma, E, nu):
    """Inverse of the 3D isotropic law; used to express stress corrections as strain."""
    s = np.asarray(sigma, dtype=float)
    i1 = s[..., 0] + s[..., 1] + s[..., 2]
    return ((1.0 + nu) * s - nu * i1[..., None] * _DIAG) / E


# --- return map -----------------------------------------------------------
def _deviator(s, i1):
    return s - (i1 / 3.0)[..., None] * _DIAG


def return_map(sigma_trial, c, phi, E, nu):
    """Closed-form associated return to the cone; apex states collapse to the tip.

    Returns (sigma_corrected, plastic_strain_increment), both 4-vectors
    (or (N, 4) arrays for a batch of points).
    """
    _check_elastic(E, nu)
    _check_strength(c, phi)
    trial = np.asarray(sigma_trial, dtype=float)
    single = trial.ndim == 1
    s = np.atleast_2d(trial)

    K, G = bulk_modulus(E, nu), shear_modulus(E, nu)
    alpha, f_dp = dp_constants(c, phi)
    i1, _, j2 = stress_invariants(s)
    sqrt_j2 = np.sqrt(np.maximum(j2, 0.0))
    f = alpha * i1 + sqrt_j2 - f_dp

    out = s.copy()
    plastic = f > 0.0
    if np.any(plastic):
        d_lambda = f / (9.0 * K * alpha ** 2 + G)
        new_sqrt_j2 = sqrt_j2 - G * d_lambda
        apex = plastic & ((new_sqrt_j2 <= 0.0) | (sqrt_j2 == 0.0)) & (alpha > 0.0)
        cone = plastic & ~apex

        if np.any(cone):
            dev = _deviator(s[cone], i1[cone])
            ratio = new_sqrt_j2[cone] / sqrt_j2[cone]
            new_i1 = i1[cone] - 9.0 * K * alpha * d_lambda[cone]
            out[cone] = dev * ratio[:, None] + (new_i1 / 3.0)[:, None] * _DIAG
        if np.any(apex):
            out[apex] = (f_dp / alpha / 3.0) * _DIAG

    residual = yield_function(out, c, phi)
    if np.any(residual > YIELD_TOL_PA):
        worst = float(residual.max())
        raise NonConvergent(f"return map left F = {worst:.3f} Pa above the surface")

    d_pl = elastic_strain(s - out, E, nu)
    d_pl[~plastic] = 0.0
    if single:
        return out[0], d_pl[0]
    return out, d_pl


# --- field estimator --------------------------------------------------------
def _cell_pressure(mesh, pressure):
    if isinstance(pressure, Snapshot):
        values = pressure.value_at(mesh.xc, mesh.yc)
    else:
        values = np.broadcast_to(np.asarray(pressure, dtype=float), (mesh.n_cells,)).copy()
    if np.any(~np.isfinite(values)):
        missing = int(np.count_nonzero(~np.isfinite(values)))
        raise InvalidParameter(f"pressure field has no value for {missing} active cell(s); grid mismatch?")
    return values


def geostatic_depth(mesh):
    """Depth of each active cell centre below the top of its own column."""
    ny = mesh.active.shape[0]
    rows = np.arange(ny)[:, None]
    top_row = np.where(mesh.active, rows, -1).max(axis=0)
    cols = np.searchsorted(mesh.x_edges, mesh.xc) - 1
    return mesh.y_edges[top_row[cols] + 1] - mesh.yc


def stability_field(model: DikeModel, pressure, mesh=None, c=None, phi=None, k0=None, context=None) -> pd.DataFrame:
    """Per-cell yield value under geostatic stress and the given pore pressure.

    Total vertical stress is the overburden ρ_s·g·depth of the cell's column;
    the effective horizontal and out-of-plane stresses are K0 times the
    effective vertical stress, with K0 = 1 − sinφ unless given. Cells with
    F ≥ 0 are flagged.
    """
    strength = model.strength
    c = strength.c if c is None else float(c)
    phi = strength.phi if phi is None else float(phi)
    _check_strength(c, phi)
    k0 = 1.0 - math.sin(phi) if k0 is None else float(k0)

    mesh = mesh or build_mesh(model, context=context)
    p = _cell_pressure(mesh, pressure)
    depth = geostatic_depth(mesh)

    sigma_v = -strength.rho_s * model.fluid.g * depth + p
    sigma = np.column_stack([k0 * sigma_v, sigma_v, k0 * sigma_v, np.zeros_like(sigma_v)])
    f = yield_function(sigma, c, phi)
    flagged = f >= 0.0

    frame = pd.DataFrame({
        "x": mesh.xc, "y": mesh.yc, "F_Pa": f, "flagged": flagged,
        "sigma_xx_Pa": sigma[:, 0], "sigma_yy_Pa": sigma[:, 1], "p_Pa": p,
    })
    n_flag = int(flagged.sum())
    icon = "⚠️" if n_flag else "✅"
    debug(context, f"[STABILITY] {icon} {n_flag}/{mesh.n_cells} cells at or beyond the yield surface "
                   f"(c={c:g} Pa, φ={math.degrees(phi):.1f}°, K0={k0:.3f})")
    return frame
