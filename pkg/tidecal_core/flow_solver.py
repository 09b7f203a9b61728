"""
flow_solver.py — transient 2D porous flow over the dike cross-section.

Richards mode solves the mixed form
    ∂θ/∂t + θ_e·S·∂p/∂t = ∇·(K k_r ∇(p + ρg y)),   K = K_S/μ := d·S
with van Genuchten closures; saturated mode solves the linear
    S·∂p/∂t = ∇·(K ∇(p + ρg y))  (⇔ ∂p/∂t = d∇²p).

Cell-centred finite volumes, harmonic mobility averaging, BDF1 on the first
step and after a step-size change, BDF2 otherwise, Newton with a backtracking
line search on the nonlinear system and dt halving on failure. Sea/land faces
below the water line are Dirichlet p = ρg(h − y); above it they are seepage
faces (p = 0 while the pressure at the face is positive, closed otherwise).
Walls carry no flux.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu, spsolve

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core import van_genuchten as vgm
from tidecal_core.dike_model import DikeModel, point_segment_distance
from tidecal_core.errors import InvalidParameter, NewtonDivergence, TooShort
from tidecal_core.mesh import Mesh, build_mesh
from tidecal_core.sensor_signal import extract_features
from tidecal_core.units import TimeSeries, Unit, convert
from tidecal_core.utils import debug

SOLVER = TIDAL_SHEET["solver"]
PERIOD = TIDAL_SHEET["tide"]["period_s"]
MODES = ("richards", "saturated")
LU_CACHE_SIZE = 64
LINE_SEARCH_STEPS = 8
ARMIJO = 1e-4


class _StepFailed(Exception):
    pass


@dataclass
class StepReport:
    t: float
    dt: float
    order: int
    iterations: int
    halvings: int
    mass_balance_error: float
    seepage_faces: int = 0


@dataclass
class SimulationResult:
    probes: dict
    mesh: Mesh
    mode: str
    reports: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)   # (t, (ny, nx) grid, NaN inactive)

    @property
    def max_mass_balance_error(self):
        return max((r.mass_balance_error for r in self.reports), default=0.0)

    @property
    def halvings(self):
        return sum(r.halvings for r in self.reports)

    def probe_frame(self):
        frames = {sid: s.values for sid, s in self.probes.items()}
        first = next(iter(self.probes.values()))
        return pd.DataFrame(frames, index=pd.Index(first.timestamps, name="time"))


def level_function(series: TimeSeries, fluid):
    """Callable t -> water level [m] from a cm/mbar/Pa series (linear interpolation)."""
    if series is None:
        return lambda t: 0.0
    if series.unit == Unit.CM_WATER:
        h = series.values / 100.0
    else:
        h = convert(series.values, series.unit, Unit.PA, fluid) / fluid.rho_g
    t = series.timestamps
    return lambda s: float(np.interp(s, t, h))


def _bdf(order, dt):
    if order == 2:
        return 1.5 / dt, -2.0 / dt, 0.5 / dt
    return 1.0 / dt, -1.0 / dt, 0.0


def _harmonic(ma, mb):
    s = ma + mb
    safe = np.where(s > 0, s, 1.0)
    lam = np.where(s > 0, 2.0 * ma * mb / safe, 0.0)
    da = np.where(s > 0, 2.0 * mb ** 2 / safe ** 2, 0.0)
    db = np.where(s > 0, 2.0 * ma ** 2 / safe ** 2, 0.0)
    return lam, da, db


class FlowSimulator:
    """Single simulation instance owning its state; advance with step()."""

    def __init__(self, model: DikeModel, mode="saturated", mesh: Mesh = None,
                 newton_tol=SOLVER["newton_tol"], max_iter=SOLVER["newton_max_iter"],
                 max_halvings=SOLVER["max_dt_halvings"], context=None):
        if mode not in MODES:
            raise InvalidParameter(f"mode must be one of {MODES} (got {mode})")
        self.model, self.mode, self.context = model, mode, context
        self.mesh = mesh or build_mesh(model, context=context)
        self.newton_tol, self.max_iter, self.max_halvings = newton_tol, max_iter, max_halvings
        self.rho_g = model.fluid.rho_g

        m = self.mesh
        mu = model.fluid.viscosity
        d = np.array([z.d_mu / mu for z in model.zones])[m.zone]
        self.S = np.array([z.specific_storage for z in model.zones])[m.zone]
        aniso = np.array([z.anisotropy for z in model.zones])[m.zone]
        self.Kx, self.Ky = d * self.S, aniso * d * self.S
        self.V = m.cell_area

        fi, fb = m.interior, m.boundary
        self._Ka = np.where(fi.direction == 0, self.Kx[fi.a], self.Ky[fi.a])
        self._Kb = np.where(fi.direction == 0, self.Kx[fi.b], self.Ky[fi.b])
        self._Kbnd = np.where(fb.direction == 0, self.Kx[fb.a], self.Ky[fb.a])
        self._level_face = np.isin(fb.tag, ("sea", "land"))
        self._sea_face = fb.tag == "sea"
        self._zone_masks = [m.zone == k for k in range(len(model.zones))]

        self.sensor_ids = [s.id for s in model.sensors]
        self._probe_pts = np.array([[s.y, s.x] for s in model.sensors]).reshape(-1, 2)
        self._probe_edge = [self._boundary_tag(s) for s in model.sensors]
        _, self._fill_idx = _fill_indices(m)

        self.p = self.p_prev = None
        self.t = self.dt_prev = None
        self.levels = (0.0, 0.0)
        self.n_steps = 0
        self.reports = []
        self._seep = None
        self._lu = OrderedDict()

    # --- setup -------------------------------------------------------------
    def _boundary_tag(self, sensor):
        for a, b, tag in self.model.edges():
            if tag in ("sea", "land") and point_segment_distance([(sensor.x, sensor.y)], a, b)[0] <= 1e-6:
                return tag
        return None

    def initialize(self, t0, sea_level, land_level, initial="hydrostatic"):
        m = self.mesh
        if isinstance(initial, str) and initial == "hydrostatic":
            fb = m.boundary
            sea_x = fb.xf[self._sea_face].mean() if self._sea_face.any() else None
            land_mask = self._level_face & ~self._sea_face
            land_x = fb.xf[land_mask].mean() if land_mask.any() else None
            if sea_x is None or land_x is None or math.isclose(sea_x, land_x):
                h = np.full(m.n_cells, sea_level if sea_x is not None else land_level)
            else:
                xp, fp = (sea_x, land_x), (sea_level, land_level)
                if sea_x > land_x:
                    xp, fp = xp[::-1], fp[::-1]
                h = np.interp(m.xc, xp, fp)
            p0 = self.rho_g * (h - m.yc)
        elif isinstance(initial, str) and initial == "zero":
            p0 = np.zeros(m.n_cells)
        else:
            p0 = np.asarray(initial, dtype=float)
            if p0.shape != (m.n_cells,):
                raise InvalidParameter(f"initial field has shape {p0.shape}, mesh has {m.n_cells} cells")
        self.p, self.p_prev = p0.copy(), None
        self.t, self.dt_prev = float(t0), None
        self.levels = (float(sea_level), float(land_level))
        self.n_steps = 0
        self._seep = None
        return self

    # --- closures ----------------------------------------------------------
    def _closures(self, p):
        """θ, C, θ_e, dθ_e/dp, k_r, dk_r/dp per cell (Richards mode)."""
        fluid = self.model.fluid
        out = [np.empty_like(p) for _ in range(6)]
        for k, z in enumerate(self.model.zones):
            mk = self._zone_masks[k]
            if not mk.any():
                continue
            pk = p[mk]
            se = np.asarray(vgm.vg_effective_saturation(pk, z.vg, fluid))
            out[0][mk] = z.vg.theta_r + (z.vg.theta_s - z.vg.theta_r) * se
            out[1][mk] = vgm.vg_capacity(pk, z.vg, fluid)
            out[2][mk] = se
            out[3][mk] = vgm.d_saturation_dp(pk, z.vg, fluid)
            out[4][mk] = vgm.vg_relative_permeability(se, z.vg)
            out[5][mk] = vgm.d_permeability_dp(pk, z.vg, fluid)
        return out

    def _boundary_state(self, levels, p, seep_prev=None):
        """(dirichlet mask, p_b, seepage mask) for boundary faces at the given (sea, land) levels.

        Emerged sea/land faces are seepage faces: they switch on (p = 0) when the
        pressure extrapolated to the face turns positive and stay on while water
        still leaves through them; otherwise they are closed.
        """
        fb = self.mesh.boundary
        h = np.where(self._sea_face, levels[0], levels[1])
        submerged = self._level_face & (fb.yf < h)
        p_b = np.where(submerged, self.rho_g * (h - fb.yf), 0.0)
        emerged = self._level_face & ~submerged
        p_face = p[fb.a] - self.rho_g * (fb.yf - self.mesh.yc[fb.a])
        seep = emerged & (p_face > 0)
        if seep_prev is not None:
            seep |= emerged & seep_prev & (p_face >= 0)
        return submerged | seep, p_b, seep

    # --- assembly ----------------------------------------------------------
    def _assemble(self, p, c0, hist_p, hist_theta, dirichlet, p_b, need_jac=True):
        m, rg, n = self.mesh, self.rho_g, self.mesh.n_cells
        fi, fb = m.interior, m.boundary
        rows, cols, vals = [], [], []

        if self.mode == "saturated":
            storage = self.V * self.S * (c0 * p + hist_p)
            diag = np.full(n, self.V * self.S * c0)
            kr = dkr = None
        else:
            theta, C, se, dse, kr, dkr = self._closures(p)
            rate_p = c0 * p + hist_p
            storage = self.V * (c0 * theta + hist_theta + self.S * se * rate_p)
            diag = self.V * (c0 * C + self.S * (dse * rate_p + se * c0))

        # interior faces: flux from b into a
        phi = p + rg * m.yc
        dphi = phi[fi.b] - phi[fi.a]
        if kr is None:
            lam, _, _ = _harmonic(self._Ka, self._Kb)
            dlam_a = dlam_b = 0.0
        else:
            lam, ha, hb = _harmonic(self._Ka * kr[fi.a], self._Kb * kr[fi.b])
            dlam_a, dlam_b = ha * self._Ka * dkr[fi.a], hb * self._Kb * dkr[fi.b]
        flux = fi.trans * lam * dphi
        R = storage.copy()
        np.subtract.at(R, fi.a, flux)
        np.add.at(R, fi.b, flux)

        # boundary faces (Dirichlet set only)
        bi = np.flatnonzero(dirichlet)
        cell = fb.a[bi]
        dphi_b = (p_b[bi] + rg * fb.yf[bi]) - phi[cell]
        if kr is None:
            lam_b = self._Kbnd[bi]
            dlam_bc = np.zeros(len(bi))
        else:
            inflow = dphi_b > 0
            lam_b = self._Kbnd[bi] * np.where(inflow, 1.0, kr[cell])
            dlam_bc = np.where(inflow, 0.0, self._Kbnd[bi] * dkr[cell])
        flux_b = fb.trans[bi] * lam_b * dphi_b
        np.subtract.at(R, cell, flux_b)

        balance = (float(storage.sum()), float(flux_b.sum()),
                   float(np.abs(storage).sum()), float(np.abs(flux_b).sum()))
        if not need_jac:
            return R, None, balance

        # dF/dp_a, dF/dp_b for F = T λ (φ_b − φ_a)
        dF_da = fi.trans * (-lam + dlam_a * dphi)
        dF_db = fi.trans * (lam + dlam_b * dphi)
        rows += [fi.a, fi.a, fi.b, fi.b]
        cols += [fi.a, fi.b, fi.a, fi.b]
        vals += [-dF_da, -dF_db, dF_da, dF_db]
        dFb = fb.trans[bi] * (-lam_b + dlam_bc * dphi_b)
        rows += [np.arange(n), cell]
        cols += [np.arange(n), cell]
        vals += [diag, -dFb]
        J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsc()
        return R, J, balance

    def _factor(self, key, J):
        lu = self._lu.get(key)
        if lu is None:
            lu = splu(J)
            self._lu[key] = lu
            if len(self._lu) > LU_CACHE_SIZE:
                self._lu.popitem(last=False)
        else:
            self._lu.move_to_end(key)
        return lu

    # --- stepping ----------------------------------------------------------
    def _solve(self, dt, order, levels):
        c0, c1, c2 = _bdf(order, dt)
        p_n, p_nm1 = self.p, self.p_prev
        hist_p = c1 * p_n + (c2 * p_nm1 if order == 2 else 0.0)
        hist_theta = None
        if self.mode == "richards":
            th_n = self._closures(p_n)[0]
            hist_theta = c1 * th_n + (c2 * self._closures(p_nm1)[0] if order == 2 else 0.0)

        dirichlet, p_b, seep = self._boundary_state(levels, p_n, self._seep)
        p = p_n.copy()
        if self.mode == "saturated":
            R, _, _ = self._assemble(p, c0, hist_p, hist_theta, dirichlet, p_b, need_jac=False)
            key = (round(dt, 9), order, dirichlet.tobytes())
            lu = self._lu.get(key)
            if lu is None:
                _, J, _ = self._assemble(p, c0, hist_p, hist_theta, dirichlet, p_b)
                lu = self._factor(key, J)
            p = p - lu.solve(R)
            iterations = 1
        else:
            p, iterations, dirichlet, p_b, seep = self._newton(p, c0, hist_p, hist_theta, levels, seep)

        R, _, (st, fl, st_abs, fl_abs) = self._assemble(p, c0, hist_p, hist_theta, dirichlet, p_b,
                                                        need_jac=False)
        scale = max(st_abs, fl_abs, 1e-300)
        mb = abs(st - fl) / scale
        return p, iterations, mb, seep

    def _newton(self, p, c0, hist_p, hist_theta, levels, seep):
        """Damped Newton on the Richards residual.

        Stops when the diagonally scaled residual, or a full undamped update,
        drops below the pressure tolerance while the seepage set is unchanged.
        The seepage set is re-evaluated from each iterate during the first half
        of the iteration budget and held afterwards.
        """
        tol = self.newton_tol * (float(np.max(np.abs(p))) + self.rho_g)
        free_switching = max(self.max_iter // 2, 1)
        last_full_update = math.inf
        dirichlet = p_b = None
        for it in range(self.max_iter + 1):
            switched = False
            if dirichlet is None or it <= free_switching:
                dirichlet, p_b, new_seep = self._boundary_state(levels, p, seep)
                switched = it > 0 and not np.array_equal(new_seep, seep)
                seep = new_seep
            R, J, _ = self._assemble(p, c0, hist_p, hist_theta, dirichlet, p_b)
            diag = np.maximum(np.abs(J.diagonal()), 1e-300)
            scaled = R / diag
            if not switched and (float(np.max(np.abs(scaled), initial=0.0)) <= tol or last_full_update <= tol):
                return p, it, dirichlet, p_b, seep
            if it == self.max_iter:
                break
            delta = spsolve(J, -R)
            if not np.all(np.isfinite(delta)):
                raise _StepFailed("non-finite Newton update")
            p, alpha = self._line_search(p, delta, scaled, diag, c0, hist_p, hist_theta, dirichlet, p_b)
            last_full_update = float(np.max(np.abs(delta), initial=0.0)) if alpha == 1.0 else math.inf
        raise _StepFailed(f"no convergence in {self.max_iter} iterations")

    def _line_search(self, p, delta, scaled, diag, c0, hist_p, hist_theta, dirichlet, p_b):
        """Backtrack along delta until the scaled residual norm drops (Armijo)."""
        norm0 = float(np.linalg.norm(scaled))
        best, best_norm, alpha = None, math.inf, 1.0
        for _ in range(LINE_SEARCH_STEPS + 1):
            trial = p + alpha * delta
            R, _, _ = self._assemble(trial, c0, hist_p, hist_theta, dirichlet, p_b, need_jac=False)
            norm = float(np.linalg.norm(R / diag))
            if norm <= (1.0 - ARMIJO * alpha) * norm0:
                return trial, alpha
            if norm < best_norm:
                best, best_norm = (trial, alpha), norm
            alpha *= 0.5
        if not best_norm < norm0:
            raise _StepFailed("line search found no decrease")
        return best

    def _advance(self, dt, sea, land, depth):
        t_new = self.t + dt
        levels = (sea(t_new), land(t_new))
        order = 2 if (self.p_prev is not None and self.dt_prev is not None
                      and math.isclose(self.dt_prev, dt, rel_tol=1e-9)) else 1
        try:
            p, its, mb, seep = self._solve(dt, order, levels)
        except _StepFailed as e:
            if depth >= self.max_halvings:
                raise NewtonDivergence(self.n_steps, t_new, str(e)) from None
            debug(self.context, f"[FLOW] ⚠️ step at t={t_new:.0f} failed ({e}); halving dt to {dt / 2:.1f} s",
                  level="DEBUG")
            h = self._advance(dt / 2, sea, land, depth + 1)
            h += self._advance(dt / 2, sea, land, depth + 1)
            return h + 1
        self.p_prev, self.p = self.p, p
        self.t, self.dt_prev = t_new, dt
        self.levels = levels
        self._seep = seep
        self.reports.append(StepReport(t_new, dt, order, its, depth, mb, int(seep.sum())))
        return 0

    def step(self, dt, sea, land):
        """Advance by dt; sea/land are callables t -> level [m]. Returns the step's report."""
        if self.p is None:
            raise InvalidParameter("simulator not initialised")
        if not dt > 0:
            raise InvalidParameter(f"dt must be > 0 (got {dt})")
        n_before = len(self.reports)
        halvings = self._advance(dt, sea, land, 0)
        self.n_steps += 1
        sub = self.reports[n_before:]
        report = StepReport(self.t, dt, sub[-1].order, sum(r.iterations for r in sub), halvings,
                            max(r.mass_balance_error for r in sub), sub[-1].seepage_faces)
        del self.reports[n_before:]
        self.reports.append(report)
        debug(self.context, f"[FLOW] t={self.t:.0f} order={report.order} its={report.iterations} "
                            f"mb={report.mass_balance_error:.1e}", level="DEBUG")
        return report

    # --- outputs -----------------------------------------------------------
    def field_grid(self):
        return self.mesh.to_grid(self.p)

    def probe(self):
        """Pressures [Pa] at the model sensors (bilinear; boundary value on sea/land edges)."""
        if not self.sensor_ids:
            return {}
        m = self.mesh
        grid = m.to_grid(self.p)[tuple(self._fill_idx)]
        interp = RegularGridInterpolator((m.y_centres, m.x_centres), grid, method="linear",
                                         bounds_error=False, fill_value=None)
        vals = interp(self._probe_pts)
        out = {}
        for k, sid in enumerate(self.sensor_ids):
            tag = self._probe_edge[k]
            if tag is not None:
                h = self.levels[0] if tag == "sea" else self.levels[1]
                y = self._probe_pts[k, 0]
                out[sid] = self.rho_g * (h - y) if y < h else 0.0
            else:
                out[sid] = float(vals[k])
        return out

    def get_state(self):
        return {
            "t": self.t, "dt_prev": self.dt_prev, "n_steps": self.n_steps,
            "levels": list(self.levels),
            "p": self.p.tolist(),
            "p_prev": None if self.p_prev is None else self.p_prev.tolist(),
            "seepage": None if self._seep is None else np.flatnonzero(self._seep).tolist(),
        }

    def set_state(self, state):
        p = np.asarray(state["p"], dtype=float)
        if p.shape != (self.mesh.n_cells,):
            raise InvalidParameter(f"state has {p.size} cells, mesh has {self.mesh.n_cells}")
        self.p = p
        self.p_prev = None if state.get("p_prev") is None else np.asarray(state["p_prev"], dtype=float)
        self.t = float(state["t"])
        self.dt_prev = state.get("dt_prev")
        self.n_steps = int(state.get("n_steps", 0))
        self.levels = tuple(state.get("levels", (0.0, 0.0)))
        seepage = state.get("seepage")
        self._seep = None
        if seepage is not None:
            self._seep = np.zeros(len(self.mesh.boundary), dtype=bool)
            self._seep[np.asarray(seepage, dtype=int)] = True
        return self


def _fill_indices(mesh):
    return ndimage.distance_transform_edt(~mesh.active, return_indices=True)


# ============================================================
# DRIVERS
# ============================================================
def _covers(series, t0, t1):
    return series is None or (series.t_start <= t0 + 1e-6 and series.t_end >= t1 - 1e-6)


def simulate(model: DikeModel, tide: TimeSeries, land: TimeSeries = None, t_span=None,
             dt=SOLVER["default_dt_s"], mode="saturated", snapshots=0, initial="hydrostatic",
             mesh=None, context=None) -> SimulationResult:
    """Run the flow model over t_span and sample every sensor after each step."""
    if not dt > 0:
        raise InvalidParameter(f"dt must be > 0 (got {dt})")
    t0, t1 = t_span or (tide.t_start, tide.t_end)
    if not t1 > t0:
        raise InvalidParameter(f"empty time span ({t0}, {t1})")
    if not (_covers(tide, t0, t1) and _covers(land, t0, t1)):
        raise InvalidParameter("tide/land series do not cover the simulation span")

    fluid = model.fluid
    sea_fn, land_fn = level_function(tide, fluid), level_function(land, fluid)
    sim = FlowSimulator(model, mode=mode, mesh=mesh, context=context)
    sim.initialize(t0, sea_fn(t0), land_fn(t0), initial)

    n_full = int(math.floor((t1 - t0) / dt + 1e-9))
    steps = [dt] * n_full
    rest = (t1 - t0) - n_full * dt
    if rest > 1e-6 * dt:
        steps.append(rest)
    snap_at = set(np.linspace(0, len(steps), snapshots).round().astype(int)) if snapshots else set()

    times, rows, snaps = [t0], [sim.probe()], []
    if 0 in snap_at:
        snaps.append((t0, sim.field_grid()))
    for k, h in enumerate(steps, start=1):
        sim.step(h, sea_fn, land_fn)
        times.append(sim.t)
        rows.append(sim.probe())
        if k in snap_at:
            snaps.append((sim.t, sim.field_grid()))

    probes = {sid: TimeSeries(np.array(times), np.array([r[sid] for r in rows]), Unit.PA, {"sensor": sid})
              for sid in sim.sensor_ids}
    result = SimulationResult(probes, sim.mesh, mode, sim.reports, snaps)
    debug(context, f"[FLOW] ✅ {mode} run: {len(steps)} steps, {sim.mesh.n_cells} cells, "
                   f"{result.halvings} halving(s), max mass-balance error {result.max_mass_balance_error:.1e}")
    return result


def steady_harmonic_features(model: DikeModel, tide: TimeSeries, land: TimeSeries = None, sensors=None,
                             mode="saturated", dt=SOLVER["default_dt_s"],
                             spinup_periods=SOLVER["spinup_periods"], period=PERIOD,
                             initial="hydrostatic", mesh=None, context=None):
    """Harmonic features per sensor after discarding the spin-up periods."""
    t_keep = tide.t_start + spinup_periods * period
    if tide.t_end - t_keep < period:
        raise TooShort(f"tide spans {tide.span / period:.2f} periods; need {spinup_periods} spin-up + 1")
    result = simulate(model, tide, land, dt=dt, mode=mode, initial=initial, mesh=mesh, context=context)
    ids = sensors or list(result.probes)
    tide_kept = tide.window(t_keep, tide.t_end)
    return {sid: extract_features(result.probes[sid].window(t_keep, tide.t_end), tide_kept,
                                  model.fluid, period, context=context)
            for sid in ids}
