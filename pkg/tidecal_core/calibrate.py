"""
calibrate.py — automatic diffusivity calibration against sensor features.

Pipeline:
  1. analytic initial guess (multizone superposition, or the single-zone fit
     in homogeneous mode)
  2. bounded coordinate descent on the simulated features, one quadratic
     line fit per parameter (log space for dμ, linear space for lengths)
  3. confirmation run of the best parameters

Parameters are carried as dμ products [Pa·m²] so a fit does not depend on the
water temperature used during fitting.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.analytic import (HarmonicBoundary, TargetPosition, attenuation_q, homogeneous_initial_guess,
                                   multizone_initial_guess)
from tidecal_core.dike_model import DikeModel, SoilZone, clip_polygon_x
from tidecal_core.errors import (BudgetExhausted, InvalidParameter, NewtonDivergence, NoConvergence,
                                 SimulationFailure, TooShort)
from tidecal_core.flow_solver import steady_harmonic_features
from tidecal_core.sensor_signal import HarmonicFeature, wrap_delay
from tidecal_core.units import TimeSeries
from tidecal_core.utils import debug

CAL = TIDAL_SHEET["calibration"]
TIDE = TIDAL_SHEET["tide"]
SOLVER = TIDAL_SHEET["solver"]
MIN_BUDGET = 20
PARAM_NAMES = ("d_mu1", "d_mu2", "d_mu3", "d_mu4", "L1", "L2")


# ============================================================
# LAND BOUNDARY
# ============================================================
def land_boundary(tide: TimeSeries, q, window=TIDE["land_window_s"], center=True) -> TimeSeries:
    """Land-side level: moving average of the tide over `window` seconds, times q.

    The centred average truncates at the ends of the series. Live mode uses
    the trailing window (center=False) because future samples are unknown.
    """
    if not 0.0 <= q <= 1.0:
        raise InvalidParameter(f"q must lie in [0, 1] (got {q})")
    if not window > 0:
        raise InvalidParameter(f"window must be > 0 (got {window})")
    if tide.span < window:
        raise TooShort(f"tide spans {tide.span:.0f} s, shorter than the {window:.0f} s window")
    index = pd.to_datetime(tide.timestamps, unit="s")
    rolled = pd.Series(tide.values, index=index).rolling(f"{int(round(window))}s", center=center,
                                                         min_periods=1).mean()
    return TimeSeries(tide.timestamps, q * rolled.to_numpy(), tide.unit,
                      {**tide.meta, "land_q": q, "land_window_s": window})


def used_q(t):
    """Configured land-side q for the season of epoch time t: the January
    value from October to March, the August value otherwise."""
    month = pd.Timestamp(float(t), unit="s").month
    return TIDE["q_used"]["january" if month in (10, 11, 12, 1, 2, 3) else "august"]


def seasonal_q(d, x, T_slow, mu_now, mu_ref):
    """Dissipation coefficient with d rescaled from the reference viscosity."""
    if not (mu_now > 0 and mu_ref > 0):
        raise InvalidParameter(f"viscosities must be > 0 (got {mu_now}, {mu_ref})")
    return attenuation_q(x, d * mu_ref / mu_now, T_slow)


# ============================================================
# PROBLEM / RESULT
# ============================================================
@dataclass
class CalibrationProblem:
    template: DikeModel
    targets: dict                   # sensor id -> HarmonicFeature
    tide: TimeSeries
    land: TimeSeries = None
    q: float = None                 # land = land_boundary(tide, q) when land is None
    bounds: dict = field(default_factory=lambda: dict(CAL["bounds"]))
    training_window: tuple = None   # (t_start, t_end); features compared over this span
    homogeneous: bool = False
    lengths: tuple = (TIDAL_SHEET["section1_calibrated"]["L1"], TIDAL_SHEET["section1_calibrated"]["L2"])
    mode: str = "saturated"
    dt: float = SOLVER["default_dt_s"]
    period: float = TIDE["period_s"]
    spinup_periods: float = SOLVER["spinup_periods"]
    continuity: str = "flux"
    tolerance: dict = field(default_factory=lambda: dict(CAL["tolerance"]))

    def __post_init__(self):
        if not self.targets:
            raise InvalidParameter("calibration needs at least one target feature")
        missing = [sid for sid in self.targets if sid not in {s.id for s in self.template.sensors}]
        if missing:
            raise InvalidParameter(f"target sensor(s) {missing} not in the model")
        if 2 * len(self.targets) < self.n_free:
            raise InvalidParameter(f"{len(self.targets)} sensor(s) give {2 * len(self.targets)} targets "
                                   f"for {self.n_free} free parameters")
        lo, hi = self.bounds["d_mu"]
        if not 0 < lo < hi:
            raise InvalidParameter(f"d_mu bounds must be positive and ordered: {self.bounds['d_mu']}")
        for key in ("L1", "L2"):
            lo, hi = self.bounds[key]
            if not 0 < lo <= hi:
                raise InvalidParameter(f"{key} bounds must be positive and ordered: {self.bounds[key]}")

    @property
    def n_free(self):
        return 1 if self.homogeneous else len(PARAM_NAMES)

    @property
    def mu(self):
        return self.template.fluid.viscosity

    def land_series(self):
        if self.land is not None:
            return self.land
        if self.q is None:
            return None
        return land_boundary(self.tide, self.q)

    def simulation_tide(self):
        """Tide clipped to spin-up + training window, and the spin-up period count."""
        if self.training_window is None:
            return self.tide, self.spinup_periods
        t0, t1 = self.training_window
        start = max(self.tide.t_start, t0 - self.spinup_periods * self.period)
        return self.tide.window(start, t1), (t0 - start) / self.period

    # --- parameter vectors -------------------------------------------------
    def lower(self):
        lo_d = math.log(self.bounds["d_mu"][0])
        if self.homogeneous:
            return np.array([lo_d])
        return np.array([lo_d] * 4 + [self.bounds["L1"][0], self.bounds["L2"][0]])

    def upper(self):
        hi_d = math.log(self.bounds["d_mu"][1])
        if self.homogeneous:
            return np.array([hi_d])
        return np.array([hi_d] * 4 + [self.bounds["L1"][1], self.bounds["L2"][1]])

    def steps(self):
        """Initial line-search half-widths per coordinate."""
        if self.homogeneous:
            return np.array([CAL["log_step"]])
        return np.array([CAL["log_step"]] * 4 + [CAL["length_step"]] * 2)

    def decode(self, v):
        """Parameter vector -> (d_mu 4-tuple, L1, L2)."""
        if self.homogeneous:
            d_mu = float(math.exp(v[0]))
            return (d_mu,) * 4, float(self.lengths[0]), float(self.lengths[1])
        return tuple(float(math.exp(x)) for x in v[:4]), float(v[4]), float(v[5])

    def encode(self, d_mu, L1, L2):
        if self.homogeneous:
            return np.array([math.log(d_mu[0])])
        return np.array([math.log(x) for x in d_mu] + [L1, L2])


@dataclass
class CalibrationResult:
    d_mu: tuple
    L1: float
    L2: float
    mu: float
    errors: pd.DataFrame
    objective: float
    initial: dict
    log: list
    forward_runs: int
    status: str                     # converged | budget_exhausted | stalled
    runs_to_tolerance: int = None
    homogeneous: bool = False

    @property
    def d(self):
        return tuple(x / self.mu for x in self.d_mu)

    @property
    def converged(self):
        return self.status == "converged"

    def raise_for_status(self):
        if self.status == "budget_exhausted":
            raise BudgetExhausted(self)
        return self

    def to_dict(self):
        return {
            "status": self.status,
            "homogeneous": self.homogeneous,
            "fitted": {"d_mu_Pa_m2": list(self.d_mu), "d_m2_s": list(self.d), "L1": self.L1, "L2": self.L2,
                       "mu_Pa_s": self.mu},
            "objective": self.objective,
            "forward_runs": self.forward_runs,
            "runs_to_tolerance": self.runs_to_tolerance,
            "initial_guess": self.initial,
            "residuals": self.errors.reset_index().to_dict(orient="records"),
            "convergence_log": self.log,
        }


# ============================================================
# LAYERED MODEL
# ============================================================
def _snap(value, origin, h):
    return origin + round((value - origin) / h) * h


def layout_model(template: DikeModel, d_mu, L1, L2) -> DikeModel:
    """Four rectangular zones (upper/lower × inner/outer) on the template section.

    The inner zones span L1 from the inlet, the outer zones the next L2; the
    section is cut at inlet + L1 + L2 and the cut becomes a land boundary.
    Zone limits snap to the nearest cell face of the template grid.
    """
    if len(d_mu) != 4 or min(d_mu) <= 0:
        raise InvalidParameter(f"need four positive dμ values (got {d_mu})")
    if not (L1 > 0 and L2 > 0):
        raise InvalidParameter(f"zone lengths must be > 0 (got L1={L1}, L2={L2})")
    xmin, xmax, ymin, ymax = template.bounds()
    x_int = _snap(template.inlet_x + L1, xmin, template.dx)
    x_cut = _snap(template.inlet_x + L1 + L2, xmin, template.dx)
    y_split = _snap(template.slice_split_y, ymin, template.dy)
    if not (xmin < x_int < x_cut) or not (ymin < y_split < ymax):
        raise InvalidParameter(f"layout L1={L1}, L2={L2} does not fit the section after snapping to the grid")

    polygon, tags = template.polygon, template.boundaries
    if x_cut < xmax:
        polygon, tags = clip_polygon_x(polygon, tags, x_cut)
    else:
        x_cut = xmax
    beyond = [s.id for s in template.sensors if s.x >= x_cut]
    if beyond:
        raise InvalidParameter(f"sensor(s) {beyond} lie beyond the land cut at x={x_cut:g}")

    base = template.zones[0]

    def rect(x0, x1, y0, y1, d, name):
        return SoilZone(((x0, y0), (x1, y0), (x1, y1), (x0, y1)), d, base.vg, base.specific_storage,
                        base.anisotropy, name)

    zones = (
        rect(xmin, x_int, y_split, ymax, d_mu[0], "upper_inner"),
        rect(x_int, x_cut, y_split, ymax, d_mu[1], "upper_outer"),
        rect(xmin, x_int, ymin, y_split, d_mu[2], "lower_inner"),
        rect(x_int, x_cut, ymin, y_split, d_mu[3], "lower_outer"),
    )
    return replace(template, polygon=tuple(map(tuple, polygon)), zones=zones, boundaries=tuple(tags))


# ============================================================
# OBJECTIVE
# ============================================================
def feature_errors(simulated: dict, targets: dict, period=TIDE["period_s"]) -> pd.DataFrame:
    rows = []
    for sid, target in targets.items():
        sim = simulated[sid]
        rows.append({
            "sensor": sid,
            "amplitude_target": target.relative_amplitude,
            "amplitude_sim": sim.relative_amplitude,
            "amplitude_rel_error": (sim.relative_amplitude - target.relative_amplitude)
                                   / max(target.relative_amplitude, 1e-12),
            "delay_target_s": target.delay_s,
            "delay_sim_s": sim.delay_s,
            "delay_error_s": _delay_error(sim.delay_s, target.delay_s, period),
        })
    return pd.DataFrame(rows).set_index("sensor")


def _delay_error(a, b, period):
    """Signed a − b wrapped to [−T/2, T/2)."""
    return wrap_delay(a - b + 0.5 * period, period) - 0.5 * period


def objective(errors: pd.DataFrame, period=TIDE["period_s"]):
    """Σ (Δamp / A_target)² + (Δdelay / T)² over sensors."""
    return float((errors["amplitude_rel_error"] ** 2).sum() + ((errors["delay_error_s"] / period) ** 2).sum())


def within_tolerance(errors: pd.DataFrame, tolerance=None):
    tol = tolerance or CAL["tolerance"]
    return bool((errors["amplitude_rel_error"].abs() <= tol["amplitude"]).all()
                and (errors["delay_error_s"].abs() <= tol["delay_s"]).all())


# ============================================================
# FORWARD RUN
# ============================================================
def _forward(problem: CalibrationProblem, tide, land, spinup, v):
    """One simulation at parameter vector v -> (objective, errors | None).

    Runs in worker processes; returns an infinite objective when the layout
    does not fit the section or no tidal response can be extracted.
    """
    d_mu, L1, L2 = problem.decode(v)
    try:
        model = layout_model(problem.template, d_mu, L1, L2)
    except InvalidParameter:
        return math.inf, None, False
    try:
        sim = steady_harmonic_features(model, tide, land, sensors=list(problem.targets), mode=problem.mode,
                                       dt=problem.dt, spinup_periods=spinup, period=problem.period)
    except TooShort:
        return math.inf, None, True
    except (NewtonDivergence, FloatingPointError, np.linalg.LinAlgError) as e:
        raise SimulationFailure({"d_mu": d_mu, "L1": L1, "L2": L2}, e) from e
    errors = feature_errors(sim, problem.targets, problem.period)
    return objective(errors, problem.period), errors, True


class _Evaluator:
    """Budgeted, memoised forward runs with best-so-far bookkeeping."""

    def __init__(self, problem, budget, workers, context):
        self.problem, self.budget, self.context = problem, budget, context
        self.tide, self.spinup = problem.simulation_tide()
        self.land = problem.land_series()
        self.workers = max(1, int(workers or 1))
        self.pool = ProcessPoolExecutor(max_workers=self.workers) if self.workers > 1 else None
        self.cache = {}
        self.runs = 0
        self.best = (math.inf, None, None)      # objective, vector, errors
        self.log = []
        self.runs_to_tolerance = None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def remaining(self):
        # one run is held back for the confirmation
        return self.budget - 1 - self.runs

    def _key(self, v):
        return tuple(np.round(v, 10))

    def evaluate(self, vectors):
        """Objectives for a batch of vectors; concurrent when workers > 1."""
        fresh = []
        for v in vectors:
            k = self._key(v)
            if k not in self.cache and k not in [self._key(f) for f in fresh]:
                fresh.append(v)
        fresh = fresh[:max(self.remaining(), 0)]
        args = [(self.problem, self.tide, self.land, self.spinup, v) for v in fresh]
        if self.pool is not None and len(fresh) > 1:
            outcomes = list(self.pool.map(_forward, *zip(*args)))
        else:
            outcomes = [_forward(*a) for a in args]
        for v, (obj, errors, ran) in zip(fresh, outcomes):
            self.cache[self._key(v)] = (obj, errors)
            if not ran:
                continue
            self.runs += 1
            if obj < self.best[0]:
                self.best = (obj, np.array(v), errors)
            if self.runs_to_tolerance is None and errors is not None and within_tolerance(errors, self.problem.tolerance):
                self.runs_to_tolerance = self.runs
            d_mu, L1, L2 = self.problem.decode(v)
            self.log.append({"run": self.runs, "d_mu": list(d_mu), "L1": L1, "L2": L2,
                             "objective": obj, "best_objective": self.best[0]})
            debug(self.context, f"[CAL] run {self.runs}: objective {obj:.4e} (best {self.best[0]:.4e})",
                  level="DEBUG")
        return [self.cache[self._key(v)][0] if self._key(v) in self.cache else math.inf for v in vectors]

    def done(self):
        errors = self.best[2]
        return errors is not None and within_tolerance(errors, self.problem.tolerance)


# ============================================================
# INITIAL GUESS
# ============================================================
def _clip(v, lo, hi):
    return np.minimum(np.maximum(v, lo), hi)


def initial_guess(problem: CalibrationProblem, context=None):
    """Analytic starting point as (vector, description)."""
    template, mu = problem.template, problem.mu
    bc = HarmonicBoundary.from_period(1.0, problem.period)
    d_bounds = tuple(b / mu for b in problem.bounds["d_mu"])

    if problem.homogeneous:
        sid, target = next(iter(problem.targets.items()))
        pos = TargetPosition.from_sensor(template.sensor(sid), template.inlet_x, template.slice_split_y)
        L = sum(problem.lengths)
        d = homogeneous_initial_guess(target, min(pos.distance, L), L, bc, d_bounds)
        v = problem.encode((d * mu,) * 4, *problem.lengths)
        return _clip(v, problem.lower(), problem.upper()), {"source": "analytic_homogeneous", "d_m2_s": d}

    if len(problem.targets) != 3:
        debug(context, f"[CAL] ⚠️ analytic guess needs 3 sensors (got {len(problem.targets)}); "
                       f"starting from the bounds' midpoint", level="WARNING")
        return midpoint(problem), {"source": "midpoint"}

    targets = [(TargetPosition.from_sensor(template.sensor(sid), template.inlet_x, template.slice_split_y), feat)
               for sid, feat in problem.targets.items()]
    bounds = {"d": d_bounds, "L1": problem.bounds["L1"], "L2": problem.bounds["L2"]}
    try:
        guess = multizone_initial_guess(targets, bc, bounds, continuity=problem.continuity,
                                        raise_on_failure=False, context=context)
    except NoConvergence:
        return midpoint(problem), {"source": "midpoint"}
    lay = guess.layout
    v = problem.encode(tuple(d * mu for d in lay.d), lay.L1, lay.L2)
    return _clip(v, problem.lower(), problem.upper()), {
        "source": "analytic_multizone", "converged": guess.converged,
        "residual_norm": guess.residual_norm, "layout": lay.to_dict()}


def midpoint(problem: CalibrationProblem):
    """Geometric midpoint for dμ, arithmetic for lengths."""
    return 0.5 * (problem.lower() + problem.upper())


# ============================================================
# REFINEMENT
# ============================================================
def _coordinate_fit(ev, x, i, h, lo, hi):
    """Quadratic fit through x ± h along coordinate i; returns the best vector seen."""
    pts = []
    for s in (-h, 0.0, h):
        y = x.copy()
        y[i] = float(np.clip(x[i] + s, lo[i], hi[i]))
        if all(abs(y[i] - p[i]) > 1e-12 for p in pts):
            pts.append(y)
    vals = ev.evaluate(pts)
    cands = list(zip(vals, pts))
    finite = [(f, p) for f, p in cands if math.isfinite(f)]
    if len(finite) == 3:
        a, b, _ = np.polyfit([p[i] for _, p in finite], [f for f, _ in finite], 2)
        if a > 0:
            y = x.copy()
            y[i] = float(np.clip(-b / (2 * a), max(x[i] - 2 * h, lo[i]), min(x[i] + 2 * h, hi[i])))
            if all(abs(y[i] - p[i]) > 1e-9 for _, p in finite):
                cands.append((ev.evaluate([y])[0], y))
    return min(cands, key=lambda c: c[0])


def calibrate(problem: CalibrationProblem, budget=200, sweeps=CAL["sweeps"], workers=1, start="analytic",
              strict=False, context=None) -> CalibrationResult:
    """Fit dμ (and L1, L2) so the simulated features match the targets.

    start: "analytic" (default), "midpoint", or an explicit parameter vector.
    Stops when every sensor is within tolerance, when the budget is spent, or
    when a whole sweep needs no new forward run. Step sizes halve after a
    sweep without improvement and after every `sweeps` sweeps. With strict=True
    an exhausted budget raises BudgetExhausted carrying the result.
    """
    if budget < MIN_BUDGET:
        raise InvalidParameter(f"budget must be >= {MIN_BUDGET} forward runs (got {budget})")
    lo, hi = problem.lower(), problem.upper()

    if isinstance(start, str) and start == "analytic":
        x, initial = initial_guess(problem, context)
    elif isinstance(start, str) and start == "midpoint":
        x, initial = midpoint(problem), {"source": "midpoint"}
    else:
        x, initial = _clip(np.asarray(start, dtype=float), lo, hi), {"source": "given"}
    d0, L10, L20 = problem.decode(x)
    initial.update({"d_mu_Pa_m2": list(d0), "L1": L10, "L2": L20})
    debug(context, f"[CAL] start ({initial['source']}): dμ={['%.3g' % v for v in d0]}, L1={L10:.1f}, L2={L20:.1f}")

    ev = _Evaluator(problem, budget, workers, context)
    status = None
    try:
        f_x = ev.evaluate([x])[0]
        initial["objective"] = f_x
        h = problem.steps().astype(float)
        sweep = 0
        while status is None:
            improved, runs_before = False, ev.runs
            for i in range(len(x)):
                if ev.done():
                    status = "converged"
                    break
                if ev.remaining() <= 0:
                    status = "budget_exhausted"
                    break
                f_new, x_new = _coordinate_fit(ev, x, i, h[i], lo, hi)
                if f_new < f_x:
                    x, f_x, improved = x_new, f_new, True
            if status is not None:
                break
            sweep += 1
            debug(context, f"[CAL] sweep {sweep}: objective {f_x:.4e} after {ev.runs} run(s)")
            if not improved or sweep % sweeps == 0:
                h = h / 2.0
            if ev.runs == runs_before:
                status = "converged" if ev.done() else "stalled"
        if ev.best[1] is None:
            raise SimulationFailure(dict(zip(PARAM_NAMES, x)), "no forward run produced features")
        best = ev.best[1]
        confirm = _forward(problem, ev.tide, ev.land, ev.spinup, best)
    finally:
        ev.close()

    ev.runs += 1
    d_mu, L1, L2 = problem.decode(best)
    result = CalibrationResult(d_mu, L1, L2, problem.mu, confirm[1], confirm[0], initial, ev.log, ev.runs,
                               status, ev.runs_to_tolerance, problem.homogeneous)
    icon = "✅" if status == "converged" else "⚠️"
    debug(context, f"[CAL] {icon} {status} after {ev.runs} forward run(s): objective {result.objective:.4e}, "
                   f"dμ={['%.3g' % v for v in d_mu]}, L1={L1:.1f}, L2={L2:.1f}")
    if strict:
        result.raise_for_status()
    return result


def targets_from_features(features: dict):
    """Plain {id: {relative_amplitude, delay_s}} mappings -> HarmonicFeature targets."""
    out = {}
    for sid, f in features.items():
        if isinstance(f, HarmonicFeature):
            out[sid] = f
        else:
            out[sid] = HarmonicFeature(float(f["relative_amplitude"]), float(f["delay_s"]))
    return out
