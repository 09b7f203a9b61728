"""
analytic.py — closed-form 1D tidal propagation.

Conventions:
  * sea boundary  p(t) = A·sin(ωt + φ)
  * semi-infinite aquifer: x is the distance from the sea boundary
  * finite aquifer: fixed p = 0 at x = 0, driven at x = L
  * multizone slices: s is the distance from the sea inlet; zone A spans
    [0, L1], zone B spans [L1, L1 + L2], p = 0 at the land end
Delays are lags of the pressure maximum behind the driving maximum, wrapped to [0, T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.optimize import least_squares, minimize_scalar
from scipy.stats import qmc

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.errors import InvalidParameter, NoConvergence
from tidecal_core.sensor_signal import HarmonicFeature, wrap_delay
from tidecal_core.utils import debug

CAL = TIDAL_SHEET["calibration"]


# ============================================================
# TYPES
# ============================================================
@dataclass(frozen=True)
class HarmonicBoundary:
    amplitude: float
    omega: float
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise InvalidParameter(f"amplitude must be >= 0 (got {self.amplitude})")
        if not self.omega > 0:
            raise InvalidParameter(f"omega must be > 0 (got {self.omega})")

    @classmethod
    def from_period(cls, amplitude=1.0, period_s=TIDAL_SHEET["tide"]["period_s"], phase=0.0):
        if not period_s > 0:
            raise InvalidParameter(f"period must be > 0 (got {period_s})")
        return cls(amplitude, 2.0 * math.pi / period_s, phase)

    @property
    def period(self):
        return 2.0 * math.pi / self.omega


@dataclass(frozen=True)
class HarmonicResponse:
    amplitude: float
    delay: float
    notes: dict = field(default_factory=dict, compare=False)

    @property
    def delay_minutes(self):
        return self.delay / 60.0


@dataclass(frozen=True)
class MultiZoneLayout:
    """Two slices of two zones each plus interface phasors.

    Upper slice: d1 over L1, d2 over L2. Lower slice: d3 over L1, d4 over L2.
    Interface phasors are relative to the sea amplitude: a_int is the
    amplitude ratio, phi_int the phase lag [rad] at s = L1.
    """

    d1: float
    d2: float
    d3: float
    d4: float
    L1: float
    L2: float
    a_int1: float = 0.0
    phi_int1: float = 0.0
    a_int2: float = 0.0
    phi_int2: float = 0.0

    def __post_init__(self):
        if min(self.d) <= 0:
            raise InvalidParameter(f"diffusivities must be > 0 (got {self.d})")
        if not (self.L1 > 0 and self.L2 > 0):
            raise InvalidParameter(f"zone lengths must be > 0 (got L1={self.L1}, L2={self.L2})")

    @property
    def d(self):
        return (self.d1, self.d2, self.d3, self.d4)

    @property
    def length(self):
        return self.L1 + self.L2

    def interface(self, slice_name):
        a, phi = (self.a_int1, self.phi_int1) if slice_name == "upper" else (self.a_int2, self.phi_int2)
        return a * np.exp(-1j * phi)

    def to_dict(self):
        return {"d_m2_s": list(self.d), "L1": self.L1, "L2": self.L2,
                "interface_upper": {"amplitude": self.a_int1, "phase_rad": self.phi_int1},
                "interface_lower": {"amplitude": self.a_int2, "phase_rad": self.phi_int2}}


@dataclass(frozen=True)
class TargetPosition:
    """Sensor location as seen by the 1D slices: distance from the inlet and slice."""

    distance: float
    slice: str

    @classmethod
    def from_sensor(cls, sensor, inlet_x=TIDAL_SHEET["cross_section"]["inlet_x"],
                    split_y=TIDAL_SHEET["cross_section"]["slice_split_y"]):
        slice_name = sensor.slice or ("upper" if sensor.y >= split_y else "lower")
        return cls(float(sensor.x - inlet_x), slice_name)


# ============================================================
# HELPERS
# ============================================================
def _check_d(d):
    if not np.all(np.asarray(d) > 0):
        raise InvalidParameter(f"diffusivity must be > 0 (got {d})")


def _beta(d, omega):
    return (1.0 + 1.0j) * np.sqrt(omega / (2.0 * d))


def _sinh_ratio(beta, x, L):
    """sinh(βx)/sinh(βL) for 0 <= x <= L without overflow."""
    return np.exp(beta * (x - L)) * (1.0 - np.exp(-2.0 * beta * x)) / (1.0 - np.exp(-2.0 * beta * L))


def _coth(z):
    e = np.exp(-2.0 * z)
    return (1.0 + e) / (1.0 - e)


def _csch(z):
    return 2.0 * np.exp(-z) / (1.0 - np.exp(-2.0 * z))


def _phasor_feature(P, omega):
    """(amplitude ratio, delay s) of a relative phasor."""
    amp = float(abs(P))
    if amp == 0.0:
        return 0.0, 0.0
    period = 2.0 * math.pi / omega
    return amp, wrap_delay(-float(np.angle(P)) / omega, period)


# ============================================================
# SEMI-INFINITE AQUIFER
# ============================================================
def semi_infinite_response(x, d, bc: HarmonicBoundary):
    """p_A = A·exp(−x√(ω/2d)); Δt = x·√(1/(2dω))."""
    _check_d(d)
    if x < 0:
        raise InvalidParameter(f"x must be >= 0 (got {x})")
    k = math.sqrt(bc.omega / (2.0 * d))
    return HarmonicResponse(bc.amplitude * math.exp(-k * x), wrap_delay(k * x / bc.omega, bc.period))


def semi_infinite_profile(xs, d, bc: HarmonicBoundary):
    """Profile table (x, amplitude_ratio, delay_min) for a sweep of distances."""
    _check_d(d)
    xs = np.asarray(xs, dtype=float)
    k = math.sqrt(bc.omega / (2.0 * d))
    delay = np.mod(k * xs / bc.omega, bc.period)
    return pd.DataFrame({"x": xs, "amplitude_ratio": np.exp(-k * xs), "delay_min": delay / 60.0})


# ============================================================
# FINITE AQUIFER
# ============================================================
def _check_finite(x, d, L):
    _check_d(d)
    if not L > 0:
        raise InvalidParameter(f"L must be > 0 (got {L})")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa > L):
        raise InvalidParameter(f"x must lie in [0, L={L}] (got {x})")


def finite_aquifer_phasor(x, d, L, omega):
    """Complex amplitude ratio P(x)/A = sinh(βx)/sinh(βL)."""
    _check_finite(x, d, L)
    return _sinh_ratio(_beta(d, omega), np.asarray(x, dtype=float), L)


def finite_aquifer_pressure(x, t, d, L, bc: HarmonicBoundary):
    """Real pressure p(x, t) = Im{A·P(x)·e^{i(ωt+φ)}}; vectorised in t."""
    P = finite_aquifer_phasor(x, d, L, bc.omega)
    t = np.asarray(t, dtype=float)
    p = np.imag(bc.amplitude * P * np.exp(1j * (bc.omega * t + bc.phase)))
    return float(p) if np.ndim(p) == 0 else p


def printed_finite_amplitude(x, d, L, bc: HarmonicBoundary):
    """Amplitude law in its commonly printed form: a cosh−cos ratio with √(ω/d)
    arguments and no square root. Kept for comparison only."""
    _check_finite(x, d, L)
    k = math.sqrt(bc.omega / d)
    if k * L > 700:
        return float("nan")
    num = math.cosh(k * x) - math.cos(k * x)
    den = math.cosh(k * L) - math.cos(k * L)
    return bc.amplitude * num / den


def printed_finite_delay(x, d, L, bc: HarmonicBoundary):
    """Delay in its commonly printed arctangent-branch form with √(ω/4d)."""
    _check_finite(x, d, L)
    k = math.sqrt(bc.omega / (4.0 * d))
    if k * (x + L) > 700:
        return float("nan")
    expr1 = (-math.sinh(k * (x + L)) * math.sin(k * (x - L))
             + math.sinh(k * (x - L)) * math.sin(k * (x + L)))
    expr2 = (math.cosh(k * (x + L)) * math.cos(k * (x - L))
             - math.cosh(k * (x - L)) * math.cos(k * (x + L)))
    if expr2 == 0:
        return float("nan")
    angle = math.atan(expr1 / expr2)
    dt = angle / bc.omega if expr2 > 0 else (math.pi + angle) / bc.omega
    return wrap_delay(dt, bc.period)


def finite_aquifer_response(x, d, L, bc: HarmonicBoundary):
    """Amplitude and lag of the steady harmonic at x (fixed end at 0, sea at L).

    Computed from the exact complex solution; notes carry the printed-form
    amplitude and its ratio to the exact one.
    """
    P = complex(finite_aquifer_phasor(x, d, L, bc.omega))
    amp, delay = _phasor_feature(P, bc.omega)
    notes = {}
    if x > 0:
        printed = printed_finite_amplitude(x, d, L, bc)
        notes["printed_amplitude"] = printed
        if bc.amplitude > 0 and amp > 0 and math.isfinite(printed):
            notes["printed_to_exact_ratio"] = printed / (bc.amplitude * amp)
    else:
        notes["delay_undefined"] = True
    return HarmonicResponse(bc.amplitude * amp, delay, notes)


def finite_aquifer_profile(xs, d, L, bc: HarmonicBoundary):
    """Profile table (x, amplitude_ratio, delay_min); x measured from the fixed end."""
    xs = np.asarray(xs, dtype=float)
    P = finite_aquifer_phasor(xs, d, L, bc.omega)
    amp = np.abs(P)
    delay = np.where(amp > 0, np.mod(-np.angle(P) / bc.omega, bc.period), 0.0)
    return pd.DataFrame({"x": xs, "amplitude_ratio": amp, "delay_min": delay / 60.0})


# ============================================================
# SLOW FLUCTUATIONS
# ============================================================
def attenuation_q(x, d, T_slow):
    """Dissipation coefficient q = exp(−x·√(π/(T·d))) of a slow fluctuation."""
    if not d > 0:
        raise InvalidParameter(f"d must be > 0 (got {d})")
    if not T_slow > 0:
        raise InvalidParameter(f"T_slow must be > 0 (got {T_slow})")
    if x < 0:
        raise InvalidParameter(f"x must be >= 0 (got {x})")
    return math.exp(-x * math.sqrt(math.pi / (T_slow * d)))


# ============================================================
# MULTIZONE SUPERPOSITION
# ============================================================
def _slice_diffusivities(layout, slice_name):
    return (layout.d1, layout.d2) if slice_name == "upper" else (layout.d3, layout.d4)


def _weights(dA, dB, continuity):
    if continuity == "flux":
        return dA, dB
    if continuity == "gradient":
        return 1.0, 1.0
    raise InvalidParameter(f"continuity must be 'flux' or 'gradient' (got {continuity})")


def interface_phasor(dA, dB, L1, L2, omega, continuity="flux"):
    """Closed-form interface phasor (relative to A) from continuity at s = L1."""
    bA, bB = _beta(dA, omega), _beta(dB, omega)
    wA, wB = _weights(dA, dB, continuity)
    return wA * bA * _csch(bA * L1) / (wA * bA * _coth(bA * L1) + wB * bB * _coth(bB * L2))


def _slice_phasor(s, dA, dB, L1, L2, Pi, omega):
    if s < 0:
        raise InvalidParameter(f"position lies seaward of the inlet (distance {s})")
    bA, bB = _beta(dA, omega), _beta(dB, omega)
    if s <= L1:
        return _sinh_ratio(bA, L1 - s, L1) + Pi * _sinh_ratio(bA, s, L1)
    s2 = s - L1
    if s2 >= L2:
        return 0.0 + 0.0j
    return Pi * _sinh_ratio(bB, L2 - s2, L2)


def _continuity_residual(dA, dB, L1, L2, Pi, omega, continuity):
    bA, bB = _beta(dA, omega), _beta(dB, omega)
    wA, wB = _weights(dA, dB, continuity)
    flux_a = wA * bA * (Pi * _coth(bA * L1) - _csch(bA * L1))
    flux_b = -wB * bB * Pi * _coth(bB * L2)
    return (flux_a - flux_b) / (wA * abs(bA) + wB * abs(bB))


def with_consistent_interfaces(layout: MultiZoneLayout, bc: HarmonicBoundary, continuity="flux"):
    """Fill the interface unknowns from the closed-form continuity solution."""
    vals = {}
    for name, (k_a, k_phi) in (("upper", ("a_int1", "phi_int1")), ("lower", ("a_int2", "phi_int2"))):
        dA, dB = _slice_diffusivities(layout, name)
        Pi = interface_phasor(dA, dB, layout.L1, layout.L2, bc.omega, continuity)
        vals[k_a] = float(abs(Pi))
        vals[k_phi] = float(np.mod(-np.angle(Pi), 2.0 * math.pi))
    return replace(layout, **vals)


def multizone_forward(layout: MultiZoneLayout, bc: HarmonicBoundary, positions, continuity="flux"):
    """Harmonic features at each position for the superposed zone solution.

    Interface phasors are solved in closed form (layout's stored values ignored).
    """
    out = []
    for pos in positions:
        dA, dB = _slice_diffusivities(layout, pos.slice)
        Pi = interface_phasor(dA, dB, layout.L1, layout.L2, bc.omega, continuity)
        amp, delay = _phasor_feature(_slice_phasor(pos.distance, dA, dB, layout.L1, layout.L2, Pi, bc.omega),
                                     bc.omega)
        out.append(HarmonicFeature(amp, delay))
    return out


def multizone_residuals(layout: MultiZoneLayout, bc: HarmonicBoundary, targets, continuity="flux"):
    """Ten normalised residuals: continuity (Re, Im) at the upper and lower
    interfaces, then (amplitude, delay) per target.

    Amplitude residuals are relative to the target amplitude, delay residuals
    in tidal periods (wrapped to [−0.5, 0.5)), continuity residuals in units of
    A·(w_A|β_A| + w_B|β_B|).
    """
    targets = list(targets)
    if len(targets) != 3:
        raise InvalidParameter(f"the 10-equation system needs exactly 3 targets (got {len(targets)})")
    period = bc.period
    res = []
    for name in ("upper", "lower"):
        dA, dB = _slice_diffusivities(layout, name)
        c = _continuity_residual(dA, dB, layout.L1, layout.L2, layout.interface(name), bc.omega, continuity)
        res.extend([c.real, c.imag])
    for pos, feat in targets:
        dA, dB = _slice_diffusivities(layout, pos.slice)
        P = _slice_phasor(pos.distance, dA, dB, layout.L1, layout.L2, layout.interface(pos.slice), bc.omega)
        amp, delay = _phasor_feature(P, bc.omega)
        res.append((amp - feat.relative_amplitude) / max(feat.relative_amplitude, 1e-12))
        lag = (delay - feat.delay_s) / period
        res.append(lag - math.floor(lag + 0.5))
    return np.asarray(res, dtype=float)


@dataclass
class InitialGuess:
    layout: MultiZoneLayout
    residual_norm: float
    converged: bool
    starts: int
    converged_starts: int = 0
    log: list = field(default_factory=list)


def default_d_bounds(mu=None):
    """Diffusivity bounds [m²/s] from the dμ bounds at viscosity μ."""
    mu = mu or TIDAL_SHEET["viscosity_table"][0][1]
    lo, hi = CAL["bounds"]["d_mu"]
    return lo / mu, hi / mu


def _unpack(v):
    d = np.exp(v[:4])
    return MultiZoneLayout(
        d1=d[0], d2=d[1], d3=d[2], d4=d[3], L1=v[4], L2=v[5],
        a_int1=float(abs(complex(v[6], v[7]))), phi_int1=float(np.mod(-math.atan2(v[7], v[6]), 2 * math.pi)),
        a_int2=float(abs(complex(v[8], v[9]))), phi_int2=float(np.mod(-math.atan2(v[9], v[8]), 2 * math.pi)),
    )


def _heterogeneity(layout):
    return (math.log(layout.d1 / layout.d2)) ** 2 + (math.log(layout.d3 / layout.d4)) ** 2


def multizone_initial_guess(targets, bc: HarmonicBoundary, bounds=None, starts=CAL["multistarts"],
                            tol=CAL["root_tol"], continuity="flux", seed=0, raise_on_failure=True,
                            context=None):
    """Solve the 10-equation system by bounded trust-region Gauss-Newton from
    Sobol multi-starts (log space for d, linear for lengths).

    Among converged starts the least heterogeneous layout wins. Raises
    NoConvergence carrying the best InitialGuess when no start reaches `tol`
    (unless raise_on_failure is False).
    """
    targets = list(targets)
    if len(targets) != 3:
        raise InvalidParameter(f"the 10-equation system needs exactly 3 targets (got {len(targets)})")
    bounds = dict(bounds or {})
    d_lo, d_hi = bounds.get("d", default_d_bounds())
    L1_lo, L1_hi = bounds.get("L1", CAL["bounds"]["L1"])
    L2_lo, L2_hi = bounds.get("L2", CAL["bounds"]["L2"])
    if not (0 < d_lo < d_hi and 0 < L1_lo < L1_hi and 0 < L2_lo < L2_hi):
        raise InvalidParameter(f"bounds must be finite, positive and ordered: {bounds}")

    lo = np.array([math.log(d_lo)] * 4 + [L1_lo, L2_lo] + [-2.0] * 4)
    hi = np.array([math.log(d_hi)] * 4 + [L1_hi, L2_hi] + [2.0] * 4)

    def fun(v):
        return multizone_residuals(_unpack(v), bc, targets, continuity)

    sampler = qmc.Sobol(d=6, scramble=True, seed=seed)
    unit = sampler.random(starts)
    best, converged = None, []
    log = []
    for k, u in enumerate(unit):
        p0 = lo[:6] + u * (hi[:6] - lo[:6])
        d0 = np.exp(p0[:4])
        seedl = with_consistent_interfaces(
            MultiZoneLayout(*d0, L1=p0[4], L2=p0[5]), bc, continuity)
        v0 = np.concatenate([p0, [
            seedl.a_int1 * math.cos(seedl.phi_int1), -seedl.a_int1 * math.sin(seedl.phi_int1),
            seedl.a_int2 * math.cos(seedl.phi_int2), -seedl.a_int2 * math.sin(seedl.phi_int2)]])
        v0 = np.clip(v0, lo + 1e-12, hi - 1e-12)
        try:
            sol = least_squares(fun, v0, bounds=(lo, hi), method="trf",
                                ftol=1e-14, xtol=1e-14, gtol=1e-14, max_nfev=400)
        except (ValueError, FloatingPointError) as e:
            debug(context, f"[ANALYTIC] start {k} failed: {e}", level="DEBUG")
            continue
        norm = float(np.linalg.norm(sol.fun))
        cand = _unpack(sol.x)
        log.append({"start": k, "residual_norm": norm, "nfev": int(sol.nfev)})
        if best is None or norm < best[0]:
            best = (norm, cand)
        if norm < tol:
            converged.append((norm, cand))

    if best is None:
        raise NoConvergence(None, float("inf"))
    if converged:
        norm, layout = min(converged, key=lambda c: (_heterogeneity(c[1]), c[0]))
        debug(context, f"[ANALYTIC] ✅ initial guess converged ({len(converged)}/{starts} starts), "
                       f"|r| = {norm:.2e}")
        return InitialGuess(layout, norm, True, starts, len(converged), log)

    guess = InitialGuess(best[1], best[0], False, starts, 0, log)
    debug(context, f"[ANALYTIC] ⚠️ no start converged, best |r| = {best[0]:.3e}", level="WARNING")
    if raise_on_failure:
        raise NoConvergence(guess, best[0])
    return guess


def homogeneous_initial_guess(target: HarmonicFeature, distance, L, bc: HarmonicBoundary, bounds=None):
    """One-parameter fit of d on the finite-aquifer solution (sea at distance 0,
    fixed end at L), matching amplitude and delay in normalised units."""
    d_lo, d_hi = bounds or default_d_bounds()
    if not 0 <= distance <= L:
        raise InvalidParameter(f"distance {distance} outside [0, {L}]")

    unit_bc = HarmonicBoundary(1.0, bc.omega)

    def objective(log_d):
        resp = finite_aquifer_response(L - distance, math.exp(log_d), L, unit_bc)
        amp_err = (resp.amplitude - target.relative_amplitude) / max(target.relative_amplitude, 1e-12)
        lag = (resp.delay - target.delay_s) / bc.period
        return amp_err ** 2 + (lag - math.floor(lag + 0.5)) ** 2

    # coarse scan first, the objective is multimodal through the delay wrap
    grid = np.linspace(math.log(d_lo), math.log(d_hi), 61)
    k = int(np.argmin([objective(g) for g in grid]))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    sol = minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": 1e-8})
    return math.exp(sol.x)
