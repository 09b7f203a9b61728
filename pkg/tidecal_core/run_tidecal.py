"""
tidecal command-line runner.

Subcommands: analytic, features, simulate, stability, calibrate, synth,
sensitivity, watch. Exit codes: 0 success, 1 halted by a data/solver error,
2 configuration error.
"""

import argparse
import json
import math
import os
import sys
from datetime import timezone

from dateutil import parser as dateparser
from dotenv import load_dotenv

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core import analytic
from tidecal_core.calibrate import CalibrationProblem, calibrate, land_boundary, used_q
from tidecal_core.dike_model import default_model, load_model
from tidecal_core.errors import ModelConfigError, TidecalHalt, TooShort
from tidecal_core.flow_solver import simulate
from tidecal_core.live_watch import load_watch_config, run_watch
from tidecal_core.sensitivity import analytic_profile_sweep, numerical_profile_sweep, plot_sweep
from tidecal_core.sensor_signal import extract_features, read_sensor_csv, write_sensor_csv
from tidecal_core.snapshots import read_snapshot_vtk, write_snapshot_vtk
from tidecal_core.stability import stability_field
from tidecal_core.synthetic_sensors import generate_synthetic_sensors, synthetic_tide
from tidecal_core.utils import atomic_write_text, debug, write_json

TIDE = TIDAL_SHEET["tide"]
SOLVER = TIDAL_SHEET["solver"]


# --- argument helpers -------------------------------------------------------
def parse_time(text):
    """Epoch seconds or ISO-8601 (naive read as UTC) -> epoch seconds."""
    if text is None:
        return None
    try:
        return float(text)
    except ValueError:
        pass
    ts = dateparser.isoparse(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.timestamp()


def parse_positions(text):
    """'a,b,c' list or 'start:stop:step' range (stop included)."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + k * step for k in range(n)]
    return [float(v) for v in text.split(",") if v.strip()]


def _model(args):
    if getattr(args, "model", None):
        model = load_model(args.model)
    else:
        model = default_model()
    if getattr(args, "temperature", None) is not None:
        model = model.with_temperature(args.temperature)
    return model


def _emit(text, out):
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _land(args, tide):
    if getattr(args, "land", None):
        return read_sensor_csv(args.land)
    if getattr(args, "q", None) is not None:
        return land_boundary(tide, args.q)
    return None


def _calibration_land(args, tide, context):
    """Land level for calibration; without --land or --q, the configured
    seasonal q is applied to the tide."""
    land = _land(args, tide)
    if land is not None:
        return land
    q = used_q(0.5 * (tide.t_start + tide.t_end))
    try:
        land = land_boundary(tide, q)
    except TooShort as e:
        debug(context, f"[CAL] ⚠️ land level left at 0: {e}", level="WARNING")
        return None
    debug(context, f"[CAL] land level from q={q} (configured seasonal value)")
    return land


# --- subcommands ---------------------------------------------------------------
def cmd_analytic(args, context):
    xs = parse_positions(args.x)
    if args.mode == "q":
        rows = [(x, analytic.attenuation_q(x, args.d, args.period_s or TIDE["slow_period_s"])) for x in xs]
        _emit("x,q\n" + "".join(f"{x!r},{q!r}\n" for x, q in rows), args.out)
        return 0
    bc = analytic.HarmonicBoundary.from_period(args.amplitude, args.period_s or TIDE["period_s"])
    if args.mode == "semi":
        frame = analytic.semi_infinite_profile(xs, args.d, bc)
    else:
        if args.L is None:
            raise ModelConfigError("--L is required for --mode finite")
        frame = analytic.finite_aquifer_profile(xs, args.d, args.L, bc)
    _emit(frame.to_csv(index=False, lineterminator="\n"), args.out)
    return 0


def cmd_features(args, context):
    pressure = read_sensor_csv(args.pressure)
    tide = read_sensor_csv(args.tide)
    air = read_sensor_csv(args.air) if args.air else None
    feat = extract_features(pressure, tide, period=args.period_s, air=air, smooth=args.smooth, context=context)
    _emit(json.dumps(feat.to_dict(), indent=2) + "\n", args.out)
    return 0


def cmd_simulate(args, context):
    model = _model(args)
    tide = read_sensor_csv(args.tide)
    land = _land(args, tide)
    t_span = None
    if args.t0 is not None or args.t1 is not None:
        t_span = (parse_time(args.t0) if args.t0 else tide.t_start, parse_time(args.t1) if args.t1 else tide.t_end)
    result = simulate(model, tide, land, t_span=t_span, dt=args.dt, mode=args.mode,
                      snapshots=args.snapshots, context=context)
    os.makedirs(args.out, exist_ok=True)
    for sid, series in result.probes.items():
        write_sensor_csv(os.path.join(args.out, f"{sid}.csv"), series)
    for k, (t, grid) in enumerate(result.snapshots):
        write_snapshot_vtk(os.path.join(args.out, f"snapshot_{k:03d}.vtk"), t, result.mesh, grid)
    write_json(os.path.join(args.out, "run.json"), {
        "mode": result.mode,
        "cells": result.mesh.n_cells,
        "steps": len(result.reports),
        "dt_halvings": result.halvings,
        "max_mass_balance_error": result.max_mass_balance_error,
        "snapshots": len(result.snapshots),
    })
    return 0


def cmd_stability(args, context):
    model = _model(args)
    snapshot = read_snapshot_vtk(args.pressure_snapshot)
    phi = math.radians(args.phi) if args.phi is not None else None
    frame = stability_field(model, snapshot, c=args.c, phi=phi, context=context)
    _emit(frame[["x", "y", "F_Pa", "flagged"]].to_csv(index=False, lineterminator="\n"), args.out)
    return 0


def _targets(model, sensor_dir, tide, window, smooth, context):
    targets, t_end = {}, tide.t_end
    series = {}
    for s in model.sensors:
        path = os.path.join(sensor_dir, f"{s.id}.csv")
        if os.path.exists(path):
            series[s.id] = read_sensor_csv(path)
            t_end = min(t_end, series[s.id].t_end)
    if not series:
        raise ModelConfigError(f"no sensor file in {sensor_dir} matches a model sensor")
    t0 = t_end - window
    for sid, s in series.items():
        targets[sid] = extract_features(s.window(t0, t_end), tide.window(t0, t_end), smooth=smooth,
                                        context=context)
    return targets, (t0, t_end)


def cmd_calibrate(args, context):
    model = _model(args)
    if args.dx or args.dy:
        model = model.with_grid(args.dx or model.dx, args.dy or model.dy)
    tide = read_sensor_csv(args.tide)
    window = args.window_hours * 3600.0
    targets, span = _targets(model, args.sensors, tide, window, args.smooth, context)
    problem = CalibrationProblem(model, targets, tide, land=_calibration_land(args, tide, context),
                                 training_window=span, homogeneous=args.homogeneous, mode=args.mode, dt=args.dt)
    result = calibrate(problem, budget=args.budget, workers=args.workers, start=args.start, context=context)
    payload = result.to_dict()
    payload["targets"] = {sid: f.to_dict() for sid, f in targets.items()}
    payload["training_window"] = list(span)
    write_json(args.out, payload)
    debug(context, f"📁 calibration written to {args.out}")
    result.raise_for_status()
    return 0


def cmd_synth(args, context):
    model = _model(args)
    if args.tide:
        tide = read_sensor_csv(args.tide)
    else:
        tide = synthetic_tide(args.amplitude_cm, TIDE["period_s"], 0.0, args.periods * TIDE["period_s"],
                              args.sample_dt)
    generate_synthetic_sensors(model, tide, args.out, args.noise_mbar, args.seed, land=_land(args, tide),
                               mode=args.mode, dt=args.dt, sample_dt=args.sample_dt, context=context)
    return 0


def cmd_sensitivity(args, context):
    ds = [float(v) for v in args.d.split(",")]
    xs = parse_positions(args.x)
    if args.analytic_length:
        frame = analytic_profile_sweep(ds, xs, args.analytic_length)
    else:
        model = _model(args)
        tide = read_sensor_csv(args.tide) if args.tide else synthetic_tide(
            100.0, TIDE["period_s"], 0.0, (SOLVER["spinup_periods"] + 2) * TIDE["period_s"], 600.0)
        frame = numerical_profile_sweep(model, ds, args.y, xs, tide, _land(args, tide), mode=args.mode,
                                        dt=args.dt, context=context)
    _emit(frame.to_csv(index=False, lineterminator="\n"), args.out)
    if args.plot:
        plot_sweep(frame, args.plot)
    return 0


def cmd_watch(args, context):
    run_watch(load_watch_config(args.config), context=context)
    return 0


# --- parser ---------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="tidecal", description="Tidal dike porous-flow simulation and calibration")
    p.add_argument("--diag", action="store_true", help="Keep a debug trace in the run context")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analytic", help="1D closed-form profiles")
    a.add_argument("--mode", choices=("semi", "finite", "q"), default="semi")
    a.add_argument("--d", type=float, required=True, help="diffusivity [m²/s]")
    a.add_argument("--L", type=float, help="aquifer length [m] (finite mode)")
    a.add_argument("--x", required=True, help="positions: 'a,b,c' or 'start:stop:step'")
    a.add_argument("--period-s", type=float)
    a.add_argument("--amplitude", type=float, default=1.0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analytic)

    f = sub.add_parser("features", help="relative amplitude and delay of a sensor series")
    f.add_argument("--pressure", required=True)
    f.add_argument("--tide", required=True)
    f.add_argument("--period-s", type=float, default=TIDE["period_s"])
    f.add_argument("--air")
    f.add_argument("--smooth", action="store_true")
    f.add_argument("--out")
    f.set_defaults(func=cmd_features)

    s = sub.add_parser("simulate", help="transient 2D flow run")
    s.add_argument("--model")
    s.add_argument("--tide", required=True)
    s.add_argument("--land")
    s.add_argument("--q", type=float, help="land level as q times the one-day tide average")
    s.add_argument("--t0")
    s.add_argument("--t1")
    s.add_argument("--dt", type=float, default=SOLVER["default_dt_s"])
    s.add_argument("--mode", choices=("richards", "saturated"), default="richards")
    s.add_argument("--snapshots", type=int, default=0)
    s.add_argument("--temperature", type=float, help="water temperature [°C]")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    st = sub.add_parser("stability", help="Drucker-Prager check of a pressure snapshot")
    st.add_argument("--model")
    st.add_argument("--pressure-snapshot", required=True)
    st.add_argument("--c", type=float, help="cohesion [Pa]")
    st.add_argument("--phi", type=float, help="friction angle [deg]")
    st.add_argument("--out")
    st.set_defaults(func=cmd_stability)

    c = sub.add_parser("calibrate", help="fit zone diffusivities to sensor features")
    c.add_argument("--model")
    c.add_argument("--tide", required=True)
    c.add_argument("--sensors", required=True, help="directory holding <sensor_id>.csv files")
    c.add_argument("--land")
    c.add_argument("--q", type=float)
    c.add_argument("--budget", type=int, default=200)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--window-hours", type=float, default=TIDAL_SHEET["calibration"]["training_window_s"] / 3600)
    c.add_argument("--start", choices=("analytic", "midpoint"), default="analytic")
    c.add_argument("--homogeneous", action="store_true")
    c.add_argument("--smooth", action="store_true")
    c.add_argument("--mode", choices=("richards", "saturated"), default="saturated")
    c.add_argument("--dt", type=float, default=SOLVER["default_dt_s"])
    c.add_argument("--dx", type=float)
    c.add_argument("--dy", type=float)
    c.add_argument("--temperature", type=float)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    y = sub.add_parser("synth", help="synthetic sensor files from a model run")
    y.add_argument("--model")
    y.add_argument("--tide", help="tide CSV; a harmonic tide is generated when omitted")
    y.add_argument("--amplitude-cm", type=float, default=100.0)
    y.add_argument("--periods", type=float, default=10.0)
    y.add_argument("--sample-dt", type=float, default=600.0)
    y.add_argument("--land")
    y.add_argument("--q", type=float)
    y.add_argument("--noise-mbar", type=float, default=0.0)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--mode", choices=("richards", "saturated"), default="saturated")
    y.add_argument("--dt", type=float, default=SOLVER["default_dt_s"])
    y.add_argument("--temperature", type=float)
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_synth)

    n = sub.add_parser("sensitivity", help="amplitude/delay sweeps over diffusivity")
    n.add_argument("--model")
    n.add_argument("--d", default="10,100,1000", help="comma-separated diffusivities [m²/s]")
    n.add_argument("--y", type=float, default=-5.5)
    n.add_argument("--x", default="-30:90:5")
    n.add_argument("--tide")
    n.add_argument("--land")
    n.add_argument("--q", type=float)
    n.add_argument("--analytic-length", type=float, help="use the 1D finite aquifer of this length instead")
    n.add_argument("--mode", choices=("richards", "saturated"), default="saturated")
    n.add_argument("--dt", type=float, default=SOLVER["default_dt_s"])
    n.add_argument("--out")
    n.add_argument("--plot", help="PNG path")
    n.set_defaults(func=cmd_sensitivity)

    w = sub.add_parser("watch", help="watch-directory live mode")
    w.add_argument("--config", required=True)
    w.set_defaults(func=cmd_watch)
    return p


def main(argv=None):
    load_dotenv()
    args = build_parser().parse_args(argv)
    context = {"debug_trace": []} if args.diag else None
    try:
        return args.func(args, context)
    except ModelConfigError as e:
        debug(context, f"❌ configuration error: {e}", level="ERROR")
        return 2
    except OSError as e:
        debug(context, f"❌ cannot read input: {e}", level="ERROR")
        return 2
    except TidecalHalt as e:
        debug(context, f"❌ {args.command} halted: {e}", level="ERROR")
        return 1


# --- Safe exit wrapper ------------------------------------------------------
if __name__ == "__main__":
    sys.exit(main())
