# tidecal_core/synthetic_sensors.py
"""
Synthetic tide and sensor files for twins, demos and tests.
Output files use the sensor CSV format: tide in cm, sensors in mbar.
"""

import math
import os

import numpy as np

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.dike_model import DikeModel
from tidecal_core.errors import InvalidParameter
from tidecal_core.flow_solver import simulate
from tidecal_core.sensor_signal import write_sensor_csv
from tidecal_core.units import TimeSeries, Unit
from tidecal_core.utils import debug, write_json

TIDE = TIDAL_SHEET["tide"]
TIDE_FILE = "tide.csv"


def synthetic_tide(amplitude_cm=100.0, period_s=TIDE["period_s"], t0=0.0, t1=None, dt=600.0,
                   mean_cm=0.0, phase=0.0, slow_amplitude_cm=0.0, slow_period_s=TIDE["slow_period_s"]):
    """Harmonic tide h(t) = mean + A·sin(ωt + φ) [+ slow constituent], in cm.

    t1 defaults to ten tidal periods after t0.
    """
    if amplitude_cm < 0 or slow_amplitude_cm < 0:
        raise InvalidParameter("tide amplitudes must be >= 0")
    if not (period_s > 0 and dt > 0 and slow_period_s > 0):
        raise InvalidParameter("period, slow period and dt must be > 0")
    t1 = t0 + 10 * period_s if t1 is None else t1
    if not t1 > t0:
        raise InvalidParameter(f"empty tide span ({t0}, {t1})")
    n = int(math.floor((t1 - t0) / dt + 1e-9)) + 1
    t = t0 + dt * np.arange(n)
    h = (mean_cm + amplitude_cm * np.sin(2 * math.pi * (t - t0) / period_s + phase)
         + slow_amplitude_cm * np.sin(2 * math.pi * (t - t0) / slow_period_s))
    return TimeSeries(t, h, Unit.CM_WATER, {"source": "synthetic"})


def generate_synthetic_sensors(model: DikeModel, tide: TimeSeries, out_dir, noise_mbar=0.0, seed=0,
                               land: TimeSeries = None, mode="saturated", dt=TIDAL_SHEET["solver"]["default_dt_s"],
                               sample_dt=None, context=None):
    """Simulate the model, add Gaussian noise [mbar] and write one CSV per sensor.

    Returns {sensor_id: path}. The tide is written next to them as tide.csv,
    and truth.json records the zone dμ values and the noise settings. For a
    fixed seed the files are byte-identical between runs.
    """
    if noise_mbar < 0:
        raise InvalidParameter(f"noise must be >= 0 (got {noise_mbar})")
    os.makedirs(out_dir, exist_ok=True)
    result = simulate(model, tide, land, dt=dt, mode=mode, context=context)
    rng = np.random.default_rng(seed)

    paths = {}
    for sid in result.probes:
        probe = result.probes[sid].to_unit(Unit.MBAR, model.fluid)
        if sample_dt:
            t = probe.t_start + sample_dt * np.arange(int(probe.span // sample_dt) + 1)
            probe = TimeSeries(t, probe.interp(t), Unit.MBAR)
        values = probe.values + (rng.normal(0.0, noise_mbar, len(probe)) if noise_mbar > 0 else 0.0)
        path = os.path.join(out_dir, f"{sid}.csv")
        write_sensor_csv(path, probe.with_values(values))
        paths[sid] = path

    write_sensor_csv(os.path.join(out_dir, TIDE_FILE), tide.to_unit(Unit.CM_WATER, model.fluid))
    write_json(os.path.join(out_dir, "truth.json"), {
        "zones": [{"name": z.name, "d_mu_Pa_m2": z.d_mu} for z in model.zones],
        "viscosity_Pa_s": model.viscosity,
        "noise_mbar": noise_mbar,
        "seed": seed,
        "mode": mode,
    })
    debug(context, f"[SYNTH] ✅ {len(paths)} sensor file(s) written to {out_dir} "
                   f"(noise {noise_mbar:g} mbar, seed {seed})")
    return paths
