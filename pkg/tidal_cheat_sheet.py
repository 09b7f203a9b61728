#!/usr/bin/env python3
"""
tidal_cheat_sheet.py — Tidal Dike Reference v1.0
Static constants, defaults and tolerances shared by every tidecal module.
Values are SI unless the key says otherwise.
"""

# --- Global Reference Dictionary ---
TIDAL_SHEET = {}

TIDAL_SHEET["meta"] = {
    "framework": "tidecal",
    "version": "v1.0",
    "last_updated": "2026-10-17",
    "source": "monitored cross-section 1 + van Genuchten sand reference values",
}

# === Fluid ===
TIDAL_SHEET["fluid"] = {
    "rho": 1000.0,          # kg/m³
    "g": 9.81,              # m/s²
    "temperature_c": 20.0,
}

# Step-function viscosity. Rows are (lower temperature bound °C, μ Pa·s);
# the first row whose bound is <= T wins, rows sorted by bound descending.
# Bounds sit halfway between the 20/10/0 °C reference rows.
TIDAL_SHEET["viscosity_table"] = [
    (15.0, 1.004e-3),
    (5.0, 1.307e-3),
    (float("-inf"), 1.797e-3),
]
# Seasonal reference temperatures used for the January/July ratio.
TIDAL_SHEET["season_temperature_c"] = {"january": 0.0, "july": 20.0}

# === Soil ===
TIDAL_SHEET["sand"] = {
    "a": 8.0,               # 1/m
    "n": 1.5,
    "l": 0.5,
    "theta_s": 0.43,
    "theta_r": 0.045,
    "specific_storage": 2.5e-7,   # 1/Pa, sand skeleton bulk modulus 4 MPa
}
TIDAL_SHEET["strength"] = {
    "E": 1e10,              # Pa (fixture value, stiff for sand)
    "nu": 0.3,
    "c": 0.0,               # Pa
    "phi_deg": 30.0,
    "rho_s": 2000.0,        # kg/m³, saturated bulk density
}

# === Tide ===
TIDAL_SHEET["tide"] = {
    "period_s": 44700.0,    # 12 h 25 min
    "slow_period_s": 48 * 3600.0,
    "land_window_s": 24 * 3600.0,
    "q_used": {"january": 0.15, "august": 0.25},
}

# === Geometry ===
# Symmetric trapezoid on a foundation layer, toe at (0, -0.7), crest 9 m high,
# base 60 m wide, domain x in [-30, 90]. The clay cover (slopes landward of the
# crest, polder surface) and the sea bed in front of the toe are closed; water
# enters through the inlet face and the sea-side slope, and leaves at x = 90.
TIDAL_SHEET["cross_section"] = {
    "polygon": [
        [-30.0, -8.0], [90.0, -8.0], [90.0, -0.7], [60.0, -0.7],
        [33.0, 8.3], [27.0, 8.3], [0.0, -0.7], [-30.0, -0.7],
    ],
    # edge i joins vertex i and i+1
    "boundaries": {
        "0": "wall", "1": "land", "2": "wall", "3": "wall",
        "4": "wall", "5": "sea", "6": "wall", "7": "sea",
    },
    "inlet_x": -30.0,
    "slice_split_y": -3.5,
}
TIDAL_SHEET["sensors"] = [
    {"id": "E4", "x": 50.0, "y": -5.5, "slice": "lower"},
    {"id": "E3", "x": 50.0, "y": -1.5, "slice": "upper"},
    {"id": "G2", "x": 62.0, "y": -1.3, "slice": "upper"},
]

# === Flow solver ===
TIDAL_SHEET["solver"] = {
    "dx": 1.0,
    "dy": 0.25,
    "spinup_periods": 5,
    "newton_tol": 1e-8,
    "newton_max_iter": 25,
    "max_dt_halvings": 6,
    "min_cells_per_zone": 3,
    "default_dt_s": 300.0,
}

# === Feature extraction ===
TIDAL_SHEET["smoothing"] = {
    "min_window": 7,
    "noise_factor": 1.5,
    "max_span_fraction": 1.0 / 6.0,
}
TIDAL_SHEET["live"] = {
    "poll_interval_s": 60.0,
    "step_s": 600.0,
    "max_gap_s": 2 * 3600.0,
}

# === Calibration ===
TIDAL_SHEET["calibration"] = {
    "bounds": {
        "d_mu": (1e-6, 1e-1),   # Pa·m²
        "L1": (40.0, 110.0),
        "L2": (5.0, 40.0),
    },
    "training_window_s": 48 * 3600.0,
    "sweeps": 2,
    "log_step": 0.6931471805599453,   # ln 2
    "length_step": 5.0,
    "tolerance": {"amplitude": 0.05, "delay_s": 180.0},
    "multistarts": 32,
    "root_tol": 1e-8,
}

# Calibrated values for cross-section 1 (magnitude fixture, Pa·m² and m).
TIDAL_SHEET["section1_calibrated"] = {
    "d_mu": (0.1e-3, 0.01e-3, 0.9e-3, 0.01e-3),
    "L1": 82.0,
    "L2": 13.0,
}
# Measured features, cross-section 1: (relative amplitude, delay minutes).
TIDAL_SHEET["section1_features"] = {
    "E4": (0.21, 18.0),
    "E3": (0.09, 24.0),
    "G2": (0.03, 49.0),
}


def viscosity_rows():
    """Return the viscosity table as a list (copy-safe)."""
    return list(TIDAL_SHEET["viscosity_table"])
