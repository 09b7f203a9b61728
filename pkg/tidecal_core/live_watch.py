"""
live_watch.py — watch-directory mode.

Sea-level files dropped into the input directory are ingested in name order,
the flow model is advanced on a fixed step grid up to the newest sample, and
one virtual-sensor CSV per model sensor is extended in the output directory.

Input files:   sealevel_<epoch-seconds>.csv, rows "ISO8601,<level_cm>"
Outputs:       virtual_<sensor>.csv (sensor CSV format, Pa), status.json
Warm start:    JSON state (simulator fields, tide history, file ledger),
               tagged with the state schema from version_manifest.yaml

Processed inputs move to <input>/done/, refused ones to <input>/rejected/.
"""

from __future__ import annotations

import json
import math
import os
import re
import shutil
import signal
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from watchdog.events import FileSystemEventHandler
from watchdog.observers import Observer

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.calibrate import land_boundary
from tidecal_core.dike_model import load_model
from tidecal_core.errors import ClockRegression, MalformedInput, ModelConfigError, TidecalHalt
from tidecal_core.flow_solver import FlowSimulator
from tidecal_core.sensor_signal import CSV_HEADER, iso_utc, parse_iso_times
from tidecal_core.units import TimeSeries, Unit
from tidecal_core.utils import atomic_write_text, debug, write_json

LIVE = TIDAL_SHEET["live"]
INPUT_PATTERN = re.compile(r"^sealevel_(\d+)\.csv$")
DONE_DIR, REJECTED_DIR = "done", "rejected"
STATUS_FILE = "status.json"
MANIFEST = Path(__file__).with_name("version_manifest.yaml")


def state_schema():
    with open(MANIFEST, encoding="utf-8") as f:
        return yaml.safe_load(f)["state_schema"]


# ============================================================
# CONFIG
# ============================================================
class WatchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    input_dir: str
    output_dir: str
    model_file: str
    poll_interval_s: float = Field(LIVE["poll_interval_s"], gt=0)
    step_s: float = Field(LIVE["step_s"], gt=0)
    max_gap_s: float = Field(LIVE["max_gap_s"], gt=0)
    state_path: Optional[str] = None
    land_q: float = Field(TIDAL_SHEET["tide"]["q_used"]["august"], ge=0, le=1)
    land_window_s: float = Field(TIDAL_SHEET["tide"]["land_window_s"], gt=0)
    mode: str = Field("saturated", pattern="^(saturated|richards)$")
    temperature_c: Optional[float] = None

    @model_validator(mode="after")
    def _distinct_dirs(self):
        if os.path.abspath(self.input_dir) == os.path.abspath(self.output_dir):
            raise ValueError("input_dir and output_dir must differ")
        return self

    @property
    def state_file(self):
        return self.state_path or os.path.join(self.output_dir, "state.json")


def load_watch_config(path) -> WatchConfig:
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        cfg = WatchConfig.model_validate(data)
    except (OSError, yaml.YAMLError, ValidationError) as e:
        raise ModelConfigError(f"invalid watch config {path}: {e}") from e
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    return cfg.model_copy(update={"input_dir": resolve(cfg.input_dir), "output_dir": resolve(cfg.output_dir),
                                  "model_file": resolve(cfg.model_file), "state_path": resolve(cfg.state_path)})


def load_watch_model(cfg: WatchConfig):
    model = load_model(cfg.model_file)
    if cfg.temperature_c is not None:
        model = model.with_temperature(cfg.temperature_c)
    return model


# ============================================================
# STATE
# ============================================================
@dataclass
class WatchState:
    committed_t: Optional[float] = None
    first_sample_t: Optional[float] = None
    hist_t: list = field(default_factory=list)
    hist_cm: list = field(default_factory=list)
    processed: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    spinup_intervals: list = field(default_factory=list)
    simulator_state: Optional[dict] = None
    simulator: Optional[FlowSimulator] = field(default=None, repr=False, compare=False)

    @property
    def newest_sample_t(self):
        return self.hist_t[-1] if self.hist_t else None

    def to_dict(self):
        if self.simulator is not None and self.simulator.p is not None:
            self.simulator_state = self.simulator.get_state()
        return {
            "schema": state_schema(),
            "committed_t": self.committed_t,
            "first_sample_t": self.first_sample_t,
            "tide": {"t": list(self.hist_t), "level_cm": list(self.hist_cm)},
            "processed": list(self.processed),
            "rejected": list(self.rejected),
            "spinup_intervals": [list(iv) for iv in self.spinup_intervals],
            "simulator": self.simulator_state,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("schema") != state_schema():
            raise ModelConfigError(f"warm-start state has schema {data.get('schema')!r}, "
                                   f"expected {state_schema()!r}")
        return cls(
            committed_t=data.get("committed_t"),
            first_sample_t=data.get("first_sample_t"),
            hist_t=[float(v) for v in data["tide"]["t"]],
            hist_cm=[float(v) for v in data["tide"]["level_cm"]],
            processed=list(data.get("processed", [])),
            rejected=list(data.get("rejected", [])),
            spinup_intervals=[tuple(iv) for iv in data.get("spinup_intervals", [])],
            simulator_state=data.get("simulator"),
        )


def save_state(cfg: WatchConfig, state: WatchState):
    write_json(cfg.state_file, state.to_dict())


def load_state(cfg: WatchConfig) -> WatchState:
    """Warm-start state from disk, or a fresh one when none exists."""
    if not os.path.exists(cfg.state_file):
        return WatchState()
    try:
        with open(cfg.state_file, encoding="utf-8") as f:
            return WatchState.from_dict(json.load(f))
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ModelConfigError(f"unreadable warm-start state {cfg.state_file}: {e}") from e


# ============================================================
# INPUT FILES
# ============================================================
def parse_sealevel_file(path):
    """(epoch seconds, level cm) arrays from one input file."""
    name = os.path.basename(path)
    if not INPUT_PATTERN.match(name):
        raise MalformedInput(name, "file name must be sealevel_<epoch-seconds>.csv")
    try:
        with open(path, encoding="utf-8") as f:
            lines = [ln.strip() for ln in f.read().splitlines() if ln.strip()]
    except (OSError, UnicodeDecodeError) as e:
        raise MalformedInput(name, str(e)) from e
    if not lines:
        raise MalformedInput(name, "no samples")
    parts = [ln.split(",") for ln in lines]
    if any(len(p) != 2 for p in parts):
        raise MalformedInput(name, "rows must be 'ISO8601,<level_cm>'")
    t = parse_iso_times([p[0] for p in parts])
    try:
        h = np.array([float(p[1]) for p in parts])
    except ValueError as e:
        raise MalformedInput(name, str(e)) from e
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(h))):
        raise MalformedInput(name, "unparsable time or level")
    if np.any(np.diff(t) <= 0):
        raise MalformedInput(name, "timestamps must increase")
    return t, h


def _move(path, folder):
    dest_dir = os.path.join(os.path.dirname(path), folder)
    os.makedirs(dest_dir, exist_ok=True)
    dest = os.path.join(dest_dir, os.path.basename(path))
    if os.path.exists(dest):
        base, ext = os.path.splitext(dest)
        dest = f"{base}.{int(time.time() * 1e6)}{ext}"
    shutil.move(path, dest)
    return dest


def pending_inputs(cfg: WatchConfig):
    """Regular files waiting in the input directory, in name order."""
    names = []
    for entry in os.scandir(cfg.input_dir):
        if entry.is_file() and not entry.name.startswith(".") and not entry.name.endswith(".tmp"):
            names.append(entry.name)
    return sorted(names)


# ============================================================
# OUTPUTS
# ============================================================
def output_path(cfg: WatchConfig, sensor_id):
    return os.path.join(cfg.output_dir, f"virtual_{sensor_id}.csv")


def _last_row_time(path):
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f.read().split("\n") if ln]
    if len(lines) < 2:
        return None
    return float(parse_iso_times([lines[-1].split(",")[0]])[0])


def append_rows(path, times, values):
    """Append Pa rows; rows not after the file's last row are dropped. Returns rows written."""
    last = _last_row_time(path)
    keep = [(t, v) for t, v in zip(times, values) if last is None or t > last + 1e-6]
    if not keep:
        return 0
    existing = CSV_HEADER + "\n"
    if os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            existing = f.read()
    rows = "".join(f"{iso_utc(t)},{float(v)!r},{Unit.PA.value}\n" for t, v in keep)
    atomic_write_text(path, existing + rows)
    return len(keep)


def write_status(cfg: WatchConfig, state: WatchState, spinup_now):
    write_json(os.path.join(cfg.output_dir, STATUS_FILE), {
        "committed_t": state.committed_t,
        "committed_iso": iso_utc(state.committed_t) if state.committed_t is not None else None,
        "spinup": bool(spinup_now),
        "spinup_intervals": [list(iv) for iv in state.spinup_intervals],
        "processed": len(state.processed),
        "rejected": len(state.rejected),
    })


# ============================================================
# BOUNDARY LEVELS
# ============================================================
def _sea_level(state, t):
    return float(np.interp(t, state.hist_t, state.hist_cm)) / 100.0


def _in_long_gap(state, t, max_gap):
    i = int(np.searchsorted(state.hist_t, t))
    if i <= 0 or i >= len(state.hist_t):
        return False
    return state.hist_t[i] - state.hist_t[i - 1] > max_gap


def _land_level(cfg, state, t):
    """Trailing-window land level at t [m] and whether it is still spinning up."""
    t_arr = np.asarray(state.hist_t)
    h_arr = np.asarray(state.hist_cm)
    upto = t_arr <= t + 1e-9
    if not upto.any():
        return cfg.land_q * h_arr[0] / 100.0, True
    spinup = t - state.first_sample_t < cfg.land_window_s
    if spinup:
        return cfg.land_q * float(h_arr[upto].mean()) / 100.0, True
    past = TimeSeries(t_arr[upto], h_arr[upto], Unit.CM_WATER)
    land = land_boundary(past, cfg.land_q, cfg.land_window_s, center=False)
    return float(land.values[-1]) / 100.0, False


def _mark_spinup(state, t, step):
    if state.spinup_intervals and abs(state.spinup_intervals[-1][1] - (t - step)) < 1e-6:
        state.spinup_intervals[-1] = (state.spinup_intervals[-1][0], t)
    else:
        state.spinup_intervals.append((t - step, t))


def _trim_history(cfg, state):
    if state.committed_t is None:
        return
    keep_from = state.committed_t - cfg.land_window_s - cfg.max_gap_s - 2 * cfg.step_s
    k = int(np.searchsorted(state.hist_t, keep_from))
    # always keep one sample at or before the cut for interpolation
    k = max(k - 1, 0)
    del state.hist_t[:k]
    del state.hist_cm[:k]


# ============================================================
# INGEST
# ============================================================
def _simulator(cfg, model, state, context):
    if state.simulator is not None:
        return state.simulator
    sim = FlowSimulator(model, mode=cfg.mode, context=context)
    if state.simulator_state is not None:
        sim.set_state(state.simulator_state)
    state.simulator = sim
    return sim


def _accept_file(cfg, state, name, context):
    path = os.path.join(cfg.input_dir, name)
    if name in state.processed:
        done_copy = os.path.join(cfg.input_dir, DONE_DIR, name)
        if not os.path.exists(done_copy):
            # processed before an interrupted shutdown; only the move is missing
            _move(path, DONE_DIR)
            return False
        raise MalformedInput(name, "duplicate of an already processed file")
    t, h = parse_sealevel_file(path)
    newest = state.newest_sample_t
    if newest is not None and t[0] <= newest:
        raise ClockRegression(f"{name}: first sample {iso_utc(t[0])} is not after {iso_utc(newest)}")
    if state.first_sample_t is None:
        state.first_sample_t = float(t[0])
    state.hist_t.extend(float(v) for v in t)
    state.hist_cm.extend(float(v) for v in h)
    state.processed.append(name)
    return True


def _snapshot(state):
    """Everything an ingest may change, for rollback when the model run fails."""
    sim = state.simulator
    return {
        "committed_t": state.committed_t,
        "first_sample_t": state.first_sample_t,
        "hist_t": list(state.hist_t),
        "hist_cm": list(state.hist_cm),
        "processed": list(state.processed),
        "spinup_intervals": list(state.spinup_intervals),
        "simulator_state": sim.get_state() if sim is not None and sim.p is not None else state.simulator_state,
        "simulator": sim,
    }


def _restore(state, snap):
    for key in ("committed_t", "first_sample_t", "hist_t", "hist_cm", "processed", "spinup_intervals"):
        setattr(state, key, snap[key])
    state.simulator_state = snap["simulator_state"]
    state.simulator = snap["simulator"]
    if state.simulator is not None and state.simulator_state is not None:
        state.simulator.set_state(state.simulator_state)


def ingest_once(cfg: WatchConfig, state: WatchState, model=None, context=None):
    """One scan of the input directory; returns (state, {sensor_id: rows written}).

    A model failure while stepping rolls the state back to before the scan and
    leaves the accepted files in the input directory for the next poll.
    """
    model = model or load_watch_model(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)

    snap = _snapshot(state)
    accepted = []
    for name in pending_inputs(cfg):
        try:
            if _accept_file(cfg, state, name, context):
                accepted.append(name)
        except (MalformedInput, ClockRegression) as e:
            state.rejected.append(name)
            _move(os.path.join(cfg.input_dir, name), REJECTED_DIR)
            debug(context, f"[WATCH] ⚠️ rejected {name}: {e}", level="WARNING")

    written = {}
    if not accepted:
        return state, written

    try:
        sim = _simulator(cfg, model, state, context)
        step = cfg.step_s
        if state.committed_t is None:
            t0 = state.first_sample_t - step
            land0, _ = _land_level(cfg, state, t0)
            sim.initialize(t0, _sea_level(state, t0), land0)
            state.committed_t = t0

        times, rows = [], {sid: [] for sid in sim.sensor_ids}
        spinup_now = False
        n_steps = int(math.floor((state.newest_sample_t - state.committed_t) / step + 1e-9))
        for _ in range(n_steps):
            t_new = state.committed_t + step
            land_now, spinup_now = _land_level(cfg, state, t_new)
            spinup_now = spinup_now or _in_long_gap(state, t_new, cfg.max_gap_s)
            sim.step(step, lambda s: _sea_level(state, s), lambda s, lv=land_now: lv)
            state.committed_t = sim.t
            times.append(sim.t)
            for sid, v in sim.probe().items():
                rows[sid].append(v)
            if spinup_now:
                _mark_spinup(state, sim.t, step)
    except TidecalHalt:
        _restore(state, snap)
        debug(context, f"[WATCH] ⚠️ model run failed; {len(accepted)} file(s) left for the next poll",
              level="WARNING")
        raise

    for sid in sim.sensor_ids:
        written[sid] = append_rows(output_path(cfg, sid), times, rows[sid])
    _trim_history(cfg, state)
    save_state(cfg, state)
    write_status(cfg, state, spinup_now)
    for name in accepted:
        _move(os.path.join(cfg.input_dir, name), DONE_DIR)
    debug(context, f"[WATCH] ✅ {len(accepted)} file(s) ingested, {len(times)} step(s) to "
                   f"{iso_utc(state.committed_t)}{' (spin-up)' if spinup_now else ''}")
    return state, written


# ============================================================
# LOOP
# ============================================================
def _wake_handler(wake):
    class _Wake(FileSystemEventHandler):
        def on_created(self, event):
            if not event.is_directory:
                wake.set()

        def on_moved(self, event):
            if not event.is_directory:
                wake.set()

    return _Wake()


def run_watch(cfg: WatchConfig, stop_event: threading.Event = None, max_polls=None, context=None):
    """Poll loop: ingest every poll interval (or sooner on a file event) until stopped.

    Config and model errors abort before the loop; per-file problems never
    abort it. The warm-start state is saved on every ingest and on shutdown.
    Returns the number of polls done.
    """
    model = load_watch_model(cfg)
    if not os.path.isdir(cfg.input_dir):
        raise ModelConfigError(f"input directory {cfg.input_dir} does not exist")
    os.makedirs(cfg.output_dir, exist_ok=True)
    state = load_state(cfg)

    stop = stop_event or threading.Event()
    wake = threading.Event()
    previous = {}
    if threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGINT, signal.SIGTERM):
            previous[sig] = signal.signal(sig, lambda *_: (stop.set(), wake.set()))

    observer = Observer()
    observer.schedule(_wake_handler(wake), cfg.input_dir, recursive=False)
    observer.start()
    debug(context, f"[WATCH] watching {cfg.input_dir} every {cfg.poll_interval_s:g} s")
    polls = 0
    try:
        while not stop.is_set():
            try:
                state, _ = ingest_once(cfg, state, model, context)
            except TidecalHalt as e:
                debug(context, f"[WATCH] ⚠️ ingest failed: {e}", level="ERROR")
            polls += 1
            if max_polls is not None and polls >= max_polls:
                break
            wake.wait(cfg.poll_interval_s)
            wake.clear()
    finally:
        observer.stop()
        observer.join()
        for sig, handler in previous.items():
            signal.signal(sig, handler)
        if state.committed_t is not None:
            save_state(cfg, state)
        debug(context, f"[WATCH] stopped after {polls} poll(s)")
    return polls
