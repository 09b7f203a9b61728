"""
Watch-directory mode: ingest, outputs, rejection and warm restart.
"""

import json
import math
import threading

import numpy as np
import pytest
import yaml

from tidecal_core.dike_model import model_to_dict
from tidecal_core.errors import ModelConfigError, NewtonDivergence
from tidecal_core.flow_solver import FlowSimulator
from tidecal_core.live_watch import (
    WatchConfig, WatchState, ingest_once, load_state, load_watch_config, run_watch, save_state,
)
from tidecal_core.sensor_signal import CSV_HEADER, iso_utc, read_sensor_csv
from tidecal_core.units import Unit
from tidecal_core.utils import write_json

T0 = 1_700_000_400.0
STEP = 600.0
PERIOD = 44700.0


def drop(folder, t_first, n, step=STEP, name_t=None):
    """Write a sealevel_<epoch>.csv with n harmonic samples."""
    times = t_first + step * np.arange(n)
    rows = [f"{iso_utc(t)},{100.0 * math.sin(2 * math.pi * (t - T0) / PERIOD):.3f}" for t in times]
    path = folder / f"sealevel_{int(name_t or t_first)}.csv"
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def watch(tmp_path, small_strip):
    """Config with its own input/output directories and a strip model file."""
    (tmp_path / "in").mkdir()
    write_json(tmp_path / "model.json", model_to_dict(small_strip))
    cfg = WatchConfig(input_dir=str(tmp_path / "in"), output_dir=str(tmp_path / "out"),
                      model_file=str(tmp_path / "model.json"), poll_interval_s=0.05)
    return cfg


def virtual(cfg, sid="P20"):
    return read_sensor_csv(f"{cfg.output_dir}/virtual_{sid}.csv")


class TestConfig:
    def test_relative_paths_resolve_against_the_file(self, tmp_path):
        path = tmp_path / "watch.yaml"
        path.write_text(yaml.safe_dump({"input_dir": "in", "output_dir": "out", "model_file": "m.json",
                                        "step_s": 300}))
        cfg = load_watch_config(path)
        assert cfg.input_dir == str(tmp_path / "in")
        assert cfg.model_file == str(tmp_path / "m.json")
        assert cfg.step_s == 300.0
        assert cfg.state_file == str(tmp_path / "out" / "state.json")

    @pytest.mark.parametrize("doc", [
        {"input_dir": "a", "output_dir": "a", "model_file": "m.json"},
        {"input_dir": "a", "output_dir": "b", "model_file": "m.json", "step_s": 0},
        {"input_dir": "a", "output_dir": "b", "model_file": "m.json", "colour": "blue"},
        {"input_dir": "a", "output_dir": "b", "model_file": "m.json", "mode": "turbulent"},
        {"input_dir": "a", "output_dir": "b"},
    ])
    def test_invalid_config(self, tmp_path, doc):
        path = tmp_path / "watch.yaml"
        path.write_text(yaml.safe_dump(doc))
        with pytest.raises(ModelConfigError):
            load_watch_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelConfigError):
            load_watch_config(tmp_path / "nope.yaml")


class TestIngest:
    def test_empty_directory_is_a_no_op(self, watch):
        state, written = ingest_once(watch, WatchState())
        assert written == {}
        assert state.committed_t is None

    def test_one_file_one_row_per_sample(self, watch, tmp_path):
        inbox = drop(tmp_path / "in", T0, 6)
        state, written = ingest_once(watch, WatchState())
        assert written == {"P20": 6}
        out = virtual(watch)
        assert out.unit is Unit.PA
        assert out.timestamps[0] == T0
        assert out.timestamps[-1] == T0 + 5 * STEP
        assert state.committed_t == T0 + 5 * STEP
        assert not inbox.exists()
        assert (inbox.parent / "done" / inbox.name).exists()

    def test_status_reports_spinup(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 6)
        state, _ = ingest_once(watch, WatchState())
        status = json.loads((tmp_path / "out" / "status.json").read_text())
        assert status["spinup"] is True
        assert status["committed_iso"] == iso_utc(T0 + 5 * STEP)
        assert len(state.spinup_intervals) == 1

    def test_second_file_extends_outputs(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 6)
        state, _ = ingest_once(watch, WatchState())
        drop(tmp_path / "in", T0 + 6 * STEP, 6)
        state, written = ingest_once(watch, state)
        assert written == {"P20": 6}
        out = virtual(watch)
        assert len(out) == 12
        assert np.all(np.diff(out.timestamps) == STEP)

    def test_redropped_file_is_rejected(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 6)
        state, _ = ingest_once(watch, WatchState())
        drop(tmp_path / "in", T0, 6)
        state, written = ingest_once(watch, state)
        assert written == {}
        assert (tmp_path / "in" / "rejected" / f"sealevel_{int(T0)}.csv").exists()
        assert len(virtual(watch)) == 6

    def test_clock_regression_is_rejected(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 6)
        state, _ = ingest_once(watch, WatchState())
        drop(tmp_path / "in", T0 + 2 * STEP, 6, name_t=T0 + 1)
        state, written = ingest_once(watch, state)
        assert written == {}
        assert state.rejected == [f"sealevel_{int(T0) + 1}.csv"]

    @pytest.mark.parametrize("name, text", [
        ("sealevel_1.csv", "not-a-time,12.0\n"),
        ("sealevel_2.csv", "2023-11-14T22:20:00Z;12.0\n"),
        ("sealevel_3.csv", ""),
        ("readme.txt", "hello\n"),
    ])
    def test_malformed_input_is_rejected(self, watch, tmp_path, name, text):
        (tmp_path / "in" / name).write_text(text)
        state, written = ingest_once(watch, WatchState())
        assert written == {}
        assert state.rejected == [name]
        assert (tmp_path / "in" / "rejected" / name).exists()

    def test_bad_file_does_not_block_good_one(self, watch, tmp_path):
        (tmp_path / "in" / "sealevel_0.csv").write_text("garbage\n")
        drop(tmp_path / "in", T0, 6)
        state, written = ingest_once(watch, WatchState())
        assert written == {"P20": 6}
        assert state.rejected == ["sealevel_0.csv"]


class TestRestart:
    def test_batch_and_stream_agree(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 12)
        ingest_once(watch, WatchState())
        batch = virtual(watch).values

        stream_cfg = watch.model_copy(update={"input_dir": str(tmp_path / "in2"),
                                              "output_dir": str(tmp_path / "out2")})
        (tmp_path / "in2").mkdir()
        drop(tmp_path / "in2", T0, 6)
        state, _ = ingest_once(stream_cfg, WatchState())
        drop(tmp_path / "in2", T0 + 6 * STEP, 6)
        ingest_once(stream_cfg, state)
        assert virtual(stream_cfg).values == pytest.approx(batch, rel=1e-12)

    def test_warm_restart_continues_without_duplicates(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 12)
        ingest_once(watch, WatchState())
        continuous = virtual(watch).values

        cold_cfg = watch.model_copy(update={"input_dir": str(tmp_path / "in2"),
                                            "output_dir": str(tmp_path / "out2"), "state_path": None})
        (tmp_path / "in2").mkdir()
        drop(tmp_path / "in2", T0, 6)
        ingest_once(cold_cfg, WatchState())
        restored = load_state(cold_cfg)
        assert restored.committed_t == T0 + 5 * STEP
        drop(tmp_path / "in2", T0 + 6 * STEP, 6)
        ingest_once(cold_cfg, restored)
        out = virtual(cold_cfg)
        assert len(out) == 12
        assert out.values == pytest.approx(continuous, rel=1e-9)

    def test_failed_model_step_rolls_back_and_retries(self, watch, tmp_path, monkeypatch):
        drop(tmp_path / "in", T0, 15)
        ingest_once(watch, WatchState())
        expected = virtual(watch).values

        retry_cfg = watch.model_copy(update={"input_dir": str(tmp_path / "in2"),
                                             "output_dir": str(tmp_path / "out2")})
        (tmp_path / "in2").mkdir()
        drop(tmp_path / "in2", T0, 10)
        real_step = FlowSimulator.step
        calls = {"n": 0}

        def failing_step(sim, dt, sea, land):
            calls["n"] += 1
            if calls["n"] == 5:
                raise NewtonDivergence(calls["n"], sim.t, "injected")
            return real_step(sim, dt, sea, land)

        monkeypatch.setattr(FlowSimulator, "step", failing_step)
        state = WatchState()
        with pytest.raises(NewtonDivergence):
            ingest_once(retry_cfg, state)
        assert state.committed_t is None
        assert state.processed == []
        assert (tmp_path / "in2" / f"sealevel_{int(T0)}.csv").exists()

        drop(tmp_path / "in2", T0 + 10 * STEP, 5)
        state, written = ingest_once(retry_cfg, state)
        assert written == {"P20": 15}
        out = virtual(retry_cfg)
        assert out.timestamps[0] == pytest.approx(T0)
        assert out.values == pytest.approx(expected, rel=1e-12)

    def test_no_state_file_gives_fresh_state(self, watch):
        assert load_state(watch).committed_t is None

    def test_schema_mismatch(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 6)
        state, _ = ingest_once(watch, WatchState())
        doc = json.loads((tmp_path / "out" / "state.json").read_text())
        doc["schema"] = "something-else/9"
        (tmp_path / "out" / "state.json").write_text(json.dumps(doc))
        with pytest.raises(ModelConfigError):
            load_state(watch)

    def test_state_round_trip(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 6)
        state, _ = ingest_once(watch, WatchState())
        save_state(watch, state)
        again = load_state(watch)
        assert again.processed == state.processed
        assert again.hist_t == state.hist_t
        assert again.simulator_state["t"] == T0 + 5 * STEP


class TestRunWatch:
    def test_single_poll(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 6)
        polls = run_watch(watch, max_polls=1)
        assert polls == 1
        assert len(virtual(watch)) == 6
        assert (tmp_path / "out" / "state.json").exists()

    def test_stop_event_ends_loop(self, watch):
        stop = threading.Event()
        stop.set()
        assert run_watch(watch, stop_event=stop) == 0

    def test_missing_input_directory(self, watch, tmp_path):
        cfg = watch.model_copy(update={"input_dir": str(tmp_path / "missing")})
        with pytest.raises(ModelConfigError):
            run_watch(cfg, max_polls=1)

    def test_output_header(self, watch, tmp_path):
        drop(tmp_path / "in", T0, 3)
        run_watch(watch, max_polls=1)
        text = (tmp_path / "out" / "virtual_P20.csv").read_text()
        assert text.splitlines()[0] == CSV_HEADER
