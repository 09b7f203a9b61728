# tidecal_core/utils.py

import os
import sys
import json
import math
import datetime
from pathlib import Path

import numpy as np
from rich.console import Console

RUN_TIMESTAMP = datetime.datetime.now().strftime("%Y%m%d_%H%M%S")
GLOBAL_LOGFILE = None

LEVELS = {"ERROR": 40, "WARNING": 30, "INFO": 20, "DEBUG": 10}
_console = Console(stderr=True, highlight=False, soft_wrap=True)


def _threshold():
    name = os.getenv("TIDECAL_LOG", "INFO").strip().upper()
    return LEVELS.get(name, LEVELS["INFO"])


def debug(*args, level="INFO"):
    """Unified flush-safe logger that writes both to stderr and a per-run log file.

    Usage mirrors the audit chain: debug(context, "[TAG] message", ...). If the
    first argument is a dict it is treated as the run context and the message
    is also appended to context["debug_trace"].
    """
    global GLOBAL_LOGFILE
    try:
        if not args:
            return
        if LEVELS.get(level, 20) < _threshold():
            return

        if isinstance(args[0], dict) or args[0] is None:
            context = args[0]
            msgs = args[1:]
        else:
            context = None
            msgs = args

        ts = datetime.datetime.now().strftime("%H:%M:%S")
        msg = " ".join(str(m) for m in msgs)
        msg_out = f"[{ts}] {msg}" if level == "INFO" else f"[{ts}] {level}: {msg}"

        if context is not None:
            context.setdefault("debug_trace", []).append(msg_out)

        _console.print(msg_out, markup=False)

        if os.getenv("TIDECAL_LOGFILE", "1") == "0":
            return
        # Initialize logfile once
        if GLOBAL_LOGFILE is None:
            reports_dir = os.path.join(os.getcwd(), "reports")
            os.makedirs(reports_dir, exist_ok=True)
            GLOBAL_LOGFILE = os.path.join(reports_dir, f"tidecal_{RUN_TIMESTAMP}.log")
        with open(GLOBAL_LOGFILE, "a", encoding="utf-8") as f:
            f.write(msg_out + "\n")

    except Exception as e:
        sys.stderr.write(f"[debug-failure] {e}\n")
        sys.stderr.flush()


def sanitize(o):
    """Recursively make an object JSON-safe (numpy, NaN, inf, datetime, tuples)."""
    if isinstance(o, dict):
        return {str(k): sanitize(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [sanitize(v) for v in o]
    if isinstance(o, np.ndarray):
        return [sanitize(v) for v in o.tolist()]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        if math.isnan(o) or math.isinf(o):
            return None
        return o
    if isinstance(o, (datetime.datetime, datetime.date)):
        return o.isoformat()
    if isinstance(o, Path):
        return str(o)
    return o


def atomic_write_text(path, text):
    """Write-temp-then-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp_path, path)


def write_json(path, payload):
    """JSON dump through sanitize(), validated before the rename."""
    text = json.dumps(sanitize(payload), indent=2, allow_nan=False)
    json.loads(text)
    atomic_write_text(path, text + "\n")
