"""Atomic CSV/JSON writers for run results and a reader for snapshot files.

Floats are written with ``repr`` (shortest round-trip form), so identical
runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import SimulationConfig
from .engine import RunResult

SCHEMA_VERSION = 1

SNAPSHOT_HEADER = ("t", "id", "x", "y", "cluster", "electrode")
EVENT_HEADER = ("t", "kind", "a", "b")
CONDUCTANCE_HEADER = ("t", "G_S")
CURRENT_DENSITY_HEADER = ("t", "J_A_per_m2")
SWEEP_HEADER = ("param_value", "seed", "t_min_s", "t_max_s", "G_max_S")
FIELD_CURVE_HEADER = ("xi_V_per_m", "tau_b_s")
SPACING_CURVE_HEADER = ("r0_m", "tau_b_s")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temp file in the target directory, fsync, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------

def summary_dict(result: RunResult, config: SimulationConfig, seed: int) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "t_min_s": result.t_min,
        "t_max_s": result.t_max,
        "G_max_S": result.g_max,
        "bridged": result.bridged,
        "seed": int(seed),
        "config_hash": config.config_hash(),
    }


def snapshot_rows(result: RunResult):
    for snap in result.snapshots:
        for i in range(len(snap.positions)):
            e = int(snap.electrode[i])
            yield (snap.t, i, snap.positions[i, 0], snap.positions[i, 1], int(snap.cluster[i]),
                   None if e < 0 else e)


def write_run(out_dir, result: RunResult, config: SimulationConfig, seed: int) -> dict:
    """Write summary.json, events.csv, conductance.csv and, when present, snapshots.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "events.csv", EVENT_HEADER, ((e.t, e.kind, e.a, e.b) for e in result.events))
    write_csv(out / "conductance.csv", CONDUCTANCE_HEADER, result.conductance_series)
    if config.cross_section is not None:
        scale = config.geometry.voltage / config.cross_section
        write_csv(out / "current_density.csv", CURRENT_DENSITY_HEADER,
                  ((t, g * scale) for t, g in result.conductance_series))
    if result.snapshots:
        write_csv(out / "snapshots.csv", SNAPSHOT_HEADER, snapshot_rows(result))
    summary = summary_dict(result, config, seed)
    write_json(out / "summary.json", summary)
    return summary


def read_snapshots(path) -> dict[float, dict[str, np.ndarray]]:
    """Snapshot CSV grouped by time: ``{t: {"id", "pos", "cluster", "electrode"}}``."""
    rows = read_csv(path)
    if rows and set(SNAPSHOT_HEADER) - set(rows[0]):
        raise ValueError(f"{path}: header must be {','.join(SNAPSHOT_HEADER)}")
    groups: dict[float, list[dict]] = {}
    for r in rows:
        groups.setdefault(float(r["t"]), []).append(r)
    out = {}
    for t, rs in groups.items():
        out[t] = {
            "id": np.array([int(r["id"]) for r in rs], dtype=np.int64),
            "pos": np.array([[float(r["x"]), float(r["y"])] for r in rs], dtype=float).reshape(-1, 2),
            "cluster": np.array([int(r["cluster"]) for r in rs], dtype=np.int64),
            "electrode": np.array([int(r["electrode"]) if r["electrode"] else -1 for r in rs], dtype=np.int64),
        }
    return out


def optional_float(s: str) -> Optional[float]:
    return None if s == "" else float(s)
