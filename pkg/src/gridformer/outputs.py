"""Atomic CSV/JSON emission and the run manifest written with every output set."""
from __future__ import annotations

import csv
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def atomic_write_text(path, text):
    """Write ``text`` to a temp file in the target directory, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([_cell(x) for x in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    return atomic_write_text(path, csv_text(header, rows))


def write_json(path, obj):
    return atomic_write_text(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def write_curves_csv(path, grid, columns):
    """One row per frequency: ``omega_rad_s, f_hz`` then one column per named curve."""
    names = list(columns)
    rows = zip(grid.omega, grid.hz, *(np.asarray(columns[k], float) for k in names))
    return write_csv(path, ["omega_rad_s", "f_hz"] + names, rows)


def matrix_csv(path, M):
    """Complex matrix as CSV, row-major, each entry as a ``re,im`` pair."""
    M = np.atleast_2d(np.asarray(M, complex))
    header = [f"{p}{j}" for j in range(M.shape[1]) for p in ("re", "im")]
    rows = ([x for z in r for x in (z.real, z.imag)] for r in M)
    return write_csv(path, header, rows)


def tool_version():
    from . import __version__
    return __version__


@dataclass
class RunManifest:
    command: str
    case_path: str | None = None
    config: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    seed: int | None = None
    started: float = field(default_factory=time.perf_counter)
    wall_time_s: float | None = None

    def add(self, path):
        self.outputs.append(str(path))
        return path

    def to_dict(self):
        return {"command": self.command, "case_path": self.case_path,
                "config": self.config, "outputs": list(self.outputs),
                "wall_time_s": self.wall_time_s, "tool_version": tool_version(),
                "python": sys.version.split()[0], "seed": self.seed}

    def write(self, outdir):
        self.wall_time_s = time.perf_counter() - self.started
        return write_json(Path(outdir) / "manifest.json", self.to_dict())
