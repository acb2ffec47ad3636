"""File formats: JSON documents, OBJ meshes and CSV tables."""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

TRACE_COLUMNS = ("round", "step", "total", "landmark", "ct", "j", "clv")
RESULT_COLUMNS = ("scene", "method", "reconstruction_error_mm", "d_mean", "total_time_s")
PRESETS = ("stage1", "stage2", "stage3")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj):
    """Canonical JSON: sorted keys, fixed indentation, so equal content gives equal bytes."""
    return json.dumps(obj, sort_keys=True, indent=1, default=_default, allow_nan=False) + "\n"


def save_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def load_json(path):
    return json.loads(Path(path).read_text())


def write_obj(path, groups, faces=None):
    """Write named point groups as OBJ object groups (``o`` lines followed by ``v`` lines)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, pts in groups:
        lines.append(f"o {name}")
        lines.extend(f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in np.asarray(pts, dtype=float))
    for f in faces or ():
        lines.append("f " + " ".join(str(i + 1) for i in f))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_obj(path):
    """Parse an OBJ written by :func:`write_obj` into ``[(name, (n, 3) array), ...]``."""
    groups, name, pts = [], None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("o "):
            if name is not None:
                groups.append((name, np.array(pts).reshape(-1, 3)))
            name, pts = line[2:].strip(), []
        elif line.startswith("v "):
            pts.append([float(v) for v in line.split()[1:4]])
    if name is not None:
        groups.append((name, np.array(pts).reshape(-1, 3)))
    return groups


def write_trace_csv(path, trace):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([row.get(c, 0.0) for c in TRACE_COLUMNS])
    return path


def write_rows_csv(path, rows, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def load_preset(name):
    """A shipped stage-weight preset (``stage1``..``stage3``) as a dict."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return json.loads(resources.files("skelfit.presets").joinpath(f"{name}.json").read_text())
