"""Artifact writing and run-configuration parsing."""

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import scipy

from . import __version__


def config_hash(cfg):
    blob = json.dumps(_plain(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def versions():
    return {"soliton_lab": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def header_lines(cfg):
    v = versions()
    return [f"# soliton_lab {v['soliton_lab']} numpy {v['numpy']} scipy {v['scipy']}",
            f"# config_hash {config_hash(cfg)}"]


def write_csv(path, columns, cfg):
    """Write equal-length columns (a dict name -> array) with a comment header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(header_lines(cfg)) + "\n")
        fh.write(",".join(names) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")
    return path


def read_csv(path):
    """Read a file written by :func:`write_csv` into a dict of arrays."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    names = lines[0].strip().split(",")
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return {k: data[:, i] for i, k in enumerate(names)}


def write_json(path, payload, cfg):
    """Write a JSON report whose ``_meta`` block carries the config hash and versions."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"_meta": {"config_hash": config_hash(cfg), "versions": versions()}}
    doc.update(_plain(payload))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_kv_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    cfg = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            cfg[key] = value
    return cfg


def trajectory_columns(traj):
    return {"y": traj.ys, "x": traj.xs, "W": traj.w, "X": traj.x, "Y": traj.y}


def profile_columns(profile):
    return {"x": profile.xs, "psi": profile.psi, "psi1": profile.psi1, "psi2": profile.psi2,
            "omega": profile.omega, "omega1": profile.omega1}


def solution_columns(t_grid, x_grid, eta, xi):
    nt, nx = eta.shape
    return {"t": np.repeat(t_grid, nx), "x": np.tile(x_grid, nt),
            "eta": eta.ravel(), "xi": xi.ravel()}
