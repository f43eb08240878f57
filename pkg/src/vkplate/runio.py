"""Experiment outputs: flat binary snapshots, JSON manifests, CSV tables.

Snapshots are raw little-endian float64 arrays in node-index order (one
file per field per snapshot) next to a manifest that records the grid hash,
snapshot times, the energy ledger and the configuration hash, so every
report is reproducible from its inputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .lattice import LatticeGrid, NodeField


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_array(path: Path, values: np.ndarray) -> str:
    data = np.ascontiguousarray(values, dtype="<f8")
    path.write_bytes(data.tobytes())
    return path.name


def read_array(path: Path, shape) -> np.ndarray:
    return np.frombuffer(path.read_bytes(), dtype="<f8").reshape(shape).copy()


def write_trajectory(outdir, traj, extra_manifest: dict | None = None) -> Path:
    outdir = Path(outdir)
    snapdir = outdir / "snapshots"
    snapdir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, state in enumerate(traj.states):
        yname = write_array(snapdir / f"y_{i:05d}.f64", state.y.values)
        vname = write_array(snapdir / f"v_{i:05d}.f64", state.v.values)
        records.append({"t": state.t, "y": yname, "v": vname})
    manifest = {
        "version": __version__,
        "grid": traj.grid.to_json_dict(),
        "grid_hash": traj.grid.content_hash(),
        "n_nodes": traj.grid.n_nodes,
        "times": list(map(float, traj.times)),
        "snapshots": records,
        "energy_ledger": traj.ledger,
        "dt_history": list(map(float, traj.dt_history)),
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_trajectory_fields(outdir, grid: LatticeGrid):
    """(times, y fields, v fields) from a snapshot directory."""
    outdir = Path(outdir)
    manifest = json.loads((outdir / "manifest.json").read_text())
    if manifest["grid_hash"] != grid.content_hash():
        raise ValueError("snapshot directory was written for a different grid")
    times, ys, vs = [], [], []
    for rec in manifest["snapshots"]:
        times.append(rec["t"])
        ys.append(NodeField(grid, read_array(outdir / "snapshots" / rec["y"],
                                             (grid.n_nodes, 3))))
        vs.append(NodeField(grid, read_array(outdir / "snapshots" / rec["v"],
                                             (grid.n_nodes, 3))))
    return np.asarray(times), ys, vs, manifest


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def write_plane_field_csv(path, field, name: str) -> Path:
    """Dump a plane field as (x1, x2, value...) rows."""
    pts = field.points().reshape(-1, 2)
    vals = field.values.reshape(len(pts), -1)
    header = ["x1", "x2"] + ([name] if vals.shape[1] == 1 else
                             [f"{name}_{i+1}" for i in range(vals.shape[1])])
    rows = [list(map(repr, pt)) + list(map(repr, vv)) for pt, vv in zip(pts, vals)]
    return write_csv(path, header, rows)


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path
