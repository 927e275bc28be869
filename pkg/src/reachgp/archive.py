"""On-disk archives for value series, plus atomic-write and hashing helpers.

A value archive is a directory holding ``manifest.json`` (grid layout,
stored times, game parameters, provenance) and one little-endian float64
payload per time slice in row-major node order. Writers stage everything
under a ``.partial`` suffix and rename at the end, so an interrupted run
never masquerades as a finished artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from pathlib import Path

import numpy as np

from .game import ProblemSpec
from .grid import Grid
from .solver import ValueSeries

__all__ = [
    "save_series",
    "load_series",
    "atomic_write_text",
    "staged_dir",
    "commit_dir",
    "sha256_path",
]

_SLICE_TPL = "slice_{:05d}.bin"


def atomic_write_text(path, text: str) -> None:
    """Write a file via a .partial sibling and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def staged_dir(path) -> Path:
    """A fresh .partial staging directory for ``path``."""
    stage = Path(str(path) + ".partial")
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    return stage


def commit_dir(stage: Path, path) -> None:
    """Replace ``path`` with the staged directory."""
    path = Path(path)
    if path.exists():
        shutil.rmtree(path)
    os.replace(stage, path)


def save_series(series: ValueSeries, path) -> None:
    """Write a value archive; bit-identical for identical series."""
    stage = staged_dir(path)
    manifest = {
        "format": "value-archive",
        "version": 1,
        "dims": series.grid.dims,
        **series.grid.to_dict(),
        "times": [float(t) for t in series.times],
        "label": series.label,
        "spec": series.spec.to_dict(),
        "meta": series.meta,
    }
    with open(stage / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    for k in range(series.n_slices):
        payload = np.ascontiguousarray(series.values[k], dtype="<f8").tobytes()
        with open(stage / _SLICE_TPL.format(k), "wb") as f:
            f.write(payload)
    commit_dir(stage, path)


def load_series(path) -> ValueSeries:
    """Read a value archive, validating payload sizes against the manifest."""
    path = Path(path)
    with open(path / "manifest.json") as f:
        manifest = json.load(f)
    if manifest.get("format") != "value-archive":
        raise ValueError(f"{path} is not a value archive")
    grid = Grid.from_dict(manifest)
    spec = ProblemSpec.from_dict(manifest["spec"])
    times = np.array(manifest["times"], dtype=float)
    values = np.empty((times.size, *grid.shape))
    for k in range(times.size):
        raw = (path / _SLICE_TPL.format(k)).read_bytes()
        flat = np.frombuffer(raw, dtype="<f8")
        if flat.size != grid.size:
            raise ValueError(
                f"slice {k}: {flat.size} values for a grid of {grid.size} nodes"
            )
        values[k] = flat.reshape(grid.shape)
    return ValueSeries(
        grid=grid,
        times=times,
        values=values,
        spec=spec,
        label=manifest.get("label", "computed"),
        meta=manifest.get("meta", {}),
    )


def sha256_path(path) -> str:
    """Content hash of a file, or of a directory's sorted relative tree."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(path)).encode())
                h.update(b"\0")
                h.update(p.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()
