"""Rectilinear grids, scalar fields, multilinear interpolation, and gradients.

Fields are stored flat in row-major order (first dimension slowest) so that
binary archives of the same computation are bit-identical across runs.
Periodic dimensions identify ``upper`` with ``lower``: the last node sits one
spacing below ``upper`` and queries wrap around.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "Costate",
    "GridBoundsError",
    "build_grid",
    "interpolate",
    "interpolate_batch",
    "gradient_field",
]

# ENO3 stencils reach two nodes past each neighbour, so anything coarser
# than this cannot be differenced downstream.
MIN_COUNT = 5

# Relative slack for "on the boundary" queries produced by float arithmetic.
_EDGE_TOL = 1e-9


class GridBoundsError(ValueError):
    """A query point lies outside a non-periodic dimension of the grid."""


class Costate(NamedTuple):
    """Spatial gradient of a value function at a point."""

    p1: float
    p2: float
    p3: float


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform rectilinear grid, possibly periodic per dimension.

    Attributes
    ----------
    lower, upper : ndarray
        Domain bounds per dimension. For periodic dimensions ``upper`` is
        the identification point and carries no node.
    counts : ndarray
        Number of nodes per dimension, each at least ``MIN_COUNT``.
    periodic : ndarray of bool
        Wrap flags per dimension.
    spacing : ndarray
        Node spacing: ``(upper - lower)/(counts - 1)`` on non-periodic
        dimensions, ``(upper - lower)/counts`` on periodic ones.
    """

    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray
    periodic: np.ndarray
    spacing: np.ndarray

    @property
    def dims(self) -> int:
        return self.counts.size

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(c) for c in self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def axis_coords(self, dim: int) -> np.ndarray:
        """Node coordinates along one dimension."""
        return self.lower[dim] + self.spacing[dim] * np.arange(self.counts[dim])

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape``, one per dimension."""
        axes = [self.axis_coords(d) for d in range(self.dims)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def wrap(self, point: Sequence[float]) -> tuple[float, ...]:
        """Map periodic coordinates into ``[lower, upper)``."""
        out = []
        for d, x in enumerate(point):
            if self.periodic[d]:
                span = self.upper[d] - self.lower[d]
                y = (float(x) - self.lower[d]) % span
                if y >= span:  # float mod can land exactly on span
                    y = 0.0
                out.append(self.lower[d] + y)
            else:
                out.append(float(x))
        return tuple(out)

    def contains(self, point: Sequence[float]) -> bool:
        """True if every non-periodic coordinate is inside the bounds."""
        for d, x in enumerate(point):
            if self.periodic[d]:
                continue
            if x < self.lower[d] or x > self.upper[d]:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "lower": [float(v) for v in self.lower],
            "upper": [float(v) for v in self.upper],
            "counts": [int(v) for v in self.counts],
            "periodic": [bool(v) for v in self.periodic],
        }

    @staticmethod
    def from_dict(d: dict) -> "Grid":
        return build_grid(d["lower"], d["upper"], d["counts"], d["periodic"])


def build_grid(
    lower: Sequence[float],
    upper: Sequence[float],
    counts: Sequence[int],
    periodic: Sequence[bool],
) -> Grid:
    """Validate bounds and construct a :class:`Grid`.

    Raises
    ------
    ValueError
        On mismatched lengths, unordered bounds, or counts below
        ``MIN_COUNT``.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    cn = np.asarray(counts, dtype=int)
    pr = np.asarray(periodic, dtype=bool)
    if not (lo.shape == hi.shape == cn.shape == pr.shape) or lo.ndim != 1:
        raise ValueError(
            f"grid blocks must be 1-d and equal length, got lengths "
            f"{lo.shape}/{hi.shape}/{cn.shape}/{pr.shape}"
        )
    if lo.size == 0:
        raise ValueError("grid needs at least one dimension")
    if np.any(hi <= lo):
        raise ValueError(f"upper bounds must exceed lower bounds, got {lo} vs {hi}")
    if np.any(cn < MIN_COUNT):
        raise ValueError(f"every dimension needs at least {MIN_COUNT} nodes, got {cn}")
    span = hi - lo
    spacing = np.where(pr, span / cn, span / (cn - 1))
    for arr in (lo, hi, cn, pr, spacing):
        arr.flags.writeable = False
    return Grid(lower=lo, upper=hi, counts=cn, periodic=pr, spacing=spacing)


@dataclass(eq=False)
class ScalarField:
    """Scalar values on the nodes of a grid, stored flat in row-major order."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.values, dtype=float).reshape(-1)
        if v.size != self.grid.size:
            raise ValueError(
                f"field has {v.size} values for a grid of {self.grid.size} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v

    @property
    def array(self) -> np.ndarray:
        """The values reshaped to the grid shape (a view)."""
        return self.values.reshape(self.grid.shape)

    @classmethod
    def from_array(cls, grid: Grid, arr: np.ndarray) -> "ScalarField":
        return cls(grid, np.asarray(arr, dtype=float).reshape(-1))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., np.ndarray]) -> "ScalarField":
        """Sample ``fn(*coordinate_arrays)`` on the grid nodes."""
        out = np.asarray(fn(*grid.meshgrid()), dtype=float)
        return cls(grid, np.broadcast_to(out, grid.shape).reshape(-1))


def _locate(grid: Grid, point: Sequence[float], clamp: bool) -> list[tuple[int, int, float]]:
    """Per-dimension cell index pair and interpolation weight for a point."""
    if len(point) != grid.dims:
        raise ValueError(f"point has {len(point)} coordinates, grid has {grid.dims}")
    loc = []
    for d in range(grid.dims):
        x = float(point[d])
        lo = grid.lower[d]
        hi = grid.upper[d]
        n = int(grid.counts[d])
        dx = grid.spacing[d]
        if grid.periodic[d]:
            y = (x - lo) % (hi - lo)
            u = y / dx
            i0 = int(u)
            w = u - i0
            if i0 >= n:
                i0, w = 0, 0.0
            i1 = i0 + 1
            if i1 >= n:
                i1 = 0
        else:
            tol = _EDGE_TOL * (hi - lo)
            if x < lo or x > hi:
                if clamp or (x >= lo - tol and x <= hi + tol):
                    x = min(max(x, lo), hi)
                else:
                    raise GridBoundsError(
                        f"coordinate {x!r} outside [{lo}, {hi}] in dimension {d}"
                    )
            u = (x - lo) / dx
            i0 = int(u)
            if i0 > n - 2:
                i0 = n - 2
            w = u - i0
            if w > 1.0:
                w = 1.0
            i1 = i0 + 1
        loc.append((i0, i1, w))
    return loc


def _corner_strides(shape: tuple[int, ...]) -> list[int]:
    strides = [1] * len(shape)
    for d in range(len(shape) - 2, -1, -1):
        strides[d] = strides[d + 1] * shape[d + 1]
    return strides


def interpolate(field: ScalarField, point: Sequence[float], clamp: bool = False) -> float:
    """Multilinear interpolation of a field at a point.

    Out-of-bounds queries on non-periodic dimensions raise
    :class:`GridBoundsError` unless ``clamp`` is set, in which case the
    point is projected onto the boundary first.
    """
    grid = field.grid
    loc = _locate(grid, point, clamp)
    flat = field.values
    if grid.dims == 3:
        (i0, i1, wi), (j0, j1, wj), (k0, k1, wk) = loc
        n2, n3 = int(grid.counts[1]), int(grid.counts[2])
        s1 = n2 * n3
        a = i0 * s1
        b = i1 * s1
        aj0, aj1 = a + j0 * n3, a + j1 * n3
        bj0, bj1 = b + j0 * n3, b + j1 * n3
        c00 = flat[aj0 + k0] * (1.0 - wk) + flat[aj0 + k1] * wk
        c01 = flat[aj1 + k0] * (1.0 - wk) + flat[aj1 + k1] * wk
        c10 = flat[bj0 + k0] * (1.0 - wk) + flat[bj0 + k1] * wk
        c11 = flat[bj1 + k0] * (1.0 - wk) + flat[bj1 + k1] * wk
        return float(
            (c00 * (1.0 - wj) + c01 * wj) * (1.0 - wi)
            + (c10 * (1.0 - wj) + c11 * wj) * wi
        )
    strides = _corner_strides(grid.shape)
    total = 0.0
    for corner in range(1 << grid.dims):
        idx = 0
        weight = 1.0
        for d in range(grid.dims):
            i0, i1, w = loc[d]
            if corner >> d & 1:
                idx += i1 * strides[d]
                weight *= w
            else:
                idx += i0 * strides[d]
                weight *= 1.0 - w
        total += weight * flat[idx]
    return float(total)


def interpolate_batch(
    field: ScalarField, points: np.ndarray, clamp: bool = False
) -> np.ndarray:
    """Interpolate many points at once. ``points`` has shape (m, dims)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != field.grid.dims:
        raise ValueError(f"points must have shape (m, {field.grid.dims})")
    return np.array([interpolate(field, p, clamp=clamp) for p in pts])


def gradient_field(field: ScalarField) -> tuple[ScalarField, ...]:
    """Finite-difference gradient, one scalar field per dimension.

    Central differences in the interior, first-order one-sided at
    non-periodic boundaries, wrapped differences on periodic dimensions.
    """
    grid = field.grid
    v = field.array
    out = []
    for d in range(grid.dims):
        dx = grid.spacing[d]
        w = np.moveaxis(v, d, 0)
        g = np.empty_like(w)
        if grid.periodic[d]:
            g[:] = (np.roll(w, -1, axis=0) - np.roll(w, 1, axis=0)) / (2.0 * dx)
        else:
            g[1:-1] = (w[2:] - w[:-2]) / (2.0 * dx)
            g[0] = (w[1] - w[0]) / dx
            g[-1] = (w[-1] - w[-2]) / dx
        out.append(ScalarField(grid, np.moveaxis(g, 0, d).reshape(-1)))
    return tuple(out)
