"""Region geometry: ray-traced boundaries, membership rasters, areas and
ellipsoid volumes.

The confidence region is star shaped around the least-squares estimate, so a
bisection along each outward ray meets the boundary exactly once; rasters
stay faithful to the membership oracle even for the disconnected-looking
shapes that larger ``q`` can produce.
"""

from __future__ import annotations

import csv
import json
import math

from dataclasses import dataclass

import numpy as np

from .ellipsoid import Ellipsoid
from .errors import BadConfig, CenterExcluded, InfiniteRegion

__all__ = [
    "BoundaryTrace",
    "RegionRaster",
    "trace_boundary",
    "rasterize",
    "raster_area",
    "ellipsoid_volume",
    "unit_ball_volume",
    "ray_directions",
    "save_boundary_csv",
    "save_raster_pgm",
    "save_raster_csv",
]


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Boundary distances along unit rays from a common center.

    A distance of ``inf`` flags a ray that was still inside the region at its
    search radius.
    """

    center: np.ndarray
    directions: np.ndarray  # (r, d) unit vectors
    distances: np.ndarray  # (r,) nonnegative, possibly inf

    @property
    def rays(self):
        return list(zip(self.directions, self.distances))

    def points(self) -> np.ndarray:
        return self.center + self.directions * self.distances[:, None]


@dataclass(frozen=True, eq=False)
class RegionRaster:
    """Membership sampled at the cell centers of a rectangular grid."""

    bounds: np.ndarray  # (2, 2): [[xmin, xmax], [ymin, ymax]]
    resolution: tuple
    membership: np.ndarray  # (nx, ny) bool

    def cell_centers(self) -> np.ndarray:
        (xmin, xmax), (ymin, ymax) = self.bounds
        nx, ny = self.resolution
        xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
        ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
        grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        return grid.reshape(-1, 2)

    def cell_area(self) -> float:
        (xmin, xmax), (ymin, ymax) = self.bounds
        nx, ny = self.resolution
        return (xmax - xmin) / nx * (ymax - ymin) / ny


def ray_directions(num: int) -> np.ndarray:
    """``num`` evenly spaced unit directions in the plane."""
    angles = np.linspace(0.0, 2.0 * math.pi, num, endpoint=False)
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def trace_boundary(indicator, center, directions, r_max, tol: float | None = None) -> BoundaryTrace:
    """Bisect the membership transition along each ray from ``center``.

    ``indicator`` maps an (k, d) array of points to (k,) booleans.  ``r_max``
    may be a scalar or one search radius per ray; rays still inside at
    ``r_max`` get distance ``inf``.  Default ``tol`` is 1e-6 of the largest
    search radius (20 bisection steps); the membership calls dominate the
    cost, and all rays advance together in one batched call per step.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise BadConfig("directions must be unit vectors")
    r_max_arr = np.broadcast_to(np.asarray(r_max, dtype=float), (dirs.shape[0],)).astype(float)
    if np.any(r_max_arr <= 0.0):
        raise BadConfig("r_max must be positive")
    if tol is None:
        tol = 1e-6 * float(np.max(r_max_arr))
    if not bool(indicator(center[None, :])[0]):
        raise CenterExcluded("trace center is not a member of the region")

    inside_at_max = np.asarray(indicator(center + dirs * r_max_arr[:, None]), dtype=bool)
    lo = np.zeros(dirs.shape[0])
    hi = r_max_arr.copy()
    active = ~inside_at_max
    for _ in range(64):
        gaps = hi[active] - lo[active]
        if not active.any() or float(np.max(gaps)) <= tol:
            break
        mid = 0.5 * (lo[active] + hi[active])
        inside = np.asarray(indicator(center + dirs[active] * mid[:, None]), dtype=bool)
        lo_active = lo[active]
        hi_active = hi[active]
        lo_active[inside] = mid[inside]
        hi_active[~inside] = mid[~inside]
        lo[active] = lo_active
        hi[active] = hi_active
    distances = np.where(inside_at_max, np.inf, 0.5 * (lo + hi))
    return BoundaryTrace(center=center, directions=dirs, distances=distances)


def rasterize(indicator, bounds, resolution) -> RegionRaster:
    """Evaluate membership at the cell centers of a 2-D grid."""
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (2, 2):
        raise BadConfig("bounds must be a 2x2 array [[xmin, xmax], [ymin, ymax]]")
    nx, ny = (int(r) for r in resolution)
    if nx < 2 or ny < 2:
        raise BadConfig("resolution must be at least 2 per axis")
    raster = RegionRaster(bounds=bounds, resolution=(nx, ny), membership=np.empty((nx, ny), dtype=bool))
    members = np.asarray(indicator(raster.cell_centers()), dtype=bool)
    object.__setattr__(raster, "membership", members.reshape(nx, ny))
    return raster


def raster_area(raster: RegionRaster) -> float:
    """Member-cell count times cell area."""
    return float(np.count_nonzero(raster.membership)) * raster.cell_area()


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def ellipsoid_volume(e: Ellipsoid) -> float:
    """Volume of ``(x-c)' S (x-c) <= r``: ``V_d r^{d/2} / sqrt(det S)``."""
    if not math.isfinite(e.radius):
        raise InfiniteRegion("ellipsoid has infinite radius")
    det = float(np.linalg.det(e.shape))
    return unit_ball_volume(e.d) * e.radius ** (e.d / 2.0) / math.sqrt(det)


# ---------------------------------------------------------------------------
# File outputs.  Every file embeds the resolved configuration when given one.


def save_boundary_csv(trace: BoundaryTrace, path, config: dict | None = None) -> None:
    """Rows ``angle,distance,x,y``; infinite rays keep ``inf`` in every field."""
    with open(path, "w", newline="") as handle:
        if config is not None:
            handle.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        writer = csv.writer(handle)
        writer.writerow(["angle", "distance", "x", "y"])
        points = trace.points()
        for direction, dist, point in zip(trace.directions, trace.distances, points):
            angle = math.atan2(direction[1], direction[0])
            writer.writerow([repr(angle), repr(float(dist)), repr(float(point[0])), repr(float(point[1]))])


def save_raster_pgm(raster: RegionRaster, path, config: dict | None = None) -> None:
    """ASCII bitmap (P1), one row per y cell from ymax down, plus comments
    recording the bounds so the image can be georeferenced."""
    nx, ny = raster.resolution
    with open(path, "w") as handle:
        handle.write("P1\n")
        if config is not None:
            handle.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        handle.write(f"# bounds: {raster.bounds.tolist()}\n")
        handle.write(f"{nx} {ny}\n")
        for iy in range(ny - 1, -1, -1):
            handle.write(" ".join("1" if raster.membership[ix, iy] else "0" for ix in range(nx)))
            handle.write("\n")


def save_raster_csv(raster: RegionRaster, path, config: dict | None = None) -> None:
    """Member cells only, as ``x,y`` center coordinates."""
    centers = raster.cell_centers().reshape(raster.resolution[0], raster.resolution[1], 2)
    with open(path, "w", newline="") as handle:
        if config is not None:
            handle.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        writer = csv.writer(handle)
        writer.writerow(["x", "y"])
        for ix, iy in zip(*np.nonzero(raster.membership)):
            writer.writerow([repr(float(centers[ix, iy, 0])), repr(float(centers[ix, iy, 1]))])
