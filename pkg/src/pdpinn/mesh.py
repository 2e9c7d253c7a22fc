"""Uniform point clouds and the nonlocal families built on them.

Each point ``x_k`` of a cloud owns a *family*: the set of neighbours inside a
square stencil of half-width ``h`` (so at most ``(2h+1)**2`` members,
including ``x_k`` itself), weighted by a Gaussian of the interaction radius
``delta``. Families near a boundary are simply truncated.

Sign convention used throughout the package: a family stores the relative
positions ``xi_j = x_j - x_center``, so reconstruction formulas are literal
sums ``sum_j f(x_j) * G(xi_j) * area_j`` with no reflection.

Slot layout: every family also carries a fixed-size *slot* view of length
``(2h+1)**2`` — slot 0 is the centre, followed by the remaining offsets in
row-major order (dx fastest) — with ``-1`` marking offsets that fall outside
the cloud. Downstream consumers that need fixed-width structure (nonlocal
network inputs, padded operator tables) key off this layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, OperatorUnderdeterminedError
from .validation import check_positive

#: Minimum family size that still determines the six-term operator basis.
MIN_FAMILY_SIZE = 6


@dataclass(frozen=True)
class PointCloud:
    """A finite set of points with per-point integration areas.

    Attributes
    ----------
    points : (n, 2) float array
        Coordinates.
    areas : (n,) float array
        Integration weight of each point (cell area; uniform on our grids).
    spacing : float
        Nominal grid spacing (x-direction spacing for rectangular cells).
    bounds : (float, float)
        Domain extent ``(width, height)``.
    nx, ny : int, optional
        Grid shape when the cloud was built as a structured grid; point
        ``(ix, iy)`` lives at flat index ``iy * nx + ix``. ``None`` for
        unstructured clouds, which cannot carry stencil families.
    """

    points: np.ndarray
    areas: np.ndarray
    spacing: float
    bounds: tuple
    nx: Optional[int] = None
    ny: Optional[int] = None

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def is_grid(self) -> bool:
        return self.nx is not None and self.ny is not None


@dataclass(frozen=True)
class PointFamily:
    """Neighbourhood of one point: members, relative positions, weights.

    ``member_indices[0]`` is always the centre itself. ``slot_members`` maps
    each of the ``(2h+1)**2`` stencil slots to a point index, ``-1`` where the
    stencil leaves the cloud; present slots appear in ``member_indices`` in
    slot order.
    """

    center_index: int
    member_indices: np.ndarray        # (m,) int
    xi: np.ndarray                    # (m, 2) float, x_member - x_center
    weights: np.ndarray               # (m,) float
    horizon: float
    slot_members: np.ndarray = field(repr=False, default=None)  # (S,) int

    def __len__(self) -> int:
        return self.member_indices.shape[0]


def build_grid(nx: int, ny: int, width: float, height: float,
               layout: str = "nodes") -> PointCloud:
    """Build a uniform rectangular point cloud.

    Parameters
    ----------
    nx, ny : int
        Points per direction (each >= 2 for ``nodes`` layout, >= 1 for
        ``cells``).
    width, height : float
        Domain extent, starting at the origin.
    layout : {"nodes", "cells"}
        ``nodes`` places points on grid nodes including the boundary
        (spacing ``width / (nx - 1)``); ``cells`` places them at cell
        centres (spacing ``width / nx``).

    Returns
    -------
    PointCloud
        ``nx * ny`` points ordered row-major with x varying fastest
        (flat index ``iy * nx + ix``), uniform areas ``dx * dy``.
    """
    width = check_positive(width, "width")
    height = check_positive(height, "height")
    if layout not in ("nodes", "cells"):
        raise InvalidArgumentError(f"unknown grid layout {layout!r}")
    minimum = 2 if layout == "nodes" else 1
    if nx < minimum or ny < minimum:
        raise InvalidArgumentError(
            f"grid needs at least {minimum} points per direction for "
            f"layout={layout!r}, got nx={nx}, ny={ny}"
        )
    if layout == "nodes":
        dx, dy = width / (nx - 1), height / (ny - 1)
        xs, ys = np.linspace(0.0, width, nx), np.linspace(0.0, height, ny)
    else:
        dx, dy = width / nx, height / ny
        xs = (np.arange(nx) + 0.5) * dx
        ys = (np.arange(ny) + 0.5) * dy
    gx, gy = np.meshgrid(xs, ys)          # gy varies along axis 0
    points = np.column_stack([gx.ravel(), gy.ravel()])
    areas = np.full(points.shape[0], dx * dy)
    return PointCloud(points=points, areas=areas, spacing=dx,
                      bounds=(width, height), nx=nx, ny=ny)


def weight_of(xi, delta: float):
    """Gaussian interaction weight ``exp(-4 |xi|^2 / delta^2)``.

    ``xi`` may be a scalar distance, an array of distances, or an array of
    relative positions with trailing dimension 2.
    """
    delta = check_positive(delta, "delta")
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim and xi.shape[-1] == 2:
        r2 = np.sum(xi * xi, axis=-1)
    else:
        r2 = xi * xi
    return np.exp(-4.0 * r2 / (delta * delta))


def stencil_offsets(halfwidth: int) -> list:
    """Slot-ordered integer offsets: centre first, then row-major (dx fastest)."""
    if halfwidth < 1:
        raise InvalidArgumentError(f"stencil_halfwidth must be >= 1, got {halfwidth}")
    rng = range(-halfwidth, halfwidth + 1)
    return [(0, 0)] + [(dx, dy) for dy in rng for dx in rng if (dx, dy) != (0, 0)]


def build_families(cloud: PointCloud, stencil_halfwidth: int = 3,
                   delta_factor: float = 3.5) -> list:
    """Build one :class:`PointFamily` per cloud point.

    The interaction radius is ``delta = delta_factor * cloud.spacing``;
    membership is by square stencil (all grid neighbours within
    ``stencil_halfwidth`` steps in each index direction), truncated at the
    boundary.

    Raises
    ------
    OperatorUnderdeterminedError
        If any family ends up with fewer than :data:`MIN_FAMILY_SIZE`
        members (the six-term basis would be underdetermined there).
    InvalidArgumentError
        If the cloud carries no grid structure.
    """
    if not cloud.is_grid:
        raise InvalidArgumentError("families require a structured grid cloud")
    delta = check_positive(delta_factor, "delta_factor") * cloud.spacing
    offsets = stencil_offsets(stencil_halfwidth)
    nx, ny = cloud.nx, cloud.ny
    points = cloud.points
    families = []
    for iy in range(ny):
        for ix in range(nx):
            center = iy * nx + ix
            slots = np.full(len(offsets), -1, dtype=np.int64)
            members = []
            for slot, (dx, dy) in enumerate(offsets):
                jx, jy = ix + dx, iy + dy
                if 0 <= jx < nx and 0 <= jy < ny:
                    idx = jy * nx + jx
                    slots[slot] = idx
                    members.append(idx)
            if len(members) < MIN_FAMILY_SIZE:
                raise OperatorUnderdeterminedError(
                    f"family of point {center} at "
                    f"({points[center, 0]:g}, {points[center, 1]:g}) has only "
                    f"{len(members)} members; at least {MIN_FAMILY_SIZE} are "
                    f"needed for the second-order operator basis"
                )
            member_indices = np.asarray(members, dtype=np.int64)
            xi = points[member_indices] - points[center]
            families.append(PointFamily(
                center_index=center,
                member_indices=member_indices,
                xi=xi,
                weights=weight_of(xi, delta),
                horizon=delta,
                slot_members=slots,
            ))
    return families
