"""Grids, obstacle maps, distance fields, boundary masks, and the spatial embedding.

Everything here is geometry that stays fixed over a simulation or training
run. All distances are center-to-center in cell units (dx factored out),
because the mask radii below are defined in cells. Values are immutable
after construction and all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# Stencil-suppression radii, in cells. First-order stencils are trusted
# beyond 2.5 cells from the nearest solid, second-order beyond 3.5.
MASK1_RADIUS = 2.5
MASK2_RADIUS = 3.5


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell grid with dimensionless spacing dx and frame interval dt."""

    height: int
    width: int
    dx: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.height}x{self.width}")
        if self.dx <= 0 or self.dt <= 0:
            raise ValueError("dx and dt must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class ObstacleMap:
    """Boolean solid mask; True marks an obstacle or outer wall cell.

    The one-cell outer ring must be solid (the domain is bounded) and at
    least one fluid cell must remain.
    """

    solid: np.ndarray

    def __post_init__(self):
        solid = np.asarray(self.solid, dtype=bool)
        solid = solid.copy() if solid is self.solid else solid
        if solid.ndim != 2:
            raise ValueError("solid mask must be 2D")
        if not (solid[0, :].all() and solid[-1, :].all() and solid[:, 0].all() and solid[:, -1].all()):
            raise ValueError("outer ring must be solid")
        if solid.all():
            raise ValueError("no fluid region")
        solid.flags.writeable = False
        object.__setattr__(self, "solid", solid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.solid.shape

    @property
    def fluid(self) -> np.ndarray:
        return ~self.solid


def empty_domain(height: int, width: int) -> ObstacleMap:
    """Obstacle map with only the outer wall ring solid."""
    solid = np.zeros((height, width), dtype=bool)
    solid[0, :] = solid[-1, :] = solid[:, 0] = solid[:, -1] = True
    return ObstacleMap(solid)


@dataclass(frozen=True)
class ScalarField:
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.copy() if v is self.values else v
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class VectorField2:
    u_x: np.ndarray
    u_y: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        for name in ("u_x", "u_y"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != self.grid.shape:
                raise ValueError(f"{name} shape {v.shape} does not match grid {self.grid.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} values must be finite")
            v = v.copy() if v is getattr(self, name) else v
            v.flags.writeable = False
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class BoundaryMask:
    """Cells whose stencil output is suppressed, with the radius that chose them."""

    excluded: np.ndarray
    threshold: float

    def __post_init__(self):
        e = np.asarray(self.excluded, dtype=bool)
        e = e.copy() if e is self.excluded else e
        e.flags.writeable = False
        object.__setattr__(self, "excluded", e)

    def weights(self, dtype=np.float64) -> np.ndarray:
        """1.0 on kept cells, 0.0 on excluded ones."""
        return (~self.excluded).astype(dtype)


@dataclass(frozen=True)
class SpatialEmbedding:
    """Per-cell geometry channels fed to the networks: coordinates, sdf, attribute."""

    coords: np.ndarray  # (2, H, W): x then y, cell centers normalized to [0, 1]
    sdf: ScalarField
    attr: ScalarField

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.shape != (2,) + self.sdf.grid.shape:
            raise ValueError(f"coords shape {c.shape} does not match grid {self.sdf.grid.shape}")
        if not np.isin(self.attr.values, (0.0, 1.0, 2.0)).all():
            raise ValueError("attribute field must take values in {0, 1, 2}")
        c = c.copy() if c is self.coords else c
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    def channels(self) -> np.ndarray:
        """Stacked (4, H, W) array: x, y, sdf, attribute."""
        return np.concatenate([self.coords, self.sdf.values[None], self.attr.values[None]], axis=0)


def compute_sdf(obstacles: ObstacleMap, grid: GridSpec) -> ScalarField:
    """Exact Euclidean distance (in cells) to the nearest solid cell center.

    Solid cells carry 0 rather than a negative inside-distance.
    """
    if obstacles.shape != grid.shape:
        raise ValueError(f"obstacle shape {obstacles.shape} does not match grid {grid.shape}")
    if obstacles.solid.all():
        raise ValueError("no fluid region")
    return ScalarField(ndimage.distance_transform_edt(obstacles.fluid), grid)


def attribute_field(obstacles: ObstacleMap, sdf: ScalarField) -> ScalarField:
    """b = 1 on fluid, 2 on boundary (fluid-adjacent solid plus the outer ring), 0 inside solids."""
    if obstacles.shape != sdf.grid.shape:
        raise ValueError("obstacle map and sdf must share a grid")
    solid = obstacles.solid
    fluid = ~solid
    adj = np.zeros_like(solid)
    adj[1:, :] |= fluid[:-1, :]
    adj[:-1, :] |= fluid[1:, :]
    adj[:, 1:] |= fluid[:, :-1]
    adj[:, :-1] |= fluid[:, 1:]
    b = np.where(fluid, 1.0, 0.0)
    b[solid & adj] = 2.0
    b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = 2.0
    return ScalarField(b, sdf.grid)


def boundary_mask(sdf: ScalarField, m: float) -> BoundaryMask:
    """Mark every cell within m cells of a solid (sdf <= m) as excluded."""
    if m <= 0:
        raise ValueError(f"mask radius must be positive, got {m}")
    return BoundaryMask(excluded=sdf.values <= m, threshold=m)


def spatial_embedding(obstacles: ObstacleMap, grid: GridSpec) -> SpatialEmbedding:
    """Bundle normalized cell-center coordinates with sdf and attribute channels."""
    h, w = grid.shape
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    coords = np.stack([np.broadcast_to(xs, (h, w)), np.broadcast_to(ys[:, None], (h, w))])
    sdf = compute_sdf(obstacles, grid)
    return SpatialEmbedding(coords=coords, sdf=sdf, attr=attribute_field(obstacles, sdf))


def obstacle_map_from_text(text: str) -> ObstacleMap:
    """Parse a grid of '#' (solid) and '.' (fluid), one row per line."""
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty obstacle text")
    width = len(rows[0])
    grid = np.empty((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"row {i} has length {len(row)}, expected {width}")
        for j, ch in enumerate(row):
            if ch == "#":
                grid[i, j] = True
            elif ch == ".":
                grid[i, j] = False
            else:
                raise ValueError(f"unexpected character {ch!r} at row {i}, column {j}")
    return ObstacleMap(grid)


def obstacle_map_to_text(obstacles: ObstacleMap) -> str:
    return "\n".join("".join("#" if s else "." for s in row) for row in obstacles.solid)
