"""Grid indexing, agent poses, and pyramid field-of-view enumeration.

All functions here are pure and operate on small value types, so they are
safe to call from any number of concurrent workers. The orientation
convention is row-major with North meaning decreasing row index; agents sit
at cell centers and cells are unit squares, so cell (r, c) has center
(r.0, c.0) in (row, col) coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Heading",
    "GridSpec",
    "CellCoord",
    "Pose",
    "FieldOfView",
    "SensingAction",
    "flatten",
    "unflatten",
    "compute_fov",
    "projection_distance",
    "polar_about_agent",
]


class Heading(Enum):
    """Cardinal viewing direction. Value is the (drow, dcol) unit step."""

    NORTH = (-1, 0)
    SOUTH = (1, 0)
    EAST = (0, 1)
    WEST = (0, -1)

    @property
    def forward(self) -> tuple[int, int]:
        return self.value

    @property
    def right(self) -> tuple[int, int]:
        # Heading rotated 90 degrees clockwise in (row-down, col-right) coords.
        dr, dc = self.value
        return (dc, -dr)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular search grid; flattened size is rows * cols."""

    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def contains(self, row: int, col: int) -> bool:
        return 0 <= row < self.rows and 0 <= col < self.cols


@dataclass(frozen=True)
class CellCoord:
    row: int
    col: int


@dataclass(frozen=True)
class Pose:
    """Agent position (at the cell center) plus viewing direction."""

    cell: CellCoord
    heading: Heading


@dataclass
class FieldOfView:
    """Ordered cells covered by one sensing action.

    Ordering is ascending projection depth, then ascending lateral offset
    (left to right relative to the heading). The agent's own cell is never
    included and depths start at 1.
    """

    cells: list[CellCoord]
    depths: np.ndarray  # same length as cells, integer projection distances

    def __len__(self) -> int:
        return len(self.cells)


@dataclass
class SensingAction:
    """A pose plus its field of view and precomputed flat cell indices."""

    pose: Pose
    fov: FieldOfView
    flat: np.ndarray

    @classmethod
    def from_pose(cls, pose: Pose, max_range: int, grid: GridSpec) -> "SensingAction":
        fov = compute_fov(pose, max_range, grid)
        flat = np.array([flatten(c, grid) for c in fov.cells], dtype=np.intp)
        return cls(pose=pose, fov=fov, flat=flat)


def flatten(coord: CellCoord, grid: GridSpec) -> int:
    """Row-major flat index of a cell; inverse of unflatten."""
    if not grid.contains(coord.row, coord.col):
        raise ValueError(f"cell {coord} outside {grid.rows}x{grid.cols} grid")
    return coord.row * grid.cols + coord.col


def unflatten(index: int, grid: GridSpec) -> CellCoord:
    if not 0 <= index < grid.size:
        raise ValueError(f"flat index {index} outside [0, {grid.size})")
    return CellCoord(index // grid.cols, index % grid.cols)


def compute_fov(pose: Pose, max_range: int, grid: GridSpec) -> FieldOfView:
    """Enumerate the pyramid field of view of a pose.

    At projection depth d = 1..max_range the pyramid holds the 2d+1 cells
    spanning lateral offsets -d..+d relative to the heading (a 90 degree
    opening), clipped at the grid boundary. A boundary pose simply sees
    fewer cells; facing a wall from the edge yields an empty FOV.
    """
    if max_range < 1:
        raise ValueError(f"max_range must be >= 1, got {max_range}")
    if not grid.contains(pose.cell.row, pose.cell.col):
        raise ValueError(f"pose {pose.cell} outside grid")
    fr, fc = pose.heading.forward
    rr, rc = pose.heading.right
    cells: list[CellCoord] = []
    depths: list[int] = []
    for d in range(1, max_range + 1):
        for w in range(-d, d + 1):
            row = pose.cell.row + d * fr + w * rr
            col = pose.cell.col + d * fc + w * rc
            if grid.contains(row, col):
                cells.append(CellCoord(row, col))
                depths.append(d)
    return FieldOfView(cells=cells, depths=np.array(depths, dtype=np.intp))


def projection_distance(pose: Pose, cell: CellCoord) -> float:
    """Distance to the plane through `cell` perpendicular to the heading."""
    if pose.heading in (Heading.NORTH, Heading.SOUTH):
        return float(abs(cell.row - pose.cell.row))
    return float(abs(cell.col - pose.cell.col))


def polar_about_agent(pose: Pose, cell: CellCoord) -> tuple[float, float]:
    """Radial distance and signed bearing of a cell about the agent.

    The bearing is measured from the heading direction, positive to the
    agent's right, in (-180, 180] degrees. Distances are between cell
    centers in cell units.
    """
    dr = cell.row - pose.cell.row
    dc = cell.col - pose.cell.col
    if dr == 0 and dc == 0:
        raise ValueError("cell coincides with the agent's cell")
    fr, fc = pose.heading.forward
    rr, rc = pose.heading.right
    forward = dr * fr + dc * fc
    lateral = dr * rr + dc * rc
    radial = math.hypot(forward, lateral)
    bearing = math.degrees(math.atan2(lateral, forward))
    return radial, bearing
