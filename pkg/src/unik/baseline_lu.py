"""Location-uncertainty-only baseline: 2D Gaussian track bookkeeping.

Each thresholded candidate observation either updates the first existing
track that subsumes it (95% Mahalanobis gate) or initiates a new track.
Track updates are plain Gaussian products; the search-space estimate is
the cumulative density of all tracks evaluated at cell centers. Detection
uncertainty is not modeled, which is the point of the baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .environment import Measurement, NoiseParams
from .errors import NumericalError
from .geometry import CellCoord, GridSpec
from .inference import build_sigma_z

__all__ = [
    "GaussianTrack",
    "LuState",
    "lu_associate",
    "lu_update_track",
    "lu_estimate",
    "lu_step",
    "lu_recovered_support",
    "UNIT_MODE_DENSITY",
]

# 95% gate for a squared Mahalanobis distance with 2 degrees of freedom.
CHI2_GATE_95 = float(chi2.ppf(0.95, df=2))

# Peak density of a unit-variance bivariate normal; recovery thresholds
# are expressed as a fraction of this mode.
UNIT_MODE_DENSITY = 1.0 / (2.0 * math.pi)


@dataclass
class GaussianTrack:
    """2D Gaussian target hypothesis in (row, col) cell units."""

    mean2d: np.ndarray
    cov2d: np.ndarray

    def __post_init__(self) -> None:
        self.mean2d = np.asarray(self.mean2d, dtype=float)
        self.cov2d = np.asarray(self.cov2d, dtype=float)
        if self.mean2d.shape != (2,) or self.cov2d.shape != (2, 2):
            raise ValueError("track must be 2-dimensional")
        if np.min(np.linalg.eigvalsh(self.cov2d)) <= 0:
            raise ValueError("track covariance must be positive definite")


@dataclass
class LuState:
    """All current tracks plus the candidate threshold c_lu."""

    tracks: list[GaussianTrack] = field(default_factory=list)
    c_lu: float = 0.75

    def __post_init__(self) -> None:
        if not 0.0 < self.c_lu < 1.0:
            raise ValueError("c_lu must lie in (0, 1)")


def _cell_center(cell: CellCoord) -> np.ndarray:
    return np.array([float(cell.row), float(cell.col)])


def lu_associate(state: LuState, obs_cell: CellCoord) -> int | None:
    """Index of the first track subsuming the cell at 95%, if any."""
    center = _cell_center(obs_cell)
    for i, track in enumerate(state.tracks):
        d = center - track.mean2d
        m2 = float(d @ np.linalg.solve(track.cov2d, d))
        if m2 <= CHI2_GATE_95:
            return i
    return None


def lu_update_track(track: GaussianTrack, obs_cell: CellCoord, obs_var: float) -> GaussianTrack:
    """Gaussian-product update of a track with an isotropic observation."""
    if obs_var <= 0:
        raise ValueError("obs_var must be positive")
    q = _cell_center(obs_cell)
    sigma_obs = obs_var * np.eye(2)
    total = track.cov2d + sigma_obs
    try:
        gain = np.linalg.solve(total.T, track.cov2d.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular track update: {exc}") from exc
    mean = track.mean2d + gain @ (q - track.mean2d)
    cov = track.cov2d - gain @ track.cov2d
    cov = (cov + cov.T) / 2.0
    return GaussianTrack(mean2d=mean, cov2d=cov)


def lu_estimate(state: LuState, grid: GridSpec) -> np.ndarray:
    """Cumulative track density evaluated at every cell center."""
    est = np.zeros(grid.size)
    if not state.tracks:
        return est
    rows, cols = np.divmod(np.arange(grid.size), grid.cols)
    centers = np.stack([rows.astype(float), cols.astype(float)], axis=1)
    for track in state.tracks:
        d = centers - track.mean2d
        prec = np.linalg.inv(track.cov2d)
        m2 = np.einsum("ni,ij,nj->n", d, prec, d)
        norm = 1.0 / (2.0 * math.pi * math.sqrt(float(np.linalg.det(track.cov2d))))
        est += norm * np.exp(-0.5 * m2)
    return est


def lu_step(state: LuState, measurement: Measurement, params: NoiseParams) -> LuState:
    """Fold one measurement into the track set.

    Candidates come from thresholding at c_lu; each candidate's isotropic
    observation variance is read off the diagonal of the same noise
    covariance the Kalman path builds, so both methods share one
    location-uncertainty model.
    """
    action = measurement.action
    y = np.asarray(measurement.observation)
    sigma_z = build_sigma_z(y, action.fov, action.pose, params).sigma_z
    tracks = list(state.tracks)
    new_state = LuState(tracks=tracks, c_lu=state.c_lu)
    for q in np.flatnonzero(y >= state.c_lu):
        cell = action.fov.cells[int(q)]
        obs_var = float(sigma_z[q, q])
        hit = lu_associate(new_state, cell)
        if hit is None:
            tracks.append(GaussianTrack(mean2d=_cell_center(cell), cov2d=obs_var * np.eye(2)))
        else:
            tracks[hit] = lu_update_track(tracks[hit], cell, obs_var)
    return new_state


def lu_recovered_support(state: LuState, grid: GridSpec, density_fraction: float = 0.5) -> set[int]:
    """Cells whose cumulative density reaches a fraction of the unit mode."""
    est = lu_estimate(state, grid)
    return {int(i) for i in np.flatnonzero(est >= density_fraction * UNIT_MODE_DENSITY)}
