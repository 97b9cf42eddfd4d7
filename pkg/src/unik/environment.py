"""Ground-truth generation and the noisy sensing forward model.

An observation is y = X*beta + n_detect + n_locate. Location noise moves
each true target's reported cell radially along the agent's line of sight
(a cell swap inside the FOV); detection noise then corrupts every covered
cell's 0/1 label with one-sided Gaussian noise whose variance grows with
the squared projection distance, pushing scores toward the wrong label so
that both false positives and false negatives occur.

Everything here is pure given an explicit generator; concurrent trials
must each own a distinct seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import FieldOfView, GridSpec, Pose, SensingAction

__all__ = [
    "GroundTruth",
    "NoiseParams",
    "Observation",
    "Measurement",
    "make_ground_truth",
    "sample_detection_noise",
    "apply_location_noise",
    "sense",
]

# An observation is a plain float vector aligned with the FOV ordering.
Observation = np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    """Sparse 0/1 target vector over the flattened grid."""

    beta: np.ndarray
    support: frozenset[int]

    def __post_init__(self) -> None:
        if set(np.flatnonzero(self.beta).tolist()) != set(self.support):
            raise ValueError("support does not match nonzero entries of beta")


@dataclass(frozen=True)
class NoiseParams:
    """Sensing-noise and uncertainty-field parameters.

    detection_coeff scales the per-cell detection variance with the squared
    projection distance. location_var is the radial variance (cell^2) of
    the reported target position. angular_spread (degrees) and
    radial_field_bound (cells) bound the location-uncertainty field built
    around an observed target. obs_threshold is the score at or above
    which a cell counts as a candidate target.
    """

    detection_coeff: float = 0.02
    location_var: float = 0.4
    angular_spread: float = 12.0
    obs_threshold: float = 0.5
    radial_field_bound: float = 2.0

    def __post_init__(self) -> None:
        for name in ("detection_coeff", "location_var", "angular_spread", "radial_field_bound"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.obs_threshold < 1.0:
            raise ValueError("obs_threshold must lie in (0, 1)")


@dataclass
class Measurement:
    """One executed sensing action with its observation.

    origin_agent and seq identify the measurement for deduplication when
    it is shared between agents.
    """

    action: SensingAction
    observation: Observation
    origin_agent: int
    seq: int

    def __post_init__(self) -> None:
        if len(self.observation) != len(self.action.fov):
            raise ValueError("observation length does not match the action's FOV")

    @property
    def key(self) -> tuple[int, int]:
        return (self.origin_agent, self.seq)


def make_ground_truth(grid: GridSpec, k: int, rng: np.random.Generator) -> GroundTruth:
    """Draw k distinct target cells uniformly without replacement."""
    if not 0 <= k <= grid.size:
        raise ValueError(f"k must lie in [0, {grid.size}], got {k}")
    idx = rng.choice(grid.size, size=k, replace=False)
    beta = np.zeros(grid.size)
    beta[idx] = 1.0
    return GroundTruth(beta=beta, support=frozenset(int(i) for i in idx))


def sample_detection_noise(xi: float, variance: float, rng: np.random.Generator) -> float:
    """Corrupt a 0/1 label with one-sided Gaussian noise toward the wrong label."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if variance == 0:
        return float(xi)
    g = abs(rng.normal(0.0, math.sqrt(variance)))
    return float(xi + g) if xi == 0 else float(xi - g)


def apply_location_noise(
    fov: FieldOfView,
    true_hits: list[int],
    location_var: float,
    pose: Pose,
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """Radially displace each true target's reported cell along its ray.

    For each true target at FOV index q, a Gaussian radial offset is drawn
    and the point at (radial distance + offset) along the ray from the
    agent's center through q's center is snapped to the nearest cell. A
    swap (q, q') is emitted only when that cell is a different FOV cell;
    otherwise the target stays reported at its true cell.
    """
    swaps: list[tuple[int, int]] = []
    if location_var == 0:
        return swaps
    cell_to_idx = {(c.row, c.col): i for i, c in enumerate(fov.cells)}
    std = math.sqrt(location_var)
    ar, ac = float(pose.cell.row), float(pose.cell.col)
    for q in true_hits:
        cell = fov.cells[q]
        dr, dc = cell.row - ar, cell.col - ac
        radial = math.hypot(dr, dc)
        delta = rng.normal(0.0, std)
        scale = (radial + delta) / radial
        pr, pc = ar + dr * scale, ac + dc * scale
        target = (int(np.rint(pr)), int(np.rint(pc)))
        q_new = cell_to_idx.get(target)
        if q_new is not None and q_new != q:
            swaps.append((q, q_new))
    return swaps


def sense(
    truth: GroundTruth,
    action: SensingAction,
    params: NoiseParams,
    rng: np.random.Generator,
) -> Observation:
    """Produce a noisy observation of the ground truth for one action.

    Location swaps are applied to the 0/1 signal first, then detection
    noise corrupts every cell using its post-swap label.
    """
    fov = action.fov
    if len(fov) == 0:
        raise ValueError("cannot sense with an empty FOV")
    labels = truth.beta[action.flat]
    hits = [int(i) for i in np.flatnonzero(labels == 1.0)]
    swaps = apply_location_noise(fov, hits, params.location_var, action.pose, rng)
    destination = {q: q for q in hits}
    for q_from, q_to in swaps:
        destination[q_from] = q_to
    post = np.zeros(len(fov))
    for q_to in destination.values():
        post[q_to] = 1.0  # collisions clamp at 1
    y = np.empty(len(fov))
    depths = fov.depths
    for q in range(len(fov)):
        var = params.detection_coeff * float(depths[q]) ** 2
        y[q] = sample_detection_noise(post[q], var, rng)
    return y
