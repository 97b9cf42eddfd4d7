"""Uncertainty-aware Kalman posterior updates over the target vector.

The posterior over the flattened grid is Gaussian. Each measurement is a
selection of FOV cells; its noise covariance combines a distance-dependent
detection-variance diagonal with location-uncertainty increments built
from the cells where each thresholded candidate target might truly be.
The process model is static (targets do not move), so the prediction step
is the identity and all work happens in the measurement update, done in
Joseph form for numerical robustness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .environment import Measurement, NoiseParams, Observation
from .errors import NumericalError
from .geometry import FieldOfView, GridSpec, Pose, SensingAction, polar_about_agent

__all__ = [
    "Belief",
    "UncertaintyField",
    "MeasurementNoiseCov",
    "initial_belief",
    "threshold_observation",
    "uncertainty_field",
    "field_membership",
    "build_sigma_z",
    "kf_update",
    "unik_step",
    "recovered_support",
]


@dataclass
class Belief:
    """Gaussian posterior: mean vector and full covariance over all cells."""

    mean: np.ndarray
    cov: np.ndarray

    def copy(self) -> "Belief":
        return Belief(self.mean.copy(), self.cov.copy())


@dataclass(frozen=True)
class UncertaintyField:
    """FOV indices where one observed target might actually be located."""

    observed_fov_idx: int
    member_fov_idxs: frozenset[int]

    def __post_init__(self) -> None:
        if self.observed_fov_idx not in self.member_fov_idxs:
            raise ValueError("field must contain its observed index")

    @property
    def m(self) -> int:
        return len(self.member_fov_idxs)


@dataclass
class MeasurementNoiseCov:
    """Per-action measurement-noise covariance (FOV-sized, symmetric)."""

    sigma_z: np.ndarray


def initial_belief(grid: GridSpec, prior_var: float) -> Belief:
    """Uniform prior mean 1/M with isotropic covariance prior_var * I."""
    if prior_var <= 0:
        raise ValueError("prior_var must be positive")
    m = grid.size
    return Belief(mean=np.full(m, 1.0 / m), cov=prior_var * np.eye(m))


def threshold_observation(y: Observation, c_thr: float) -> set[int]:
    """FOV indices whose score reaches the candidate threshold (inclusive)."""
    return {int(i) for i in np.flatnonzero(np.asarray(y) >= c_thr)}


def field_membership(pose: Pose, fov: FieldOfView, params: NoiseParams) -> np.ndarray:
    """Boolean matrix whose row i is the uncertainty field of FOV index i.

    Cell j belongs to the field of an observation at cell i when their
    radial distances about the agent differ by at most radial_field_bound
    and their bearings by at most angular_spread. Row i always contains i.
    """
    n = len(fov)
    radial = np.empty(n)
    bearing = np.empty(n)
    for i, cell in enumerate(fov.cells):
        radial[i], bearing[i] = polar_about_agent(pose, cell)
    close_r = np.abs(radial[:, None] - radial[None, :]) <= params.radial_field_bound
    close_b = np.abs(bearing[:, None] - bearing[None, :]) <= params.angular_spread
    return close_r & close_b


def uncertainty_field(
    observed_fov_idx: int,
    pose: Pose,
    fov: FieldOfView,
    params: NoiseParams,
) -> UncertaintyField:
    """Location-uncertainty field of one observed target."""
    if not 0 <= observed_fov_idx < len(fov):
        raise ValueError(f"observed index {observed_fov_idx} outside FOV")
    row = field_membership(pose, fov, params)[observed_fov_idx]
    return UncertaintyField(
        observed_fov_idx=observed_fov_idx,
        member_fov_idxs=frozenset(int(i) for i in np.flatnonzero(row)),
    )


def build_sigma_z(
    y: Observation,
    fov: FieldOfView,
    pose: Pose,
    params: NoiseParams,
) -> MeasurementNoiseCov:
    """Assemble the measurement-noise covariance for one observation.

    Starts from the detection-variance diagonal, then for every thresholded
    candidate target adds the second moment of the cell-swap noise implied
    by its m-member uncertainty field: (m-1)/m on the observed diagonal,
    1/m on each other member's diagonal and -1/m on the observed-member
    off-diagonals. Overlapping fields accumulate.
    """
    n = len(fov)
    sigma = np.zeros((n, n))
    depths = np.asarray(fov.depths, dtype=float)
    np.fill_diagonal(sigma, params.detection_coeff * depths**2)
    candidates = threshold_observation(y, params.obs_threshold)
    if candidates:
        member = field_membership(pose, fov, params)
        for q_obs in sorted(candidates):
            row = member[q_obs]
            m = int(row.sum())
            if m <= 1:
                continue
            others = np.flatnonzero(row)
            others = others[others != q_obs]
            sigma[q_obs, q_obs] += (m - 1) / m
            sigma[others, others] += 1.0 / m
            sigma[q_obs, others] += -1.0 / m
            sigma[others, q_obs] += -1.0 / m
    return MeasurementNoiseCov(sigma_z=sigma)


def kf_update(
    belief: Belief,
    action: SensingAction,
    y: Observation,
    sigma_z: MeasurementNoiseCov,
    lam: float,
) -> Belief:
    """Measurement update with regularized gain and Joseph-form covariance.

    The static process model makes the prediction step the identity. The
    gain solves (X P X^T + Sigma_z + lam*I) via a symmetric positive
    definite factorization; the covariance update keeps the Joseph form
    and is symmetrized afterwards to guard against floating-point drift.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    ix = action.flat
    q = len(ix)
    if len(y) != q or sigma_z.sigma_z.shape != (q, q):
        raise ValueError("measurement dimensions are inconsistent")
    p = belief.cov
    s = p[np.ix_(ix, ix)] + sigma_z.sigma_z + lam * np.eye(q)
    try:
        cf = scipy.linalg.cho_factor(s, lower=True, check_finite=False)
        gain_t = scipy.linalg.cho_solve(cf, p[ix, :], check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance solve failed: {exc}") from exc
    if not np.all(np.isfinite(gain_t)):
        raise NumericalError("innovation covariance solve produced non-finite gain")
    gain = gain_t.T  # M x Q
    mean = belief.mean + gain @ (np.asarray(y) - belief.mean[ix])
    # Joseph form: (I - KX) P (I - KX)^T + K Sigma_z K^T, with X a row
    # selector so KX only touches the sensed columns.
    ap = p - gain @ p[ix, :]
    cov = ap - ap[:, ix] @ gain_t + gain @ sigma_z.sigma_z @ gain_t
    cov = (cov + cov.T) / 2.0
    return Belief(mean=mean, cov=cov)


def unik_step(
    belief: Belief,
    measurement: Measurement,
    params: NoiseParams,
    lam: float,
) -> Belief:
    """One full inference step: threshold, build the noise model, update."""
    action = measurement.action
    sigma_z = build_sigma_z(measurement.observation, action.fov, action.pose, params)
    return kf_update(belief, action, measurement.observation, sigma_z, lam)


def recovered_support(belief: Belief, decision_threshold: float) -> set[int]:
    """Cells whose posterior mean reaches the decision threshold."""
    return {int(i) for i in np.flatnonzero(belief.mean >= decision_threshold)}
