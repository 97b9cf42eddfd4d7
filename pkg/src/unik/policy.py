"""Action selection: uniform random and Thompson-sampling lookahead.

The Thompson policy draws one sample from the Gaussian posterior, treats
it as the true target vector, and scores every feasible action by the
one-step lookahead reward (expected squared distance of the updated
estimate from the sample, normalized by the expected estimate energy so
that wide-coverage actions are favored). Scoring uses only Gram-matrix
blocks of the covariance, so a full scan of ~1000 actions stays cheap.

Two reward variants exist: `frobenius` factorizes the second-moment terms
through the squared Frobenius norm of the gain, `exact` evaluates them
exactly. Scoring may be chunked across worker threads; the argmax
reduction (ties broken by lowest action index) is independent of
evaluation order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .environment import NoiseParams
from .errors import NumericalError
from .geometry import GridSpec, Heading, Pose, SensingAction, unflatten
from .inference import Belief, field_membership

__all__ = [
    "ActionSpace",
    "PosteriorSample",
    "sample_posterior",
    "reward_frobenius",
    "reward_exact",
    "select_action",
    "random_action",
]

PosteriorSample = np.ndarray

_MIN_JITTER = 1e-10
_MAX_ESCALATIONS = 6


@dataclass
class _PreparedGroup:
    """Stacked per-action arrays for all actions sharing one FOV size."""

    global_idx: np.ndarray  # (A,)
    ix: np.ndarray  # (A, Q) flat cell indices
    det: np.ndarray  # (A, Q) detection variances
    member: np.ndarray  # (A, Q, Q) uncertainty-field membership
    mcount: np.ndarray  # (A, Q) field sizes


class ActionSpace:
    """Every pose/heading combination with a nonempty field of view.

    Enumeration order (row-major cells, headings N/S/E/W) defines the
    action index used for deterministic tie-breaking.
    """

    def __init__(self, grid: GridSpec, max_range: int):
        self.grid = grid
        self.max_range = max_range
        self.actions: list[SensingAction] = []
        for i in range(grid.size):
            cell = unflatten(i, grid)
            for heading in Heading:
                action = SensingAction.from_pose(Pose(cell, heading), max_range, grid)
                if len(action.fov) > 0:
                    self.actions.append(action)
        self._prepared: dict[NoiseParams, list[_PreparedGroup]] = {}

    def __len__(self) -> int:
        return len(self.actions)

    def prepared(self, params: NoiseParams) -> list[_PreparedGroup]:
        """Scoring arrays grouped by FOV size, cached per noise params."""
        cached = self._prepared.get(params)
        if cached is not None:
            return cached
        by_q: dict[int, list[int]] = {}
        for idx, action in enumerate(self.actions):
            by_q.setdefault(len(action.fov), []).append(idx)
        groups = []
        for q, indices in sorted(by_q.items()):
            ix = np.stack([self.actions[i].flat for i in indices])
            det = np.stack(
                [
                    params.detection_coeff * np.asarray(self.actions[i].fov.depths, dtype=float) ** 2
                    for i in indices
                ]
            )
            member = np.stack(
                [
                    field_membership(self.actions[i].pose, self.actions[i].fov, params)
                    for i in indices
                ]
            )
            groups.append(
                _PreparedGroup(
                    global_idx=np.array(indices, dtype=np.intp),
                    ix=ix,
                    det=det,
                    member=member,
                    mcount=member.sum(axis=2),
                )
            )
        self._prepared[params] = groups
        return groups


def sample_posterior(belief: Belief, jitter: float, rng: np.random.Generator) -> PosteriorSample:
    """Draw one sample from N(mean, cov + jitter*I).

    The covariance is factorized through its eigendecomposition; the
    factorization counts as successful when no eigenvalue is negative.
    On failure the jitter escalates tenfold starting from 1e-10, at most
    six times, before giving up.
    """
    m = belief.mean.size
    current = float(jitter)
    escalations = 0
    while True:
        mat = belief.cov if current == 0.0 else belief.cov + current * np.eye(m)
        try:
            evals, evecs = np.linalg.eigh(mat)
            ok = bool(np.isfinite(evals).all() and evals[0] >= 0.0)
        except np.linalg.LinAlgError:
            ok = False
        if ok:
            break
        escalations += 1
        if escalations > _MAX_ESCALATIONS:
            raise NumericalError("posterior covariance factorization failed at maximum jitter")
        current = _MIN_JITTER if current < _MIN_JITTER else current * 10.0
    z = rng.standard_normal(m)
    return belief.mean + evecs @ (np.sqrt(evals) * (evecs.T @ z))


def _gain(belief: Belief, action: SensingAction, sigma_z: np.ndarray, lam: float) -> np.ndarray:
    ix = action.flat
    s = belief.cov[np.ix_(ix, ix)] + sigma_z + lam * np.eye(len(ix))
    try:
        cf = scipy.linalg.cho_factor(s, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(cf, belief.cov[ix, :], check_finite=False).T
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"reward gain solve failed: {exc}") from exc


def reward_frobenius(
    beta_tilde: PosteriorSample,
    belief: Belief,
    action: SensingAction,
    sigma_z: np.ndarray,
    lam: float,
) -> float:
    """Lookahead reward with Frobenius-factorized second-moment terms."""
    ix = action.flat
    gain = _gain(belief, action, sigma_z, lam)
    mean = belief.mean
    u = gain @ beta_tilde[ix]  # K X beta_tilde
    v = gain @ mean[ix]  # K X mean
    kf2 = float(np.sum(gain * gain))
    moment = kf2 * (float(np.trace(sigma_z)) + float(beta_tilde[ix] @ beta_tilde[ix]))
    a1 = beta_tilde - mean + v
    num = -float(a1 @ a1) + 2.0 * float(a1 @ u) - moment
    den = float((mean - v) @ (mean - v)) + moment + 2.0 * float((mean - u) @ u)
    return num / den if den > 0 else float("-inf")


def reward_exact(
    beta_tilde: PosteriorSample,
    belief: Belief,
    action: SensingAction,
    sigma_z: np.ndarray,
    lam: float,
) -> float:
    """Lookahead reward with exact second moments of the predicted update."""
    ix = action.flat
    gain = _gain(belief, action, sigma_z, lam)
    mean = belief.mean
    u = gain @ beta_tilde[ix]
    v = gain @ mean[ix]
    moment = float(u @ u) + float(np.sum((gain @ sigma_z) * gain))
    a1 = beta_tilde - mean + v
    num = -float(a1 @ a1) + 2.0 * float(a1 @ u) - moment
    den = float((mean - v) @ (mean - v)) + moment + 2.0 * float((mean - v) @ u)
    return num / den if den > 0 else float("-inf")


def _score_group(
    group: _PreparedGroup,
    beta_tilde: np.ndarray,
    mean: np.ndarray,
    cov: np.ndarray,
    cov_sq: np.ndarray,
    p_mean: np.ndarray,
    p_diff: np.ndarray,
    params: NoiseParams,
    lam: float,
    mode: str,
) -> np.ndarray:
    """Scores for one stacked group; identical values to the scalar ops."""
    ix = group.ix
    a, q = ix.shape
    pred = beta_tilde[ix]  # (A, Q)
    cand = pred >= params.obs_threshold

    # Location-uncertainty increments accumulated over candidate fields.
    w = np.where(cand, 1.0, 0.0) / group.mcount
    c1 = -w[:, :, None] * group.member
    sigma = c1 + c1.transpose(0, 2, 1)
    diag = (
        group.det
        + np.einsum("aq,aqj->aj", w, group.member)
        + w * (group.mcount - 2.0)
        + 2.0 * w
    )
    idx = np.arange(q)
    sigma[:, idx, idx] += diag

    s = cov[ix[:, :, None], ix[:, None, :]] + sigma
    s[:, idx, idx] += lam
    try:
        inv_s = np.linalg.inv(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"batched reward solve failed: {exc}") from exc

    b = cov_sq[ix[:, :, None], ix[:, None, :]]  # X P P X^T blocks
    w_u = np.einsum("aij,aj->ai", inv_s, pred)
    w_v = np.einsum("aij,aj->ai", inv_s, mean[ix])

    diff_sel = p_diff[ix]  # (P (beta_tilde - mean)) at sensed cells
    pm_sel = p_mean[ix]
    diff_u = np.einsum("aq,aq->a", diff_sel, w_u)
    diff_v = np.einsum("aq,aq->a", diff_sel, w_v)
    mean_u = np.einsum("aq,aq->a", pm_sel, w_u)
    mean_v = np.einsum("aq,aq->a", pm_sel, w_v)
    bu = np.einsum("aq,aqr->ar", w_u, b)
    uu = np.einsum("ar,ar->a", bu, w_u)
    vu = np.einsum("aq,aqr,ar->a", w_v, b, w_u)
    vv = np.einsum("aq,aqr,ar->a", w_v, b, w_v)

    tt = float(np.dot(beta_tilde - mean, beta_tilde - mean))
    bb = float(np.dot(mean, mean))
    tr_sigma = sigma[:, idx, idx].sum(axis=1)
    xb2 = np.einsum("aq,aq->a", pred, pred)

    if mode == "frobenius":
        e = np.einsum("aij,ajk->aik", inv_s, b)
        kf2 = np.einsum("aij,aji->a", e, inv_s)
        moment = kf2 * (tr_sigma + xb2)
        cross = mean_u - uu  # (mean - u)^T u
    else:
        f = np.einsum("aij,ajk->aik", inv_s, sigma)
        e = np.einsum("aij,ajk->aik", inv_s, b)
        tr_ksk = np.einsum("aij,aji->a", f, e)
        moment = uu + tr_ksk
        cross = mean_u - vu  # (mean - v)^T u

    num = -(tt + 2.0 * diff_v + vv) + 2.0 * (diff_u + vu) - moment
    den = (bb - 2.0 * mean_v + vv) + moment + 2.0 * cross
    scores = np.where(den > 0, num / den, -np.inf)
    return scores


def select_action(
    belief: Belief,
    space: ActionSpace,
    params: NoiseParams,
    lam: float,
    rng: np.random.Generator,
    mode: str = "frobenius",
    workers: int = 1,
) -> SensingAction:
    """Thompson-sampling argmax over the full action space.

    One posterior sample is drawn and treated as the true target vector;
    candidate noise covariances are built from it. Ties pick the lowest
    action index regardless of how scoring work was split.
    """
    if mode not in ("frobenius", "exact"):
        raise ValueError(f"unknown reward mode {mode!r}")
    if len(space) == 0:
        raise ValueError("action space is empty")
    beta_tilde = sample_posterior(belief, 0.0, rng)
    groups = space.prepared(params)
    cov_sq = belief.cov @ belief.cov
    p_mean = belief.cov @ belief.mean
    p_diff = belief.cov @ (beta_tilde - belief.mean)

    def score(group: _PreparedGroup) -> tuple[float, int]:
        scores = _score_group(
            group, beta_tilde, belief.mean, belief.cov, cov_sq, p_mean, p_diff, params, lam, mode
        )
        best = int(np.argmax(scores))
        ties = np.flatnonzero(scores == scores[best])
        best = int(ties[np.argmin(group.global_idx[ties])])
        return float(scores[best]), int(group.global_idx[best])

    if workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score, groups))
    else:
        results = [score(g) for g in groups]
    best_score, best_idx = max(results, key=lambda r: (r[0], -r[1]))
    return space.actions[best_idx]


def random_action(space: ActionSpace, rng: np.random.Generator) -> SensingAction:
    """Uniform draw over the feasible actions."""
    if len(space) == 0:
        raise ValueError("action space is empty")
    return space.actions[int(rng.integers(len(space)))]
