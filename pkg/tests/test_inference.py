import numpy as np
import pytest
from oracles import batch_gaussian_posterior, joseph_reference, selection_matrix, swap_second_moment

from unik.environment import GroundTruth, Measurement, NoiseParams, sense
from unik.geometry import CellCoord, GridSpec, Heading, Pose, SensingAction
from unik.inference import (
    Belief,
    build_sigma_z,
    initial_belief,
    kf_update,
    recovered_support,
    threshold_observation,
    uncertainty_field,
    unik_step,
)

GRID = GridSpec(16, 16)
PARAMS = NoiseParams()


def _action(row, col, heading=Heading.NORTH, max_range=5, grid=GRID):
    return SensingAction.from_pose(Pose(CellCoord(row, col), heading), max_range, grid)


def _tiny_action(grid, indices):
    """Synthetic action selecting arbitrary flat cells of a small grid."""
    cells = [CellCoord(i // grid.cols, i % grid.cols) for i in indices]
    free = next(i for i in range(grid.size) if i not in set(indices))
    pose = Pose(CellCoord(free // grid.cols, free % grid.cols), Heading.NORTH)
    from unik.geometry import FieldOfView

    fov = FieldOfView(cells=cells, depths=np.ones(len(cells), dtype=np.intp))
    return SensingAction(pose=pose, fov=fov, flat=np.array(indices, dtype=np.intp))


def test_initial_belief_paper_defaults():
    belief = initial_belief(GRID, 1.0)
    assert belief.mean == pytest.approx(np.full(256, 1 / 256))
    np.testing.assert_array_equal(belief.cov, np.eye(256))
    one = initial_belief(GridSpec(1, 1), 2.5)
    assert one.mean.tolist() == [1.0]
    assert one.cov.tolist() == [[2.5]]


def test_threshold_observation():
    assert threshold_observation(np.array([0.1, 0.6, 0.5]), 0.5) == {1, 2}
    assert threshold_observation(np.zeros(4), 0.5) == set()


def test_uncertainty_field_singleton():
    action = _action(8, 8)
    field = uncertainty_field(
        5, action.pose, action.fov, NoiseParams(radial_field_bound=0.0, angular_spread=0.0)
    )
    assert field.member_fov_idxs == {5}
    assert field.m == 1


def test_uncertainty_field_center_line():
    from unik.geometry import polar_about_agent

    action = _action(8, 8)
    # Observed cell straight ahead at depth 3 is FOV index 3+5+3 = 11.
    obs_idx = next(
        i for i, c in enumerate(action.fov.cells) if (c.row, c.col) == (5, 8)
    )
    field = uncertainty_field(obs_idx, action.pose, action.fov, PARAMS)
    # Independent check: enumerate polar coordinates of all 35 cells.
    r_obs, b_obs = polar_about_agent(action.pose, action.fov.cells[obs_idx])
    expected = set()
    for i, cell in enumerate(action.fov.cells):
        r, b = polar_about_agent(action.pose, cell)
        if abs(r - r_obs) <= 2.0 and abs(b - b_obs) <= 12.0:
            expected.add(i)
    assert field.member_fov_idxs == expected
    assert field.m == 5
    member_cells = {(action.fov.cells[i].row, action.fov.cells[i].col) for i in field.member_fov_idxs}
    assert member_cells == {(7, 8), (6, 8), (5, 8), (4, 8), (3, 8)}


def test_sigma_z_five_member_field_values():
    action = _action(8, 8)
    obs_idx = next(i for i, c in enumerate(action.fov.cells) if (c.row, c.col) == (5, 8))
    y = np.zeros(len(action.fov))
    y[obs_idx] = 1.0
    sigma = build_sigma_z(y, action.fov, action.pose, PARAMS).sigma_z
    depths = np.asarray(action.fov.depths, float)
    detection = 0.02 * depths**2
    field = uncertainty_field(obs_idx, action.pose, action.fov, PARAMS)
    for i in range(len(action.fov)):
        for j in range(len(action.fov)):
            expected = detection[i] if i == j else 0.0
            if i == j == obs_idx:
                expected += 4 / 5
            elif i == j and i in field.member_fov_idxs:
                expected += 1 / 5
            elif i == obs_idx and j in field.member_fov_idxs:
                expected += -1 / 5
            elif j == obs_idx and i in field.member_fov_idxs:
                expected += -1 / 5
            assert sigma[i, j] == pytest.approx(expected, abs=1e-12)


def test_sigma_z_no_candidates_pure_diagonal():
    action = _action(8, 8)
    y = np.zeros(len(action.fov))
    sigma = build_sigma_z(y, action.fov, action.pose, PARAMS).sigma_z
    depths = np.asarray(action.fov.depths, float)
    np.testing.assert_allclose(sigma, np.diag(0.02 * depths**2))


def test_sigma_z_singleton_field_no_increment():
    action = _action(8, 8)
    y = np.zeros(len(action.fov))
    y[0] = 1.0
    params = NoiseParams(radial_field_bound=0.0, angular_spread=0.0)
    sigma = build_sigma_z(y, action.fov, action.pose, params).sigma_z
    depths = np.asarray(action.fov.depths, float)
    np.testing.assert_allclose(sigma, np.diag(0.02 * depths**2))


def test_sigma_z_matches_enumeration_oracle():
    rng = np.random.default_rng(0)
    action = _action(8, 8)
    for _ in range(40):
        y = np.where(rng.random(len(action.fov)) < 0.15, 1.0, 0.0)
        sigma = build_sigma_z(y, action.fov, action.pose, PARAMS).sigma_z
        depths = np.asarray(action.fov.depths, float)
        expected = np.diag(0.02 * depths**2)
        for obs in sorted(threshold_observation(y, 0.5)):
            field = uncertainty_field(obs, action.pose, action.fov, PARAMS)
            expected += swap_second_moment(len(action.fov), obs, field.member_fov_idxs)
        np.testing.assert_allclose(sigma, expected, atol=1e-12)


def test_sigma_z_field_row_sums_zero():
    action = _action(8, 8)
    y = np.zeros(len(action.fov))
    y[11] = 1.0
    sigma = build_sigma_z(y, action.fov, action.pose, PARAMS).sigma_z
    depths = np.asarray(action.fov.depths, float)
    increments = sigma - np.diag(0.02 * depths**2)
    np.testing.assert_allclose(increments.sum(axis=0), np.zeros(len(action.fov)), atol=1e-12)
    np.testing.assert_allclose(increments, increments.T, atol=0)


def test_kf_update_exact_single_cell():
    grid = GridSpec(3, 3)
    belief = initial_belief(grid, 2.0)
    action = _tiny_action(grid, [4])
    y = np.array([0.8])
    out = kf_update(belief, action, y, _cov(np.zeros((1, 1))), 0.0)
    assert out.mean[4] == pytest.approx(0.8)
    assert out.cov[4, 4] == pytest.approx(0.0, abs=1e-12)
    others = [i for i in range(9) if i != 4]
    np.testing.assert_allclose(out.mean[others], belief.mean[others])
    np.testing.assert_allclose(out.cov[np.ix_(others, others)], belief.cov[np.ix_(others, others)])


def _cov(matrix):
    from unik.inference import MeasurementNoiseCov

    return MeasurementNoiseCov(sigma_z=np.asarray(matrix, float))


def test_kf_update_zero_gain_limit():
    grid = GridSpec(3, 3)
    belief = initial_belief(grid, 1.0)
    action = _tiny_action(grid, [1, 5])
    y = np.array([1.0, 0.0])
    out = kf_update(belief, action, y, _cov(np.eye(2)), 1e12)
    np.testing.assert_allclose(out.mean, belief.mean, atol=1e-6)
    np.testing.assert_allclose(out.cov, belief.cov, atol=1e-6)


def test_kf_update_matches_dense_joseph_reference():
    rng = np.random.default_rng(3)
    grid = GridSpec(2, 3)
    m = grid.size
    for _ in range(50):
        a = rng.normal(size=(m, m))
        belief = Belief(mean=rng.normal(size=m), cov=a @ a.T + 0.1 * np.eye(m))
        q = int(rng.integers(1, 4))
        idx = rng.choice(m, size=q, replace=False).tolist()
        action = _tiny_action(grid, idx)
        b = rng.normal(size=(q, q))
        sigma = b @ b.T + 0.05 * np.eye(q)
        y = rng.normal(size=q)
        lam = float(rng.choice([0.0, 0.5, 1.0]))
        out = kf_update(belief, action, y, _cov(sigma), lam)
        ref_mean, ref_cov = joseph_reference(
            belief.mean, belief.cov, selection_matrix(idx, m), y, sigma, lam
        )
        np.testing.assert_allclose(out.mean, ref_mean, rtol=1e-9, atol=1e-11)
        np.testing.assert_allclose(out.cov, ref_cov, rtol=1e-9, atol=1e-11)


def test_sequential_updates_match_batch_conditioning():
    rng = np.random.default_rng(4)
    grid = GridSpec(2, 3)
    m = grid.size
    belief = initial_belief(grid, 1.0)
    xs, ys, sigmas, actions = [], [], [], []
    for _ in range(3):
        q = int(rng.integers(1, 4))
        idx = rng.choice(m, size=q, replace=False).tolist()
        b = rng.normal(size=(q, q))
        sigma = b @ b.T + 0.1 * np.eye(q)
        y = rng.normal(size=q)
        xs.append(selection_matrix(idx, m))
        ys.append(y)
        sigmas.append(sigma)
        actions.append(_tiny_action(grid, idx))
    seq = belief
    for action, y, sigma in zip(actions, ys, sigmas):
        seq = kf_update(seq, action, y, _cov(sigma), 0.0)
    import scipy.linalg

    ref_mean, ref_cov = batch_gaussian_posterior(
        belief.mean,
        belief.cov,
        np.vstack(xs),
        np.concatenate(ys),
        scipy.linalg.block_diag(*sigmas),
    )
    np.testing.assert_allclose(seq.mean, ref_mean, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(seq.cov, ref_cov, rtol=1e-6, atol=1e-9)


def test_update_order_invariance_with_lambda_zero():
    rng = np.random.default_rng(5)
    grid = GridSpec(2, 3)
    m = grid.size
    belief = Belief(mean=rng.normal(size=m), cov=2.0 * np.eye(m))
    a1 = _tiny_action(grid, [0, 3])
    a2 = _tiny_action(grid, [2, 5])
    y1, y2 = rng.normal(size=2), rng.normal(size=2)
    s1 = _cov(0.3 * np.eye(2))
    s2 = _cov(0.7 * np.eye(2))
    fwd = kf_update(kf_update(belief, a1, y1, s1, 0.0), a2, y2, s2, 0.0)
    rev = kf_update(kf_update(belief, a2, y2, s2, 0.0), a1, y1, s1, 0.0)
    np.testing.assert_allclose(fwd.mean, rev.mean, atol=1e-8)
    np.testing.assert_allclose(fwd.cov, rev.cov, atol=1e-8)


def test_repeated_measurements_shrink_sensed_variance():
    grid = GridSpec(3, 3)
    belief = initial_belief(grid, 1.0)
    action = _tiny_action(grid, [2, 7])
    y = np.array([0.9, 0.1])
    sigma = _cov(0.5 * np.eye(2))
    prev = belief
    for _ in range(6):
        nxt = kf_update(prev, action, y, sigma, 0.0)
        for cell in (2, 7):
            assert nxt.cov[cell, cell] <= prev.cov[cell, cell] + 1e-12
        prev = nxt


def test_joseph_form_preserves_symmetry_and_psd():
    rng = np.random.default_rng(6)
    grid = GridSpec(4, 4)
    belief = initial_belief(grid, 1.0)
    for _ in range(500):
        q = int(rng.integers(1, 6))
        idx = rng.choice(grid.size, size=q, replace=False).tolist()
        action = _tiny_action(grid, idx)
        sigma = _cov(np.diag(rng.uniform(0.01, 0.6, size=q)))
        y = rng.normal(size=q)
        belief = kf_update(belief, action, y, sigma, float(rng.uniform(0.0, 1.0)))
    np.testing.assert_allclose(belief.cov, belief.cov.T, rtol=1e-9, atol=1e-12)
    assert float(np.linalg.eigvalsh(belief.cov)[0]) >= -1e-8


def test_unik_step_pulls_empty_region_toward_zero():
    belief = initial_belief(GRID, 1.0)
    action = _action(8, 8)
    y = np.zeros(len(action.fov))
    meas = Measurement(action=action, observation=y, origin_agent=0, seq=0)
    out = unik_step(belief, meas, PARAMS, 1.0)
    assert (out.mean[action.flat] < belief.mean[action.flat]).all()


def test_noiseless_full_coverage_recovers_support():
    # Sense every cell exactly once (disjoint blocks) with all noise off;
    # exact conditioning must pin the posterior mean to the truth.
    grid = GridSpec(8, 8)
    rng = np.random.default_rng(7)
    truth = make_truth(grid, rng, k=4)
    params = NoiseParams(
        detection_coeff=0.0, location_var=0.0, radial_field_bound=0.0, angular_spread=0.0
    )
    belief = initial_belief(grid, 1.0)
    seen = set()
    for seq, start in enumerate(range(0, grid.size, 8)):
        idx = list(range(start, start + 8))
        action = _tiny_action(grid, idx)
        y = sense(truth, action, params, rng)
        belief = unik_step(
            belief,
            Measurement(action=action, observation=y, origin_agent=0, seq=seq),
            params,
            0.0,
        )
        seen.update(idx)
    assert seen == set(range(grid.size))
    assert recovered_support(belief, 0.5) == set(truth.support)
    np.testing.assert_allclose(belief.mean, truth.beta, atol=1e-10)


def make_truth(grid, rng, k):
    from unik.environment import make_ground_truth

    return make_ground_truth(grid, k, rng)


def test_recovered_support_examples():
    belief = initial_belief(GRID, 1.0)
    assert recovered_support(belief, 0.5) == set()
    belief.mean[17] = 0.9
    assert recovered_support(belief, 0.5) == {17}
