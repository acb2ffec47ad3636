import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_skeleton
from skelfit.exceptions import ModelError
from skelfit.geomcore import convert_chart, matrix_to_quat, quat_to_matrix, rodrigues_to_matrix
from skelfit.gradcheck import probe, random_skeleton_state
from skelfit.skeleton import (
    LandmarkDef,
    Seam,
    SkeletonModel,
    SkeletonPass,
    SkeletonState,
    effective_shape,
    rest_pose_model,
    skeleton_forward,
    skeleton_landmarks,
)


def _box_model(lo, hi):
    m = toy_skeleton(k=len(lo))
    return SkeletonModel(m.blocks, m.seams, m.clavicle_refs, lo, hi, m.landmarks, m.ct_pairs)


def test_effective_shape_examples():
    m = _box_model([0.0, 0.0, 0.0], [2.0, 2.0, 2.0])
    beta, clamped = effective_shape(m, np.zeros(3), 1.0)
    np.testing.assert_array_equal(beta, np.ones(3))
    assert not clamped.any()
    b = np.array([0.3, 1.2, 0.5])
    assert np.array_equal(effective_shape(m, b, 0.0)[0], b)
    sym = _box_model([-1.0, -2.0], [1.0, 2.0])
    assert np.array_equal(effective_shape(sym, np.array([0.2, -0.4]), 3.7)[0], [0.2, -0.4])


def test_effective_shape_clamps_and_flags():
    m = _box_model([0.0, 0.0], [2.0, 2.0])
    beta, clamped = effective_shape(m, np.array([5.0, -1.0]), 0.0)
    np.testing.assert_array_equal(beta, [2.0, 0.0])
    assert clamped.tolist() == [True, True]


def _oracle_block_vertices(model, state):
    beta, _ = effective_shape(model, state.beta, state.gamma)
    R = quat_to_matrix(convert_chart(state.r, state.chart, "quaternion"))
    out = []
    for b, blk in enumerate(model.blocks):
        x = blk.vertices + blk.shape_dirs @ beta
        c = blk.center + blk.center_shape_dirs @ beta
        out.append(x @ R[b].T + c + state.t[b])
    return out


def test_identity_state_returns_template(models):
    skel = models.skeleton
    posed = skeleton_forward(skel, SkeletonState.rest(skel))
    for b, blk in enumerate(skel.blocks):
        assert np.array_equal(posed.vertices[b], blk.vertices + blk.center)
    assert np.array_equal(posed.points, rest_pose_model(skel, np.zeros(skel.n_betas)).points)


@pytest.mark.parametrize("chart", ["quaternion", "rodrigues"])
def test_forward_matches_per_block_oracle(models, rng, chart):
    skel = models.skeleton
    for _ in range(5):
        st_ = random_skeleton_state(skel, rng, chart)
        posed = skeleton_forward(skel, st_)
        for got, want in zip(posed.vertices, _oracle_block_vertices(skel, st_)):
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_translation_is_local(models):
    skel = models.skeleton
    st_ = SkeletonState.rest(skel)
    base = skeleton_forward(skel, st_)
    d = np.array([0.01, -0.02, 0.03])
    st_.t[3] = d
    moved = skeleton_forward(skel, st_)
    for b in range(skel.n_blocks):
        expect = base.vertices[b] + (d if b == 3 else 0.0)
        np.testing.assert_allclose(moved.vertices[b], expect, atol=1e-15)


def _global_motion(state, R, d, centers):
    """Apply x -> R x + d to every block: r_b <- R r_b, t_b <- R (c_b + t_b) + d - c_b."""
    Rb = quat_to_matrix(convert_chart(state.r, state.chart, "quaternion"))
    r = convert_chart(matrix_to_quat(R @ Rb), "quaternion", state.chart)
    t = (centers + state.t) @ R.T + d - centers
    return SkeletonState(state.beta, t, r, state.gamma, state.chart)


@pytest.mark.parametrize("chart", ["quaternion", "rodrigues"])
def test_global_rigid_motion_moves_everything_rigidly(models, rng, chart):
    skel = models.skeleton
    st_ = random_skeleton_state(skel, rng, chart)
    sp = SkeletonPass(skel, st_)
    R, d = rodrigues_to_matrix(rng.standard_normal(3)), rng.standard_normal(3)
    moved = skeleton_forward(skel, _global_motion(st_, R, d, sp.C))
    posed = sp.as_posed()
    np.testing.assert_allclose(moved.landmarks, posed.landmarks @ R.T + d, atol=1e-10)
    np.testing.assert_allclose(moved.cp, posed.cp @ R.T + d, atol=1e-10)
    np.testing.assert_allclose(np.vstack(moved.mp), np.vstack(posed.mp) @ R.T + d, atol=1e-10)


def test_landmarks_are_block_points(models, rng):
    skel = models.skeleton
    st_ = random_skeleton_state(skel, rng)
    posed = skeleton_forward(skel, st_)
    sp = SkeletonPass(skel, st_)
    R = quat_to_matrix(st_.r)
    for i, lm in enumerate(skel.landmarks):
        x = lm.local + lm.shape_dirs @ sp.beta_eff
        np.testing.assert_allclose(skeleton_landmarks(skel, posed)[i], R[lm.block] @ x + sp.C[lm.block] + st_.t[lm.block],
                                   atol=1e-12)


def test_landmark_on_missing_block_rejected():
    m = toy_skeleton()
    bad = [*m.landmarks, LandmarkDef("ghost", 5, [0, 0, 0], np.zeros((3, 1)))]
    with pytest.raises(ModelError):
        SkeletonModel(m.blocks, m.seams, m.clavicle_refs, m.beta_min, m.beta_max, bad)


def test_landmark_translation_locality(models):
    skel = models.skeleton
    st_ = SkeletonState.rest(skel)
    base = skeleton_forward(skel, st_).landmarks
    st_.t[0] = [0.1, 0, 0]
    moved = skeleton_forward(skel, st_).landmarks
    on0 = np.array([lm.block == 0 for lm in skel.landmarks])
    np.testing.assert_allclose(moved[on0] - base[on0], np.tile([0.1, 0, 0], (on0.sum(), 1)), atol=1e-15)
    assert np.array_equal(moved[~on0], base[~on0])


@pytest.mark.parametrize("chart", ["quaternion", "rodrigues"])
def test_landmark_gradients_match_finite_differences(models, rng, chart):
    skel = models.skeleton
    for _ in range(50):
        st_ = random_skeleton_state(skel, rng, chart)
        W = rng.standard_normal((skel.n_landmarks, 3))
        sp = SkeletonPass(skel, st_)
        d = np.zeros_like(sp.posed)
        d[skel.landmark_index] = W
        g = sp.backward(d_posed=d)
        K, B = skel.n_betas, skel.n_blocks

        def f(x):
            s = SkeletonState(x[:K], x[K + 1:K + 1 + 3 * B].reshape(B, 3), x[K + 1 + 3 * B:].reshape(st_.r.shape),
                              x[K], chart)
            return float(np.sum(W * skeleton_forward(skel, s).landmarks))

        x0 = np.concatenate([st_.beta, [st_.gamma], st_.t.ravel(), st_.r.ravel()])
        grad = np.concatenate([g.beta, [g.gamma], g.t.ravel(), g.r.ravel()])
        assert probe(f, x0, grad, rng) < 1e-5


def test_clamped_shape_has_zero_gradient(models):
    skel = models.skeleton
    st_ = SkeletonState.rest(skel, beta=np.array([10.0, 0.0, 0.0, 0.0]))
    sp = SkeletonPass(skel, st_)
    g = sp.backward(d_posed=np.ones_like(sp.posed))
    assert g.beta[0] == 0.0 and g.beta[1] != 0.0


def test_rest_pose_model(models):
    skel = models.skeleton
    beta = np.array([0.5, -1.0, 0.3, 2.0])
    a, b = rest_pose_model(skel, beta), rest_pose_model(skel, beta)
    assert np.array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.points, skeleton_forward(skel, SkeletonState.rest(skel, beta=beta)).points)


def test_seam_gaps_match_declared_rest_gaps(models):
    skel = models.skeleton
    rest = rest_pose_model(skel, np.zeros(skel.n_betas)).points
    ia, ib = skel.seam_pairs
    np.testing.assert_allclose(np.linalg.norm(rest[ia] - rest[ib], axis=1), skel.seam_rest_gaps, atol=1e-12)


def test_inconsistent_seam_gap_rejected():
    m = toy_skeleton()
    seams = [Seam(0, 1, [(0, 0)], [0.2])]
    with pytest.raises(ModelError):
        SkeletonModel(m.blocks, seams, m.clavicle_refs, m.beta_min, m.beta_max, m.landmarks)


def test_disconnected_seam_graph_rejected():
    m = toy_skeleton()
    with pytest.raises(ModelError):
        SkeletonModel(m.blocks, [], m.clavicle_refs, m.beta_min, m.beta_max, m.landmarks)


def test_bad_bounds_rejected():
    m = toy_skeleton()
    with pytest.raises(ModelError):
        SkeletonModel(m.blocks, m.seams, m.clavicle_refs, [1.0], [0.0], m.landmarks)


def test_shipped_model_sizes(models):
    skel = models.skeleton
    assert skel.n_blocks == 12 and skel.n_betas == 4 and skel.n_landmarks == 14
    assert all(30 <= len(b.vertices) <= 80 for b in skel.blocks)
    assert len(skel.ct_pairs) == 300


def test_json_round_trip(models, rng):
    skel = models.skeleton
    again = SkeletonModel.from_dict(skel.to_dict())
    st_ = random_skeleton_state(skel, rng)
    assert np.array_equal(skeleton_forward(again, st_).points, skeleton_forward(skel, st_).points)
    back = SkeletonState.from_dict(st_.to_dict())
    assert np.array_equal(back.r, st_.r) and back.gamma == st_.gamma
    with pytest.raises(ModelError):
        SkeletonModel.from_dict({"blocks": []})


def test_state_shape_checked(models):
    skel = models.skeleton
    with pytest.raises(ModelError):
        skeleton_forward(skel, SkeletonState(np.zeros(4), np.zeros((3, 3)), np.zeros((3, 3)), 0.0, "rodrigues"))
    with pytest.raises(ModelError):
        SkeletonState(np.zeros(4), np.zeros((12, 3)), np.zeros((12, 3)), 0.0, "euler")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(-2, 2))
def test_effective_shape_stays_in_box(models, beta, gamma):
    skel = models.skeleton
    b, clamped = effective_shape(skel, np.array(beta), gamma)
    assert np.all(b >= skel.beta_min) and np.all(b <= skel.beta_max)
    raw = np.array(beta) + gamma * 0.5 * (skel.beta_min + skel.beta_max)
    assert np.array_equal(clamped, (raw < skel.beta_min) | (raw > skel.beta_max))
