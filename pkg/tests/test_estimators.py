import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from skelfit.bodymodel import BodyState, body_forward, body_joints, body_landmarks
from skelfit.estimators import BodyFitter, SkeletonFitter
from skelfit.synth import NOISE_TIERS, gen_scene, warm_start


@pytest.fixture(scope="module")
def scene(models):
    return gen_scene(models, 21)


def test_params_round_trip(models):
    est = SkeletonFitter(models.skeleton, mode="plus", rounds=3)
    params = est.get_params()
    assert params["mode"] == "plus" and params["rounds"] == 3
    est.set_params(mode="osf", lr_pose=5e-3)
    assert est.mode == "osf" and est.lr_pose == 5e-3
    twin = clone(est)
    assert twin.get_params()["lr_pose"] == 5e-3 and twin is not est


def test_unfitted_raises(models):
    with pytest.raises(NotFittedError):
        SkeletonFitter(models.skeleton).predict()
    with pytest.raises(NotFittedError):
        BodyFitter(models.body).transform()


def test_skeleton_fitter(models, scene):
    targets = body_landmarks(models.body, body_forward(models.body, scene.gt_body))
    start = warm_start(scene, NOISE_TIERS["warm"], models)
    est = SkeletonFitter(models.skeleton, mode="osf_plus").fit(targets, warm_start=start)
    assert est.predict().shape == (models.skeleton.n_landmarks, 3)
    assert est.transform().shape[1] == 3
    assert est.score(targets) > -2e-3
    assert est.report_.rounds_run == 1


def test_skeleton_fitter_plus_mode(models, scene):
    targets = body_landmarks(models.body, body_forward(models.body, scene.gt_body))
    start = warm_start(scene, NOISE_TIERS["warm"], models)
    est = SkeletonFitter(models.skeleton, mode="plus", rounds=2, steps_per_round=20)
    est.fit(targets, warm_start=start, beta_body=scene.gt_body.beta)
    assert est.kp_matrix_.shape == (4, 4)


def test_input_validation(models):
    est = SkeletonFitter(models.skeleton)
    with pytest.raises(ValueError):
        est.fit(np.zeros((3, 3)))
    bad = np.zeros((models.skeleton.n_landmarks, 3))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        est.fit(bad)
    with pytest.raises(ValueError):
        SkeletonFitter().fit(np.zeros((14, 3)))


def test_body_fitter(models, scene):
    truth = scene.gt_body
    est = BodyFitter(models.body, rounds=2, steps_per_round=20).fit(scene.j_gt, init=truth)
    assert est.reprojection_error_ < 1e-2
    assert est.predict().shape == (models.body.n_joints, 2)
    np.testing.assert_allclose(est.transform(), body_forward(models.body, est.state_))
    est2 = BodyFitter(models.body, rounds=1, steps_per_round=5).fit(scene.j_gt[:, :2])
    assert est2.n_features_in_ == 2 and isinstance(est2.state_, BodyState)
    uv = est.predict()
    np.testing.assert_allclose(uv, scene.j_gt[:, :2], atol=0.05)
    assert body_joints(models.body, est.transform()).shape[0] == models.body.n_joints
