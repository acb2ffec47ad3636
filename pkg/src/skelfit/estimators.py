"""Estimator-style wrappers around the fitting regimes.

Both classes follow the scikit-learn conventions: constructor arguments are
stored verbatim and exposed through ``get_params``/``set_params``, ``fit``
returns ``self``, and fitted attributes carry a trailing underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .bodymodel import BodyState, body_forward, body_joints
from .energies import EnergySpec
from .geomcore import project
from .metrics import d_mean
from .optim import OptimizerConfig, fit_body_to_keypoints, fit_skeleton_to_targets
from .skeleton import SkeletonState, skeleton_forward


def _config(est, mode):
    energy = EnergySpec.from_dict(est.energy) if isinstance(est.energy, dict) else (est.energy or EnergySpec())
    return OptimizerConfig(
        mode=mode,
        rounds=est.rounds,
        steps_per_round=est.steps_per_round,
        lr_pose=est.lr_pose,
        lr_shape=est.lr_shape,
        lr_decay=est.lr_decay,
        tol=est.tol,
        chart=getattr(est, "chart", "quaternion"),
        seed=est.seed,
        energy=energy,
    )


def _check_points(X, n_rows, n_cols, what):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[0] != n_rows or X.shape[1] not in n_cols:
        raise ValueError(f"{what} must have shape ({n_rows}, {'|'.join(map(str, n_cols))}), got {X.shape}")
    return X


class SkeletonFitter(BaseEstimator):
    """Fits a skeleton state to 3D landmark targets.

    ``fit(X)`` takes ``X`` of shape ``(L, 3)``. ``predict()`` returns the
    fitted skeleton landmarks and ``transform()`` the posed skeleton vertices.
    """

    def __init__(self, skeleton_model=None, mode="osf", chart="quaternion", rounds=None, steps_per_round=100,
                 lr_pose=1e-2, lr_shape=1e-2, lr_decay=None, tol=1e-9, seed=0, energy=None):
        self.skeleton_model = skeleton_model
        self.mode = mode
        self.chart = chart
        self.rounds = rounds
        self.steps_per_round = steps_per_round
        self.lr_pose = lr_pose
        self.lr_shape = lr_shape
        self.lr_decay = lr_decay
        self.tol = tol
        self.seed = seed
        self.energy = energy

    def fit(self, X, y=None, warm_start=None, beta_body=None, kp_matrix=None):
        model = self.skeleton_model
        if model is None:
            raise ValueError("skeleton_model is required")
        X = _check_points(X, model.n_landmarks, (3,), "landmark targets")
        config = _config(self, self.mode)
        init = warm_start if warm_start is not None else SkeletonState.rest(model, chart=self.chart)
        if beta_body is not None and kp_matrix is None:
            kp_matrix = np.eye(model.n_betas, len(beta_body))
        report = fit_skeleton_to_targets(model, X, init, config, beta_body=beta_body, kp_matrix=kp_matrix)
        self.state_ = report.state
        self.report_ = report
        self.kp_matrix_ = report.kp_matrix
        self.n_features_in_ = 3
        return self

    def predict(self, X=None):
        check_is_fitted(self, "state_")
        return skeleton_forward(self.skeleton_model, self.state_).landmarks

    def transform(self, X=None):
        check_is_fitted(self, "state_")
        return skeleton_forward(self.skeleton_model, self.state_).all_vertices

    def score(self, X, y=None):
        """Negative mean landmark distance to ``X``."""
        X = _check_points(X, self.skeleton_model.n_landmarks, (3,), "landmark targets")
        return -d_mean(self.predict(), X)


class BodyFitter(BaseEstimator):
    """Fits body camera, shape and pose to 2D keypoints ``(J, 2)`` or ``(J, 3)`` with confidences."""

    def __init__(self, body_model=None, rounds=None, steps_per_round=100, lr_pose=1e-2, lr_shape=1e-2,
                 lr_decay=None, tol=1e-9, seed=0, energy=None):
        self.body_model = body_model
        self.rounds = rounds
        self.steps_per_round = steps_per_round
        self.lr_pose = lr_pose
        self.lr_shape = lr_shape
        self.lr_decay = lr_decay
        self.tol = tol
        self.seed = seed
        self.energy = energy

    def fit(self, X, y=None, init=None):
        model = self.body_model
        if model is None:
            raise ValueError("body_model is required")
        X = _check_points(X, model.n_joints, (2, 3), "keypoints")
        init = init if init is not None else BodyState.neutral(model)
        report = fit_body_to_keypoints(model, X, init, _config(self, "body"))
        self.state_ = report.state
        self.report_ = report
        self.reprojection_error_ = report.extra["reprojectionError"]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X=None):
        """Projected 2D joints of the fitted body."""
        check_is_fitted(self, "state_")
        verts = body_forward(self.body_model, self.state_)
        return project(body_joints(self.body_model, verts), self.state_.cam)

    def transform(self, X=None):
        """Posed body vertices."""
        check_is_fitted(self, "state_")
        return body_forward(self.body_model, self.state_)
