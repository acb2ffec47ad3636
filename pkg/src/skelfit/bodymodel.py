"""Surrogate parametric body: shaped, posed vertices plus the regressors
that bridge the body surface to joints, skeleton landmarks and skeleton shape.

Each vertex belongs to exactly one part and moves rigidly with it; parts
rotate about a pivot point and are chained along a kinematic tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ModelError
from .geomcore import Camera, quat_to_matrix

ROW_SUM_TOL = 1e-9


def _check_stochastic(name, W, n_cols):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] != n_cols:
        raise ModelError(f"{name} must have shape (rows, {n_cols}), got {W.shape}")
    if np.any(W < 0):
        raise ModelError(f"{name} has negative weights")
    if np.any(np.abs(W.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise ModelError(f"{name} rows must sum to 1")
    return W


def topological_order(parents):
    """Part indices ordered so that every parent precedes its children.

    Raises :class:`ModelError` unless ``parents`` describes a single rooted tree.
    """
    parents = [int(p) for p in parents]
    roots = [i for i, p in enumerate(parents) if p < 0]
    if len(roots) != 1:
        raise ModelError(f"kinematic tree needs exactly one root, found {len(roots)}")
    children = {i: [] for i in range(len(parents))}
    for i, p in enumerate(parents):
        if p >= len(parents):
            raise ModelError(f"part {i} has out-of-range parent {p}")
        if p >= 0:
            children[p].append(i)
    order, stack = [], [roots[0]]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(children[i]))
    if len(order) != len(parents):
        raise ModelError("kinematic tree is not connected or has a cycle")
    return order


@dataclass(frozen=True, eq=False)
class BodyModel:
    template_vertices: np.ndarray  # (V, 3)
    shape_dirs: np.ndarray  # (V, 3, K)
    parents: np.ndarray  # (P,), -1 for the root
    part_of: np.ndarray  # (V,)
    pivots: np.ndarray  # (P, 3) rest rotation centers
    pivot_shape_dirs: np.ndarray  # (P, 3, K)
    joint_regressor: np.ndarray  # (J, V)
    landmark_regressor: np.ndarray  # (L, V)
    kp_matrix: np.ndarray  # (K_skel, K)
    part_names: tuple = ()
    joint_names: tuple = ()
    landmark_names: tuple = ()
    order: tuple = field(init=False, repr=False)

    def __post_init__(self):
        conv = {
            "template_vertices": float,
            "shape_dirs": float,
            "parents": int,
            "part_of": int,
            "pivots": float,
            "pivot_shape_dirs": float,
            "kp_matrix": float,
        }
        for name, dtype in conv.items():
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        V = self.template_vertices.shape[0]
        P = len(self.parents)
        if self.template_vertices.shape != (V, 3):
            raise ModelError("template_vertices must be (V, 3)")
        if self.shape_dirs.ndim != 3 or self.shape_dirs.shape[:2] != (V, 3):
            raise ModelError("shape_dirs must be (V, 3, K)")
        K = self.shape_dirs.shape[2]
        if self.part_of.shape != (V,) or self.part_of.min() < 0 or self.part_of.max() >= P:
            raise ModelError("part_of must assign every vertex to a valid part")
        if self.pivots.shape != (P, 3) or self.pivot_shape_dirs.shape != (P, 3, K):
            raise ModelError("pivots / pivot_shape_dirs have the wrong shape")
        if self.kp_matrix.ndim != 2 or self.kp_matrix.shape[1] != K:
            raise ModelError(f"kp_matrix must be (K_skel, {K})")
        for name in ("joint_regressor", "landmark_regressor"):
            arr = _check_stochastic(name, getattr(self, name), V)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "order", tuple(topological_order(self.parents)))

    @property
    def n_vertices(self):
        return self.template_vertices.shape[0]

    @property
    def n_parts(self):
        return len(self.parents)

    @property
    def n_betas(self):
        return self.shape_dirs.shape[2]

    @property
    def n_joints(self):
        return self.joint_regressor.shape[0]

    @property
    def n_landmarks(self):
        return self.landmark_regressor.shape[0]

    @property
    def root(self):
        return self.order[0]

    def with_kp_matrix(self, kp):
        return replace(self, kp_matrix=np.array(kp, dtype=float))

    def to_dict(self):
        return {
            "templateVertices": self.template_vertices.tolist(),
            "shapeDirs": self.shape_dirs.tolist(),
            "tree": self.parents.tolist(),
            "partOf": self.part_of.tolist(),
            "pivots": self.pivots.tolist(),
            "pivotShapeDirs": self.pivot_shape_dirs.tolist(),
            "jointRegressor": self.joint_regressor.tolist(),
            "landmarkRegressor": self.landmark_regressor.tolist(),
            "kpMatrix": self.kp_matrix.tolist(),
            "partNames": list(self.part_names),
            "jointNames": list(self.joint_names),
            "landmarkNames": list(self.landmark_names),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                template_vertices=d["templateVertices"],
                shape_dirs=d["shapeDirs"],
                parents=d["tree"],
                part_of=d["partOf"],
                pivots=d["pivots"],
                pivot_shape_dirs=d["pivotShapeDirs"],
                joint_regressor=d["jointRegressor"],
                landmark_regressor=d["landmarkRegressor"],
                kp_matrix=d["kpMatrix"],
                part_names=tuple(d.get("partNames", ())),
                joint_names=tuple(d.get("jointNames", ())),
                landmark_names=tuple(d.get("landmarkNames", ())),
            )
        except KeyError as exc:
            raise ModelError(f"body model document missing field {exc}") from None


@dataclass(eq=False)
class BodyState:
    """theta = {cam, beta_body, pose}; pose is one quaternion per part plus a root translation."""

    beta: np.ndarray
    pose: np.ndarray  # (P, 4)
    root_t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cam: Camera = field(default_factory=Camera)

    def __post_init__(self):
        self.beta = np.array(self.beta, dtype=float)
        self.pose = np.array(self.pose, dtype=float)
        self.root_t = np.array(self.root_t, dtype=float)
        if not isinstance(self.cam, Camera):
            self.cam = Camera.from_array(self.cam)

    @classmethod
    def neutral(cls, model):
        pose = np.zeros((model.n_parts, 4))
        pose[:, 0] = 1.0
        return cls(np.zeros(model.n_betas), pose)

    def copy(self):
        return BodyState(self.beta.copy(), self.pose.copy(), self.root_t.copy(), self.cam)

    def to_dict(self):
        return {
            "betaBody": self.beta.tolist(),
            "pose": self.pose.tolist(),
            "rootTranslation": self.root_t.tolist(),
            "cam": self.cam.as_array().tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["betaBody"], d["pose"], d["rootTranslation"], Camera.from_array(d["cam"]))


def _check_state(model, state):
    if state.beta.shape != (model.n_betas,):
        raise ModelError(f"beta_body must have length {model.n_betas}, got {state.beta.shape}")
    if state.pose.shape != (model.n_parts, 4):
        raise ModelError(f"pose must be ({model.n_parts}, 4), got {state.pose.shape}")
    if state.root_t.shape != (3,):
        raise ModelError("root translation must be a 3-vector")


def _kinematics(model, state):
    beta = state.beta
    verts = model.template_vertices + model.shape_dirs @ beta
    piv = model.pivots + model.pivot_shape_dirs @ beta
    R_local, dR_local = quat_to_matrix(state.pose, jacobian=True)
    Rg = np.empty_like(R_local)
    # displacement of each posed pivot from its rest position; exactly zero at identity pose
    disp = np.empty((model.n_parts, 3))
    eye = np.eye(3)
    for p in model.order:
        a = model.parents[p]
        if a < 0:
            Rg[p] = R_local[p]
            disp[p] = state.root_t
        else:
            Rg[p] = Rg[a] @ R_local[p]
            disp[p] = (Rg[a] - eye) @ (piv[p] - piv[a]) + disp[a]
    return verts, piv, R_local, dR_local, Rg, piv + disp


def body_part_transforms(model, state):
    """Per-part global rotations ``(P, 3, 3)``, posed pivots ``(P, 3)`` and shaped rest pivots.

    A rest point ``x`` on part ``p`` is posed as ``Rg[p] @ (x - pivots[p]) + origin[p]``.
    """
    _check_state(model, state)
    _, piv, _, _, Rg, origin = _kinematics(model, state)
    return Rg, origin, piv


def body_forward(model, state):
    """Posed vertices (V, 3) for ``state``."""
    _check_state(model, state)
    verts, piv, _, _, Rg, origin = _kinematics(model, state)
    p = model.part_of
    local = verts - piv[p]
    # verts + (R - I) local + displacement keeps the identity pose bit-exact
    return verts + np.einsum("vij,vj->vi", Rg[p] - np.eye(3), local) + (origin - piv)[p]


def body_forward_vjp(model, state, grad_verts):
    """Pull a gradient w.r.t. posed vertices back to ``(d_beta, d_pose, d_root_t)``."""
    _check_state(model, state)
    verts, piv, R_local, dR_dq, Rg, origin = _kinematics(model, state)
    G = np.asarray(grad_verts, dtype=float)
    p = model.part_of
    P = model.n_parts
    local = verts - piv[p]

    dRg = np.zeros((P, 3, 3))
    np.add.at(dRg, p, G[:, :, None] * local[:, None, :])
    d_origin = np.zeros((P, 3))
    np.add.at(d_origin, p, G)
    d_local = np.einsum("vji,vj->vi", Rg[p], G)
    d_beta = np.einsum("vik,vi->k", model.shape_dirs, d_local)
    d_piv = np.zeros((P, 3))
    np.add.at(d_piv, p, -d_local)

    dR_local = np.zeros((P, 3, 3))
    d_root_t = np.zeros(3)
    for q in reversed(model.order):
        a = model.parents[q]
        if a < 0:
            dR_local[q] = dRg[q]
            d_piv[q] += d_origin[q]
            d_root_t = d_origin[q].copy()
            continue
        off = piv[q] - piv[a]
        dRg[a] += np.outer(d_origin[q], off) + dRg[q] @ R_local[q].T
        dR_local[q] = Rg[a].T @ dRg[q]
        d_origin[a] += d_origin[q]
        d_off = Rg[a].T @ d_origin[q]
        d_piv[q] += d_off
        d_piv[a] -= d_off
    d_beta += np.einsum("pik,pi->k", model.pivot_shape_dirs, d_piv)
    d_pose = np.einsum("pij,pijk->pk", dR_local, dR_dq)
    return d_beta, d_pose, d_root_t


def body_joints(model, verts):
    """Body joints as convex combinations of vertices."""
    return model.joint_regressor @ np.asarray(verts, dtype=float)


def body_landmarks(model, verts):
    """Skeleton-target landmarks regressed from the body surface."""
    return model.landmark_regressor @ np.asarray(verts, dtype=float)


def kp_map(model, beta_body):
    """Skeleton shape coefficients predicted from body shape coefficients."""
    return model.kp_matrix @ np.asarray(beta_body, dtype=float)
