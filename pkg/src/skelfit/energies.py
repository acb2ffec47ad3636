"""Objective terms for skeleton and body fitting.

Skeleton terms return ``(value, StateGrad)``. They all share
:class:`~skelfit.skeleton.SkeletonPass`, so a weighted sum costs a single
forward/backward sweep through the point table.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .bodymodel import body_forward, body_forward_vjp
from .exceptions import ModelError
from .geomcore import align_quat_sign, convert_chart, normalize_quat, project
from .skeleton import SkeletonPass

ROBUST_EPS = 1e-3
SMOOTH_L1_DELTA = 1.0
TERMS = ("landmark", "ct", "j", "clv")


@dataclass
class EnergySpec:
    lambda_l: float = 1.0
    lambda_ct: float = 1.0
    lambda_j: float = 1.0
    lambda_clv: float = 1.0
    lambda_hj: float = 1.0
    lambda_prior: float = 1e-2  # body pose/shape prior, start of the anneal
    lambda_r: float = 0.1
    lambda_t: float = 10.0
    use_landmark: bool = True
    use_ct: bool = True
    use_j: bool = True
    use_clv: bool = True
    robust: bool = False

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("lambda_") and getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    def weights(self):
        """Effective weight per skeleton term (0 when toggled off)."""
        return {
            "landmark": self.lambda_l if self.use_landmark else 0.0,
            "ct": self.lambda_ct if self.use_ct else 0.0,
            "j": self.lambda_j if self.use_j else 0.0,
            "clv": self.lambda_clv if self.use_clv else 0.0,
        }

    def landmark_only(self):
        """The same spec with the three anatomical terms switched off."""
        return EnergySpec(**{**asdict(self), "use_ct": False, "use_j": False, "use_clv": False})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ConstraintSet:
    """Cross-block vertex pairs restrained to their SM_0 distances."""

    index_a: np.ndarray
    index_b: np.ndarray
    rest_distances: np.ndarray  # at beta_eff = 0, for inspection

    @classmethod
    def from_model(cls, model):
        ia, ib = model.ct_index
        rest = model.rest_points(np.zeros(model.n_betas))
        return cls(ia, ib, np.linalg.norm(rest[ia] - rest[ib], axis=1))

    def __len__(self):
        return len(self.index_a)


def _rho_norm(vec, robust):
    """Penalty on the Euclidean norm of each row and its gradient w.r.t. the row."""
    if robust:
        s = np.sqrt(np.sum(vec * vec, axis=-1) + ROBUST_EPS**2)
        return float(np.sum(s - ROBUST_EPS)), vec / s[..., None]
    return float(np.sum(vec * vec)), 2.0 * vec


def _rho_scalar(r, robust):
    if robust:
        s = np.sqrt(r * r + ROBUST_EPS**2)
        return float(np.sum(s - ROBUST_EPS)), r / s
    return float(np.sum(r * r)), 2.0 * r


def _unit(d):
    n = np.linalg.norm(d, axis=1)
    safe = np.where(n > 1e-15, n, 1.0)
    return n, np.where((n > 1e-15)[:, None], d / safe[:, None], 0.0)


def _distance_term(sp, ia, ib, robust, out):
    """sum rho(|p_a - p_b| - |p0_a - p0_b|) with p0 taken from SM_0."""
    if len(ia) == 0:
        return 0.0
    n, u = _unit(sp.posed[ia] - sp.posed[ib])
    n0, u0 = _unit(sp.rest[ia] - sp.rest[ib])
    value, g = _rho_scalar(n - n0, robust)
    w = out["weight"]
    if w:
        gu, gu0 = w * g[:, None] * u, w * g[:, None] * u0
        np.add.at(out["posed"], ia, gu)
        np.add.at(out["posed"], ib, -gu)
        np.add.at(out["rest"], ia, -gu0)
        np.add.at(out["rest"], ib, gu0)
    return value


def _landmark_term(sp, targets, robust, out):
    idx = sp.model.landmark_index
    value, g = _rho_norm(sp.posed[idx] - targets, robust)
    if out["weight"]:
        out["posed"][idx] += out["weight"] * g
    return value


def _ct_term(sp, constraints, robust, out):
    return _distance_term(sp, constraints.index_a, constraints.index_b, robust, out)


def _j_term(sp, robust, out):
    ia, ib = sp.model.seam_pairs
    return _distance_term(sp, ia, ib, robust, out)


def _clv_term(sp, robust, out):
    model = sp.model
    if not model.clavicle_refs:
        raise ModelError("model has no clavicle/thorax reference")
    value = 0.0
    w = out["weight"]
    for ref in model.clavicle_refs:
        m = model.mp_index[ref.clavicle][ref.match_point]
        c = model.cp_index[ref.thorax]
        R = sp.R[ref.thorax]
        u = sp.posed[m] - sp.posed[c]
        e = R.T @ u - (sp.rest[m] - sp.rest[c])
        v, g = _rho_norm(e[None], robust)
        value += v
        if w:
            g = w * g[0]
            Rg = R @ g
            out["posed"][m] += Rg
            out["posed"][c] -= Rg
            out["R"][ref.thorax] += np.outer(u, g)
            out["rest"][m] -= g
            out["rest"][c] += g
    return value


def _evaluate(model, state, spec, targets=None, constraints=None, only=None):
    sp = SkeletonPass(model, state)
    weights = spec.weights()
    if only is not None:
        weights = {k: (1.0 if k == only else 0.0) for k in TERMS}
    N, B = len(sp.posed), model.n_blocks
    terms, total = {}, 0.0
    posed, rest, dR = np.zeros((N, 3)), np.zeros((N, 3)), np.zeros((B, 3, 3))
    for name in TERMS:
        w = weights[name]
        if w == 0.0 and only is None and name != "landmark":
            terms[name] = 0.0
            continue
        if name == "landmark" and targets is None:
            terms[name] = 0.0
            continue
        out = {"weight": w, "posed": posed, "rest": rest, "R": dR}
        if name == "landmark":
            v = _landmark_term(sp, np.asarray(targets, dtype=float), spec.robust, out)
        elif name == "ct":
            cs = constraints if constraints is not None else ConstraintSet.from_model(model)
            v = _ct_term(sp, cs, spec.robust, out)
        elif name == "j":
            v = _j_term(sp, spec.robust, out)
        else:
            v = _clv_term(sp, spec.robust, out)
        terms[name] = v
        total += w * v
    grad = sp.backward(d_posed=posed, d_rest=rest, d_R=dR)
    return total, grad, terms


def e_landmark(model, state, targets, robust=False):
    """Sum of squared distances between skeleton landmarks and ``targets``."""
    v, g, _ = _evaluate(model, state, EnergySpec(robust=robust), targets=targets, only="landmark")
    return v, g


def e_ct(model, state, constraints=None, robust=False):
    """Cross-block distance preservation relative to SM_0."""
    v, g, _ = _evaluate(model, state, EnergySpec(robust=robust), constraints=constraints, only="ct")
    return v, g


def e_j(model, state, robust=False):
    """Seam (match point pair) gap preservation relative to SM_0."""
    v, g, _ = _evaluate(model, state, EnergySpec(robust=robust), only="j")
    return v, g


def e_clv(model, state, robust=False):
    """Deviation of each clavicle's proximal match point from its SM_0 position in the thorax frame."""
    v, g, _ = _evaluate(model, state, EnergySpec(robust=robust), only="clv")
    return v, g


def e_osf(model, state, targets, spec, constraints=None):
    """Weighted skeleton-fitting objective.

    Returns ``(value, grad, terms)`` where ``terms`` holds the unweighted value
    of every term that was evaluated.
    """
    return _evaluate(model, state, spec, targets=targets, constraints=constraints)


@dataclass
class BodyGrad:
    beta: np.ndarray
    pose: np.ndarray
    root_t: np.ndarray
    cam: np.ndarray


def e_reproj(body_model, body_state, j_gt, conf=None, lambda_hj=1.0):
    """``lambda_hj * sum_i conf_i |project(J_i) - j_gt_i|^2`` with gradients for every body parameter."""
    j_gt = np.asarray(j_gt, dtype=float)
    if j_gt.shape[1] == 3 and conf is None:
        j_gt, conf = j_gt[:, :2], j_gt[:, 2]
    conf = np.ones(len(j_gt)) if conf is None else np.asarray(conf, dtype=float)
    verts = body_forward(body_model, body_state)
    joints = body_model.joint_regressor @ verts
    uv, d_cam = project(joints, body_state.cam, jacobian=True)
    res = uv - j_gt
    value = lambda_hj * float(np.sum(conf * np.sum(res * res, axis=1)))
    g_uv = 2.0 * lambda_hj * conf[:, None] * res
    g_cam = np.einsum("ni,nij->j", g_uv, d_cam)
    g_joints = np.zeros_like(joints)
    g_joints[:, :2] = body_state.cam.s * g_uv
    g_verts = body_model.joint_regressor.T @ g_joints
    d_beta, d_pose, d_root = body_forward_vjp(body_model, body_state, g_verts)
    return value, BodyGrad(d_beta, d_pose, d_root, g_cam)


def _smooth_l1(x, delta=SMOOTH_L1_DELTA):
    a = np.abs(x)
    return np.where(a < delta, 0.5 * x * x / delta, a - 0.5 * delta)


def loss_skel_supervision(state, target, landmarks, spec):
    """Weak supervision of regressed skeleton parameters.

    Landmark and rotation terms are squared errors, translation uses smooth-L1
    (delta = 1); each is summed over coordinates and averaged over items
    (landmarks or blocks). Rotations are compared as unit quaternions after
    resolving the q / -q ambiguity.
    """
    lms = np.asarray(landmarks, dtype=float)
    gt = np.asarray(target.landmark_gt, dtype=float)
    if lms.shape != gt.shape or state.t.shape != target.t_gt.shape:
        raise ValueError("state and supervision target dimensions differ")
    q = normalize_quat(convert_chart(state.r, state.chart, "quaternion"))
    q_gt = normalize_quat(convert_chart(target.r_gt, target.chart, "quaternion"))
    q = align_quat_sign(q, q_gt)
    l_lm = np.mean(np.sum((lms - gt) ** 2, axis=1)) if len(gt) else 0.0
    l_r = np.mean(np.sum((q - q_gt) ** 2, axis=1))
    l_t = np.mean(np.sum(_smooth_l1(state.t - target.t_gt), axis=1))
    return float(spec.lambda_l * l_lm + spec.lambda_r * l_r + spec.lambda_t * l_t)


def flatten_theta(body_state, reference=None):
    """(cam, beta_body, pose) as one vector; pose quaternions normalized and, given
    ``reference``, sign-aligned to it."""
    pose = normalize_quat(body_state.pose)
    if reference is not None:
        pose = align_quat_sign(pose, normalize_quat(reference.pose))
    return np.concatenate([body_state.cam.as_array(), body_state.beta, pose.ravel()])


def loss_theta(theta_reg, theta_opt):
    """Euclidean distance between two body parameter sets."""
    return float(np.linalg.norm(flatten_theta(theta_reg, theta_opt) - flatten_theta(theta_opt)))
