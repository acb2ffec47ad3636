"""Central finite-difference validation of every analytic gradient in the package.

Each check reduces the function under test to a scalar ``f(x)`` (vector
outputs are contracted with a fixed random cotangent) and compares the
analytic gradient with central differences. Per state it probes a random
subset of coordinates plus a few random directions; the reported error is
norm-wise over all probes of that state.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .bodymodel import BodyState, body_forward, body_forward_vjp
from .energies import ConstraintSet, EnergySpec, e_ct, e_clv, e_j, e_landmark, e_osf, e_reproj
from .geomcore import Camera, project, quat_to_matrix, rodrigues_to_matrix
from .skeleton import SkeletonPass, SkeletonState

FD_STEP = 1e-6
REL_TOL = 1e-5
N_STATES = 50
COORDS_PER_STATE = 8
DIRS_PER_STATE = 2


@dataclass
class CheckRow:
    name: str
    states: int
    max_rel_err: float
    seconds: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def probe(f, x0, grad, rng, h=FD_STEP, n_coords=COORDS_PER_STATE, n_dirs=DIRS_PER_STATE):
    """Norm-wise relative error between analytic and central-difference directional derivatives."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.asarray(grad, dtype=float)
    n = x0.size
    dirs = [np.eye(n)[i] for i in rng.choice(n, size=min(n_coords, n), replace=False)]
    dirs += [d / np.linalg.norm(d) for d in rng.standard_normal((n_dirs, n))]
    ana = np.array([grad @ d for d in dirs])
    num = np.array([(f(x0 + h * d) - f(x0 - h * d)) / (2 * h) for d in dirs])
    scale = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-300)
    return float(np.linalg.norm(ana - num) / scale)


# --------------------------------------------------------------------------- skeleton state packing


def _pack(state):
    return np.concatenate([state.beta, [state.gamma], state.t.ravel(), state.r.ravel()])


def _unpack(x, like):
    K, B = like.beta.size, like.t.shape[0]
    r = x[K + 1 + 3 * B :].reshape(like.r.shape)
    return SkeletonState(x[:K], x[K + 1 : K + 1 + 3 * B].reshape(B, 3), r, x[K], like.chart)


def _pack_grad(g):
    return np.concatenate([g.beta, [g.gamma], g.t.ravel(), g.r.ravel()])


def random_skeleton_state(model, rng, chart="quaternion"):
    """A generic state away from the shape clamp and from degenerate rotations."""
    beta = rng.uniform(-1.0, 1.0, model.n_betas)
    t = 0.03 * rng.standard_normal((model.n_blocks, 3))
    if chart == "quaternion":
        r = np.array([1.0, 0.0, 0.0, 0.0]) + 0.4 * rng.standard_normal((model.n_blocks, 4))
    else:
        r = 0.4 * rng.standard_normal((model.n_blocks, 3))
    return SkeletonState(beta, t, r, rng.uniform(-0.5, 0.5), chart)


def random_body_state(model, rng):
    pose = np.array([1.0, 0.0, 0.0, 0.0]) + 0.3 * rng.standard_normal((model.n_parts, 4))
    cam = Camera(rng.uniform(0.7, 1.3), *rng.uniform(-0.2, 0.2, 2))
    return BodyState(rng.uniform(-1, 1, model.n_betas), pose, 0.1 * rng.standard_normal(3), cam)


# --------------------------------------------------------------------------- individual checks


def _rotation_case(to_matrix, dim):
    def case(rng, models):
        if dim == 4:
            x0 = rng.standard_normal(4)
        else:
            # mix ordinary angles with the series branch near zero
            x0 = rng.standard_normal(3) * (rng.uniform(0.1, 3.0) if rng.random() < 0.8 else 1e-5)
        W = rng.standard_normal((3, 3))
        _, J = to_matrix(x0, jacobian=True)
        return (lambda x: float(np.sum(W * to_matrix(x)))), x0, np.einsum("ab,abk->k", W, J)

    return case


def _project_case(rng, models):
    X, cam = rng.standard_normal(3), np.array([rng.uniform(0.5, 2.0), *rng.standard_normal(2)])
    w = rng.standard_normal(2)
    _, d_cam = project(X, Camera.from_array(cam), jacobian=True)
    g_X = np.array([w[0], w[1], 0.0]) * cam[0]

    def f(x):
        return float(w @ project(x[:3], Camera.from_array(x[3:])))

    return f, np.concatenate([X, cam]), np.concatenate([g_X, w @ d_cam])


def _body_pack(st):
    return np.concatenate([st.beta, st.pose.ravel(), st.root_t])


def _body_unpack(x, like):
    K, P = like.beta.size, like.pose.shape[0]
    return BodyState(x[:K], x[K : K + 4 * P].reshape(P, 4), x[K + 4 * P :], like.cam)


def _body_forward_case(rng, models):
    body = models.body
    st = random_body_state(body, rng)
    W = rng.standard_normal((body.n_vertices, 3))
    d_beta, d_pose, d_root = body_forward_vjp(body, st, W)

    def f(x):
        return float(np.sum(W * body_forward(body, _body_unpack(x, st))))

    return f, _body_pack(st), np.concatenate([d_beta, d_pose.ravel(), d_root])


def _landmark_fk_case(chart):
    def case(rng, models):
        skel = models.skeleton
        st = random_skeleton_state(skel, rng, chart)
        W = rng.standard_normal((skel.n_landmarks, 3))
        sp = SkeletonPass(skel, st)
        d_posed = np.zeros_like(sp.posed)
        d_posed[skel.landmark_index] = W
        g = sp.backward(d_posed=d_posed)

        def f(x):
            return float(np.sum(W * SkeletonPass(skel, _unpack(x, st)).posed[skel.landmark_index]))

        return f, _pack(st), _pack_grad(g)

    return case


def _energy_case(fn, chart="quaternion"):
    def case(rng, models):
        skel = models.skeleton
        st = random_skeleton_state(skel, rng, chart)
        v, g = fn(models, st, rng)
        return (lambda x: fn(models, _unpack(x, st), None)[0]), _pack(st), _pack_grad(g)

    return case


_TARGETS = {}


def _targets(models, rng):
    # fixed per model so the scalar function does not change between probes
    key = id(models.skeleton)
    if key not in _TARGETS:
        rest = SkeletonPass(models.skeleton, SkeletonState.rest(models.skeleton)).posed
        noise = np.random.default_rng(7).normal(0.0, 0.05, (models.skeleton.n_landmarks, 3))
        _TARGETS[key] = rest[models.skeleton.landmark_index] + noise
    return _TARGETS[key]


_CONSTRAINTS = {}


def _constraints(models):
    key = id(models.skeleton)
    if key not in _CONSTRAINTS:
        _CONSTRAINTS[key] = ConstraintSet.from_model(models.skeleton)
    return _CONSTRAINTS[key]


def _osf_robust(models, st, rng):
    spec = EnergySpec(lambda_l=1.0, lambda_ct=0.5, lambda_j=2.0, lambda_clv=1.5, robust=True)
    v, g, _ = e_osf(models.skeleton, st, _targets(models, rng), spec, _constraints(models))
    return v, g


def _reproj_case(rng, models):
    body = models.body
    st = random_body_state(body, rng)
    j_gt = rng.uniform(-1, 1, (body.n_joints, 2))
    conf = rng.uniform(0.2, 1.0, body.n_joints)
    v, g = e_reproj(body, st, j_gt, conf, 1.3)

    def unpack(x):
        b = _body_unpack(x[3:], st)
        return BodyState(b.beta, b.pose, b.root_t, Camera.from_array(x[:3]))

    def f(x):
        return e_reproj(body, unpack(x), j_gt, conf, 1.3)[0]

    x0 = np.concatenate([st.cam.as_array(), _body_pack(st)])
    return f, x0, np.concatenate([g.cam, g.beta, g.pose.ravel(), g.root_t])


CHECKS = {
    "quat_to_matrix": _rotation_case(quat_to_matrix, 4),
    "rodrigues_to_matrix": _rotation_case(rodrigues_to_matrix, 3),
    "project": _project_case,
    "body_forward": _body_forward_case,
    "skeleton_landmarks[quaternion]": _landmark_fk_case("quaternion"),
    "skeleton_landmarks[rodrigues]": _landmark_fk_case("rodrigues"),
    "e_landmark": _energy_case(lambda m, s, r: e_landmark(m.skeleton, s, _targets(m, r))),
    "e_ct": _energy_case(lambda m, s, r: e_ct(m.skeleton, s, _constraints(m))),
    "e_j": _energy_case(lambda m, s, r: e_j(m.skeleton, s)),
    "e_clv": _energy_case(lambda m, s, r: e_clv(m.skeleton, s)),
    "e_osf[rodrigues,robust]": _energy_case(_osf_robust, "rodrigues"),
    "e_reproj": _reproj_case,
}


def run_gradcheck(models, n_states=N_STATES, seed=0, tol=REL_TOL, names=None):
    """Run every registered check on ``n_states`` random states; returns a list of :class:`CheckRow`."""
    rows = []
    for i, name in enumerate(names or CHECKS):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(n_states):
            f, x0, g = CHECKS[name](rng, models)
            worst = max(worst, probe(f, x0, g, rng))
        rows.append(CheckRow(name, n_states, worst, time.perf_counter() - t0, bool(worst < tol)))
    return rows


def format_table(rows):
    width = max(len(r.name) for r in rows)
    lines = [f"{'check':<{width}}  states  max_rel_err  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.states:>6}  {r.max_rel_err:11.2e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
