"""Adam-based descent engine and the skeleton / body fitting regimes.

Regimes:

* ``osf``      multi-round fit of per-block (t, r) under the full anatomical objective.
* ``osf_plus`` one round, landmark term only; relies on a warm start.
* ``plus``     multi-round full objective with gamma and the KP matrix (hence
               beta_skel) also free.
* ``body``     reprojection fit of camera, body shape and pose.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .bodymodel import BodyState, body_forward, body_landmarks
from .energies import TERMS, ConstraintSet, EnergySpec, e_osf, e_reproj, loss_theta, loss_skel_supervision
from .exceptions import NotConverged, NumericalError, UnderconstrainedError
from .geomcore import Camera, convert_chart, project
from .skeleton import SkeletonState, SupervisionTarget, effective_shape, skeleton_forward

log = logging.getLogger(__name__)

MODES = ("osf", "osf_plus", "plus", "body")
MODE_ALIASES = {"osfplus": "osf_plus", "osf+": "osf_plus", "osf_plus": "osf_plus", "osf": "osf", "plus": "plus", "body": "body"}
FREE_VARIABLES = {
    "osf": ("t", "r"),
    "osf_plus": ("t", "r"),
    "plus": ("t", "r", "gamma", "kp"),
    "body": ("cam", "beta", "pose"),
}
DEFAULT_ROUNDS = {"osf": 15, "osf_plus": 1, "plus": 20, "body": 30}
DEFAULT_LR_DECAY = {"osf": 0.8, "osf_plus": 0.8, "plus": 0.8, "body": 0.9}
BODY_PRIOR_ANNEAL = 0.3  # prior weight factor per round
MIN_CONFIDENT_KEYPOINTS = 4


@dataclass
class OptimizerConfig:
    mode: str = "osf"
    rounds: int | None = None  # None picks DEFAULT_ROUNDS[mode]
    steps_per_round: int = 100
    lr_pose: float = 1e-2
    lr_shape: float = 1e-2
    lr_decay: float | None = None  # None picks DEFAULT_LR_DECAY[mode]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = 1e-9
    chart: str = "quaternion"
    seed: int = 0
    energy: EnergySpec = field(default_factory=EnergySpec)
    free: tuple | None = None

    def __post_init__(self):
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if isinstance(self.energy, dict):
            self.energy = EnergySpec.from_dict(self.energy)
        if self.rounds is None:
            self.rounds = DEFAULT_ROUNDS[self.mode]
        if self.lr_decay is None:
            self.lr_decay = DEFAULT_LR_DECAY[self.mode]
        if self.mode == "osf_plus":
            self.rounds = 1
            self.energy = self.energy.landmark_only()
        if self.rounds < 1 or self.steps_per_round < 1:
            raise ValueError("rounds and steps_per_round must be >= 1")
        if self.free is None:
            self.free = FREE_VARIABLES[self.mode]
        self.free = tuple(self.free)

    def to_dict(self):
        d = asdict(self)
        d["free"] = list(self.free)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in names}
        if "energy" in kw:
            kw["energy"] = EnergySpec.from_dict(kw["energy"])
        return cls(**kw)


@dataclass
class FitReport:
    state: object
    mode: str
    trace: list  # one dict per evaluated step
    round_energies: list  # best-so-far energy at the end of each round
    wall_time: float
    converged: bool
    rounds_run: int
    steps_per_round: int
    clamped: np.ndarray | None = None
    kp_matrix: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def final_energy(self):
        return self.round_energies[-1] if self.round_energies else float("nan")

    def to_dict(self):
        d = {
            "mode": self.mode,
            "state": self.state.to_dict(),
            "roundEnergies": list(self.round_energies),
            "finalEnergy": self.final_energy,
            "wallTime": self.wall_time,
            "converged": bool(self.converged),
            "roundsRun": self.rounds_run,
            "stepsPerRound": self.steps_per_round,
            "iterationUnit": "round = stepsPerRound Adam steps",
        }
        if self.clamped is not None:
            d["clamped"] = [bool(c) for c in self.clamped]
        if self.kp_matrix is not None:
            d["kpMatrix"] = np.asarray(self.kp_matrix).tolist()
        d.update(self.extra)
        return d


@dataclass
class MinimizeResult:
    x: dict
    value: float
    trace: list
    round_energies: list
    converged: bool
    rounds_run: int
    wall_time: float


def minimize(objective, x0, config, lrs=None, on_round=None):
    """Adam descent over a dict of named arrays, returning the best iterate seen.

    ``objective(x)`` returns ``(value, grads, terms)`` where ``grads`` maps
    every key of ``x`` to an array of the same shape. ``lrs`` gives a step size
    per key (default ``config.lr_pose``); step sizes decay by
    ``config.lr_decay`` after each round. A round whose relative improvement
    of the best energy falls below ``config.tol`` ends the run as converged.
    ``on_round(round_index, best_x)`` is called after each round.
    """
    t0 = time.perf_counter()
    x = {k: np.array(v, dtype=float) for k, v in x0.items()}
    lrs = {k: (lrs or {}).get(k, config.lr_pose) for k in x}
    m = {k: np.zeros_like(v) for k, v in x.items()}
    v2 = {k: np.zeros_like(v) for k, v in x.items()}
    best_val, best_x = np.inf, {k: a.copy() for k, a in x.items()}
    trace, round_energies = [], []
    converged, step, prev_best = False, 0, np.inf
    rounds_run = 0
    for rnd in range(config.rounds):
        rounds_run = rnd + 1
        scale = config.lr_decay**rnd
        for inner in range(config.steps_per_round):
            value, grads, terms = objective(x)
            row = {"round": rnd, "step": inner, "total": float(value)}
            row.update({k: float(terms.get(k, 0.0)) for k in terms})
            trace.append(row)
            finite = np.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads.values())
            if not finite:
                raise NumericalError(f"non-finite energy or gradient at round {rnd}, step {inner}", trace)
            if value < best_val:
                best_val = float(value)
                best_x = {k: a.copy() for k, a in x.items()}
            if all(not np.any(g) for g in grads.values()):
                converged = True
                break
            step += 1
            b1c = 1.0 - config.beta1**step
            b2c = 1.0 - config.beta2**step
            for k in x:
                g = grads[k]
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g
                v2[k] = config.beta2 * v2[k] + (1.0 - config.beta2) * g * g
                x[k] = x[k] - lrs[k] * scale * (m[k] / b1c) / (np.sqrt(v2[k] / b2c) + config.eps)
        round_energies.append(best_val)
        if on_round is not None:
            on_round(rnd, best_x)
        if converged:
            break
        if np.isfinite(prev_best) and prev_best - best_val <= config.tol * max(abs(prev_best), 1e-300):
            converged = True
            break
        prev_best = best_val
    return MinimizeResult(best_x, best_val, trace, round_energies, converged, rounds_run, time.perf_counter() - t0)


# --------------------------------------------------------------------------- skeleton


def _plus_kp_init(kp, beta_body, beta_warm):
    """Smallest change to ``kp`` so that ``kp @ beta_body`` reproduces the warm-start shape."""
    nb = float(beta_body @ beta_body)
    if nb < 1e-24:
        return kp.copy()
    return kp + np.outer(beta_warm - kp @ beta_body, beta_body) / nb


def fit_skeleton_to_targets(model, targets, warm_start, config, beta_body=None, kp_matrix=None, constraints=None):
    """Fit skeleton state to landmark targets.

    ``beta_body`` and ``kp_matrix`` are needed by the ``plus`` regime, where the
    skeleton shape is ``kp_matrix @ beta_body`` and the matrix itself is optimized.
    Returns a :class:`FitReport` whose ``state`` is the optimized skeleton state.
    """
    targets = np.asarray(targets, dtype=float)
    chart = config.chart
    init = warm_start.copy()
    if init.chart != chart:
        init = SkeletonState(init.beta, init.t, convert_chart(init.r, init.chart, chart), init.gamma, chart)
    constraints = constraints if constraints is not None else ConstraintSet.from_model(model)
    spec = config.energy
    free = set(config.free)
    plus = "kp" in free
    if plus:
        if beta_body is None or kp_matrix is None:
            raise ValueError("the plus regime needs beta_body and kp_matrix")
        beta_body = np.asarray(beta_body, dtype=float)
        kp0 = _plus_kp_init(np.asarray(kp_matrix, dtype=float), beta_body, init.beta)
        offset = init.beta - kp0 @ beta_body

    x0 = {"t": init.t, "r": init.r}
    if "gamma" in free:
        x0["gamma"] = np.array([init.gamma])
    if plus:
        x0["kp"] = kp0
    elif "beta" in free:
        x0["beta"] = init.beta
    lrs = {"t": config.lr_pose, "r": config.lr_pose, "gamma": config.lr_shape, "kp": config.lr_shape, "beta": config.lr_shape}

    def to_state(x):
        beta = init.beta
        if plus:
            beta = x["kp"] @ beta_body + offset
        elif "beta" in x:
            beta = x["beta"]
        gamma = float(x["gamma"][0]) if "gamma" in x else init.gamma
        return SkeletonState(beta, x["t"], x["r"], gamma, chart)

    def objective(x):
        value, g, terms = e_osf(model, to_state(x), targets, spec, constraints)
        grads = {"t": g.t, "r": g.r}
        if "gamma" in x:
            grads["gamma"] = np.array([g.gamma])
        if plus:
            grads["kp"] = np.outer(g.beta, beta_body)
        elif "beta" in x:
            grads["beta"] = g.beta
        return value, grads, terms

    res = minimize(objective, x0, config, lrs)
    state = to_state(res.x)
    _, clamped = effective_shape(model, state.beta, state.gamma)
    return FitReport(
        state=state,
        mode=config.mode,
        trace=res.trace,
        round_energies=res.round_energies,
        wall_time=res.wall_time,
        converged=res.converged,
        rounds_run=res.rounds_run,
        steps_per_round=config.steps_per_round,
        clamped=clamped,
        kp_matrix=res.x["kp"] if plus else None,
    )


def fit_skeleton(skeleton_model, body_model, body_state, warm_start, config):
    """Fit the skeleton inside a posed body, targeting the body's regressed landmarks."""
    verts = body_forward(body_model, body_state)
    targets = body_landmarks(body_model, verts)
    return fit_skeleton_to_targets(
        skeleton_model, targets, warm_start, config, beta_body=body_state.beta, kp_matrix=body_model.kp_matrix
    )


def make_supervision(report, model, state=None):
    """Regression targets (t_gt, r_gt, landmark_gt) from a converged skeleton fit."""
    if not report.converged:
        raise NotConverged("supervision targets need a converged fit")
    state = report.state if state is None else state
    landmarks = skeleton_forward(model, state).landmarks
    return SupervisionTarget(state.t.copy(), state.r.copy(), landmarks.copy(), state.chart)


def supervision_loss(model, state, target, spec):
    """loss_skel_supervision evaluated at ``state``'s own landmarks."""
    return loss_skel_supervision(state, target, skeleton_forward(model, state).landmarks, spec)


# --------------------------------------------------------------------------- body


def _pose_prior(pose, skip):
    """sum over parts of sin^2(angle / 2); zero at the identity. Returns value and gradient."""
    norm = np.linalg.norm(pose, axis=1, keepdims=True)
    n = pose / norm
    w = n[:, 0]
    value = 1.0 - w * w
    e0 = np.zeros_like(pose)
    e0[:, 0] = 1.0
    grad = -2.0 * w[:, None] * (e0 - w[:, None] * n) / norm
    value[skip], grad[skip] = 0.0, 0.0
    return float(value.sum()), grad


def reprojection_error(body_model, body_state, j_gt, conf=None):
    """Mean 2D distance between projected body joints and confident observations."""
    j_gt = np.asarray(j_gt, dtype=float)
    if conf is None:
        conf = j_gt[:, 2] if j_gt.shape[1] == 3 else np.ones(len(j_gt))
    uv = project(body_model.joint_regressor @ body_forward(body_model, body_state), body_state.cam)
    d = np.linalg.norm(uv - j_gt[:, :2], axis=1)
    mask = np.asarray(conf) > 0
    return float(d[mask].mean()) if mask.any() else float("nan")


def fit_body_to_keypoints(model, keypoints, init, config):
    """SMPLify-style fit of (cam, beta_body, pose) to 2D keypoints with confidences.

    Objective: ``lambda_hj * reprojection + w_k * (pose prior + |beta|^2)``,
    where the pose prior excludes the root's global orientation and the prior
    weight starts at ``lambda_prior`` and shrinks by ``BODY_PRIOR_ANNEAL`` each round.
    Round energies are therefore comparable only within a round.
    """
    kp = np.asarray(keypoints, dtype=float)
    j_gt, conf = kp[:, :2], (kp[:, 2] if kp.shape[1] == 3 else np.ones(len(kp)))
    if int(np.sum(conf > 0)) < MIN_CONFIDENT_KEYPOINTS:
        raise UnderconstrainedError(f"need at least {MIN_CONFIDENT_KEYPOINTS} confident keypoints")
    lam = config.energy.lambda_hj
    free = set(config.free)
    root_t = init.root_t.copy()
    x0 = {"cam": init.cam.as_array(), "beta": init.beta, "pose": init.pose}
    x0 = {k: v for k, v in x0.items() if k in free}

    def to_state(x):
        cam = x.get("cam", init.cam.as_array()).copy()
        cam[0] = max(cam[0], 1e-6)
        return BodyState(x.get("beta", init.beta), x.get("pose", init.pose), root_t, Camera.from_array(cam))

    def objective_at(weight):
        def objective(x):
            st = to_state(x)
            e, g = e_reproj(model, st, j_gt, conf, lam)
            prior_pose, g_prior = _pose_prior(st.pose, model.root)
            value = e + weight * (prior_pose + float(st.beta @ st.beta))
            grads = {
                "cam": g.cam,
                "beta": g.beta + 2.0 * weight * st.beta,
                "pose": g.pose + weight * g_prior,
            }
            return value, {k: grads[k] for k in x}, {"reproj": e, "prior": value - e}

        return objective

    # one minimize stage per round, the prior weight annealed between stages
    t0 = time.perf_counter()
    x, snapshots, trace, round_energies = x0, [], [], []
    stage_cfg = replace(config, rounds=1)
    for rnd in range(config.rounds):
        scale = config.lr_decay**rnd
        lrs = {"cam": config.lr_pose * scale, "pose": config.lr_pose * scale, "beta": config.lr_shape * scale}
        res = minimize(objective_at(config.energy.lambda_prior * BODY_PRIOR_ANNEAL**rnd), x, stage_cfg, lrs)
        for row in res.trace:
            row["round"] = rnd
        trace.extend(res.trace)
        x = res.x
        snapshots.append(to_state(x))
        round_energies.append(res.value)
        if res.converged:  # zero gradient: later stages would not move
            break
    res = MinimizeResult(x, round_energies[-1], trace, round_energies, True, len(round_energies),
                         time.perf_counter() - t0)
    state = to_state(res.x)
    theta_curve = [loss_theta(s, state) for s in snapshots]
    best = np.minimum.accumulate(theta_curve).tolist() if theta_curve else []
    return FitReport(
        state=state,
        mode="body",
        trace=res.trace,
        round_energies=res.round_energies,
        wall_time=res.wall_time,
        converged=res.converged,
        rounds_run=res.rounds_run,
        steps_per_round=config.steps_per_round,
        extra={
            "reprojectionError": reprojection_error(model, state, j_gt, conf),
            "lossThetaInit": loss_theta(init, state),
            "lossThetaRounds": theta_curve,
            "lossThetaBest": best,
        },
    )


def fit_body(model, scene, config, init=None):
    """Fit the body to a scene's observed keypoints; ``init`` defaults to the neutral state."""
    init = BodyState.neutral(model) if init is None else init
    return fit_body_to_keypoints(model, scene.j_gt, init, config)


# --------------------------------------------------------------------------- charts


def compare_rotation_charts(problems, config):
    """Run every problem under both rotation charts with identical settings.

    ``problems`` is a sequence of ``(skeleton_model, targets, warm_start, beta_body, kp_matrix)``.
    Returns one dict per problem with the final energies and the best-so-far
    energy curve for each chart.
    """
    problems = list(problems)
    if not problems:
        raise ValueError("problem suite is empty")
    rows = []
    for i, (model, targets, warm, beta_body, kp) in enumerate(problems):
        row = {"problem": i}
        for chart in ("quaternion", "rodrigues"):
            cfg = replace(config, chart=chart)
            rep = fit_skeleton_to_targets(model, targets, warm, cfg, beta_body, kp)
            curve = np.minimum.accumulate([r["total"] for r in rep.trace]).tolist()
            row[chart] = {"final": rep.final_energy, "curve": curve}
        rows.append(row)
    return rows
