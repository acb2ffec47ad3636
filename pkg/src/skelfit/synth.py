"""Synthetic body/skeleton models, scenes, and the warm-start simulator.

Body and skeleton are generated from one parametric description: every
point is a fixed linear function of the body shape coefficients, attached
rigidly to one body part. Skeleton points re-express that dependence in the
skeleton shape space through a hidden ``kp_true`` matrix, so a skeleton that
follows the body part transforms with ``beta_skel = kp_true @ beta_body``
reproduces the body landmarks exactly. The shipped ``kp_matrix`` is the
identity, which is what the PLUS regime has to correct.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bodymodel import BodyModel, BodyState, body_forward, body_joints, body_landmarks, body_part_transforms
from .energies import EnergySpec
from .exceptions import GenerationError, SceneError
from .geomcore import Camera, axis_angle_to_quat, convert_chart, matrix_to_quat, project, quat_to_matrix, rodrigues_to_matrix
from .io import load_json, save_json
from .metrics import d_mean
from .optim import OptimizerConfig, fit_skeleton_to_targets
from .skeleton import BoneBlock, ClavicleRef, LandmarkDef, MatchPoint, Seam, SkeletonModel, SkeletonState, skeleton_forward

N_BETAS = 4  # height, girth, limb length, torso length
SEAM_GAP = 0.01
CT_PAIRS = 300
GT_RESIDUAL_TOL = 1e-4

# name, parent, pivot, capsule start / end (relative to pivot), radius, vertex count, shape slopes
_PARTS = [
    ("pelvis", -1, (0.0, 1.0, 0.0), (-0.08, 0.0, 0.0), (0.08, 0.0, 0.0), 0.12, 40),
    ("spine", 0, (0.0, 1.1, 0.0), (0.0, 0.0, 0.0), (0.0, 0.18, 0.0), 0.11, 36),
    ("chest", 1, (0.0, 1.3, 0.0), (0.0, 0.0, 0.0), (0.0, 0.2, 0.0), 0.14, 48),
    ("head", 2, (0.0, 1.55, 0.0), (0.0, 0.02, 0.0), (0.0, 0.23, 0.0), 0.09, 40),
    ("clav_l", 2, (0.03, 1.45, 0.03), (0.0, 0.0, 0.0), (0.14, 0.02, -0.03), 0.04, 24),
    ("arm_l", 4, (0.18, 1.47, 0.0), (0.01, 0.0, 0.0), (0.57, 0.0, 0.0), 0.045, 48),
    ("clav_r", 2, (-0.03, 1.45, 0.03), (0.0, 0.0, 0.0), (-0.14, 0.02, -0.03), 0.04, 24),
    ("arm_r", 6, (-0.18, 1.47, 0.0), (-0.01, 0.0, 0.0), (-0.57, 0.0, 0.0), 0.045, 48),
    ("leg_l", 0, (0.09, 0.95, 0.0), (0.0, -0.02, 0.0), (0.0, -0.85, 0.0), 0.07, 47),
    ("leg_r", 0, (-0.09, 0.95, 0.0), (0.0, -0.02, 0.0), (0.0, -0.85, 0.0), 0.07, 47),
]
_PART = {p[0]: i for i, p in enumerate(_PARTS)}


def _part_slopes():
    """Per-part, per-axis linear scale factors d(scale)/d(beta): (P, 3, K)."""
    C = np.zeros((len(_PARTS), 3, N_BETAS))
    C[:, 1, 0] = 0.04  # height stretches every vertical extent
    C[:, 0, 0] = 0.01
    for name in ("pelvis", "chest"):
        C[_PART[name], 0, 1] = 0.05  # girth widens trunk
    for name in ("arm_l", "arm_r"):
        C[_PART[name], 0, 2] = 0.06  # limb length
    for name in ("leg_l", "leg_r"):
        C[_PART[name], 1, 2] = 0.06
    for name in ("spine", "chest", "head"):
        C[_PART[name], 1, 3] = 0.06  # torso length
    return C


_SLOPES = _part_slopes()
_RADIUS_SLOPE = np.array([0.01, 0.1, 0.0, 0.0])
_ROOT_SLOPE = np.array([[0.0] * N_BETAS, [0.03, 0.0, 0.05, 0.0], [0.0] * N_BETAS])


def _frame(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


_FRAMES = [_frame(np.subtract(p[4], p[3])) for p in _PARTS]


def _pivots(beta):
    piv = np.zeros((len(_PARTS), 3))
    for i, (_, parent, pivot, *_rest) in enumerate(_PARTS):
        pivot = np.asarray(pivot)
        if parent < 0:
            piv[i] = pivot * (1 + _ROOT_SLOPE @ beta)
        else:
            off = pivot - np.asarray(_PARTS[parent][2])
            piv[i] = piv[parent] + off * (1 + _SLOPES[i] @ beta)
    return piv


def _point(part, u, a, b, beta):
    """Point on the parametric capsule of ``part``: axial fraction ``u`` and radial coords (a, b) in radius units."""
    _, _, _, start, end, radius, _ = _PARTS[part]
    scale = 1 + _SLOPES[part] @ beta
    s, e = np.asarray(start) * scale, np.asarray(end) * scale
    r = radius * (1 + _RADIUS_SLOPE @ beta)
    e1, e2 = _FRAMES[part]
    return _pivots(beta)[part] + s + u * (e - s) + r * (a * e1 + b * e2)


def _linear(fn):
    """(value at beta = 0, shape dirs (..., K)) of a function linear in beta."""
    base = np.asarray(fn(np.zeros(N_BETAS)))
    dirs = np.stack([np.asarray(fn(np.eye(N_BETAS)[k])) - base for k in range(N_BETAS)], axis=-1)
    return base, dirs


@dataclass(frozen=True)
class _Attached:
    """A point attached to a body part, linear in beta_body."""

    part: int
    x0: np.ndarray
    dirs: np.ndarray  # (3, K_body)


def _capsule_point(part, u, a, b):
    x0, dirs = _linear(lambda beta: _point(part, u, a, b, beta))
    return _Attached(part, x0, dirs)


def _pivot_point(part, offset=(0.0, 0.0, 0.0), attach=None):
    x0, dirs = _linear(lambda beta: _pivots(beta)[part])
    return _Attached(part if attach is None else attach, x0 + np.asarray(offset), dirs)


# ------------------------------------------------------------------------- body


_JOINTS = [
    ("pelvis", "pelvis", 0.5, 0.0, 0.0),
    ("lower_back", "spine", 0.0, 0.0, 0.0),
    ("neck", "chest", 1.0, 0.0, 0.0),
    ("head_top", "head", 1.0, 0.0, 0.0),
    ("sc_l", "clav_l", 0.0, 0.0, 0.0),
    ("sc_r", "clav_r", 0.0, 0.0, 0.0),
    ("shoulder_l", "arm_l", 0.0, 0.0, 0.0),
    ("shoulder_r", "arm_r", 0.0, 0.0, 0.0),
    ("hand_l", "arm_l", 1.0, 0.0, 0.0),
    ("hand_r", "arm_r", 1.0, 0.0, 0.0),
    ("hip_l", "leg_l", 0.0, 0.0, 0.0),
    ("hip_r", "leg_r", 0.0, 0.0, 0.0),
    ("foot_l", "leg_l", 1.0, 0.0, 0.0),
    ("foot_r", "leg_r", 1.0, 0.0, 0.0),
]

# landmark name, body part, skeleton block, capsule coords of the anchor
_LANDMARKS = [
    ("skull_top", "head", "skull", 0.85, 0.0, 0.0),
    ("c7", "head", "cervical", 0.0, 0.0, -0.3),
    ("thorax_upper", "chest", "thorax", 0.8, 0.0, 0.0),
    ("thorax_lower", "chest", "thorax", 0.2, 0.0, 0.0),
    ("sternum", "chest", "sternum", 0.55, 0.0, 0.9),
    ("lumbar", "spine", "lumbar", 0.45, 0.0, 0.0),
    ("asis_l", "pelvis", "pelvis", 0.95, 0.0, 0.6),
    ("asis_r", "pelvis", "pelvis", 0.05, 0.0, 0.6),
    ("clav_mid_l", "clav_l", "clavicle_l", 0.5, 0.0, 0.0),
    ("clav_mid_r", "clav_r", "clavicle_r", 0.5, 0.0, 0.0),
    ("elbow_l", "arm_l", "humerus_l", 0.5, 0.0, 0.0),
    ("elbow_r", "arm_r", "humerus_r", 0.5, 0.0, 0.0),
    ("knee_l", "leg_l", "femur_l", 0.5, 0.0, 0.0),
    ("knee_r", "leg_r", "femur_r", 0.5, 0.0, 0.0),
]


def _capsule_params(n):
    rings = max(2, int(round(np.sqrt(n / 2))))
    per = int(np.ceil(n / rings))
    out = []
    for i in range(rings):
        u = (i + 0.5) / rings
        for j in range(per):
            phi = 2 * np.pi * (j + 0.5 * (i % 2)) / per
            out.append((u, np.cos(phi), np.sin(phi)))
    return out[:n]


def _regressor_row(verts, part_of, part, target, k):
    idx = np.flatnonzero(part_of == part)
    d = np.linalg.norm(verts[idx] - target, axis=1)
    near = idx[np.argsort(d, kind="stable")[:k]]
    dn = np.sort(d)[:k]
    w = np.exp(-((dn / (dn.max() + 1e-9)) ** 2))
    row = np.zeros(len(verts))
    row[near] = w / w.sum()
    return row


def _build_body():
    attached, part_of = [], []
    for p, spec in enumerate(_PARTS):
        for u, a, b in _capsule_params(spec[6]):
            attached.append(_capsule_point(p, u, a, b))
            part_of.append(p)
    part_of = np.array(part_of)
    verts0 = np.array([a.x0 for a in attached])
    vdirs = np.array([a.dirs for a in attached])
    piv0, pdirs = _linear(_pivots)

    J = np.array([_regressor_row(verts0, part_of, _PART[part], _point(_PART[part], u, a, b, np.zeros(N_BETAS)), 6)
                  for _, part, u, a, b in _JOINTS])
    L = np.array([_regressor_row(verts0, part_of, _PART[part], _point(_PART[part], u, a, b, np.zeros(N_BETAS)), 8)
                  for _, part, _, u, a, b in _LANDMARKS])
    return BodyModel(
        template_vertices=verts0,
        shape_dirs=vdirs,
        parents=[p[1] for p in _PARTS],
        part_of=part_of,
        pivots=piv0,
        pivot_shape_dirs=pdirs,
        joint_regressor=J,
        landmark_regressor=L,
        kp_matrix=np.eye(N_BETAS),
        part_names=tuple(p[0] for p in _PARTS),
        joint_names=tuple(j[0] for j in _JOINTS),
        landmark_names=tuple(l[0] for l in _LANDMARKS),
    )


# --------------------------------------------------------------------- skeleton

# block name, body part, axial center, axial half-extent, radial extent (radius units), radial center (a, b), vertices
_BLOCKS = [
    ("skull", "head", 0.6, 0.3, 0.7, (0.0, 0.0), 60),
    ("cervical", "head", 0.0, 0.15, 0.3, (0.0, -0.3), 30),
    ("thorax", "chest", 0.5, 0.45, 0.75, (0.0, 0.0), 76),
    ("sternum", "chest", 0.55, 0.3, 0.12, (0.0, 0.85), 30),
    ("lumbar", "spine", 0.5, 0.45, 0.35, (0.0, -0.2), 40),
    ("pelvis", "pelvis", 0.5, 0.6, 0.6, (0.0, 0.0), 70),
    ("clavicle_l", "clav_l", 0.5, 0.45, 0.4, (0.0, 0.0), 30),
    ("clavicle_r", "clav_r", 0.5, 0.45, 0.4, (0.0, 0.0), 30),
    ("humerus_l", "arm_l", 0.27, 0.25, 0.4, (0.0, 0.0), 40),
    ("humerus_r", "arm_r", 0.27, 0.25, 0.4, (0.0, 0.0), 40),
    ("femur_l", "leg_l", 0.26, 0.24, 0.4, (0.0, 0.0), 50),
    ("femur_r", "leg_r", 0.26, 0.24, 0.4, (0.0, 0.0), 50),
]
_BLOCK = {b[0]: i for i, b in enumerate(_BLOCKS)}

# block a, block b, pivot: ("joint", body part) for an articulation or ("fixed", body part, offset) inside one part
_SEAMS = [
    ("pelvis", "lumbar", ("joint", "spine")),
    ("lumbar", "thorax", ("joint", "chest")),
    ("thorax", "cervical", ("joint", "head")),
    ("cervical", "skull", ("fixed", "head", (0.0, 0.07, 0.0))),
    ("thorax", "sternum", ("fixed", "chest", (0.0, 0.1, 0.1))),
    ("sternum", "clavicle_l", ("joint", "clav_l")),
    ("sternum", "clavicle_r", ("joint", "clav_r")),
    ("clavicle_l", "humerus_l", ("joint", "arm_l")),
    ("clavicle_r", "humerus_r", ("joint", "arm_r")),
    ("pelvis", "femur_l", ("joint", "leg_l")),
    ("pelvis", "femur_r", ("joint", "leg_r")),
]


def _fibonacci_ball(n, rng):
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = np.pi * (1 + 5**0.5) * k
    rad = np.sqrt(1 - z * z)
    pts = np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=1)
    return pts * rng.uniform(0.55, 1.0, size=(n, 1))


def _block_points(spec, rng):
    _, part, uc, hu, hr, (ac, bc), n = spec
    p = _PART[part]
    center = _capsule_point(p, uc, ac, bc)
    pts = [_capsule_point(p, uc + hu * z, ac + hr * x, bc + hr * y) for x, y, z in _fibonacci_ball(n, rng)]
    return center, pts


def _build_skeleton(body, kp_true, rng):
    kp_inv = np.linalg.inv(kp_true)

    def to_skel(pt, center):
        return pt.x0 - center.x0, (pt.dirs - center.dirs) @ kp_inv

    centers, verts = [], []
    for spec in _BLOCKS:
        c, pts = _block_points(spec, rng)
        centers.append(c)
        verts.append(pts)

    mps = [[] for _ in _BLOCKS]
    seams = []
    anchors = [[] for _ in _BLOCKS]  # (seam, vertex) pivot vertices for ct pairs
    for s, (a_name, b_name, pivot) in enumerate(_SEAMS):
        a, b = _BLOCK[a_name], _BLOCK[b_name]
        if pivot[0] == "joint":
            J = _pivot_point(_PART[pivot[1]])
        else:
            J = _pivot_point(_PART[pivot[1]], pivot[2])
        ca, cb = centers[a].x0, centers[b].x0
        da = (ca - J.x0) / np.linalg.norm(ca - J.x0)
        db = (cb - J.x0) / np.linalg.norm(cb - J.x0)
        # pair 1: pivot on a, offset point on b; pair 2: offset point on a, pivot on b
        pts_a = [_Attached(J.part, J.x0, J.dirs), _Attached(J.part, J.x0 + SEAM_GAP * da, J.dirs)]
        pts_b = [_Attached(J.part, J.x0 + SEAM_GAP * db, J.dirs), _Attached(J.part, J.x0, J.dirs)]
        ia = len(mps[a])
        ib = len(mps[b])
        mps[a].extend((s, p) for p in pts_a)
        mps[b].extend((s, p) for p in pts_b)
        seams.append(Seam(a, b, [(ia, ib), (ia + 1, ib + 1)], [SEAM_GAP, SEAM_GAP]))
        for blk in (a, b):
            anchors[blk].append((s, len(verts[blk])))
            verts[blk].append(_Attached(J.part, J.x0, J.dirs))

    blocks = []
    for i, spec in enumerate(_BLOCKS):
        c = centers[i]
        local = [to_skel(p, c) for p in verts[i]]
        match_points = []
        for s, p in mps[i]:
            x, dirs = to_skel(p, c)
            match_points.append(MatchPoint(seam=s, local=x, shape_dirs=dirs))
        blocks.append(
            BoneBlock(
                name=spec[0],
                center=c.x0,
                center_shape_dirs=c.dirs @ kp_inv,
                vertices=np.array([l[0] for l in local]),
                shape_dirs=np.array([l[1] for l in local]),
                match_points=match_points,
            )
        )

    landmarks = []
    L = body.landmark_regressor
    for li, (name, part, block, *_c) in enumerate(_LANDMARKS):
        w = L[li]
        x0 = w @ body.template_vertices
        dirs = np.einsum("v,vik->ik", w, body.shape_dirs)
        c = centers[_BLOCK[block]]
        landmarks.append(LandmarkDef(name, _BLOCK[block], x0 - c.x0, (dirs - c.dirs) @ kp_inv))

    thorax = _BLOCK["thorax"]
    clav_refs = []
    for side in ("l", "r"):
        cb = _BLOCK[f"clavicle_{side}"]
        seam = next(s for s, (a, b, _) in enumerate(_SEAMS) if b == f"clavicle_{side}")
        mp_idx = seams[seam].pairs[1][1]  # the clavicle's point sitting on the joint pivot
        clav_refs.append(ClavicleRef(cb, thorax, mp_idx, mps[cb][mp_idx][1].x0 - centers[thorax].x0))

    ct = _ct_pairs(blocks, anchors, seams)
    bmin, bmax = np.full(N_BETAS, -4.0), np.full(N_BETAS, 5.0)
    return SkeletonModel(blocks, seams, clav_refs, bmin, bmax, landmarks, ct)


def _ct_pairs(blocks, anchors, seams):
    """Nearest cross-block pairs that have one endpoint on a seam pivot, so they survive articulation."""
    cands = []
    for blk, items in enumerate(anchors):
        for s, v in items:
            seam = seams[s]
            other = seam.block_b if seam.block_a == blk else seam.block_a
            p = blocks[blk].center + blocks[blk].vertices[v]
            q = blocks[other].center + blocks[other].vertices
            d = np.linalg.norm(q - p, axis=1)
            for j in np.argsort(d, kind="stable")[:20]:
                if d[j] > 1e-3:
                    cands.append((d[j], blk, v, other, int(j)))
    cands.sort(key=lambda c: (c[0], c[1], c[2], c[3], c[4]))
    seen, out = set(), []
    for _, a, i, b, j in cands:
        key = tuple(sorted([(a, i), (b, j)]))
        if key in seen:
            continue
        seen.add(key)
        out.append((a, i, b, j))
        if len(out) == CT_PAIRS:
            break
    return out


# ------------------------------------------------------------------ model pair


@dataclass(eq=False)
class SynthModels:
    body: BodyModel
    skeleton: SkeletonModel
    kp_true: np.ndarray
    seed: int = 0

    def save(self, directory):
        d = Path(directory)
        save_json(d / "body.json", self.body.to_dict())
        save_json(d / "skeleton.json", self.skeleton.to_dict())
        save_json(d / "generator.json", {"seed": self.seed, "kpTrue": self.kp_true.tolist()})
        return d

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        body = BodyModel.from_dict(load_json(d / "body.json"))
        skel = SkeletonModel.from_dict(load_json(d / "skeleton.json"))
        gen = load_json(d / "generator.json")
        return cls(body, skel, np.array(gen["kpTrue"]), gen["seed"])


def gen_models(seed=0):
    """Deterministic surrogate body + skeleton pair for ``seed``."""
    rng = np.random.default_rng(seed)
    while True:
        kp_true = np.eye(N_BETAS) + 0.25 * rng.standard_normal((N_BETAS, N_BETAS))
        if np.linalg.cond(kp_true) < 4.0:
            break
    body = _build_body()
    skeleton = _build_skeleton(body, kp_true, rng)
    return SynthModels(body, skeleton, kp_true, seed)


# ---------------------------------------------------------------------- scenes


@dataclass
class NoiseSpec:
    sigma_t: float = 0.01  # meters; inf requests a cold start
    sigma_r: float = 5.0  # degrees
    sigma_2d: float = 0.0  # image units
    sigma_beta: float = 0.3

    def __post_init__(self):
        for k in ("sigma_t", "sigma_r", "sigma_2d", "sigma_beta"):
            if not getattr(self, k) >= 0:
                raise ValueError(f"{k} must be >= 0")

    @property
    def cold(self):
        return np.isinf(self.sigma_t)

    def to_dict(self):
        return {k: (None if np.isinf(v) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (np.inf if v is None else v) for k, v in d.items()})


@dataclass(eq=False)
class Scene:
    j_gt: np.ndarray  # (J, 3): u, v, confidence
    seed: int
    gt_body: BodyState | None = None
    gt_skeleton: SkeletonState | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    model_ids: dict = field(default_factory=dict)
    name: str = ""

    def to_dict(self):
        return {
            "name": self.name,
            "seed": self.seed,
            "models": self.model_ids,
            "jGt": self.j_gt.tolist(),
            "noise": self.noise.to_dict(),
            "gtBody": None if self.gt_body is None else self.gt_body.to_dict(),
            "gtSkeleton": None if self.gt_skeleton is None else self.gt_skeleton.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            j_gt=np.array(d["jGt"], dtype=float),
            seed=d["seed"],
            gt_body=None if d.get("gtBody") is None else BodyState.from_dict(d["gtBody"]),
            gt_skeleton=None if d.get("gtSkeleton") is None else SkeletonState.from_dict(d["gtSkeleton"]),
            noise=NoiseSpec.from_dict(d.get("noise", {})),
            model_ids=d.get("models", {}),
            name=d.get("name", ""),
        )


# per-part std of the local rotation angle, degrees
_POSE_SIGMA = {"pelvis": 0.0, "spine": 12, "chest": 10, "head": 15, "clav_l": 8, "clav_r": 8,
               "arm_l": 30, "arm_r": 30, "leg_l": 20, "leg_r": 20}


def _random_rotvec(rng, sigma_deg):
    return np.deg2rad(sigma_deg) * rng.standard_normal(3)


def sample_body_state(body, rng):
    beta = np.clip(0.8 * rng.standard_normal(N_BETAS), -2.0, 2.0)
    rv = np.stack([_random_rotvec(rng, _POSE_SIGMA[name]) for name in body.part_names])
    rv[body.root] = np.deg2rad([rng.normal(0, 5), rng.uniform(-30, 30), rng.normal(0, 5)])
    pose = axis_angle_to_quat(rv)
    cam = Camera(s=rng.uniform(0.8, 1.2), tx=rng.uniform(-0.1, 0.1), ty=rng.uniform(-1.1, -0.9))
    return BodyState(beta, pose, np.zeros(3), cam)


def skeleton_following_body(models, body_state, chart="quaternion"):
    """Skeleton state that rides rigidly on the body parts, with beta_skel = kp_true @ beta_body."""
    skel = models.skeleton
    Rg, origin, piv = body_part_transforms(models.body, body_state)
    beta_s = models.kp_true @ body_state.beta
    C = skel.centers + skel.center_shape_dirs @ beta_s
    t = np.zeros((skel.n_blocks, 3))
    R = np.zeros((skel.n_blocks, 3, 3))
    for b, spec in enumerate(_BLOCKS):
        p = _PART[spec[1]]
        R[b] = Rg[p]
        t[b] = Rg[p] @ (C[b] - piv[p]) + origin[p] - C[b]
    r = convert_chart(matrix_to_quat(R), "quaternion", chart)
    return SkeletonState(beta_s, t, r, 0.0, chart)


def perturb_skeleton(state, rng, sigma_t, sigma_r_deg, sigma_beta=0.0):
    """Per-block Gaussian noise on translations, rotation vectors (left-multiplied) and shape."""
    R = quat_to_matrix(convert_chart(state.r, state.chart, "quaternion"))
    dR = rodrigues_to_matrix(np.deg2rad(sigma_r_deg) * rng.standard_normal((len(R), 3)))
    t = state.t + sigma_t * rng.standard_normal(state.t.shape)
    beta = state.beta + sigma_beta * rng.standard_normal(state.beta.shape)
    if sigma_r_deg == 0:
        r = state.r.copy()  # keep the stored parameters, not a re-encoding
    else:
        r = convert_chart(matrix_to_quat(dR @ R), "quaternion", state.chart)
    return SkeletonState(beta, t, r, state.gamma, state.chart)


def ground_truth_config():
    return OptimizerConfig(mode="osf", rounds=15, steps_per_round=100, lr_pose=2e-3, tol=1e-12,
                           energy=EnergySpec())


def gen_scene(models, seed, noise=None):
    """Sample a body, derive its ground-truth skeleton with an OSF pass, and project the joints."""
    noise = NoiseSpec(sigma_2d=0.0) if noise is None else noise
    rng = np.random.default_rng([seed, 1])
    body_state = sample_body_state(models.body, rng)
    verts = body_forward(models.body, body_state)
    targets = body_landmarks(models.body, verts)

    follow = skeleton_following_body(models, body_state)
    start = perturb_skeleton(follow, rng, 1e-3, 0.5)
    rep = fit_skeleton_to_targets(models.skeleton, targets, start, ground_truth_config())
    residual = d_mean(skeleton_forward(models.skeleton, rep.state).landmarks, targets)
    if not residual < GT_RESIDUAL_TOL:
        raise GenerationError(f"scene {seed}: ground-truth OSF residual {residual:.2e} exceeds {GT_RESIDUAL_TOL}")
    uv = project(body_joints(models.body, verts), body_state.cam)
    if noise.sigma_2d > 0:
        uv = uv + noise.sigma_2d * rng.standard_normal(uv.shape)
    j_gt = np.hstack([uv, np.ones((len(uv), 1))])
    return Scene(j_gt, seed, body_state, rep.state, noise, name=f"scene_{seed:04d}")


def warm_start(scene, noise, models, seed=0, chart="quaternion"):
    """Simulated regressor output: ground truth plus per-block noise.

    ``noise.sigma_t = inf`` yields a cold start: control points uniform in the
    body's bounding box and uniformly random rotations.
    """
    if scene.gt_skeleton is None or scene.gt_body is None:
        raise SceneError("warm start needs a scene with ground truth")
    rng = np.random.default_rng([scene.seed, seed, 2])
    gt = scene.gt_skeleton
    if chart != gt.chart:
        gt = SkeletonState(gt.beta, gt.t, convert_chart(gt.r, gt.chart, chart), gt.gamma, chart)
    if not noise.cold:
        return perturb_skeleton(gt, rng, noise.sigma_t, noise.sigma_r, noise.sigma_beta)
    skel = models.skeleton
    verts = body_forward(models.body, scene.gt_body)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    beta = gt.beta + noise.sigma_beta * rng.standard_normal(gt.beta.shape)
    C = skel.centers + skel.center_shape_dirs @ beta
    cp = rng.uniform(lo, hi, size=(skel.n_blocks, 3))
    q = rng.standard_normal((skel.n_blocks, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return SkeletonState(beta, cp - C, convert_chart(q, "quaternion", chart), 0.0, chart)


def body_warm_start(scene, rng, sigma_r=5.0, sigma_beta=0.3, sigma_cam=0.02):
    """Perturbed ground-truth body parameters standing in for a regressed theta."""
    if scene.gt_body is None:
        raise SceneError("body warm start needs ground truth")
    gt = scene.gt_body
    R = quat_to_matrix(gt.pose)
    dR = rodrigues_to_matrix(np.deg2rad(sigma_r) * rng.standard_normal((len(R), 3)))
    pose = matrix_to_quat(dR @ R)
    beta = gt.beta + sigma_beta * rng.standard_normal(gt.beta.shape)
    c = gt.cam.as_array()
    cam = Camera(c[0] * (1 + sigma_cam * rng.standard_normal()), *(c[1:] + sigma_cam * rng.standard_normal(2)))
    return BodyState(beta, pose, gt.root_t.copy(), cam)


def gen_suite(models, n_scenes=50, seed=0, noise=None):
    """``n_scenes`` scenes with consecutive seeds starting at ``seed``; failed generations are skipped."""
    scenes = []
    s = seed
    while len(scenes) < n_scenes:
        try:
            scenes.append(gen_scene(models, s, noise))
        except GenerationError:
            pass
        s += 1
    return scenes


NOISE_TIERS = {
    "exact": NoiseSpec(sigma_t=0.0, sigma_r=0.0, sigma_beta=0.0),
    "warm": NoiseSpec(sigma_t=0.01, sigma_r=5.0, sigma_beta=0.3),
    "cold": NoiseSpec(sigma_t=np.inf, sigma_r=0.0, sigma_beta=0.3),
}
