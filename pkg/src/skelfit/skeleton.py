"""Multi-block anatomical skeleton: model, state, shape space and kinematics.

Every bone block owns a frame whose origin is its control point (CP). A
point of block ``b`` with block-frame coordinates ``x`` (shape-dependent)
is posed as::

    R(r_b) @ x(beta) + c_b(beta) + t_b

where ``c_b(beta)`` is the rest position of the CP. ``t = 0, r = I`` is the
shaped rest pose, so ``t_b`` is the displacement of the CP from rest.

Internally all points (CPs, vertices, match points, landmarks) live in one
flat table so energies can share a single forward/backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ModelError
from .geomcore import CHART_SIZE, chart_to_matrix, identity_params

SEAM_GAP_TOL = 1e-9


@dataclass(eq=False)
class MatchPoint:
    seam: int
    local: np.ndarray
    shape_dirs: np.ndarray

    def __post_init__(self):
        self.local = np.array(self.local, dtype=float)
        self.shape_dirs = np.array(self.shape_dirs, dtype=float)


@dataclass(eq=False)
class BoneBlock:
    name: str
    center: np.ndarray  # rest CP in world coordinates at beta = 0
    center_shape_dirs: np.ndarray  # (3, K)
    vertices: np.ndarray  # (n, 3) block frame
    shape_dirs: np.ndarray  # (n, 3, K)
    match_points: list = field(default_factory=list)

    def __post_init__(self):
        self.center = np.array(self.center, dtype=float)
        self.center_shape_dirs = np.array(self.center_shape_dirs, dtype=float)
        self.vertices = np.array(self.vertices, dtype=float)
        self.shape_dirs = np.array(self.shape_dirs, dtype=float)
        self.match_points = [m if isinstance(m, MatchPoint) else MatchPoint(**m) for m in self.match_points]

    @property
    def cp(self):
        """Control point in block coordinates; the frame origin by construction."""
        return np.zeros(3)


@dataclass(eq=False)
class Seam:
    block_a: int
    block_b: int
    pairs: list  # (match point index on a, match point index on b)
    rest_gaps: list  # meters, one per pair, at beta = 0


@dataclass(eq=False)
class ClavicleRef:
    clavicle: int
    thorax: int
    match_point: int  # proximal match point index on the clavicle block
    rest_offset: np.ndarray  # in the thorax frame at beta = 0

    def __post_init__(self):
        self.rest_offset = np.array(self.rest_offset, dtype=float)


@dataclass(eq=False)
class LandmarkDef:
    name: str
    block: int
    local: np.ndarray
    shape_dirs: np.ndarray

    def __post_init__(self):
        self.local = np.array(self.local, dtype=float)
        self.shape_dirs = np.array(self.shape_dirs, dtype=float)


class SkeletonModel:
    """Rest-pose skeleton template with its shape space and anatomical metadata.

    Immutable after construction; load-time checks enforce a connected seam
    graph, ordered shape bounds, and declared seam gaps matching the rest pose.
    """

    def __init__(self, blocks, seams, clavicle_refs, beta_min, beta_max, landmarks, ct_pairs=()):
        self.blocks = list(blocks)
        self.seams = list(seams)
        self.clavicle_refs = list(clavicle_refs)
        self.beta_min = np.array(beta_min, dtype=float)
        self.beta_max = np.array(beta_max, dtype=float)
        self.landmarks = list(landmarks)
        # (block a, vertex a, block b, vertex b)
        self.ct_pairs = [tuple(int(v) for v in p) for p in ct_pairs]
        self._compile()
        self._validate()

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def n_betas(self):
        return self.beta_min.shape[0]

    @property
    def n_landmarks(self):
        return len(self.landmarks)

    @property
    def block_names(self):
        return [b.name for b in self.blocks]

    def block_index(self, name):
        try:
            return self.block_names.index(name)
        except ValueError:
            raise ModelError(f"no block named {name!r}") from None

    def _compile(self):
        K = self.n_betas
        blk, local, sdirs = [], [], []
        self.cp_index = np.empty(self.n_blocks, dtype=int)
        self.vertex_index = []
        self.mp_index = []
        for b, block in enumerate(self.blocks):
            if block.center_shape_dirs.shape != (3, K) or block.shape_dirs.shape[1:] != (3, K):
                raise ModelError(f"block {block.name!r} shape dirs do not match |beta_skel| = {K}")
            self.cp_index[b] = len(blk)
            blk.append(b)
            local.append(np.zeros(3))
            sdirs.append(np.zeros((3, K)))
            start = len(blk)
            blk.extend([b] * len(block.vertices))
            local.extend(block.vertices)
            sdirs.extend(block.shape_dirs)
            self.vertex_index.append(np.arange(start, len(blk)))
            mps = []
            for mp in block.match_points:
                mps.append(len(blk))
                blk.append(b)
                local.append(mp.local)
                sdirs.append(mp.shape_dirs)
            self.mp_index.append(np.array(mps, dtype=int))
        self.landmark_index = np.arange(len(blk), len(blk) + len(self.landmarks))
        for lm in self.landmarks:
            if not 0 <= lm.block < self.n_blocks:
                raise ModelError(f"landmark {lm.name!r} references missing block {lm.block}")
            blk.append(lm.block)
            local.append(lm.local)
            sdirs.append(lm.shape_dirs)
        self.point_block = np.array(blk, dtype=int)
        self.point_local = np.array(local, dtype=float).reshape(-1, 3)
        self.point_shape_dirs = np.array(sdirs, dtype=float).reshape(-1, 3, K)
        self.centers = np.array([b.center for b in self.blocks])
        self.center_shape_dirs = np.array([b.center_shape_dirs for b in self.blocks])
        for arr in (self.point_block, self.point_local, self.point_shape_dirs, self.centers, self.center_shape_dirs):
            arr.setflags(write=False)

        pa, pb, gaps = [], [], []
        for s, seam in enumerate(self.seams):
            for (i, j), g in zip(seam.pairs, seam.rest_gaps):
                pa.append(self.mp_index[seam.block_a][i])
                pb.append(self.mp_index[seam.block_b][j])
                gaps.append(g)
        self.seam_pairs = (np.array(pa, dtype=int), np.array(pb, dtype=int))
        self.seam_rest_gaps = np.array(gaps, dtype=float)
        self.ct_index = (
            np.array([self.vertex_index[a][i] for a, i, _, _ in self.ct_pairs], dtype=int),
            np.array([self.vertex_index[b][j] for _, _, b, j in self.ct_pairs], dtype=int),
        )

    def _validate(self):
        if self.beta_max.shape != self.beta_min.shape or np.any(self.beta_min > self.beta_max):
            raise ModelError("beta_min must be <= beta_max componentwise")
        n = self.n_blocks
        adj = {b: set() for b in range(n)}
        for s, seam in enumerate(self.seams):
            a, b = seam.block_a, seam.block_b
            if not (0 <= a < n and 0 <= b < n):
                raise ModelError(f"seam {s} references a missing block")
            adj[a].add(b)
            adj[b].add(a)
            for i, j in seam.pairs:
                if self.blocks[a].match_points[i].seam != s or self.blocks[b].match_points[j].seam != s:
                    raise ModelError(f"seam {s} pairs match points that belong to another seam")
        seen, stack = {0}, [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if n and len(seen) != n:
            raise ModelError("seam graph is not connected")
        rest = self.rest_points(np.zeros(self.n_betas))
        if len(self.seam_rest_gaps):
            gaps = np.linalg.norm(rest[self.seam_pairs[0]] - rest[self.seam_pairs[1]], axis=1)
            if np.any(np.abs(gaps - self.seam_rest_gaps) > SEAM_GAP_TOL):
                raise ModelError("declared seam rest gaps disagree with the rest pose")
        for ref in self.clavicle_refs:
            for b in (ref.clavicle, ref.thorax):
                if not 0 <= b < n:
                    raise ModelError("clavicle reference names a missing block")

    def rest_points(self, beta_eff):
        """All table points at the shaped rest pose."""
        beta_eff = np.asarray(beta_eff, dtype=float)
        X = self.point_local + self.point_shape_dirs @ beta_eff
        return X + (self.centers + self.center_shape_dirs @ beta_eff)[self.point_block]

    def to_dict(self):
        return {
            "blocks": [
                {
                    "name": b.name,
                    "center": b.center.tolist(),
                    "centerShapeDirs": b.center_shape_dirs.tolist(),
                    "vertices": b.vertices.tolist(),
                    "shapeDirs": b.shape_dirs.tolist(),
                    "matchPoints": [
                        {"seam": m.seam, "local": m.local.tolist(), "shapeDirs": m.shape_dirs.tolist()}
                        for m in b.match_points
                    ],
                }
                for b in self.blocks
            ],
            "seams": [
                {"a": s.block_a, "b": s.block_b, "pairs": [list(p) for p in s.pairs], "restGaps": list(s.rest_gaps)}
                for s in self.seams
            ],
            "clavicleRefs": [
                {
                    "clavicle": c.clavicle,
                    "thorax": c.thorax,
                    "matchPoint": c.match_point,
                    "restOffset": c.rest_offset.tolist(),
                }
                for c in self.clavicle_refs
            ],
            "betaBounds": {"min": self.beta_min.tolist(), "max": self.beta_max.tolist()},
            "landmarks": [
                {"name": l.name, "block": l.block, "local": l.local.tolist(), "shapeDirs": l.shape_dirs.tolist()}
                for l in self.landmarks
            ],
            "ctPairs": [list(p) for p in self.ct_pairs],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            blocks = [
                BoneBlock(
                    name=b["name"],
                    center=b["center"],
                    center_shape_dirs=b["centerShapeDirs"],
                    vertices=b["vertices"],
                    shape_dirs=b["shapeDirs"],
                    match_points=[MatchPoint(m["seam"], m["local"], m["shapeDirs"]) for m in b["matchPoints"]],
                )
                for b in d["blocks"]
            ]
            seams = [Seam(s["a"], s["b"], [tuple(p) for p in s["pairs"]], list(s["restGaps"])) for s in d["seams"]]
            clav = [ClavicleRef(c["clavicle"], c["thorax"], c["matchPoint"], c["restOffset"]) for c in d["clavicleRefs"]]
            lms = [LandmarkDef(l["name"], l["block"], l["local"], l["shapeDirs"]) for l in d["landmarks"]]
            bounds = d["betaBounds"]
        except KeyError as exc:
            raise ModelError(f"skeleton model document missing field {exc}") from None
        return cls(blocks, seams, clav, bounds["min"], bounds["max"], lms, d.get("ctPairs", ()))


@dataclass(eq=False)
class SkeletonState:
    """beta_skel, gamma and per-block (t, r) in the named rotation chart."""

    beta: np.ndarray
    t: np.ndarray  # (B, 3)
    r: np.ndarray  # (B, 4) quaternion or (B, 3) axis-angle
    gamma: float = 0.0
    chart: str = "quaternion"

    def __post_init__(self):
        self.beta = np.array(self.beta, dtype=float)
        self.t = np.array(self.t, dtype=float)
        self.r = np.array(self.r, dtype=float)
        self.gamma = float(self.gamma)
        if self.chart not in CHART_SIZE:
            raise ModelError(f"unknown rotation chart {self.chart!r}")

    @classmethod
    def rest(cls, model, beta=None, chart="quaternion"):
        beta = np.zeros(model.n_betas) if beta is None else beta
        return cls(beta, np.zeros((model.n_blocks, 3)), identity_params(chart, model.n_blocks), 0.0, chart)

    def copy(self):
        return SkeletonState(self.beta.copy(), self.t.copy(), self.r.copy(), self.gamma, self.chart)

    def to_dict(self):
        return {
            "betaSkel": self.beta.tolist(),
            "gamma": self.gamma,
            "t": self.t.tolist(),
            "r": self.r.tolist(),
            "chart": self.chart,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["betaSkel"], d["t"], d["r"], d["gamma"], d.get("chart", "quaternion"))


@dataclass(eq=False)
class SupervisionTarget:
    t_gt: np.ndarray
    r_gt: np.ndarray
    landmark_gt: np.ndarray
    chart: str = "quaternion"

    def to_dict(self):
        return {
            "tGt": self.t_gt.tolist(),
            "rGt": self.r_gt.tolist(),
            "landmarkGt": self.landmark_gt.tolist(),
            "chart": self.chart,
        }


def check_state(model, state):
    B = model.n_blocks
    if state.beta.shape != (model.n_betas,):
        raise ModelError(f"beta_skel must have length {model.n_betas}")
    if state.t.shape != (B, 3) or state.r.shape != (B, CHART_SIZE[state.chart]):
        raise ModelError(f"state does not match the {B}-block model")
    if not (np.all(np.isfinite(state.t)) and np.all(np.isfinite(state.r)) and np.all(np.isfinite(state.beta))):
        raise ModelError("state contains non-finite values")


def effective_shape(model, beta_skel, gamma):
    """``beta_skel + gamma * (beta_min + beta_max) / 2``, clamped to the model's shape box.

    Returns ``(beta_eff, clamped)`` where ``clamped`` flags the clipped components.
    """
    mid = 0.5 * (model.beta_min + model.beta_max)
    raw = np.asarray(beta_skel, dtype=float) + gamma * mid
    beta_eff = np.clip(raw, model.beta_min, model.beta_max)
    return beta_eff, (raw < model.beta_min) | (raw > model.beta_max)


@dataclass(eq=False)
class PosedSkeleton:
    model: SkeletonModel
    points: np.ndarray  # (N, 3) flat point table

    @property
    def vertices(self):
        """Posed vertices, one (n_b, 3) array per block."""
        return [self.points[idx] for idx in self.model.vertex_index]

    @property
    def all_vertices(self):
        return self.points[np.concatenate(self.model.vertex_index)]

    @property
    def cp(self):
        return self.points[self.model.cp_index]

    @property
    def mp(self):
        return [self.points[idx] for idx in self.model.mp_index]

    @property
    def landmarks(self):
        return self.points[self.model.landmark_index]


@dataclass
class StateGrad:
    beta: np.ndarray
    gamma: float
    t: np.ndarray
    r: np.ndarray


class SkeletonPass:
    """One forward evaluation of the skeleton, reusable by several energies.

    ``posed`` and ``rest`` are the flat point tables for the current state and
    for SM_0 (identity pose, same effective shape). :meth:`backward` maps
    cotangents on those tables (plus optional direct per-block rotation and
    translation cotangents) to a :class:`StateGrad`.
    """

    def __init__(self, model, state):
        check_state(model, state)
        self.model = model
        self.state = state
        self.beta_eff, self.clamped = effective_shape(model, state.beta, state.gamma)
        self.R, self.dR_dr = chart_to_matrix(state.r, state.chart, jacobian=True)
        m = model
        self.X = m.point_local + m.point_shape_dirs @ self.beta_eff
        self.C = m.centers + m.center_shape_dirs @ self.beta_eff
        blk = m.point_block
        self.rest = self.X + self.C[blk]
        self.posed = np.einsum("nij,nj->ni", self.R[blk], self.X) + self.C[blk] + state.t[blk]

    def backward(self, d_posed=None, d_rest=None, d_R=None, d_t=None):
        m = self.model
        blk = m.point_block
        B, K = m.n_blocks, m.n_betas
        dR = np.zeros((B, 3, 3)) if d_R is None else np.array(d_R, dtype=float)
        dt = np.zeros((B, 3)) if d_t is None else np.array(d_t, dtype=float)
        dX = np.zeros_like(self.X)
        dC = np.zeros((B, 3))
        if d_posed is not None:
            np.add.at(dR, blk, d_posed[:, :, None] * self.X[:, None, :])
            np.add.at(dt, blk, d_posed)
            np.add.at(dC, blk, d_posed)
            dX += np.einsum("nji,nj->ni", self.R[blk], d_posed)
        if d_rest is not None:
            dX += d_rest
            np.add.at(dC, blk, d_rest)
        d_beta_eff = np.einsum("nik,ni->k", m.point_shape_dirs, dX) + np.einsum("bik,bi->k", m.center_shape_dirs, dC)
        d_beta_eff = np.where(self.clamped, 0.0, d_beta_eff)
        mid = 0.5 * (m.beta_min + m.beta_max)
        dr = np.einsum("bij,bijk->bk", dR, self.dR_dr)
        return StateGrad(beta=d_beta_eff, gamma=float(d_beta_eff @ mid), t=dt, r=dr)

    def as_posed(self):
        return PosedSkeleton(self.model, self.posed)


def skeleton_forward(model, state):
    """Posed skeleton for ``state``: per-block vertices, match points and CPs."""
    return SkeletonPass(model, state).as_posed()


def skeleton_landmarks(model, posed):
    """Landmarks (L, 3) of a posed skeleton."""
    if posed.model is not model:
        raise ModelError("posed skeleton belongs to a different model")
    return posed.landmarks


def rest_pose_model(model, beta_eff):
    """SM_0: the skeleton at identity pose with shape ``beta_eff`` applied."""
    return PosedSkeleton(model, model.rest_points(beta_eff))
