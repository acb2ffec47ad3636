"""Rotation charts, rigid transforms and the weak-perspective camera.

All array functions broadcast over leading dimensions. Quaternions are
ordered ``(w, x, y, z)`` and may be unnormalized; normalization happens
inside :func:`quat_to_matrix` and is part of its Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateRotation

QUAT_EPS = 1e-12
RODRIGUES_SERIES_BELOW = 1e-4

CHARTS = ("quaternion", "rodrigues")
CHART_SIZE = {"quaternion": 4, "rodrigues": 3}


def skew(v):
    """Cross-product matrix ``[v]_x`` for (..., 3) input."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


_E = skew(np.eye(3))  # _E[i] = [e_i]_x


def _unit_quat_matrix(n):
    w, x, y, z = n[..., 0], n[..., 1], n[..., 2], n[..., 3]
    R = np.empty(n.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _unit_quat_matrix_jac(n):
    # dR[i, j] / dn[k], shape (..., 3, 3, 4)
    w, x, y, z = n[..., 0], n[..., 1], n[..., 2], n[..., 3]
    zero = np.zeros_like(w)
    rows = [
        [(zero, zero, -4 * y, -4 * z), (-2 * z, 2 * y, 2 * x, -2 * w), (2 * y, 2 * z, 2 * w, 2 * x)],
        [(2 * z, 2 * y, 2 * x, 2 * w), (zero, -4 * x, zero, -4 * z), (-2 * x, -2 * w, 2 * z, 2 * y)],
        [(-2 * y, 2 * z, -2 * w, 2 * x), (2 * x, 2 * w, 2 * z, 2 * y), (zero, -4 * x, -4 * y, zero)],
    ]
    return np.stack([np.stack([np.stack(e, axis=-1) for e in row], axis=-2) for row in rows], axis=-3)


def quat_to_matrix(q, jacobian=False):
    """Rotation matrix of a (possibly unnormalized) quaternion.

    With ``jacobian=True`` also returns ``dR/dq`` of shape (..., 3, 3, 4),
    which includes the normalization step.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= QUAT_EPS):
        raise DegenerateRotation("zero-norm quaternion")
    n = q / norm
    R = _unit_quat_matrix(n)
    if not jacobian:
        return R
    dR_dn = _unit_quat_matrix_jac(n)
    dn_dq = (np.eye(4) - n[..., :, None] * n[..., None, :]) / norm[..., None]
    return R, np.einsum("...ijk,...kl->...ijl", dR_dn, dn_dq)


def _rodrigues_coeffs(theta):
    small = theta < RODRIGUES_SERIES_BELOW
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1 - t2 / 6, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24, (1 - np.cos(t)) / (t * t))
    # (da/dtheta) / theta and (db/dtheta) / theta
    da = np.where(small, -1 / 3 + t2 / 30, (t * np.cos(t) - np.sin(t)) / t**3)
    db = np.where(small, -1 / 12 + t2 / 180, (t * np.sin(t) - 2 * (1 - np.cos(t))) / t**4)
    return a, b, da, db


def rodrigues_to_matrix(v, jacobian=False):
    """Rotation matrix of an axis-angle vector via the Rodrigues formula.

    Below ``|v| = 1e-4`` the trigonometric coefficients are replaced by their
    Taylor series so values and gradients stay finite at zero.
    """
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    a, b, da, db = _rodrigues_coeffs(theta)
    K = skew(v)
    K2 = K @ K
    R = np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2
    if not jacobian:
        return R
    EK = np.einsum("iab,...bc->...iac", _E, K)
    KE = np.einsum("...ab,ibc->...iac", K, _E)
    vi = v[..., :, None, None]
    J = (
        da[..., None, None, None] * vi * K[..., None, :, :]
        + a[..., None, None, None] * _E
        + db[..., None, None, None] * vi * K2[..., None, :, :]
        + b[..., None, None, None] * (EK + KE)
    )
    # (..., i, a, b) -> (..., a, b, i)
    return R, np.moveaxis(J, -3, -1)


def chart_to_matrix(params, chart, jacobian=False):
    """Dispatch to the quaternion or Rodrigues map by chart name."""
    if chart == "quaternion":
        return quat_to_matrix(params, jacobian)
    if chart == "rodrigues":
        return rodrigues_to_matrix(params, jacobian)
    raise ValueError(f"unknown rotation chart {chart!r}")


def matrix_to_quat(R):
    """Unit quaternion (w >= 0) of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for k, M in enumerate(flat):
        tr = np.trace(M)
        diag = np.diag(M)
        i = int(np.argmax(np.r_[tr, diag]))
        if i == 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [0.25 * s, (M[2, 1] - M[1, 2]) / s, (M[0, 2] - M[2, 0]) / s, (M[1, 0] - M[0, 1]) / s]
        elif i == 1:
            s = 2.0 * np.sqrt(1.0 + M[0, 0] - M[1, 1] - M[2, 2])
            q = [(M[2, 1] - M[1, 2]) / s, 0.25 * s, (M[0, 1] + M[1, 0]) / s, (M[0, 2] + M[2, 0]) / s]
        elif i == 2:
            s = 2.0 * np.sqrt(1.0 - M[0, 0] + M[1, 1] - M[2, 2])
            q = [(M[0, 2] - M[2, 0]) / s, (M[0, 1] + M[1, 0]) / s, 0.25 * s, (M[1, 2] + M[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 - M[0, 0] - M[1, 1] + M[2, 2])
            q = [(M[1, 0] - M[0, 1]) / s, (M[0, 2] + M[2, 0]) / s, (M[1, 2] + M[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        out[k] = q if q[0] >= 0 else -q
    return out.reshape(R.shape[:-2] + (4,))


def axis_angle_to_quat(v):
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < RODRIGUES_SERIES_BELOW
    t = np.where(small, 1.0, theta)
    k = np.where(small, 0.5 - theta**2 / 48, np.sin(half) / t)
    return np.concatenate([np.cos(half), k * v], axis=-1)


def quat_to_axis_angle(q):
    q = np.asarray(q, dtype=float)
    n = q / np.linalg.norm(q, axis=-1, keepdims=True)
    n = np.where(n[..., :1] < 0, -n, n)
    s = np.linalg.norm(n[..., 1:], axis=-1, keepdims=True)
    theta = 2 * np.arctan2(s, n[..., :1])
    small = s < 1e-12
    scale = np.where(small, 2.0, theta / np.where(small, 1.0, s))
    return scale * n[..., 1:]


def params_from_matrix(R, chart):
    """Chart coordinates of a rotation matrix."""
    q = matrix_to_quat(R)
    if chart == "quaternion":
        return q
    if chart == "rodrigues":
        return quat_to_axis_angle(q)
    raise ValueError(f"unknown rotation chart {chart!r}")


def convert_chart(params, src, dst):
    """Re-express rotation parameters in another chart."""
    if src == dst:
        return np.array(params, dtype=float)
    return params_from_matrix(chart_to_matrix(params, src), dst)


def identity_params(chart, count):
    out = np.zeros((count, CHART_SIZE[chart]))
    if chart == "quaternion":
        out[:, 0] = 1.0
    return out


def align_quat_sign(q, ref):
    """Flip each quaternion in ``q`` onto the hemisphere of ``ref`` (q and -q are the same rotation)."""
    q = np.asarray(q, dtype=float)
    dot = np.sum(q * np.asarray(ref, dtype=float), axis=-1, keepdims=True)
    return np.where(dot < 0, -q, q)


def normalize_quat(q):
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= QUAT_EPS):
        raise DegenerateRotation("zero-norm quaternion")
    return q / norm


@dataclass(frozen=True)
class Quat:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        if np.linalg.norm(self.as_array()) <= QUAT_EPS:
            raise DegenerateRotation("zero-norm quaternion")

    def as_array(self):
        return np.array([self.w, self.x, self.y, self.z], dtype=float)

    def matrix(self):
        return quat_to_matrix(self.as_array())


@dataclass(frozen=True)
class AxisAngle:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def angle(self):
        return float(np.linalg.norm(self.as_array()))

    def matrix(self):
        return rodrigues_to_matrix(self.as_array())


@dataclass(frozen=True)
class RigidTransform:
    """x -> s * R x + t."""

    r: Quat | AxisAngle = field(default_factory=Quat)
    t: tuple = (0.0, 0.0, 0.0)
    s: float = 1.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("scale must be positive")

    @property
    def matrix(self):
        return self.r.matrix()

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        return self.s * X @ self.matrix.T + np.asarray(self.t, dtype=float)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        R = self.matrix @ other.matrix
        t = self.s * self.matrix @ np.asarray(other.t, dtype=float) + np.asarray(self.t, dtype=float)
        w, x, y, z = matrix_to_quat(R)
        return RigidTransform(Quat(w, x, y, z), tuple(t), self.s * other.s)

    def inverse(self):
        Rt = self.matrix.T
        t = -Rt @ np.asarray(self.t, dtype=float) / self.s
        w, x, y, z = matrix_to_quat(Rt)
        return RigidTransform(Quat(w, x, y, z), tuple(t), 1.0 / self.s)


@dataclass(frozen=True)
class Camera:
    """Weak-perspective camera: ``(s (x + tx), s (y + ty))``; depth is dropped."""

    s: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("camera scale must be positive")

    def as_array(self):
        return np.array([self.s, self.tx, self.ty], dtype=float)

    @classmethod
    def from_array(cls, a):
        return cls(float(a[0]), float(a[1]), float(a[2]))


def project(X, cam, jacobian=False):
    """Weak-perspective projection of (..., 3) points.

    ``cam`` is a :class:`Camera` or an array ``(s, tx, ty)``. With
    ``jacobian=True`` also returns ``d uv / d cam`` with shape (..., 2, 3);
    the point Jacobian is ``s`` times the first two rows of the identity.
    """
    X = np.asarray(X, dtype=float)
    c = cam.as_array() if isinstance(cam, Camera) else np.asarray(cam, dtype=float)
    s, tx, ty = c
    shifted = np.stack([X[..., 0] + tx, X[..., 1] + ty], axis=-1)
    uv = s * shifted
    if not jacobian:
        return uv
    J = np.zeros(X.shape[:-1] + (2, 3))
    J[..., :, 0] = shifted
    J[..., 0, 1] = s
    J[..., 1, 2] = s
    return uv, J
