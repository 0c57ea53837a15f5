"""Quaternion and dual-quaternion algebra, rigid transforms and twist adjoints.

Conventions
-----------
Quaternions are ``(4,)`` arrays ``[q0, qx, qy, qz]`` (scalar first).
Dual quaternions are ``(8,)`` arrays ``[real, dual]``, each half a quaternion.
A pose ``g = (R, t)`` maps coordinates in the source frame to the target
frame, ``p_target = R @ p_source + t``.  Twists are ordered ``[omega, v]`` and
wrenches ``[tau, f]`` so that ``twist @ wrench`` is power.

None of the algebra operations renormalize their outputs.  Call
:func:`quat_normalize` or :func:`dq_normalize` explicitly when needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintViolation

#: Tolerance for exact algebraic identities.
ALGEBRA_TOL = 1e-12
#: Tolerance for anything that went through a trigonometric or matrix conversion.
ROUNDTRIP_TOL = 1e-10

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
DQ_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])


def skew(a):
    """Cross-product matrix, ``skew(a) @ b == np.cross(a, b)``."""
    return np.array([[0.0, -a[2], a[1]],
                     [a[2], 0.0, -a[0]],
                     [-a[1], a[0], 0.0]])


def unskew(S):
    return 0.5 * np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]])


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------

def quat(q0, q=(0.0, 0.0, 0.0)):
    """Build a quaternion from its scalar and vector parts."""
    return np.array([q0, q[0], q[1], q[2]], dtype=float)


def pure(b):
    """Embed a 3-vector as the pure quaternion ``(0, b)``."""
    return np.array([0.0, b[0], b[1], b[2]])


def quat_mul(p, q):
    """Hamilton product ``p ⊙ q``."""
    p0, pv = p[0], p[1:]
    q0, qv = q[0], q[1:]
    out = np.empty(4)
    out[0] = p0 * q0 - pv @ qv
    out[1:] = p0 * qv + q0 * pv + np.cross(pv, qv)
    return out


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_norm(q):
    return float(np.linalg.norm(q))


def quat_normalize(q):
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ConstraintViolation("cannot normalize the zero quaternion")
    return np.asarray(q, dtype=float) / n


def quat_plus_op(q):
    """Left-multiplication matrix: ``quat_plus_op(p) @ q == quat_mul(p, q)``."""
    M = np.empty((4, 4))
    M[0, 0] = q[0]
    M[0, 1:] = -q[1:]
    M[1:, 0] = q[1:]
    M[1:, 1:] = skew(q[1:]) + q[0] * np.eye(3)
    return M


def quat_minus_op(q):
    """Right-multiplication matrix: ``quat_minus_op(q) @ p == quat_mul(p, q)``."""
    M = np.empty((4, 4))
    M[0, 0] = q[0]
    M[0, 1:] = -q[1:]
    M[1:, 0] = q[1:]
    M[1:, 1:] = -skew(q[1:]) + q[0] * np.eye(3)
    return M


def canonical_quat(q):
    """Return the representative of ``±q`` with a non-negative scalar part."""
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0.0 else q.copy()


def is_unit_quat(q, tol=ALGEBRA_TOL):
    return abs(np.linalg.norm(q) - 1.0) <= tol


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate(([np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis))


def quat_from_rotvec(rv):
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        return quat_normalize(np.concatenate(([1.0], 0.5 * rv)))
    return quat_from_axis_angle(rv / angle, angle)


def quat_to_rotmat(q):
    """Rotation matrix of a unit quaternion (``q ⊙ b ⊙ q*`` as a matrix)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmat_to_quat(R):
    """Unit quaternion (``q0 >= 0``) of a rotation matrix, Shepperd's method."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax(np.concatenate(([tr], diag))))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + 2.0 * R[0, 0] - tr)
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + 2.0 * R[1, 1] - tr)
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + 2.0 * R[2, 2] - tr)
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return canonical_quat(quat_normalize(q))


def rotation_angle_between(q_a, q_b):
    """Sign-invariant angle ``2 acos(|<q_a, q_b>|)`` between two unit quaternions."""
    c = abs(float(np.dot(q_a, q_b)))
    return 2.0 * float(np.arccos(min(1.0, c)))


# ---------------------------------------------------------------------------
# dual quaternions
# ---------------------------------------------------------------------------

def dq(real, dual):
    return np.concatenate((np.asarray(real, dtype=float), np.asarray(dual, dtype=float)))


def dq_mul(x1, x2):
    """Dual-quaternion product ``x1 ⊗ x2``."""
    p1, q1 = x1[:4], x1[4:]
    p2, q2 = x2[:4], x2[4:]
    return np.concatenate((quat_mul(p1, p2), quat_mul(p1, q2) + quat_mul(q1, p2)))


def dq_plus_op(x):
    """8x8 matrix with ``dq_plus_op(x1) @ x2 == dq_mul(x1, x2)``."""
    P = quat_plus_op(x[:4])
    M = np.zeros((8, 8))
    M[:4, :4] = P
    M[4:, :4] = quat_plus_op(x[4:])
    M[4:, 4:] = P
    return M


def dq_minus_op(x):
    """8x8 matrix with ``dq_minus_op(x2) @ x1 == dq_mul(x1, x2)``."""
    P = quat_minus_op(x[:4])
    M = np.zeros((8, 8))
    M[:4, :4] = P
    M[4:, :4] = quat_minus_op(x[4:])
    M[4:, 4:] = P
    return M


def dq_conjugate(x, kind):
    """One of the three dual-quaternion conjugates.

    kind 1: ``p - εq``; kind 2: ``p* + εq*``; kind 3: ``p* - εq*``.
    """
    p, q = x[:4], x[4:]
    if kind == 1:
        return np.concatenate((p, -q))
    if kind == 2:
        return np.concatenate((quat_conj(p), quat_conj(q)))
    if kind == 3:
        return np.concatenate((quat_conj(p), -quat_conj(q)))
    raise ValueError(f"conjugate kind must be 1, 2 or 3, got {kind!r}")


def is_unit_dq(x, tol=ALGEBRA_TOL):
    """``‖real‖ = 1`` and ``real · dual = 0`` within ``tol``."""
    return (abs(np.linalg.norm(x[:4]) - 1.0) <= tol
            and abs(float(x[:4] @ x[4:])) <= tol)


def _require_unit(x, tol=ROUNDTRIP_TOL):
    if not is_unit_dq(x, tol):
        raise ConstraintViolation(
            "dual quaternion is not unit: |real|-1 = %.3e, real.dual = %.3e"
            % (np.linalg.norm(x[:4]) - 1.0, float(x[:4] @ x[4:])))


def dq_normalize(x):
    """Project onto the unit dual quaternions (normalize real, orthogonalize dual)."""
    n = np.linalg.norm(x[:4])
    if n == 0.0:
        raise ConstraintViolation("real part is zero")
    r = x[:4] / n
    d = x[4:] / n
    d = d - (r @ d) * r
    return np.concatenate((r, d))


def dq_translation(x):
    """Translation ``t`` with ``(0, t) = 2 q_d ⊙ q_r*``."""
    return 2.0 * quat_mul(x[4:], quat_conj(x[:4]))[1:]


def dq_point_transform(x, b):
    """Apply the rigid transform ``x`` to a point: ``x ⊗ (1 + ε b) ⊗ x^{3*}``."""
    _require_unit(x)
    b_hat = np.concatenate((QUAT_IDENTITY, pure(b)))
    out = dq_mul(dq_mul(x, b_hat), dq_conjugate(x, 3))
    return out[5:]


def dq_twist_adjoint(x, xi):
    """Transport twist ``xi = [omega, v]`` by the pose of unit dual quaternion ``x``.

    Computes ``x ⊗ (ω + ε v) ⊗ x^{2*}``; equal to ``Pose.adjoint() @ xi``.
    """
    _require_unit(x)
    xi = np.asarray(xi, dtype=float)
    xi_hat = np.concatenate((pure(xi[:3]), pure(xi[3:])))
    out = dq_mul(dq_mul(x, xi_hat), dq_conjugate(x, 2))
    return np.concatenate((out[1:4], out[5:8]))


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``g = (R, t)`` mapping source coordinates to target ones."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quat(cls, q, t=(0.0, 0.0, 0.0)):
        return cls(quat_to_rotmat(q), t)

    @classmethod
    def from_rotvec(cls, rv, t=(0.0, 0.0, 0.0)):
        return cls(quat_to_rotmat(quat_from_rotvec(rv)), t)

    def validate(self, tol=ROUNDTRIP_TOL):
        if not np.all(np.isfinite(self.R)) or not np.all(np.isfinite(self.t)):
            raise ConstraintViolation("pose has non-finite entries")
        if np.max(np.abs(self.R.T @ self.R - np.eye(3))) > tol:
            raise ConstraintViolation("rotation is not orthonormal")
        if abs(np.linalg.det(self.R) - 1.0) > tol:
            raise ConstraintViolation("rotation determinant is not +1")
        return self

    def __matmul__(self, other):
        """Composition ``self ∘ other`` (apply ``other`` first)."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self):
        return Pose(self.R.T, -self.R.T @ self.t)

    def apply(self, p):
        return self.R @ np.asarray(p, dtype=float) + self.t

    def quat(self):
        return rotmat_to_quat(self.R)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def adjoint(self):
        """6x6 twist adjoint ``[[R, 0], [t× R, R]]``."""
        A = np.zeros((6, 6))
        A[:3, :3] = self.R
        A[3:, :3] = skew(self.t) @ self.R
        A[3:, 3:] = self.R
        return A

    def coadjoint(self):
        """Transpose of :meth:`adjoint`; pulls a wrench back to the source frame."""
        return self.adjoint().T

    def __repr__(self):
        return f"Pose(R={self.R.tolist()}, t={self.t.tolist()})"


def pose_to_dq(g):
    """Unit dual quaternion ``q_r + ε (t ⊙ q_r)/2`` with ``q_r[0] >= 0``."""
    g.validate()
    q_r = rotmat_to_quat(g.R)
    q_d = 0.5 * quat_mul(pure(g.t), q_r)
    return np.concatenate((q_r, q_d))


def dq_to_pose(x):
    _require_unit(x)
    x = x if x[0] >= 0.0 else -x
    return Pose(quat_to_rotmat(x[:4]), dq_translation(x))


def random_rotation(rng):
    """Uniformly distributed rotation matrix."""
    q = rng.standard_normal(4)
    return quat_to_rotmat(q / np.linalg.norm(q))


def random_pose(rng, scale=1.0):
    return Pose(random_rotation(rng), scale * rng.standard_normal(3))
