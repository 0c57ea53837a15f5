"""Linear (pseudo-)observation models for relative poses and load parameters.

Every builder returns a :class:`LinearObservation` ``(H, y, R)`` meaning
``y = H x + e`` with ``cov(e) = R``.  The dynamic unknown vector is

    x = [pc (3), I^S (6), beta (1)],   I^S = (Ixx, Iyy, Izz, Ixy, Ixz, Iyz),

with ``beta = 1/m``, all expressed in the observing robot's sensor frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dq_algebra import Pose, skew
from .errors import DegenerateForce
from .estimation_filters import covariance_propagate
from .rigidbody_sim import inertia_to_vector, vector_to_inertia

#: Below this total force magnitude [N] the force-orthogonal rows are dropped.
EPS_F = 1e-6
#: Layout of the dynamic unknown vector.
PC, IS, BETA = slice(0, 3), slice(3, 9), 9
N_DYN = 10


@dataclass(frozen=True, eq=False)
class LinearObservation:
    H: np.ndarray
    y: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if H.shape[0] != y.shape[0] or R.shape != (y.shape[0], y.shape[0]):
            raise ValueError(f"inconsistent shapes H{H.shape} y{y.shape} R{R.shape}")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "R", R)

    @property
    def rows(self):
        return self.H.shape[0]

    def residual(self, x):
        return self.y - self.H @ x

    def check_covariance(self, tol=1e-10):
        R = self.R
        if np.max(np.abs(R - R.T), initial=0.0) > tol * max(1.0, np.max(np.abs(R))):
            return False
        return np.linalg.eigvalsh(0.5 * (R + R.T))[0] >= -tol * max(1.0, np.max(np.abs(R)))


# ---------------------------------------------------------------------------
# relative pose
# ---------------------------------------------------------------------------

def hq(a, b):
    """``[[0, (a-b)^T], [b-a, (a+b)x]]``.

    ``hq(w_i, w_j) @ q_r = 0`` whenever ``w_j = R(q_r) w_i``.
    """
    M = np.zeros((4, 4))
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    M[0, 1:] = d
    M[1:, 0] = -d
    M[1:, 1:] = skew(np.asarray(a, dtype=float) + np.asarray(b, dtype=float))
    return M


def _hq_noise_jacobian(q):
    """``d(hq(a, b) q)/d[a, b]`` (4x6); linear in ``q``."""
    q0, qv = q[0], q[1:]
    J = np.zeros((4, 6))
    J[0, :3] = qv
    J[0, 3:] = -qv
    J[1:, :3] = -q0 * np.eye(3) - skew(qv)
    J[1:, 3:] = q0 * np.eye(3) - skew(qv)
    return J


def build_pose_observation(xi_i, xi_j, sigma_omega, sigma_v, estimate=None, estimate_cov=None):
    """Pseudo-observation ``H [q_r; q_d] = 0`` for ``g_ji`` from two twists.

    Without ``estimate`` the covariance is the fixed ``2 sigma^2 I`` per block,
    which is the exact residual covariance restricted to the subspace
    orthogonal to the true ``q_r`` (the residual never has a component along
    it).  With an ``estimate = [q_r; q_d]`` the full first-order covariance is
    evaluated, optionally including ``estimate_cov`` (8x8).
    """
    xi_i = np.asarray(xi_i, dtype=float)
    xi_j = np.asarray(xi_j, dtype=float)
    Hw = hq(xi_i[:3], xi_j[:3])
    Hv = hq(xi_i[3:], xi_j[3:])
    H = np.zeros((8, 8))
    H[:4, :4] = Hw
    H[4:, :4] = Hv
    H[4:, 4:] = Hw
    if estimate is None:
        R = np.diag([2 * sigma_omega ** 2] * 4 + [2 * sigma_v ** 2] * 4)
        return LinearObservation(H, np.zeros(8), R)

    # noise b = [n_wi, n_wj, n_vi, n_vj]; residual = G(x) b with G linear in x
    def G(x):
        J = np.zeros((8, 12))
        J[:4, :6] = _hq_noise_jacobian(x[:4])
        J[4:, :6] = _hq_noise_jacobian(x[4:])
        J[4:, 6:] = _hq_noise_jacobian(x[:4])
        return J

    Sb = np.diag([sigma_omega ** 2] * 6 + [sigma_v ** 2] * 6)
    Sx = np.zeros((8, 8)) if estimate_cov is None else estimate_cov
    R = covariance_propagate(G, np.asarray(estimate, dtype=float), Sb, Sx, np.zeros((8, 8)))
    return LinearObservation(H, np.zeros(8), R)


# ---------------------------------------------------------------------------
# angular acceleration
# ---------------------------------------------------------------------------

def estimate_alpha(omega_prev, omega_next, dt):
    """Central difference ``(w(t+dt) - w(t-dt)) / (2 dt)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return (np.asarray(omega_next, dtype=float) - np.asarray(omega_prev, dtype=float)) / (2.0 * dt)


def build_alpha_observation(g_ji, abar_i, abar_j, sigma_a=0.0):
    """``abar_j - R_ji abar_i = (t_ji x R_ji) alpha_i``.

    A zero baseline ``t_ji`` gives ``H = 0``; the observation is then simply
    uninformative.
    """
    H = skew(g_ji.t) @ g_ji.R
    y = np.asarray(abar_j, dtype=float) - g_ji.R @ np.asarray(abar_i, dtype=float)
    # abar_i enters through R_ji (orthogonal) so both contribute sigma_a^2 I
    R = 2.0 * sigma_a ** 2 * np.eye(3)
    return LinearObservation(H, y, R)


def fuse_alpha(alpha_cd, cov_cd, observations):
    """Weighted least-squares fusion of a differenced prior with accelerometer
    pair observations.  Returns ``(alpha, information, information_vector)``."""
    Y = np.linalg.inv(cov_cd)
    b = Y @ alpha_cd
    for obs in observations:
        W = np.linalg.inv(obs.R)
        Y = Y + obs.H.T @ W @ obs.H
        b = b + obs.H.T @ W @ obs.y
    return np.linalg.solve(Y, b), Y, b


# ---------------------------------------------------------------------------
# load parameters
# ---------------------------------------------------------------------------

def perp_basis(F, eps=EPS_F):
    """2x3 matrix with orthonormal rows spanning the plane orthogonal to ``F``.

    Built from the Householder reflector that sends ``F/|F|`` to a signed
    coordinate axis, so the result depends only on ``F``.
    """
    F = np.asarray(F, dtype=float)
    nF = np.linalg.norm(F)
    if not nF > eps:
        raise DegenerateForce(f"|F| = {nF:.3e} N is below {eps:g} N")
    u = F / nF
    k = int(np.argmax(np.abs(u)))
    e = np.zeros(3)
    e[k] = -1.0 if u[k] > 0 else 1.0
    w = u - e
    Q = np.eye(3) - 2.0 * np.outer(w, w) / (w @ w)
    # Q is symmetric orthogonal with Q u = e; the other two rows of Q are orthogonal to u
    rows = [r for r in range(3) if r != k]
    return Q[rows]


def _omega_sq(omega):
    W = skew(omega)
    return W @ W


def build_pc_observation(F, alpha, omega, v, abar, sigma=None):
    """``F_perp (alpha x + (omega x)^2) pc = -F_perp (omega x v + abar)``."""
    Fp = perp_basis(F)
    H = Fp @ (skew(alpha) + _omega_sq(omega))
    y = -Fp @ (np.cross(omega, v) + np.asarray(abar, dtype=float))
    R = np.eye(2) * (1.0 if sigma is None else sigma ** 2)
    return LinearObservation(H, y, R)


def build_inertia_regressor(omega, alpha):
    """3x6 matrix with ``H @ I^S == I alpha + omega x (I omega)``."""
    w1, w2, w3 = omega
    a1, a2, a3 = alpha
    return np.array([
        [a1, -w2 * w3, w2 * w3, a2 - w1 * w3, a3 + w1 * w2, w2 * w2 - w3 * w3],
        [w1 * w3, a2, -w1 * w3, a1 + w2 * w3, w3 * w3 - w1 * w1, a3 - w1 * w2],
        [-w1 * w2, w1 * w2, a3, w1 * w1 - w2 * w2, a1 - w2 * w3, a2 + w1 * w3],
    ])


def build_inertia_observation(pc, F, T, omega, alpha, sigma=None):
    """``I^S`` observation with a known mass center."""
    H = build_inertia_regressor(omega, alpha)
    y = np.cross(F, pc) + np.asarray(T, dtype=float)
    return LinearObservation(H, y, np.eye(3) * (1.0 if sigma is None else sigma ** 2))


def build_mass_observation(pc, alpha, omega, v, abar, F, sigma=None):
    """``F = H_m m`` with ``H_m = abar + alpha x pc + omega x (omega x pc + v)``.

    Returns ``None`` when ``H_m`` vanishes (free fall, no motion).
    """
    H = (np.asarray(abar, dtype=float) + np.cross(alpha, pc)
         + np.cross(omega, np.cross(omega, pc) + v))
    if np.linalg.norm(H) < 1e-9:
        return None
    return LinearObservation(H.reshape(3, 1), np.asarray(F, dtype=float),
                             np.eye(3) * (1.0 if sigma is None else sigma ** 2))


@dataclass(frozen=True)
class ChannelCovariances:
    """Noise covariances of the inputs to the combined model, in the robot frame."""

    omega: np.ndarray
    v: np.ndarray
    abar: np.ndarray
    alpha: np.ndarray
    F: np.ndarray
    T: np.ndarray

    @classmethod
    def isotropic(cls, delta, alpha_var=None, wrench_cov=None):
        s = delta ** 2 * np.eye(3)
        a = s if alpha_var is None else np.asarray(alpha_var, dtype=float)
        if wrench_cov is None:
            wrench_cov = np.kron(np.eye(2), s)
        return cls(s, s, s, a, wrench_cov[3:, 3:], wrench_cov[:3, :3])

    def as_block(self):
        B = np.zeros((18, 18))
        for k, S in enumerate((self.omega, self.v, self.abar, self.alpha, self.F, self.T)):
            B[3 * k:3 * k + 3, 3 * k:3 * k + 3] = S
        return B


_E = np.array([skew(e) for e in np.eye(3)])  # _E[k] = skew(e_k)


def combined_noise_tensor(F, alpha, omega, v, with_perp=True):
    """Tensor ``J`` (rows, 18, 11) with ``J @ [x; 1]`` the first-order sensitivity
    of the combined residual ``H_D x - y_D`` to the input noises
    ``[omega, v, abar, alpha, F, T]``.

    The force-orthogonal rows are ``F_perp`` times the specific-force rows, so
    their sensitivity is taken as exactly ``-F_perp`` times those rows'.
    """
    F = np.asarray(F, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    omega = np.asarray(omega, dtype=float)
    v = np.asarray(v, dtype=float)
    Wx = skew(omega)
    Vx = skew(v)
    # specific-force rows r_C = -(u) + beta F, u = alpha x p + w x (w x p + v) + abar
    JC = np.zeros((3, 18, 11))
    for k in range(3):
        Ek = _E[k]
        # d/domega: [w x p + v]x + [w]x [p]x  (linear in p, plus constant from v)
        JC[:, 0:3, k] = skew(np.cross(omega, np.eye(3)[k])) + Wx @ Ek
        # d/dalpha = [p]x
        JC[:, 9:12, k] = Ek
    JC[:, 0:3, 10] = Vx
    JC[:, 3:6, 10] = -Wx          # d/dv
    JC[:, 6:9, 10] = -np.eye(3)   # d/dabar
    JC[:, 12:15, 9] = np.eye(3)   # d/dF = beta I
    # moment rows r_B = -F x p + H_I s - T
    JB = np.zeros((3, 18, 11))
    for k in range(3):
        JB[:, 12:15, k] = _E[k]   # d/dF = [p]x
    for k in range(6):
        s = np.zeros(6)
        s[k] = 1.0
        I = vector_to_inertia(s)
        # d/domega (omega x I omega) = -[I omega]x + [omega]x I ; d/dalpha = I
        JB[:, 0:3, 3 + k] = -skew(I @ omega) + Wx @ I
        JB[:, 9:12, 3 + k] = I
    JB[:, 15:18, 10] = -np.eye(3)
    blocks = [JB, JC]
    if with_perp:
        Fp = perp_basis(F)
        blocks.insert(0, -np.einsum("ab,bml->aml", Fp, JC))
    return np.concatenate(blocks, axis=0)


def build_combined_observation(F, T, alpha, omega, v, abar, channels=None,
                               estimate=None, estimate_cov=None):
    """Joint model for ``[pc; I^S; beta]``.

    Rows are ``[F_perp (alpha x + (omega x)^2) | 0 | 0]`` (dropped when
    ``|F| <= EPS_F``), ``[-F x | H_I | 0]`` and ``[-alpha x - (omega x)^2 | 0 | F]``.

    ``R`` follows first-order covariance propagation of ``channels`` through the
    residual at ``estimate`` (with ``estimate_cov`` as the unknowns'
    uncertainty).  Without ``channels`` it is the identity.  Note that the
    force-orthogonal rows are an exact linear function of the specific-force
    rows, so the propagated ``R`` is singular whenever they are present.
    """
    F = np.asarray(F, dtype=float)
    T = np.asarray(T, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    omega = np.asarray(omega, dtype=float)
    v = np.asarray(v, dtype=float)
    abar = np.asarray(abar, dtype=float)
    with_perp = np.linalg.norm(F) > EPS_F
    K = skew(alpha) + _omega_sq(omega)
    s = np.cross(omega, v) + abar
    rows_H = []
    rows_y = []
    if with_perp:
        Fp = perp_basis(F)
        Ha = np.zeros((2, N_DYN))
        Ha[:, PC] = Fp @ K
        rows_H.append(Ha)
        rows_y.append(-Fp @ s)
    Hb = np.zeros((3, N_DYN))
    Hb[:, PC] = -skew(F)
    Hb[:, IS] = build_inertia_regressor(omega, alpha)
    rows_H.append(Hb)
    rows_y.append(T)
    Hc = np.zeros((3, N_DYN))
    Hc[:, PC] = -K
    Hc[:, BETA] = F
    rows_H.append(Hc)
    rows_y.append(s)
    H = np.vstack(rows_H)
    y = np.concatenate(rows_y)
    if channels is None:
        R = np.eye(H.shape[0])
    else:
        x = np.zeros(N_DYN) if estimate is None else np.asarray(estimate, dtype=float)
        Sx = np.zeros((N_DYN, N_DYN)) if estimate_cov is None else estimate_cov
        J = combined_noise_tensor(F, alpha, omega, v, with_perp)
        R = covariance_propagate(J, np.append(x, 1.0), channels.as_block(),
                                 _pad(Sx), np.zeros((H.shape[0], H.shape[0])))
    return LinearObservation(H, y, R)


def _pad(Sx):
    out = np.zeros((N_DYN + 1, N_DYN + 1))
    out[:N_DYN, :N_DYN] = Sx
    return out


def dynamic_truth_vector(pc, I, m):
    return np.concatenate((pc, inertia_to_vector(I), [1.0 / m]))


# ---------------------------------------------------------------------------
# wrench and consensus transforms
# ---------------------------------------------------------------------------

def aggregate_wrench_transform(g_ji, w_j):
    """``Ad_{g_ji}^T [tau_j; f_j]``: wrench applied at ``S_j`` as seen at ``S_i``."""
    return g_ji.coadjoint() @ np.asarray(w_j, dtype=float)


def inertia_conjugation_matrix(R):
    """6x6 matrix acting on ``I^S`` as ``I -> R I R^T``."""
    M = np.zeros((6, 6))
    for k in range(6):
        s = np.zeros(6)
        s[k] = 1.0
        M[:, k] = inertia_to_vector(R @ vector_to_inertia(s) @ R.T)
    return M


@dataclass(frozen=True, eq=False)
class ConsensusTransforms:
    """Maps carrying a quantity expressed in ``S_j`` into ``S_i`` (``A_ij``)."""

    alpha: np.ndarray      # 3x3, R_ij
    inertia: np.ndarray    # 6x6 on I^S
    pc: np.ndarray         # 4x4 homogeneous, g_ij
    wrench: np.ndarray     # 6x6, Ad_{g_ji}^T
    dynamic: np.ndarray    # 11x11 on [pc; I^S; beta; 1]


def consensus_transforms(g_ji):
    """Transform family ``A_ij`` built from the relative pose ``g_ji``."""
    g_ij = g_ji.inverse()
    A_pc = g_ij.matrix()
    A_I = inertia_conjugation_matrix(g_ij.R)
    D = np.zeros((11, 11))
    D[0:3, 0:3] = g_ij.R
    D[0:3, 10] = g_ij.t
    D[3:9, 3:9] = A_I
    D[9, 9] = 1.0
    D[10, 10] = 1.0
    return ConsensusTransforms(alpha=g_ij.R, inertia=A_I, pc=A_pc,
                               wrench=g_ji.coadjoint(), dynamic=D)
