"""Recursive estimators: information-form RLS with forgetting, first-order
covariance propagation through bilinear models, and the constrained
dual-quaternion pose filter."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from .dq_algebra import QUAT_IDENTITY, canonical_quat
from .errors import ConstraintViolation, NumericalError

#: Relative eigenvalue gap below which the smallest eigenvalue is treated as repeated.
MULT_TOL = 1e-8
#: Condition number above which the translation system is considered singular.
BORDERED_COND_MAX = 1e12


def symmetric_eigendecomposition(A, tol=1e-10):
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a
    small symmetric matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A), initial=0.0)))
    if np.max(np.abs(A - A.T), initial=0.0) > tol * scale:
        raise ConstraintViolation("matrix is not symmetric")
    try:
        w, V = np.linalg.eigh(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    return w, V


# ---------------------------------------------------------------------------
# covariance propagation
# ---------------------------------------------------------------------------

def noise_tensor(G, l):
    """Stack a linear matrix function ``G: R^l -> R^{n x m}`` as an ``(n, m, l)``
    tensor ``T`` with ``G(x) = T @ x``."""
    cols = [np.asarray(G(e), dtype=float) for e in np.eye(l)]
    return np.stack(cols, axis=-1)


def covariance_propagate(G, x, Sigma_b, Sigma_x, Sigma_c):
    """Covariance of ``y = G(x) b + c`` for independent ``x``, ``b``, ``c``.

    ``Sigma_y = G(x) Sb G(x)^T + N (Sb ⊗ Sx) N^T + Sc`` where
    ``N = [G_1 ... G_m]`` and ``G_i x = G(x) e_i``.

    ``G`` is either a callable linear in ``x`` or the ``(n, m, l)`` tensor of
    :func:`noise_tensor`.
    """
    x = np.asarray(x, dtype=float)
    Gt = np.asarray(G, dtype=float) if not callable(G) else noise_tensor(G, x.shape[0])
    n, m, l = Gt.shape
    Sigma_b = np.asarray(Sigma_b, dtype=float)
    Sigma_x = np.asarray(Sigma_x, dtype=float)
    Sigma_c = np.asarray(Sigma_c, dtype=float)
    if (l != x.shape[0] or Sigma_b.shape != (m, m) or Sigma_x.shape != (l, l)
            or Sigma_c.shape != (n, n)):
        raise ValueError(
            f"dimension mismatch: G{Gt.shape}, x{x.shape}, Sb{Sigma_b.shape}, "
            f"Sx{Sigma_x.shape}, Sc{Sigma_c.shape}")
    Gx = Gt @ x
    out = Gx @ Sigma_b @ Gx.T + Sigma_c
    if np.any(Sigma_x):
        # N (Sb ⊗ Sx) N^T without forming the (ml x ml) Kronecker product
        left = (Gt @ Sigma_x).reshape(n, m * l)
        right = np.einsum("ij,bjk->bik", Sigma_b, Gt).reshape(n, m * l)
        out = out + left @ right.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# RLS with forgetting factor
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RlsState:
    """Estimate ``x`` with information matrix ``Pinv``; ``lam >= 1`` discounts
    old information by ``1/lam`` per update."""

    x: np.ndarray
    Pinv: np.ndarray
    lam: float = 1.0

    @classmethod
    def initial(cls, x0, p0=100.0, lam=1.0):
        x0 = np.asarray(x0, dtype=float)
        return cls(x0, np.eye(x0.shape[0]) / p0, lam)

    @property
    def P(self):
        return np.linalg.inv(self.Pinv)


def _information_weight(R, pseudo_inverse):
    if pseudo_inverse:
        return linalg.pinvh(R, atol=0.0, rtol=1e-10)
    try:
        c = linalg.cho_factor(R, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError("observation covariance is singular or indefinite") from exc
    return linalg.cho_solve(c, np.eye(R.shape[0]), check_finite=False)


def rls_update(state, obs, pseudo_inverse=False):
    """One information-form update.

    ``x+ = argmin ½|x - x|²_{Pinv} + ½|y - Hx|²_{R^-1}``, ``Pinv+ = (Pinv + H^T R^-1 H)/lam``.
    With ``lam = 1`` this is the Kalman correction step.

    ``pseudo_inverse=True`` weights with ``pinv(R)``, which is the exact
    generalized least-squares information when ``R`` is singular because some
    rows of the observation are linear combinations of others.
    """
    H, y, R = obs.H, obs.y, obs.R
    if H.shape[1] != state.x.shape[0]:
        raise ValueError(f"observation has {H.shape[1]} columns, state has {state.x.shape[0]}")
    W = _information_weight(R, pseudo_inverse)
    HtW = H.T @ W
    Y = state.Pinv + HtW @ H
    Y = 0.5 * (Y + Y.T)
    try:
        c = linalg.cho_factor(Y, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError("updated information matrix lost positive definiteness") from exc
    x = state.x + linalg.cho_solve(c, HtW @ (y - H @ state.x), check_finite=False)
    return RlsState(x, Y / state.lam, state.lam)


def batch_least_squares(observations, x0=None, Pinv0=None):
    """One-shot weighted least squares over stacked observations (normal equations)."""
    n = observations[0].H.shape[1]
    Y = np.zeros((n, n)) if Pinv0 is None else np.array(Pinv0, dtype=float)
    b = np.zeros(n) if Pinv0 is None else Y @ np.asarray(x0, dtype=float)
    for o in observations:
        W = np.linalg.inv(o.R)
        Y += o.H.T @ W @ o.H
        b += o.H.T @ W @ o.y
    return np.linalg.solve(Y, b)


# ---------------------------------------------------------------------------
# dual quaternion filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DqFilterState:
    """Accumulators and estimate of the relative-pose filter.

    ``Pinv_r = sum Hw^T W Hw`` and ``S = -sum Hw^T W Hv`` (both discounted by
    ``1/lam`` before each accumulation).  ``degenerate`` reports that the
    smallest eigenvalue of ``Pinv_r`` was repeated at the last update;
    ``held`` that the translation system was singular and ``q_d`` was kept.
    """

    Pinv_r: np.ndarray
    S: np.ndarray
    q_r: np.ndarray
    q_d: np.ndarray
    lam: float = 1.0
    Pinv_prev: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    degenerate: bool = True
    held: bool = False
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(4))
    updates: int = 0

    @classmethod
    def initial(cls, p0=100.0, lam=1.0, q_r=QUAT_IDENTITY, q_d=(0.0, 0.0, 0.0, 0.0)):
        Pinv = np.eye(4) / p0
        return cls(Pinv, np.zeros((4, 4)), np.array(q_r, dtype=float),
                   np.array(q_d, dtype=float), lam, Pinv.copy(),
                   eigenvalues=np.full(4, 1.0 / p0))

    @property
    def dq(self):
        return np.concatenate((self.q_r, self.q_d))

    @property
    def eigengap(self):
        """Relative gap between the two smallest eigenvalues of ``Pinv_r``."""
        w = self.eigenvalues
        return float((w[1] - w[0]) / max(abs(w[-1]), np.finfo(float).tiny))


def _min_on_sphere(A, b):
    """``argmin_{|c|=1} c^T A c - 2 b^T c`` for small symmetric ``A``."""
    a, U = np.linalg.eigh(A)
    beta = U.T @ b
    if np.linalg.norm(beta) <= 1e-14 * max(1.0, abs(a[-1])):
        return U[:, 0]

    def excess(mu):
        return np.sum((beta / (a - mu)) ** 2) - 1.0

    amin = a[0]
    scale = max(1.0, abs(a[-1]), np.linalg.norm(beta))
    hi = amin - 1e-13 * scale
    if excess(hi) < 0.0:
        # hard case: b has no component on the lowest eigenspace
        on_min = np.abs(a - amin) <= 1e-12 * scale
        c = np.zeros_like(beta)
        c[~on_min] = beta[~on_min] / (a[~on_min] - amin)
        c[np.argmax(on_min)] = np.sqrt(max(0.0, 1.0 - c @ c))
        return U @ c
    lo = amin - np.linalg.norm(beta) - 1e-12 * scale
    mu = optimize.brentq(excess, lo, hi, xtol=1e-15 * scale, maxiter=200)
    c = beta / (a - mu)
    return U @ (c / np.linalg.norm(c))


def _pose_weight(obs):
    Rw = obs.R[:4, :4]
    try:
        return np.linalg.inv(Rw) if np.linalg.cond(Rw) < 1e12 else linalg.pinvh(Rw)
    except np.linalg.LinAlgError:
        return linalg.pinvh(Rw)


def dq_filter_update_rotation(state, obs, mult_tol=MULT_TOL):
    """Accumulate a pose pseudo-observation and re-solve the rotation.

    ``q_r`` is the unit eigenvector of ``Pinv_r`` for its smallest eigenvalue
    with ``q_r[0] >= 0``.  If that eigenvalue is repeated, the unit vector of
    its eigenspace closest to the previous estimate (in the previous
    information metric) is returned instead.
    """
    Hw = obs.H[:4, :4]
    Hv = obs.H[4:, :4]
    W = _pose_weight(obs)
    HtW = Hw.T @ W
    Pinv = state.Pinv_r / state.lam + HtW @ Hw
    Pinv = 0.5 * (Pinv + Pinv.T)
    S = state.S / state.lam - HtW @ Hv
    w, V = symmetric_eigendecomposition(Pinv)
    scale = max(abs(w[-1]), np.finfo(float).tiny)
    mult = int(np.sum(w - w[0] <= mult_tol * scale))
    if mult == 1:
        q = V[:, 0]
        if abs(q[0]) < 1e-14:
            q = q if q @ state.q_r >= 0 else -q
    else:
        E = V[:, :mult]
        Wp = state.Pinv_r
        q = E @ _min_on_sphere(E.T @ Wp @ E, E.T @ Wp @ state.q_r)
    q = canonical_quat(q / np.linalg.norm(q))
    return replace(state, Pinv_r=Pinv, S=S, q_r=q, Pinv_prev=state.Pinv_r,
                   degenerate=mult > 1, eigenvalues=w, updates=state.updates + 1)


def dq_filter_update_translation(state, cond_max=BORDERED_COND_MAX):
    """Solve ``[[Pinv_r, q_r], [q_r^T, 0]] [q_d; mu] = [S q_r; 0]``.

    On an ill-conditioned system the previous ``q_d`` is kept (projected to stay
    orthogonal to ``q_r``) and ``held`` is set.
    """
    q_r = state.q_r
    # scaling the information does not move the solution but keeps the
    # border comparable to it, so the condition number means something
    scale = max(float(np.max(np.abs(state.Pinv_r))), np.finfo(float).tiny)
    M = np.zeros((5, 5))
    M[:4, :4] = state.Pinv_r / scale
    M[:4, 4] = q_r
    M[4, :4] = q_r
    rhs = np.concatenate((state.S @ q_r / scale, [0.0]))
    held = np.linalg.cond(M) > cond_max
    if not held:
        lu = linalg.lu_factor(M, check_finite=False)
        q_d = linalg.lu_solve(lu, rhs, check_finite=False)[:4]
    else:
        q_d = state.q_d
    # the bordered solve meets the constraint to rounding; make it exact
    q_d = q_d - (q_d @ q_r) * q_r
    return replace(state, q_d=q_d, held=bool(held))


def dq_filter_step(state, obs, mult_tol=MULT_TOL):
    return dq_filter_update_translation(dq_filter_update_rotation(state, obs, mult_tol))
