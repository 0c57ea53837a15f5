from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import poses
from coopident.dq_algebra import Pose, dq_to_pose, random_pose, rotation_angle_between, skew
from coopident.errors import ConstraintViolation, NumericalError
from coopident.estimation_filters import (
    DqFilterState, RlsState, batch_least_squares, covariance_propagate, dq_filter_step,
    dq_filter_update_rotation, dq_filter_update_translation, noise_tensor, rls_update,
    symmetric_eigendecomposition)
from coopident.observation_models import LinearObservation, build_pose_observation


# -- eigendecomposition ------------------------------------------------------

def test_eigendecomposition_examples(rng):
    w, V = symmetric_eigendecomposition(np.diag([3.0, 1.0, 2.0]))
    assert np.array_equal(w, [1.0, 2.0, 3.0])
    w, V = symmetric_eigendecomposition(np.eye(4))
    assert np.allclose(w, 1.0)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    lam = np.array([-2.0, 0.5, 1.0, 4.0, 9.0])
    w, V = symmetric_eigendecomposition(Q @ np.diag(lam) @ Q.T)
    assert np.max(np.abs(w - lam)) < 1e-10
    assert np.allclose(V.T @ V, np.eye(5), atol=1e-12)
    with pytest.raises(ConstraintViolation):
        symmetric_eigendecomposition(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        symmetric_eigendecomposition(np.zeros((2, 3)))


# -- covariance propagation --------------------------------------------------

def _cross_family():
    return noise_tensor(skew, 3)          # G(x) b = x x b


def test_noise_tensor_reproduces_G(rng):
    T = _cross_family()
    x = rng.standard_normal(3)
    assert np.allclose(T @ x, skew(x))


def test_covariance_propagate_degenerate_cases(rng):
    x = rng.standard_normal(3)
    A = rng.standard_normal((3, 3))
    Sb = A @ A.T
    Sc = np.diag([0.1, 0.2, 0.3])
    out = covariance_propagate(skew, x, Sb, np.zeros((3, 3)), Sc)
    assert np.allclose(out, skew(x) @ Sb @ skew(x).T + Sc)
    out = covariance_propagate(skew, x, np.zeros((3, 3)), np.eye(3), Sc)
    assert np.allclose(out, Sc)
    with pytest.raises(ValueError):
        covariance_propagate(skew, x, np.eye(2), np.eye(3), Sc)


def test_covariance_propagate_matches_kronecker_form(rng):
    T = rng.standard_normal((4, 5, 3))
    x = rng.standard_normal(3)
    A = rng.standard_normal((5, 5))
    B = rng.standard_normal((3, 3))
    Sb, Sx = A @ A.T, B @ B.T
    N = np.hstack([T[:, i, :] for i in range(5)])   # G_i x = G(x) e_i
    ref = (T @ x) @ Sb @ (T @ x).T + N @ np.kron(Sb, Sx) @ N.T
    out = covariance_propagate(T, x, Sb, Sx, np.zeros((4, 4)))
    assert np.allclose(out, ref, atol=1e-10)


def test_covariance_propagate_monte_carlo_cross_product():
    rng = np.random.default_rng(2024)
    x_mean = np.array([0.8, -0.5, 1.2])
    A = rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 3))
    Sb = 0.3 * A @ A.T + 0.1 * np.eye(3)
    Sx = 0.2 * B @ B.T + 0.05 * np.eye(3)
    Sc = 0.05 * np.eye(3)
    N = 1_000_000
    x = x_mean + rng.standard_normal((N, 3)) @ np.linalg.cholesky(Sx).T
    b = rng.standard_normal((N, 3)) @ np.linalg.cholesky(Sb).T
    c = rng.standard_normal((N, 3)) @ np.linalg.cholesky(Sc).T
    y = np.cross(x, b) + c
    emp = np.cov(y.T)
    pred = covariance_propagate(skew, x_mean, Sb, Sx, Sc)
    assert np.linalg.norm(emp - pred) / np.linalg.norm(pred) < 0.02


# -- RLS -----------------------------------------------------------------------

def test_rls_dominant_measurement():
    s = RlsState(np.zeros(3), 1e-12 * np.eye(3))
    y = np.array([1.0, -2.0, 3.0])
    out = rls_update(s, LinearObservation(np.eye(3), y, np.eye(3)))
    assert np.allclose(out.x, y, atol=1e-9)


def test_rls_scalar_average():
    s = RlsState(np.array([2.0]), np.eye(1))
    out = rls_update(s, LinearObservation(np.eye(1), [2.2], np.eye(1)))
    assert out.x[0] == pytest.approx(2.1, abs=1e-15)
    assert out.Pinv[0, 0] == pytest.approx(2.0)


def test_rls_singular_R_raises():
    s = RlsState.initial(np.zeros(2))
    obs = LinearObservation(np.eye(2), np.ones(2), np.diag([1.0, 0.0]))
    with pytest.raises(NumericalError):
        rls_update(s, obs)


@st.composite
def observation_sets(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    n = draw(st.integers(1, 6))
    obs = []
    for _ in range(draw(st.integers(1, 12))):
        m = int(rng.integers(1, 5))
        A = rng.standard_normal((m, m))
        obs.append(LinearObservation(rng.standard_normal((m, n)), rng.standard_normal(m),
                                     A @ A.T + 0.1 * np.eye(m)))
    return n, obs, rng


@given(observation_sets())
def test_rls_sequential_equals_batch(data):
    n, obs, rng = data
    x0 = rng.standard_normal(n)
    s = RlsState.initial(x0, p0=10.0)
    for o in obs:
        s = rls_update(s, o)
    ref = batch_least_squares(obs, x0=x0, Pinv0=np.eye(n) / 10.0)
    assert np.max(np.abs(s.x - ref)) < 1e-8 * max(1.0, np.abs(ref).max())


def test_pseudo_inverse_handles_redundant_rows(rng):
    # rows 3-4 are a fixed combination of rows 0-2: exact GLS ignores the copies
    H0 = rng.standard_normal((3, 4))
    y0 = rng.standard_normal(3)
    C = rng.standard_normal((2, 3))
    R0 = np.diag([0.5, 1.0, 2.0])
    J = np.vstack((np.eye(3), C))
    full = LinearObservation(J @ H0, J @ y0, J @ R0 @ J.T)
    base = LinearObservation(H0, y0, R0)
    s = RlsState.initial(np.zeros(4))
    a = rls_update(s, full, pseudo_inverse=True)
    b = rls_update(s, base)
    assert np.allclose(a.x, b.x, atol=1e-9)
    assert np.allclose(a.Pinv, b.Pinv, atol=1e-9)


def test_forgetting_keeps_information_bounded(rng):
    lam = 1.005
    s = RlsState.initial(np.zeros(3), lam=lam)
    H = np.eye(3)
    for _ in range(5000):
        s = rls_update(s, LinearObservation(H, rng.standard_normal(3), np.eye(3)))
    # geometric series limit of sum lam^-k H^T H
    bound = 1.0 / (1.0 - 1.0 / lam)
    assert np.linalg.eigvalsh(s.Pinv)[-1] <= bound * (1 + 1e-9)
    s1 = RlsState.initial(np.zeros(3), lam=1.0)
    for _ in range(5000):
        s1 = rls_update(s1, LinearObservation(H, rng.standard_normal(3), np.eye(3)))
    assert np.linalg.eigvalsh(s1.Pinv)[0] > 4000


def test_forgetting_tracks_a_step_change(rng):
    s = RlsState.initial(np.zeros(1), lam=1.005)
    for k in range(3000):
        truth = 1.0 if k < 1500 else 3.0
        s = rls_update(s, LinearObservation(np.eye(1), [truth + 0.01 * rng.standard_normal()],
                                            np.eye(1)))
    assert s.x[0] == pytest.approx(3.0, abs=0.01)


# -- dual-quaternion filter ----------------------------------------------------

def _feed(g, twists, state=None, sigma=1e-6):
    # noiseless data: a tiny sigma makes the P0 prior negligible, as in the driver
    state = DqFilterState.initial() if state is None else state
    for xi in twists:
        state = dq_filter_step(state, build_pose_observation(xi, g.adjoint() @ xi, sigma, sigma))
    return state


@given(poses())
def test_dq_filter_noiseless_recovers_pose(g):
    rng = np.random.default_rng(0)
    twists = rng.standard_normal((6, 6))
    s = _feed(g, twists)
    est = dq_to_pose(s.dq)
    assert np.max(np.abs(est.R - g.R)) < 1e-8
    assert np.max(np.abs(est.t - g.t)) < 1e-6
    assert not s.degenerate and not s.held


def test_dq_filter_two_samples_fix_rotation(rng):
    g = random_pose(rng)
    s = _feed(g, rng.standard_normal((2, 6)))
    assert rotation_angle_between(s.q_r, g.quat()) < 1e-8


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 30))
def test_dq_filter_invariants_on_noisy_streams(seed, steps):
    rng = np.random.default_rng(seed)
    g = random_pose(rng)
    s = DqFilterState.initial()
    for _ in range(steps):
        xi = rng.standard_normal(6)
        obs = build_pose_observation(xi + 0.4 * rng.standard_normal(6),
                                     g.adjoint() @ xi + 0.4 * rng.standard_normal(6), 0.4, 0.4)
        s = dq_filter_step(s, obs)
        assert abs(np.linalg.norm(s.q_r) - 1.0) < 1e-12
        assert abs(s.q_d @ s.q_r) < 1e-10
        assert s.q_r[0] >= 0.0


def test_dq_rotation_beats_sphere_search(rng):
    g = random_pose(rng)
    s = DqFilterState.initial()
    for _ in range(20):
        xi = rng.standard_normal(6)
        s = dq_filter_step(s, build_pose_observation(xi + 0.3 * rng.standard_normal(6),
                                                     g.adjoint() @ xi, 0.3, 0.3))
    Q = rng.standard_normal((10000, 4))
    Q /= np.linalg.norm(Q, axis=1, keepdims=True)
    sampled = np.einsum("ki,ij,kj->k", Q, s.Pinv_r, Q)
    best = s.q_r @ s.Pinv_r @ s.q_r
    assert best <= sampled.min() + 1e-12 * abs(best)


def test_dq_isotropic_tie_keeps_previous():
    q_prev = np.array([0.8, 0.0, 0.6, 0.0])
    s = DqFilterState.initial(p0=1.0, q_r=q_prev)
    s = dq_filter_update_rotation(s, build_pose_observation(np.zeros(6), np.zeros(6), 0.1, 0.1))
    assert s.degenerate
    assert np.allclose(s.q_r, q_prev, atol=1e-12)


def test_dq_constant_axis_is_flagged(rng):
    g = Pose.from_rotvec([0.0, 0.0, 0.7], [0.2, 0.1, 0.0])
    s = DqFilterState.initial()
    for k in range(50):
        xi = np.array([0.0, 0.0, 1.0 + 0.1 * k, 0.3, 0.0, 0.1])
        s = dq_filter_update_rotation(s, build_pose_observation(xi, g.adjoint() @ xi, 0.1, 0.1))
    # rotations about the shared axis are indistinguishable
    assert s.degenerate


def test_translation_zero_S_gives_zero_dual(rng):
    s = DqFilterState.initial()
    s = dq_filter_update_translation(s)
    assert not s.q_d.any()


def test_translation_hold_when_singular():
    s = DqFilterState.initial(q_d=(0.0, 0.1, 0.0, 0.0))
    s = replace(s, Pinv_r=np.zeros((4, 4)))
    out = dq_filter_update_translation(s)
    assert out.held
    assert np.allclose(out.q_d, [0.0, 0.1, 0.0, 0.0])


def test_noise_free_scale_does_not_trigger_hold(rng):
    # tiny sigma inflates the information by 1/sigma^2; the solve must still run
    g = random_pose(rng)
    s = DqFilterState.initial()
    for _ in range(10):
        xi = rng.standard_normal(6)
        s = dq_filter_step(s, build_pose_observation(xi, g.adjoint() @ xi, 1e-6, 1e-6))
    assert not s.held
    assert np.max(np.abs(dq_to_pose(s.dq).t - g.t)) < 1e-6
