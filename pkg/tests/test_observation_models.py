import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import poses, vec3
from coopident.dq_algebra import Pose, pose_to_dq, random_pose, skew
from coopident.errors import DegenerateForce
from coopident.estimation_filters import batch_least_squares
from coopident.observation_models import (
    BETA, IS, PC, ChannelCovariances, LinearObservation, aggregate_wrench_transform,
    build_alpha_observation, build_combined_observation, build_inertia_observation,
    build_inertia_regressor, build_mass_observation, build_pc_observation,
    build_pose_observation, combined_noise_tensor, consensus_transforms,
    dynamic_truth_vector, estimate_alpha, fuse_alpha, hq, inertia_conjugation_matrix,
    perp_basis)
from coopident.rigidbody_sim import inertia_to_vector


def random_inertia(rng):
    A = rng.standard_normal((3, 3))
    return A @ A.T + 0.1 * np.eye(3)


@st.composite
def symmetric3(draw):
    s = draw(arrays(np.float64, 6, elements=st.floats(-5, 5)))
    return np.array([[s[0], s[3], s[4]], [s[3], s[1], s[5]], [s[4], s[5], s[2]]])


# -- pose pseudo-observation -------------------------------------------------

def test_hq_examples():
    assert not hq(np.zeros(3), np.zeros(3)).any()
    a = np.array([0.3, -1.0, 2.0])
    M = hq(a, a)
    assert not M[0].any() and not M[:, 0].any()
    assert np.array_equal(M[1:, 1:], skew(2 * a))


@given(poses(), vec3, vec3)
def test_pose_observation_annihilates_truth(g_ji, w, v):
    xi_i = np.concatenate((w, v))
    xi_j = g_ji.adjoint() @ xi_i
    obs = build_pose_observation(xi_i, xi_j, 0.4, 0.4)
    x = pose_to_dq(g_ji)
    assert np.max(np.abs(obs.H @ x)) < 1e-10 * max(1.0, np.abs(xi_i).max())
    assert not obs.y.any()


def test_pose_observation_zero_twists_and_fixed_R():
    obs = build_pose_observation(np.zeros(6), np.zeros(6), 0.4, 0.2)
    assert not obs.H.any()
    assert np.allclose(obs.R, np.diag([0.32] * 4 + [0.08] * 4))


def test_pose_observation_propagated_R_is_valid(rng):
    g = random_pose(rng)
    xi_i = rng.standard_normal(6)
    obs = build_pose_observation(xi_i, g.adjoint() @ xi_i, 0.4, 0.4, estimate=pose_to_dq(g),
                                 estimate_cov=1e-3 * np.eye(8))
    assert obs.check_covariance()


def test_pose_observation_noise_covariance_monte_carlo(rng):
    # residual covariance at the true pose, sampled vs propagated
    g = random_pose(rng)
    x = pose_to_dq(g)
    xi_i = rng.standard_normal(6)
    xi_j = g.adjoint() @ xi_i
    s = 0.1
    N = 20000
    res = np.empty((N, 8))
    for k in range(N):
        a = xi_i + s * rng.standard_normal(6)
        b = xi_j + s * rng.standard_normal(6)
        res[k] = build_pose_observation(a, b, s, s).H @ x
    emp = np.cov(res.T)
    R = build_pose_observation(xi_i, xi_j, s, s, estimate=x).R
    assert np.linalg.norm(emp - R) / np.linalg.norm(R) < 0.05


# -- angular acceleration ----------------------------------------------------

def test_estimate_alpha_examples():
    assert not estimate_alpha([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 0.01).any()
    t, h = 0.7, 0.01
    assert np.allclose(estimate_alpha([t - h, 0, 0], [t + h, 0, 0], h), [1.0, 0, 0], atol=1e-12)
    with pytest.raises(ValueError):
        estimate_alpha(np.zeros(3), np.zeros(3), 0.0)


def test_estimate_alpha_second_order_error():
    # omega = sin(2t): error <= h^2/6 * max|omega'''| = h^2/6 * 8
    t = 0.4
    for h in (1e-2, 5e-3):
        est = estimate_alpha([np.sin(2 * (t - h))] * 3, [np.sin(2 * (t + h))] * 3, h)[0]
        assert abs(est - 2 * np.cos(2 * t)) <= 8 * h * h / 6


def test_alpha_observation_truth(rng):
    g_ji = random_pose(rng)
    alpha = rng.standard_normal(3)
    abar_i = rng.standard_normal(3)
    # S_j's origin sits at r in S_i; the body-fixed velocity v_j = R_ji (v_i + w x r)
    # differentiates to R_ji (abar_i + alpha x r) once gravity is removed
    r = g_ji.inverse().t
    abar_j = g_ji.R @ (abar_i + np.cross(alpha, r))
    obs = build_alpha_observation(g_ji, abar_i, abar_j, 0.1)
    assert np.max(np.abs(obs.residual(alpha))) < 1e-10


def test_alpha_observation_pure_translation():
    g = Pose(np.eye(3), [0.5, 0.0, 0.0])
    a = np.array([0.1, 0.2, -9.8])
    obs = build_alpha_observation(g, a, a)
    assert not obs.y.any()


def test_alpha_consistency_on_truth(rng):
    g_ji = random_pose(rng)
    alpha_i = rng.standard_normal(3)
    A = consensus_transforms(g_ji.inverse()).alpha  # carries i-quantities into j
    assert np.allclose(A @ alpha_i, g_ji.R @ alpha_i)


def test_fuse_alpha_weights_information(rng):
    H = np.eye(3)
    truth = rng.standard_normal(3)
    obs = LinearObservation(H, truth, 1e-8 * np.eye(3))
    alpha, Y, b = fuse_alpha(truth + 1.0, np.eye(3), [obs])
    assert np.allclose(alpha, truth, atol=1e-6)
    assert np.allclose(Y, np.eye(3) + 1e8 * np.eye(3))


# -- load parameter models ---------------------------------------------------

def test_perp_basis_examples():
    P = perp_basis([1.0, 0.0, 0.0])
    assert np.allclose(P @ [1.0, 0, 0], 0)
    assert np.allclose(np.abs(P[:, 0]), 0)
    with pytest.raises(DegenerateForce):
        perp_basis(np.zeros(3))


def test_perp_basis_postconditions_bulk(rng):
    F = rng.standard_normal((10000, 3)) * rng.uniform(1e-3, 1e3, (10000, 1))
    for f in F:
        P = perp_basis(f)
        assert np.max(np.abs(P @ f)) < 1e-12 * np.linalg.norm(f)
        assert np.max(np.abs(P @ P.T - np.eye(2))) < 1e-12
        assert np.array_equal(P, perp_basis(f.copy()))


def _motion(rng, m=1.7):
    I = random_inertia(rng)
    pc = 0.2 * rng.standard_normal(3)
    omega, alpha, v, abar = (rng.standard_normal(3) for _ in range(4))
    s = np.cross(omega, v) + abar
    F = m * (s + np.cross(alpha, pc) + np.cross(omega, np.cross(omega, pc)))
    T = I @ alpha + np.cross(omega, I @ omega) - np.cross(F, pc)
    return dict(m=m, I=I, pc=pc, omega=omega, alpha=alpha, v=v, abar=abar, F=F, T=T)


def test_individual_models_hold_on_truth(rng):
    for _ in range(50):
        d = _motion(rng)
        o = build_pc_observation(d["F"], d["alpha"], d["omega"], d["v"], d["abar"])
        assert np.max(np.abs(o.residual(d["pc"]))) < 1e-8
        o = build_inertia_observation(d["pc"], d["F"], d["T"], d["omega"], d["alpha"])
        assert np.max(np.abs(o.residual(inertia_to_vector(d["I"])))) < 1e-8
        o = build_mass_observation(d["pc"], d["alpha"], d["omega"], d["v"], d["abar"], d["F"])
        assert np.max(np.abs(o.residual([d["m"]]))) < 1e-8


def test_pc_observation_without_rotation():
    F = np.array([0.0, 0.0, 5.0])
    abar = np.array([1.0, 2.0, 3.0])
    o = build_pc_observation(F, np.zeros(3), np.zeros(3), np.zeros(3), abar)
    assert not o.H.any()
    assert np.allclose(o.y, -perp_basis(F) @ abar)


def test_mass_observation_static_and_free_fall():
    abar = np.array([0.0, 0.0, 9.81])
    F = 2.0 * abar
    o = build_mass_observation(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), abar, F)
    assert np.allclose(o.H[:, 0], abar)
    m = np.linalg.lstsq(o.H, o.y, rcond=None)[0][0]
    assert m == pytest.approx(np.linalg.norm(F) / np.linalg.norm(abar))
    assert build_mass_observation(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3),
                                  np.zeros(3), np.zeros(3)) is None


@given(symmetric3(), vec3, vec3)
def test_inertia_regressor_identity(I, omega, alpha):
    H = build_inertia_regressor(omega, alpha)
    ref = I @ alpha + np.cross(omega, I @ omega)
    scale = max(1.0, np.abs(I).max() * max(1.0, np.abs(omega).max() ** 2 + np.abs(alpha).max()))
    assert np.max(np.abs(H @ inertia_to_vector(I) - ref)) <= 1e-12 * scale


def test_inertia_regressor_examples():
    I = np.array([[1.0, 0.1, 0.2], [0.1, 2.0, 0.3], [0.2, 0.3, 3.0]])
    alpha = np.array([0.5, -1.0, 2.0])
    H = build_inertia_regressor(np.zeros(3), alpha)
    assert np.allclose(H @ inertia_to_vector(I), I @ alpha, atol=1e-15)
    H = build_inertia_regressor(np.array([0.0, 0.0, 1.0]), np.zeros(3))
    assert np.allclose(H @ inertia_to_vector(I), np.cross([0, 0, 1.0], I @ [0, 0, 1.0]))


def test_combined_observation_truth_and_shape(rng):
    for _ in range(50):
        d = _motion(rng)
        o = build_combined_observation(d["F"], d["T"], d["alpha"], d["omega"], d["v"], d["abar"])
        assert o.H.shape == (8, 10)
        x = dynamic_truth_vector(d["pc"], d["I"], d["m"])
        assert np.max(np.abs(o.residual(x))) < 1e-8
        # inertia columns appear only in the moment rows
        assert not o.H[:2, IS].any() and not o.H[5:, IS].any()
    o = build_combined_observation(np.zeros(3), np.ones(3), np.zeros(3), np.zeros(3),
                                   np.zeros(3), np.zeros(3))
    assert o.H.shape == (6, 10)


def test_combined_observation_static_only_beta_informative():
    F = np.array([0.0, 0.0, 19.62])
    abar = np.array([0.0, 0.0, 9.81])
    o = build_combined_observation(F, np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), abar)
    assert not o.H[:2].any()
    assert not o.H[:, IS].any()
    assert np.allclose(o.H[5:, BETA], F)
    assert not o.H[5:, PC].any()


def test_combined_equals_stacked_individual_models(rng):
    truth_m = 1.3
    obs_c, obs_pc, obs_I, obs_m = [], [], [], []
    I = random_inertia(rng)
    pc = np.array([0.1, -0.05, 0.02])
    for _ in range(40):
        omega, alpha, v, abar = (rng.standard_normal(3) for _ in range(4))
        s = np.cross(omega, v) + abar
        F = truth_m * (s + np.cross(alpha, pc) + np.cross(omega, np.cross(omega, pc)))
        T = I @ alpha + np.cross(omega, I @ omega) - np.cross(F, pc)
        obs_c.append(build_combined_observation(F, T, alpha, omega, v, abar))
        obs_pc.append(build_pc_observation(F, alpha, omega, v, abar))
        obs_m.append((omega, alpha, v, abar, F, T))
    x = batch_least_squares(obs_c)
    pc_hat = batch_least_squares(obs_pc)
    for omega, alpha, v, abar, F, T in obs_m:
        obs_I.append(build_inertia_observation(pc_hat, F, T, omega, alpha))
    s_hat = batch_least_squares(obs_I)
    m_obs = [build_mass_observation(pc_hat, a, w, v, ab, F) for w, a, v, ab, F, _ in obs_m]
    m_hat = batch_least_squares(m_obs)[0]
    assert np.max(np.abs(x[PC] - pc_hat)) < 1e-8
    assert np.max(np.abs(x[IS] - s_hat)) < 1e-8
    assert abs(1.0 / x[BETA] - m_hat) < 1e-8


def test_combined_noise_tensor_matches_finite_differences(rng):
    d = _motion(rng)
    x = np.append(dynamic_truth_vector(d["pc"] + 0.05, d["I"] + 0.01, 1.1 * d["m"]), 1.0)
    J = combined_noise_tensor(d["F"], d["alpha"], d["omega"], d["v"]) @ x
    base = np.concatenate([d[k] for k in ("omega", "v", "abar", "alpha", "F", "T")])

    def residual(u):
        w, v, ab, al, F, T = np.split(u, 6)
        o = build_combined_observation(d["F"], T, al, w, v, ab)
        # the perp rows keep the nominal force direction; F enters elsewhere
        o2 = build_combined_observation(F, T, al, w, v, ab)
        H = np.vstack((o.H[:2], o2.H[2:]))
        y = np.concatenate((o.y[:2], o2.y[2:]))
        r = H @ x[:10] - y
        r[:2] = -perp_basis(d["F"]) @ r[5:]
        return r

    eps = 1e-6
    num = np.empty((8, 18))
    for k in range(18):
        e = np.zeros(18)
        e[k] = eps
        num[:, k] = (residual(base + e) - residual(base - e)) / (2 * eps)
    assert np.max(np.abs(num - J)) < 1e-6


def test_combined_covariance_monte_carlo(rng):
    d = _motion(rng)
    x = dynamic_truth_vector(d["pc"], d["I"], d["m"])
    ch = ChannelCovariances.isotropic(1e-3)
    o = build_combined_observation(d["F"], d["T"], d["alpha"], d["omega"], d["v"], d["abar"],
                                   channels=ch, estimate=x)
    N = 20000
    res = np.empty((N, 6))
    for k in range(N):
        n = 1e-3 * rng.standard_normal((6, 3))
        on = build_combined_observation(d["F"] + n[4], d["T"] + n[5], d["alpha"] + n[3],
                                        d["omega"] + n[0], d["v"] + n[1], d["abar"] + n[2])
        res[k] = on.residual(x)[2:]
    emp = np.cov(res.T)
    # the perp rows move with the noisy force, so compare the six defining rows
    R = o.R[2:, 2:]
    assert np.linalg.norm(emp - R) / np.linalg.norm(R) < 0.05
    assert o.check_covariance()
    # the leading rows are an exact combination of the specific-force rows
    Fp = perp_basis(d["F"])
    assert np.allclose(o.H[:2], -Fp @ o.H[5:], atol=1e-12)
    assert np.allclose(o.y[:2], -Fp @ o.y[5:], atol=1e-12)


# -- transforms --------------------------------------------------------------

def test_aggregate_wrench_examples():
    w = np.array([0.1, 0.2, 0.3, 1.0, 2.0, 3.0])
    assert np.allclose(aggregate_wrench_transform(Pose.identity(), w), w)
    # two opposite forces at +-x produce a pure torque about z
    f = np.array([0.0, 1.0, 0.0])
    at_left = Pose(np.eye(3), [1.0, 0, 0])     # g_ji with S_j at x = -1 in S_i
    at_right = Pose(np.eye(3), [-1.0, 0, 0])   # S_j at x = +1
    total = (aggregate_wrench_transform(at_right, np.concatenate((np.zeros(3), f)))
             + aggregate_wrench_transform(at_left, np.concatenate((np.zeros(3), -f))))
    assert np.allclose(total, [0, 0, 2.0, 0, 0, 0])


@given(poses(), vec3, vec3)
def test_aggregate_wrench_matches_explicit_coadjoint(g_ji, tau, f):
    # hand expansion of [[R, 0], [t x R, R]]^T [tau; f]
    R, t = g_ji.R, g_ji.t
    ref = np.concatenate((R.T @ (tau + np.cross(f, t)), R.T @ f))
    out = aggregate_wrench_transform(g_ji, np.concatenate((tau, f)))
    assert np.max(np.abs(out - ref)) < 1e-10 * max(1.0, np.abs(ref).max(), np.abs(f).max())


@given(poses(), vec3, vec3, vec3, vec3)
def test_wrench_transfer_preserves_power(g_ji, w, v, tau, f):
    xi_i = np.concatenate((w, v))
    w_j = np.concatenate((tau, f))
    lhs = xi_i @ aggregate_wrench_transform(g_ji, w_j)
    rhs = (g_ji.adjoint() @ xi_i) @ w_j
    assert lhs == pytest.approx(rhs, abs=1e-9 * max(1.0, abs(rhs)))


def test_inertia_conjugation(rng):
    R = random_pose(rng).R
    I = random_inertia(rng)
    M = inertia_conjugation_matrix(R)
    assert np.allclose(M @ inertia_to_vector(I), inertia_to_vector(R @ I @ R.T))


def test_consensus_transforms_cocycle_and_roundtrip(rng):
    g = [random_pose(rng) for _ in range(3)]   # frame poses in a common body frame

    def rel(j, i):
        return g[j].inverse() @ g[i]

    def A(i, j):   # carries frame-j quantities into frame i
        return consensus_transforms(rel(j, i))

    for name in ("alpha", "inertia", "pc", "wrench", "dynamic"):
        a01 = getattr(A(0, 1), name)
        a12 = getattr(A(1, 2), name)
        a02 = getattr(A(0, 2), name)
        a10 = getattr(A(1, 0), name)
        assert np.max(np.abs(a01 @ a12 - a02)) < 1e-10
        assert np.max(np.abs(a01 @ a10 - np.eye(a01.shape[0]))) < 1e-10
        ident = getattr(consensus_transforms(Pose.identity()), name)
        assert np.allclose(ident, np.eye(ident.shape[0]))


def test_consensus_transforms_move_truth_between_frames(rng):
    body = [random_pose(rng) for _ in range(2)]
    I_b = random_inertia(rng)
    pc_b = rng.standard_normal(3)
    m = 2.5

    def truth(i):
        inv = body[i].inverse()
        return dynamic_truth_vector(inv.apply(pc_b), inv.R @ I_b @ inv.R.T, m)

    g_10 = body[1].inverse() @ body[0]
    D = consensus_transforms(g_10).dynamic          # A_01: frame-1 values into frame 0
    assert np.allclose(D @ np.append(truth(1), 1.0), np.append(truth(0), 1.0))
