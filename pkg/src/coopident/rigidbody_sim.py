"""Ground-truth rigid body simulation and synthetic sensor readings.

The body state is kept at the mass center.  Contact (sensor) frames are fixed
in a body *reference* frame whose axes coincide with the mass-center frame; a
load change moves the mass center inside the reference frame, so the contact
poses are stored relative to the reference frame and re-expressed about the
current mass center on demand.

Accelerometer channel.  ``abar`` is the time derivative of the body-fixed
velocity of the contact frame minus gravity, ``abar_i = dv_i/dt - R_i^T g``.
This is the quantity the linear observation models are written in.  A strapdown
accelerometer reports ``abar_i + omega_i x v_i``; that reading is exposed as
``accel - R_i^T g`` through the ``accel`` field (coordinate acceleration of the
contact point) for anyone wiring real hardware.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .dq_algebra import Pose, quat_mul, quat_normalize, quat_to_rotmat
from .errors import ConstraintViolation, IntegrationError

GRAVITY = np.array([0.0, 0.0, -9.81])


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


@dataclass(frozen=True, eq=False)
class InertialParams:
    """Mass ``m`` [kg], mass center ``pc`` [m] in the reference frame and
    inertia ``I`` [kg m^2] about the mass center in reference-frame axes."""

    m: float
    pc: np.ndarray
    I: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "pc", np.array(self.pc, dtype=float).reshape(3))
        object.__setattr__(self, "I", np.array(self.I, dtype=float).reshape(3, 3))

    def validate(self):
        if not self.m > 0.0:
            raise ConstraintViolation(f"mass must be positive, got {self.m}")
        if np.max(np.abs(self.I - self.I.T)) > 1e-12:
            raise ConstraintViolation("inertia tensor is not symmetric")
        lam = np.linalg.eigvalsh(self.I)
        if lam[0] <= 0.0:
            raise ConstraintViolation("inertia tensor is not positive definite")
        # principal moments of a physical body obey the triangle inequality
        if lam[2] > lam[0] + lam[1] + 1e-12:
            raise ConstraintViolation("principal moments violate the triangle inequality")
        return self

    def in_frame(self, g_ref_s):
        """Mass center and inertia expressed in the frame ``S`` whose pose in the
        reference frame is ``g_ref_s``."""
        g_s_ref = g_ref_s.inverse()
        return g_s_ref.apply(self.pc), g_s_ref.R @ self.I @ g_s_ref.R.T

    def inertia_vector(self, g_ref_s=None):
        """Six unique entries ``(Ixx, Iyy, Izz, Ixy, Ixz, Iyz)``."""
        I = self.I if g_ref_s is None else self.in_frame(g_ref_s)[1]
        return inertia_to_vector(I)


def inertia_to_vector(I):
    return np.array([I[0, 0], I[1, 1], I[2, 2], I[0, 1], I[0, 2], I[1, 2]])


def vector_to_inertia(s):
    return np.array([[s[0], s[3], s[4]],
                     [s[3], s[1], s[5]],
                     [s[4], s[5], s[2]]])


@dataclass(frozen=True, eq=False)
class RigidBodyState:
    """Mass-center pose in the world and body-fixed twist."""

    q_wb: np.ndarray
    p_wb: np.ndarray
    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name, size in (("q_wb", 4), ("p_wb", 3), ("omega", 3), ("v", 3)):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(size))

    @classmethod
    def at_rest(cls):
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3), np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, y):
        return cls(y[0:4], y[4:7], y[7:10], y[10:13])

    def as_vector(self):
        return np.concatenate((self.q_wb, self.p_wb, self.omega, self.v))

    @property
    def R_wb(self):
        return quat_to_rotmat(self.q_wb)


@dataclass(frozen=True)
class ContactLayout:
    """Poses of the sensor frames ``S_i`` in the body reference frame."""

    poses: tuple

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        for g in self.poses:
            g.validate()

    @property
    def n(self):
        return len(self.poses)

    def relative(self, j, i):
        """``g_ji``: coordinates in ``S_i`` to coordinates in ``S_j``."""
        return self.poses[j].inverse() @ self.poses[i]

    def about_com(self, pc):
        """Poses of each ``S_i`` in the mass-center frame."""
        return [Pose(g.R, g.t - pc) for g in self.poses]


@dataclass(frozen=True)
class SensorReading:
    """Readings of one robot, all in its sensor frame."""

    omega: np.ndarray
    v: np.ndarray
    abar: np.ndarray
    f: np.ndarray
    tau: np.ndarray


@dataclass(frozen=True)
class NoiseModel:
    delta: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ConstraintViolation("noise delta must be non-negative")


def apply_noise(reading, noise, rng=None):
    """Add i.i.d. ``N(0, delta^2)`` noise to every channel of ``reading``.

    With no ``rng`` a fresh generator seeded from ``noise.seed`` is used, so the
    call is a pure function of its arguments.
    """
    if noise.delta == 0.0:
        return reading
    rng = np.random.default_rng(noise.seed) if rng is None else rng
    kw = {}
    for name in ("omega", "v", "abar", "f", "tau"):
        x = np.asarray(getattr(reading, name), dtype=float)
        kw[name] = x + noise.delta * rng.standard_normal(x.shape)
    return SensorReading(**kw)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def _derivative(y, m, I, I_inv, wrench, gravity):
    q = y[0:4]
    omega = y[7:10]
    v = y[10:13]
    R = quat_to_rotmat(q)
    dq = 0.5 * quat_mul(q, np.array([0.0, omega[0], omega[1], omega[2]]))
    dp = R @ v
    domega = I_inv @ (wrench[:3] - _cross(omega, I @ omega))
    dv = wrench[3:] / m + R.T @ gravity - _cross(omega, v)
    return np.concatenate((dq, dp, domega, dv))


def body_accelerations(state, params, wrench_at_com, gravity=GRAVITY):
    """``(domega/dt, dv/dt)`` of the mass-center frame, body-fixed."""
    I_inv = np.linalg.inv(params.I)
    d = _derivative(state.as_vector(), params.m, params.I, I_inv,
                    np.asarray(wrench_at_com, dtype=float), np.asarray(gravity, dtype=float))
    return d[7:10], d[10:13]


def step_dynamics(state, params, total_wrench_at_com, gravity=GRAVITY, dt=1e-3, _I_inv=None):
    """Advance one classical RK4 step with the wrench held constant.

    ``total_wrench_at_com = [T, F]`` in the mass-center frame.  The attitude
    quaternion is renormalized after the step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    w = np.asarray(total_wrench_at_com, dtype=float)
    g = np.asarray(gravity, dtype=float)
    I_inv = np.linalg.inv(params.I) if _I_inv is None else _I_inv
    y = state.as_vector() if isinstance(state, RigidBodyState) else state
    with np.errstate(invalid="ignore", over="ignore"):  # reported below instead
        k1 = _derivative(y, params.m, params.I, I_inv, w, g)
        k2 = _derivative(y + 0.5 * dt * k1, params.m, params.I, I_inv, w, g)
        k3 = _derivative(y + 0.5 * dt * k2, params.m, params.I, I_inv, w, g)
        k4 = _derivative(y + dt * k3, params.m, params.I, I_inv, w, g)
        incr = (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(incr)):
        raise IntegrationError(
            f"non-finite derivative (|omega|={np.linalg.norm(y[7:10]):.3g}, "
            f"|v|={np.linalg.norm(y[10:13]):.3g}, wrench={w.tolist()})")
    y_next = y + incr
    y_next[0:4] = quat_normalize(y_next[0:4])
    if isinstance(state, RigidBodyState):
        return RigidBodyState.from_vector(y_next)
    return y_next


def sensor_kinematics(state, layout, params, total_wrench_at_com, gravity=GRAVITY):
    """Exact body-fixed kinematics of every sensor frame.

    Returns a dict of ``(n, 3)`` arrays: ``omega``, ``v``, ``abar``, ``alpha``
    and ``accel`` (coordinate acceleration of the contact point, ``dv/dt +
    omega x v``).
    """
    domega, dv = body_accelerations(state, params, total_wrench_at_com, gravity)
    return _sensor_kinematics(state, layout.about_com(params.pc), domega, dv, gravity)


def _sensor_kinematics(state, com_poses, domega, dv, gravity):
    R_wb = quat_to_rotmat(state.q_wb)
    g_body = R_wb.T @ np.asarray(gravity, dtype=float)
    n = len(com_poses)
    out = {k: np.empty((n, 3)) for k in ("omega", "v", "abar", "alpha", "accel")}
    w = state.omega
    for i, g_bi in enumerate(com_poses):
        Rt = g_bi.R.T
        r = g_bi.t
        out["omega"][i] = Rt @ w
        out["v"][i] = Rt @ (state.v + _cross(w, r))
        out["alpha"][i] = Rt @ domega
        vdot = Rt @ (dv + _cross(domega, r))
        out["abar"][i] = vdot - Rt @ g_body
        out["accel"][i] = vdot + _cross(out["omega"][i], out["v"][i])
    return out


# ---------------------------------------------------------------------------
# excitation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WrenchProfile:
    """Per-robot sinusoidal excitation wrench applied on top of the shared load.

    Every channel of robot ``r`` oscillates at an integer harmonic of
    ``2 pi / period`` so the whole profile repeats with ``period``.
    """

    force_amplitude: float = 2.0
    torque_amplitude: float = 0.3
    period: float = 20.0


def wrench_profile(t, robot, profile):
    """Excitation force and torque of ``robot`` at time ``t`` in its sensor frame."""
    w0 = 2.0 * math.pi / profile.period
    k = np.arange(6)
    harmonics = 3 + 7 * robot + 2 * k + (k >= 3)
    phases = 0.7 * robot + 1.3 * k
    s = np.sin(harmonics * w0 * t + phases)
    return profile.force_amplitude * s[:3], profile.torque_amplitude * s[3:]


@dataclass(frozen=True)
class MotionProfile:
    """Reference motion tracked by the simulated team.

    Body rates are sums of two sinusoids per axis; the mass center follows
    a bounded Lissajous curve around the world origin.
    """

    rate_amplitude: float = 2.5
    rate_frequencies: tuple = ((0.9, 2.1), (1.3, 1.7), (0.7, 2.6))
    rate_phases: tuple = ((0.0, 1.1), (0.8, 2.0), (1.9, 0.3))
    position_amplitude: float = 0.3
    position_frequencies: tuple = (0.8, 1.1, 0.6)

    def rate(self, t):
        """``(omega_d, domega_d)`` in body axes."""
        w = np.zeros(3)
        dw = np.zeros(3)
        for k in range(3):
            for f, ph in zip(self.rate_frequencies[k], self.rate_phases[k]):
                w[k] += math.sin(f * t + ph)
                dw[k] += f * math.cos(f * t + ph)
        return self.rate_amplitude * w, self.rate_amplitude * dw

    def position(self, t):
        """``(p, dp, ddp)`` of the mass center in the world."""
        f = np.asarray(self.position_frequencies, dtype=float)
        a = self.position_amplitude
        return a * np.sin(f * t), a * f * np.cos(f * t), -a * f * f * np.sin(f * t)


@dataclass(frozen=True)
class ControllerGains:
    k_omega: float = 8.0
    kp: float = 16.0
    kd: float = 8.0


def tracking_wrench(t, state, params, motion, gains, gravity=GRAVITY):
    """Total wrench at the mass center that makes the body track ``motion``."""
    w_d, dw_d = motion.rate(t)
    w = state.omega
    I = params.I
    tau = I @ (dw_d + gains.k_omega * (w_d - w)) + _cross(w, I @ w)
    R = quat_to_rotmat(state.q_wb)
    p_d, dp_d, ddp_d = motion.position(t)
    p_dot = R @ state.v
    F_world = params.m * (ddp_d + gains.kp * (p_d - state.p_wb) + gains.kd * (dp_d - p_dot)
                          - np.asarray(gravity, dtype=float))
    return np.concatenate((tau, R.T @ F_world))


def allocate_wrench(t, total_at_com, com_poses, profile):
    """Split ``total_at_com`` among the robots.

    Each robot applies its own excitation plus an equal share of whatever is
    still needed; the shares sum back to ``total_at_com`` exactly.
    """
    n = len(com_poses)
    own = [np.concatenate(wrench_profile(t, j, profile)[::-1]) for j in range(n)]
    # own[j] is [tau, f]
    residual = np.array(total_at_com, dtype=float)
    for j, g_bj in enumerate(com_poses):
        residual -= g_bj.inverse().coadjoint() @ own[j]
    share = residual / n
    return np.array([own[j] + g_bj.coadjoint() @ share for j, g_bj in enumerate(com_poses)])


# ---------------------------------------------------------------------------
# trajectory synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamChange:
    time: float
    params: InertialParams


@dataclass(frozen=True)
class SimSetup:
    layout: ContactLayout
    params: InertialParams
    motion: MotionProfile = field(default_factory=MotionProfile)
    wrench: WrenchProfile = field(default_factory=WrenchProfile)
    gains: ControllerGains = field(default_factory=ControllerGains)
    gravity: tuple = tuple(GRAVITY)
    dt: float = 1e-3
    sample_period: float = 0.01
    changes: tuple = ()


@dataclass
class Trajectory:
    """Noise-free readings sampled every ``sample_period``.

    Per-robot arrays have shape ``(K, n, 3)``; ``param_index[k]`` points into
    ``params`` for the inertial parameters valid at sample ``k``.
    """

    t: np.ndarray
    omega: np.ndarray
    v: np.ndarray
    abar: np.ndarray
    alpha: np.ndarray
    accel: np.ndarray
    f: np.ndarray
    tau: np.ndarray
    param_index: np.ndarray
    params: list
    layout: ContactLayout
    states: list

    @property
    def n(self):
        return self.layout.n

    def truth_in_frame(self, k, i):
        """``(pc_i, I_i, m)`` of the load at sample ``k`` in sensor frame ``i``."""
        p = self.params[self.param_index[k]]
        pc, I = p.in_frame(self.layout.poses[i])
        return pc, I, p.m

    def noisy(self, noise, rng=None):
        """Copy with i.i.d. Gaussian noise on every measured channel."""
        if noise.delta == 0.0:
            return replace(self)
        rng = np.random.default_rng(noise.seed) if rng is None else rng
        kw = {}
        for name in ("omega", "v", "abar", "f", "tau"):
            x = getattr(self, name)
            kw[name] = x + noise.delta * rng.standard_normal(x.shape)
        return replace(self, **kw)


def _shift_com(state, old_pc, new_pc):
    d = new_pc - old_pc
    R = quat_to_rotmat(state.q_wb)
    return RigidBodyState(state.q_wb, state.p_wb + R @ d,
                          state.omega, state.v + _cross(state.omega, d))


def simulate(setup, duration, initial_state=None):
    """Integrate the closed-loop body and record readings at each sample time."""
    params = setup.params.validate()
    gravity = np.asarray(setup.gravity, dtype=float)
    changes = sorted(setup.changes, key=lambda c: c.time)
    for c in changes:
        c.params.validate()
    every = int(round(setup.sample_period / setup.dt))
    if every < 1 or abs(every * setup.dt - setup.sample_period) > 1e-9:
        raise ValueError("sample_period must be an integer multiple of dt")
    n_samples = int(math.floor(duration / setup.sample_period + 1e-9)) + 1
    n = setup.layout.n

    if initial_state is None:
        w0, _ = setup.motion.rate(0.0)
        p0, dp0, _ = setup.motion.position(0.0)
        initial_state = RigidBodyState(np.array([1.0, 0, 0, 0]), p0, w0, dp0)

    arrays = {k: np.zeros((n_samples, n, 3)) for k in
              ("omega", "v", "abar", "alpha", "accel", "f", "tau")}
    t_arr = np.zeros(n_samples)
    param_index = np.zeros(n_samples, dtype=int)
    param_list = [params]
    states = []

    y = initial_state.as_vector()
    I_inv = np.linalg.inv(params.I)
    com_poses = setup.layout.about_com(params.pc)
    step = 0
    next_change = 0
    for k in range(n_samples):
        for _ in range(every if k > 0 else 0):
            t_step = step * setup.dt
            w = tracking_wrench(t_step, RigidBodyState.from_vector(y), params,
                                setup.motion, setup.gains, gravity)
            y = step_dynamics(y, params, w, gravity, setup.dt, _I_inv=I_inv)
            step += 1
        t = step * setup.dt
        while next_change < len(changes) and changes[next_change].time <= t + 1e-12:
            new = changes[next_change].params
            y = _shift_com(RigidBodyState.from_vector(y), params.pc, new.pc).as_vector()
            params = new
            I_inv = np.linalg.inv(params.I)
            com_poses = setup.layout.about_com(params.pc)
            param_list.append(params)
            next_change += 1
        state = RigidBodyState.from_vector(y)
        w = tracking_wrench(t, state, params, setup.motion, setup.gains, gravity)
        d = _derivative(y, params.m, params.I, I_inv, w, gravity)
        kin = _sensor_kinematics(state, com_poses, d[7:10], d[10:13], gravity)
        robot_w = allocate_wrench(t, w, com_poses, setup.wrench)
        for name in ("omega", "v", "abar", "alpha", "accel"):
            arrays[name][k] = kin[name]
        arrays["tau"][k] = robot_w[:, :3]
        arrays["f"][k] = robot_w[:, 3:]
        t_arr[k] = t
        param_index[k] = len(param_list) - 1
        states.append(state)

    return Trajectory(t=t_arr, param_index=param_index, params=param_list,
                      layout=setup.layout, states=states, **arrays)
