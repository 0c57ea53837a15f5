"""Two-phase identification experiment: relative poses, then load parameters.

Phase 1 runs one dual-quaternion filter per communication edge.  Phase 2
gives every robot an RLS filter over ``[pc; I^S; 1/m]`` in its own frame; the
total wrench, the angular acceleration and (optionally) the estimates are
agreed on through consensus in different coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path

import numpy as np

from .consensus import RobotNetwork, run_consensus
from .dq_algebra import Pose, dq_to_pose, dq_translation, rotation_angle_between
from .errors import ConsensusError, NumericalError, PhaseOrderError
from .estimation_filters import (DqFilterState, RlsState, dq_filter_step, rls_update)
from .observation_models import (BETA, IS, N_DYN, PC, ChannelCovariances,
                                 build_alpha_observation, build_combined_observation,
                                 build_pose_observation, consensus_transforms)
from .rigidbody_sim import NoiseModel, inertia_to_vector, simulate

log = logging.getLogger(__name__)

#: Relative eigengap of the rotation information required before phase 2.
POSE_GAP_MIN = 1e-3


@dataclass(frozen=True)
class MetricsRecord:
    time: float
    entity: str
    metric: str
    value: float


class MetricsLog:
    """Append-only record list with monotone time per (entity, metric) stream."""

    def __init__(self):
        self.records = []
        self._last = {}

    def add(self, time, entity, metric, value):
        key = (entity, metric)
        if key in self._last and time < self._last[key]:
            raise ValueError(f"time went backwards on stream {key}")
        self._last[key] = time
        self.records.append(MetricsRecord(float(time), entity, metric, float(value)))

    def series(self, entity, metric):
        pts = [(r.time, r.value) for r in self.records if r.entity == entity and r.metric == metric]
        return np.array(pts).reshape(-1, 2)

    def at(self, entity, metric, time):
        """Value of the last record at or before ``time``."""
        s = self.series(entity, metric)
        idx = np.searchsorted(s[:, 0], time + 1e-9) - 1
        if idx < 0:
            raise KeyError(f"no {entity}/{metric} record before t={time}")
        return float(s[idx, 1])


def _fmt(x):
    return format(x, ".9g")


def emit_csv(records, path):
    """Write ``time,entity,metric,value`` rows sorted by time, entity, metric."""
    path = Path(path)
    rows = sorted(records, key=lambda r: (r.time, r.entity, r.metric))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("time", "entity", "metric", "value"))
            for r in rows:
                w.writerow((_fmt(r.time), r.entity, r.metric, _fmt(r.value)))
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    return path


def read_csv(path):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return [MetricsRecord(float(r["time"]), r["entity"], r["metric"], float(r["value"]))
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# truth
# ---------------------------------------------------------------------------

_TRUTH_CACHE = {}
_TRUTH_CACHE_SIZE = 4


def simulate_truth(config, duration, with_changes=True):
    """Noise-free trajectory for ``config``; independent of the seed, so cached."""
    d = config.to_dict()
    for k in ("seed", "noise_delta", "noise_floor", "forgetting", "pose_forgetting",
              "p0", "consensus", "record_period", "phase1_duration", "phase2_duration",
              "adaptive_duration"):
        d.pop(k)
    if not with_changes:
        d["changes"] = []
    key = (json.dumps(d, sort_keys=True), round(duration, 9))
    if key in _TRUTH_CACHE:
        _TRUTH_CACHE[key] = _TRUTH_CACHE.pop(key)  # most recent last
    else:
        while len(_TRUTH_CACHE) >= _TRUTH_CACHE_SIZE:
            _TRUTH_CACHE.pop(next(iter(_TRUTH_CACHE)))
        _TRUTH_CACHE[key] = simulate(config.sim_setup(with_changes), duration)
    return _TRUTH_CACHE[key]


def _noisy(traj, config, seed, stream):
    noise = NoiseModel(config.noise_delta, seed)
    rng = np.random.default_rng([seed, stream])
    return traj.noisy(noise, rng)


# ---------------------------------------------------------------------------
# phase 1
# ---------------------------------------------------------------------------

@dataclass
class Phase1Result:
    filters: dict
    poses: dict
    true_poses: dict
    metrics: MetricsLog
    summary: dict

    @property
    def converged(self):
        return all(not f.degenerate and f.eigengap >= POSE_GAP_MIN for f in self.filters.values())

    @property
    def degenerate_edges(self):
        return [e for e, f in self.filters.items() if f.degenerate or f.eigengap < POSE_GAP_MIN]


def _relative_poses(layout, edges):
    out = {}
    for i, j in edges:
        out[(i, j)] = layout.relative(j, i)        # g_ji keyed by (i, j)
        out[(j, i)] = layout.relative(i, j)
    return out


def run_phase1(config, seed=None, truth=None):
    """Estimate ``g_ji`` for every edge ``(i, j)`` from noisy twists.

    One filter per undirected edge; the reverse pose is the inverse.
    Errors: rotation ``2 acos |<q_est, q_true>|`` and translation ``|t_est - t_true|``.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    duration = config.phase1_duration
    truth = simulate_truth(config, duration) if truth is None else truth
    meas = _noisy(truth, config, seed, 1)
    layout = truth.layout
    g_true = _relative_poses(layout, config.edges)
    sigma = max(config.noise_delta, config.noise_floor)
    filters = {e: DqFilterState.initial(config.p0, config.pose_forgetting) for e in config.edges}
    q_true = {e: g_true[e].quat() for e in config.edges}
    metrics = MetricsLog()
    rec_every = max(1, int(round(config.record_period / config.sample_period)))
    K = int(np.searchsorted(truth.t, duration + 1e-9))
    rot_err = {}
    trans_err = {}
    for k in range(K):
        t = truth.t[k]
        for e in config.edges:
            i, j = e
            xi_i = np.concatenate((meas.omega[k, i], meas.v[k, i]))
            xi_j = np.concatenate((meas.omega[k, j], meas.v[k, j]))
            obs = build_pose_observation(xi_i, xi_j, sigma, sigma)
            filters[e] = dq_filter_step(filters[e], obs)
        if k % rec_every == 0 or k == K - 1:
            for e in config.edges:
                f = filters[e]
                rot_err[e] = rotation_angle_between(f.q_r, q_true[e])
                trans_err[e] = float(np.linalg.norm(dq_translation(f.dq) - g_true[e].t))
                ent = f"edge-{e[0]}-{e[1]}"
                metrics.add(t, ent, "rotation_error_rad", rot_err[e])
                metrics.add(t, ent, "translation_error_m", trans_err[e])
            metrics.add(t, "network", "rotation_error_rad", np.mean(list(rot_err.values())))
            metrics.add(t, "network", "translation_error_m", np.mean(list(trans_err.values())))

    poses = {}
    for (i, j), f in filters.items():
        g = dq_to_pose(f.dq)
        poses[(i, j)] = g
        poses[(j, i)] = g.inverse()
    summary = {
        "time": float(truth.t[K - 1]),
        "rotation_error_rad": float(np.mean(list(rot_err.values()))),
        "translation_error_m": float(np.mean(list(trans_err.values()))),
        "degenerate_edges": [list(e) for e in filters if filters[e].degenerate],
    }
    return Phase1Result(filters, poses, g_true, metrics, summary)


# ---------------------------------------------------------------------------
# phase 2
# ---------------------------------------------------------------------------

@dataclass
class Phase2Result:
    estimates: np.ndarray          # (n, 10) final per-robot unknowns
    metrics: MetricsLog
    summary: dict
    checkpoints: dict = field(default_factory=dict)


def spanning_tree(n, edges):
    """Breadth-first spanning tree from robot 0.

    Estimated relative poses do not compose exactly around a cycle, and the
    transformed consensus then has no fixed point besides zero.  A tree has
    no cycles, so any set of edge transforms is consistent on it.
    """
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    tree = []
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for j in sorted(adj[i]):
                if j not in seen:
                    seen.add(j)
                    tree.append((min(i, j), max(i, j)))
                    nxt.append(j)
        frontier = nxt
    return sorted(tree)


def _network(n, edges, mats):
    dim = next(iter(mats.values())).shape[0]
    return RobotNetwork(n, edges, {e: mats[e] for e in mats if tuple(sorted(e)) in edges},
                        dim=dim, cocycle_tol=1e-3)


def _errors(x, truth_vec):
    I_err = float(np.mean(np.abs(x[IS] - truth_vec[IS])))
    pc_err = float(np.linalg.norm(x[PC] - truth_vec[PC]))
    return I_err, pc_err


def run_phase2(config, pose_estimates=None, seed=None, truth=None, true_poses=False,
               use_consensus=True, duration=None, checkpoints=()):
    """Identify ``pc``, ``I`` and ``m`` at every robot.

    ``pose_estimates`` is a :class:`Phase1Result`; it must have converged
    unless ``true_poses`` is set, in which case the exact relative poses are
    used.  ``use_consensus=False`` is the ablation where each robot treats its
    own wrench as the total and uses only its own neighbours' accelerometers.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    duration = config.phase2_duration if duration is None else duration
    # the central difference at the last step needs one sample beyond it
    if truth is None:
        truth = simulate_truth(config, duration + config.sample_period)
    layout = truth.layout
    n = config.n
    if true_poses:
        g = _relative_poses(layout, config.edges)
    else:
        if pose_estimates is None:
            raise PhaseOrderError("phase 2 needs phase-1 pose estimates (or true poses)")
        if not pose_estimates.converged:
            raise PhaseOrderError(
                f"phase-1 estimates not converged on edges {pose_estimates.degenerate_edges}")
        g = pose_estimates.poses
    meas = _noisy(truth, config, seed, 2)

    sigma = max(config.noise_delta, config.noise_floor)
    s2 = sigma ** 2
    h = config.sample_period
    cs = config.consensus

    # per ordered pair (i, j): A_ij built from g_ji
    tr = {(i, j): consensus_transforms(g[(i, j)]) for (i, j) in g}
    nets = {}
    if use_consensus and n > 1:
        cedges = set(config.edges) if true_poses else set(spanning_tree(n, config.edges))
        cedges = {tuple(sorted(e)) for e in cedges}
        nets["wrench"] = _network(n, cedges, {e: t.wrench for e, t in tr.items()})
        nets["dynamic"] = _network(n, cedges, {e: t.dynamic for e, t in tr.items()})
        nets["point"] = _network(n, cedges, {e: t.pc for e, t in tr.items()})
        nets["alpha"] = _network(n, cedges, {e: _block(t.alpha, np.kron(t.alpha, t.alpha))
                                             for e, t in tr.items()})
        nets["wrench_cov"] = _network(n, cedges, {e: np.kron(t.wrench, t.wrench)
                                                  for e, t in tr.items()})

    def agree(name, values):
        res = run_consensus(nets[name], values, cs.tol * max(1.0, np.max(np.abs(values))),
                            cs.max_iters)
        if not res.converged:
            log.warning("%s consensus stopped at residual %.3e", name, res.residuals[-1])
        return res.values

    # initial guesses: contact centroid, unit diagonal inertia, 1 kg
    if "point" in nets:
        origins = np.tile([0.0, 0.0, 0.0, 1.0], (n, 1))
        centroid = agree("point", origins)[:, :3]
    else:
        centroid = np.zeros((n, 3))
    x0 = np.zeros((n, N_DYN))
    x0[:, PC] = centroid
    x0[:, IS] = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
    x0[:, BETA] = 1.0
    filters = [RlsState.initial(x0[i], config.p0, config.forgetting) for i in range(n)]

    # covariance of the total wrench seen by each robot
    if "wrench_cov" in nets:
        local = np.tile((s2 * np.eye(6)).ravel(), (n, 1))
        wcov = n * agree("wrench_cov", local).reshape(n, 6, 6)
    else:
        wcov = np.tile(s2 * np.eye(6), (n, 1, 1))

    neighbors = [[] for _ in range(n)]
    for a, b in config.edges:
        neighbors[a].append(b)
        neighbors[b].append(a)

    metrics = MetricsLog()
    rec_every = max(1, int(round(config.record_period / h)))
    K = min(int(np.searchsorted(truth.t, duration + 1e-9)), len(truth.t) - 1)
    cd_cov = s2 / (2.0 * h * h) * np.eye(3)
    cd_info = np.linalg.inv(cd_cov)
    checkpoint_values = {}
    pending = sorted(checkpoints)

    for k in range(1, K):
        t = truth.t[k]
        local_w = np.concatenate((meas.tau[k], meas.f[k]), axis=1)
        total_w = n * agree("wrench", local_w) if "wrench" in nets else local_w

        # angular acceleration: differenced gyro prior + accelerometer pairs
        info = np.zeros((n, 12))
        for i in range(n):
            alpha_cd = (meas.omega[k + 1, i] - meas.omega[k - 1, i]) / (2.0 * h)
            Y = cd_info.copy()
            b = cd_info @ alpha_cd
            for j in neighbors[i]:
                # each pair is shared by both ends; half weight keeps the network sum exact
                o = build_alpha_observation(g[(i, j)], meas.abar[k, i], meas.abar[k, j], sigma)
                W = 0.5 * np.linalg.inv(o.R)
                Y += o.H.T @ W @ o.H
                b += o.H.T @ W @ o.y
            info[i, :3] = b
            info[i, 3:] = Y.ravel()
        if "alpha" in nets:
            info = agree("alpha", info)
            scale = n
        else:
            scale = 1
        alphas = np.empty((n, 3))
        alpha_covs = np.empty((n, 3, 3))
        for i in range(n):
            Y = scale * info[i, 3:].reshape(3, 3)
            Y = 0.5 * (Y + Y.T)
            alpha_covs[i] = np.linalg.inv(Y)
            alphas[i] = alpha_covs[i] @ (scale * info[i, :3])

        for i in range(n):
            ch = ChannelCovariances.isotropic(sigma, alpha_covs[i], wcov[i])
            f = filters[i]
            obs = build_combined_observation(
                total_w[i, 3:], total_w[i, :3], alphas[i], meas.omega[k, i],
                meas.v[k, i], meas.abar[k, i], channels=ch, estimate=f.x,
                estimate_cov=np.linalg.inv(f.Pinv))
            try:
                filters[i] = rls_update(f, obs, pseudo_inverse=True)
            except NumericalError as exc:
                log.warning("robot %d skipped update at t=%.3f: %s", i, t, exc)

        if "dynamic" in nets and cs.estimates:
            xs = np.hstack((np.array([f.x for f in filters]), np.ones((n, 1))))
            xs = agree("dynamic", xs)
            filters = [RlsState(xs[i, :N_DYN], f.Pinv, f.lam) for i, f in enumerate(filters)]

        record = (k % rec_every == 0) or k == K - 1
        while pending and pending[0] <= t + 1e-9:
            record = True
            pending.pop(0)
        if record:
            summ = _phase2_snapshot(truth, k, filters, layout)
            for i in range(n):
                ent = f"robot-{i}"
                metrics.add(t, ent, "inertia_error", summ["per_robot"][i][0])
                metrics.add(t, ent, "pc_error_m", summ["per_robot"][i][1])
                metrics.add(t, ent, "mass_kg", summ["per_robot"][i][2])
            metrics.add(t, "network", "inertia_error", summ["inertia_error"])
            metrics.add(t, "network", "pc_error_m", summ["pc_error_m"])
            metrics.add(t, "network", "mass_kg", summ["mass_kg"])
            metrics.add(t, "network", "true_mass_kg", summ["true_mass_kg"])
            checkpoint_values[round(float(t), 6)] = {k2: v for k2, v in summ.items()
                                                     if k2 != "per_robot"}

    final = _phase2_snapshot(truth, K - 1, filters, layout)
    final.pop("per_robot")
    final["time"] = float(truth.t[K - 1])
    return Phase2Result(np.array([f.x for f in filters]), metrics, final, checkpoint_values)


def _block(A, B):
    M = np.zeros((A.shape[0] + B.shape[0],) * 2)
    M[:A.shape[0], :A.shape[0]] = A
    M[A.shape[0]:, A.shape[0]:] = B
    return M


def _phase2_snapshot(truth, k, filters, layout):
    per = []
    for i, f in enumerate(filters):
        pc, I, m = truth.truth_in_frame(k, i)
        tv = np.concatenate((pc, inertia_to_vector(I), [1.0 / m]))
        I_err, pc_err = _errors(f.x, tv)
        m_hat = 1.0 / f.x[BETA] if f.x[BETA] != 0 else math.inf
        per.append((I_err, pc_err, m_hat))
    per_arr = np.array(per)
    return {
        "inertia_error": float(np.mean(per_arr[:, 0])),
        "pc_error_m": float(np.mean(per_arr[:, 1])),
        "mass_kg": float(np.mean(per_arr[:, 2])),
        "true_mass_kg": float(truth.params[truth.param_index[k]].m),
        "per_robot": per,
    }


def run_adaptive(config, pose_estimates=None, seed=None, true_poses=False,
                 use_consensus=True, duration=None, checkpoints=()):
    """Phase 2 over ``duration`` with the load-change events of ``config``.

    A config without change events gets the default one (m = 1.2 kg at 35 s).
    """
    if not config.changes:
        config = config.with_default_change()
    duration = config.adaptive_duration if duration is None else duration
    truth = simulate_truth(config, duration + config.sample_period)
    return run_phase2(config, pose_estimates, seed=seed, truth=truth, true_poses=true_poses,
                      use_consensus=use_consensus, duration=duration, checkpoints=checkpoints)
