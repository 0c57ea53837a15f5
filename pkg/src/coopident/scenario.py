"""Scenario configuration: defaults, JSON loading and validation.

A scenario file is a JSON object; every key is optional and unknown keys are
rejected.  Example::

    {
      "seed": 3,
      "noise_delta": 0.4,
      "phase1_duration": 8.0,
      "phase2_duration": 20.0,
      "forgetting": 1.005,
      "params": {"m": 2.0, "pc": [0.06, -0.04, 0.03],
                 "I": [[0.17, 0.01, 0], [0.01, 0.23, 0], [0, 0, 0.27]]},
      "changes": [{"time": 35.0, "m": 1.2, "pc": [0, 0, 0],
                   "I": [[0.1, 0, 0], [0, 0.1, 0], [0, 0, 0.1]]}],
      "contacts": [{"rotvec": [0, 0, 0], "t": [0.5, 0, 0]}, ...],
      "edges": [[0, 1], [1, 2], [2, 3], [3, 4], [4, 0]]
    }

See ``README.md`` for the full key list.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
import json
from pathlib import Path

import numpy as np

from .consensus import _is_connected
from .dq_algebra import Pose
from .errors import ConfigError, ConstraintViolation
from .rigidbody_sim import (ContactLayout, ControllerGains, InertialParams, MotionProfile,
                            ParamChange, SimSetup, WrenchProfile)

DEFAULT_CONTACTS = (
    ((0.0, 0.0, 0.0), (0.5, 0.1, 0.0)),
    ((0.3, -0.8, 0.2), (-0.5, -0.15, 0.1)),
    ((1.2, 0.4, -0.3), (0.1, 0.4, -0.15)),
    ((-0.6, 0.9, 0.5), (-0.2, -0.4, 0.05)),
    ((0.2, 0.3, 2.0), (0.05, 0.15, 0.3)),
)

DEFAULT_PARAMS = {
    "m": 2.0,
    "pc": [0.06, -0.04, 0.03],
    "I": [[0.17, 0.012, -0.008], [0.012, 0.23, 0.015], [-0.008, 0.015, 0.27]],
}

DEFAULT_CHANGE = {
    "time": 35.0,
    "m": 1.2,
    "pc": [-0.05, 0.06, -0.02],
    "I": [[0.11, -0.01, 0.006], [-0.01, 0.14, 0.0], [0.006, 0.0, 0.16]],
}


def ring(n):
    return [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1)][: n - 1]


def _params_from(d, where):
    try:
        p = InertialParams(d["m"], d["pc"], d["I"])
        return p.validate()
    except KeyError as exc:
        raise ConfigError(f"{where}: missing key {exc}") from exc
    except (ConstraintViolation, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ConsensusSettings:
    tol: float = 1e-10
    max_iters: int = 200
    estimates: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that, together with the seed, determines a run."""

    contacts: tuple = DEFAULT_CONTACTS
    edges: tuple = ()
    params: dict = field(default_factory=lambda: dict(DEFAULT_PARAMS))
    changes: tuple = ()
    noise_delta: float = 0.4
    noise_floor: float = 1e-6
    dt: float = 1e-3
    sample_period: float = 0.01
    phase1_duration: float = 8.0
    phase2_duration: float = 20.0
    adaptive_duration: float = 50.0
    forgetting: float = 1.005
    pose_forgetting: float = 1.0
    p0: float = 100.0
    gravity: tuple = (0.0, 0.0, -9.81)
    wrench: WrenchProfile = field(default_factory=WrenchProfile)
    motion: MotionProfile = field(default_factory=MotionProfile)
    gains: ControllerGains = field(default_factory=ControllerGains)
    consensus: ConsensusSettings = field(default_factory=ConsensusSettings)
    record_period: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.edges:
            object.__setattr__(self, "edges", tuple(ring(len(self.contacts))))
        object.__setattr__(self, "edges", tuple(tuple(int(v) for v in e) for e in self.edges))
        object.__setattr__(self, "contacts", tuple(
            (tuple(float(v) for v in rv), tuple(float(v) for v in t)) for rv, t in self.contacts))

    @property
    def n(self):
        return len(self.contacts)

    def validate(self):
        n = self.n
        if n < 1:
            raise ConfigError("at least one contact is required")
        for e in self.edges:
            if len(e) != 2 or not all(0 <= v < n for v in e) or e[0] == e[1]:
                raise ConfigError(f"invalid edge {e!r} for {n} robots")
        adj = [[] for _ in range(n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        if n > 1 and not _is_connected(n, adj):
            raise ConfigError("communication graph is not connected")
        for name in ("dt", "sample_period", "phase1_duration", "phase2_duration",
                     "adaptive_duration", "p0", "record_period"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.noise_delta < 0:
            raise ConfigError("noise_delta must be non-negative")
        if self.forgetting < 1 or self.pose_forgetting < 1:
            raise ConfigError("forgetting factors must be >= 1")
        ratio = self.sample_period / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("sample_period must be an integer multiple of dt")
        _params_from(self.params, "params")
        for k, c in enumerate(self.changes):
            if not c.get("time", -1) >= 0:
                raise ConfigError(f"changes[{k}]: time must be non-negative")
            _params_from(c, f"changes[{k}]")
        try:
            self.layout()
        except ConstraintViolation as exc:
            raise ConfigError(f"contacts: {exc}") from exc
        return self

    def layout(self):
        return ContactLayout(tuple(Pose.from_rotvec(rv, t) for rv, t in self.contacts))

    def inertial_params(self):
        return _params_from(self.params, "params")

    def sim_setup(self, with_changes=True):
        changes = ()
        if with_changes:
            changes = tuple(ParamChange(float(c["time"]), _params_from(c, "change"))
                            for c in self.changes)
        return SimSetup(layout=self.layout(), params=self.inertial_params(),
                        motion=self.motion, wrench=self.wrench, gains=self.gains,
                        gravity=tuple(self.gravity), dt=self.dt,
                        sample_period=self.sample_period, changes=changes)

    def with_default_change(self):
        return replace(self, changes=(dict(DEFAULT_CHANGE),))

    def to_dict(self):
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name in _NESTED:
                val = {g.name: _plain(getattr(val, g.name)) for g in fields(val)}
            out[f.name] = _plain(val)
        return out


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


_NESTED = {"wrench": WrenchProfile, "motion": MotionProfile, "gains": ControllerGains,
           "consensus": ConsensusSettings}


def _nested(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {k: tuple(map(tuple, v)) if isinstance(v, list) and v and isinstance(v[0], list)
          else tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return cls(**kw)


def config_from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("scenario must be a JSON object")
    allowed = {f.name for f in fields(ScenarioConfig)}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        if k in _NESTED:
            kw[k] = _nested(_NESTED[k], v, k)
        elif k == "contacts":
            try:
                kw[k] = tuple((c.get("rotvec", (0, 0, 0)), c["t"]) for c in v)
            except (KeyError, AttributeError, TypeError) as exc:
                raise ConfigError("contacts must be a list of {rotvec, t} objects") from exc
        elif k in ("edges", "changes", "gravity"):
            kw[k] = tuple(v)
        else:
            kw[k] = v
    try:
        cfg = ScenarioConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
