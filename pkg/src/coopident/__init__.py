"""Cooperative identification of a rigid load carried by a team of robots."""

from .errors import (ConfigError, ConsensusError, ConstraintViolation, CoopIdentError,
                     DegenerateForce, IntegrationError, NumericalError, PhaseOrderError)
from .dq_algebra import Pose, dq_to_pose, pose_to_dq
from .rigidbody_sim import InertialParams, NoiseModel, RigidBodyState, simulate, step_dynamics
from .estimation_filters import DqFilterState, RlsState, dq_filter_step, rls_update
from .consensus import RobotNetwork, run_consensus
from .scenario import ScenarioConfig, config_from_dict, load_config

__version__ = "0.1.0"
