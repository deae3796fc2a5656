"""Simulation and control stack for ROV net-cage inspection.

4-DoF vehicle dynamics, a nominal feedback (feedback-linearizing) controller
with a PID baseline, an inward-offset inspection planner with a mission state
machine, and tag-chain localization fused with inertial data in an EKF.
"""

from .controllers import (
    PAPER_NFC_GAINS,
    PAPER_PID_GAINS,
    NfcController,
    NfcGains,
    PidAxisGains,
    PidController,
    PidGains,
    ReferencePoint,
    nfc_wrench,
    pid_wrench,
    tracking_error,
    verify_stability,
)
from .dynamics import BodyVelocity, ControlWrench, ModelParams, VehicleState, step
from .harness import EpisodeResult, compare_controllers, mae, run_episode
from .planner import BoundaryPolygon, InspectionPlan, MissionState, advance, build_plan, offset_inward
from .scenario import Scenario, load_scenario, standard_scenario
from .se3 import PlanarPose, RigidTransform, chain_rig_pose, compose, invert, to_planar

__version__ = "0.1.0"
