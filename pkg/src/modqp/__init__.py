"""Velocity-level motion planning for modular robots by per-step quadratic programs."""

from .environment import (BoundaryPolyhedron, Environment, ObstaclePlane, ObstacleSphere, OrientedBox,
                          boundary_rows, generate_spheres, load_environment, obstacle_plane,
                          refine_spheres)
from .errors import (ConfigurationError, DescriptorLookupError, InfeasibleJointError,
                     InfeasibleStateError, MalformedInputError, ModqpError, PenetrationError,
                     ScenarioError)
from .kinematics import (ChainState, ConfigurationGraph, KinematicsGraph, RobotModel,
                         build_kinematics_graph, chain_jacobian, forward_kinematics, get_chain,
                         load_config, module_jacobian, position)
from .lie import Transform, adjoint, exp_twist, hat, point_velocity_map, vee
from .modules import ModuleDescriptor, bundled_library, load_descriptor, mate_transform, module_forward
from .planner import Planner, StreamSink, TrajectoryLog, integrate, read_trajectory, run
from .qp import StepProgram, StepSolution, TuningConfig, assemble, control_rows, limit_bounds, solve
from .scenario import Goal, Scenario, bundled_scenario, dump_scenario, load_scenario

__version__ = "0.1.0"
