"""Predictive flocking control for multi-robot groups.

Robots pick control inputs by discretizing their input space, predicting the
resulting states over a short horizon, and running a distributed belief
iteration over a Gibbs random field whose potentials encode flocking,
obstacle avoidance, and goal tracking. A gradient-based heuristic solution
biases the discretization so each robot only weighs inputs near its own
closed-form answer.
"""

from .core import (
    EPS_V,
    ControllerParams,
    DynamicsParams,
    HeuristicParams,
    ParamBundle,
    PotentialParams,
    RobotState,
    saturate,
    step_dynamics,
    vec3,
)
from .environment import (
    BetaAgent,
    Box,
    DynamicObstacle,
    GeometryError,
    PenetrationError,
    Plane,
    RiskAssessment,
    Sphere,
    assess_risk,
    neighbor_graph,
    perceived_sets,
    project_beta,
    surface_distance,
    surface_query,
)
from .potentials import (
    EnergyBreakdown,
    ReferenceState,
    angle_between,
    clique_potentials,
    configuration_energy,
    psi_ar,
    psi_ar_dist,
    psi_goal,
    psi_od,
    psi_or,
    psi_or_dist,
    psi_or_grad,
    rho,
)
from .heuristic import (
    AvoidanceFrame,
    HeuristicSolution,
    avoidance_direction,
    build_avoidance_frame,
    grad_goal,
    grad_inter_robot,
    heuristic_free,
    heuristic_full,
)
from .controller import (
    BeliefTable,
    CandidateSet,
    ControlDecision,
    LocalProblem,
    WorldView,
    build_candidate_set,
    compute_control,
    exact_posterior,
    free_energy,
    full_coupling_edges,
    mean_field_converge,
    mean_field_sweep,
    predict,
)
from .sim import (
    CSV_FORMAT,
    CSV_HEADER,
    METHODS,
    GroupSpec,
    MetricsReport,
    RecordError,
    ReferenceTrajectory,
    SafetyLog,
    Scenario,
    ScenarioError,
    TrajectoryRecord,
    build_doorway_scenario,
    build_freeflock_scenario,
    builtin_scenario,
    compute_metrics,
    metric_L,
    metric_distances,
    metric_r_dev,
    metric_t_cal,
    metric_u_avg,
    run_episode,
    scan_violations,
    scenario_from_dict,
    scenario_to_dict,
    step_world,
    table_params,
    validate_scenario,
)

__version__ = "0.1.0"
