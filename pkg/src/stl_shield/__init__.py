"""STL robustness monitoring, Lipschitz certificates, and expert-tube safety filtering."""

from .barrier import ControlAffineSystem, TimeVaryingBarrier, finite_difference_rate, synthesize
from .dynamics import (
    SimConfig,
    UnicycleState,
    lyapunov_nominal,
    single_integrator,
    step,
    unicycle_system,
    wrap_angle,
)
from .harness import TrialConfig, TrialLog, run_batch, run_trial
from .signals import (
    HorizonClampWarning,
    Signal,
    SignalDomainError,
    WeightMatrix,
    read_signal_csv,
    semi_norm,
    signal_difference,
    weighted_norm,
    write_signal_csv,
)
from .stl import (
    Atom,
    Ball,
    BoxInf,
    CustomPredicate,
    Formula,
    Halfspace,
    LipschitzCertificate,
    Not,
    And,
    Or,
    ParseError,
    Predicate,
    TRUE,
    Until,
    always,
    certify,
    eval_boolean,
    eval_robustness,
    eventually,
    load_predicates,
    parse,
    predicate_margin,
)
from .world import (
    BasingSchedule,
    Environment,
    InfeasiblePathError,
    MovingObstacle,
    advance_obstacles,
    bfs_goal_choice,
    env_from_json,
    env_to_json,
    expert_plan,
    generate_environment,
    obstacle_margin,
    path_distance,
    spec_robustness,
)

__version__ = "0.1.0"
