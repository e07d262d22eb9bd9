"""swarmlearn: decentralized swarm controllers learnt from trajectories.

A knowledge-based neural ODE couples a small tanh control network over each
robot's local information structure with a potential-field repulsion term,
and is trained with a one-step-ahead prediction loss on observed swarm
trajectories. Ground-truth simulators (2D stable flocking, 3D boids),
flocking metrics, and experiment harnesses round out the package.
"""

from .config import ExperimentConfig, default_2d_config, default_3d_config
from .errors import (
    ConfigError,
    FormatError,
    IntegrationFailureError,
    SimulationDivergenceError,
    SingularConfigurationError,
    SwarmLearnError,
    TrainingDivergenceError,
)
from .info_network import (
    InfoStructure,
    ShiftOperator,
    active_neighbors,
    batch_info,
    info_structure,
    shift_operator,
)
from .knode_controller import (
    ControllerMeta,
    ControllerParams,
    controller_gradients,
    hybrid_derivative_2d,
    hybrid_derivative_3d,
    init_controller,
    mlp_forward,
    predict_rollout,
)
from .knowledge import (
    ObstacleSet,
    PotentialSpec,
    neighbor_obstacle,
    potential,
    repulsive_force,
    total_repulsion,
    wall_obstacles,
)
from .metrics_eval import (
    GridSpec,
    MetricsReport,
    amd,
    avd,
    grid_search,
    pod_energies,
    pod_kld,
    scaling_eval,
)
from .sim_core import (
    RngSpec,
    SwarmState,
    Trajectory,
    add_stabilization_noise,
    rk4_step,
    rollout,
)
from .sim_groundtruth import (
    BoidsParams,
    Dataset,
    Tanner2DParams,
    boids_rollout,
    boids_step,
    generate_dataset,
    init_2d_swarm,
    init_3d_swarm,
    tanner_control,
    tanner_derivative,
)
from .trainer import (
    TrainConfig,
    TrainHistory,
    fd_check,
    grad,
    loss,
    one_step_pairs,
    train,
)

__version__ = "0.1.0"
