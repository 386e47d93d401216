"""Edge service placement and task routing on two clocks: a convex solver
routes tasks every slot, per-server DDQN agents pick deployments every frame."""

from .agent import DeploymentAgent, QNetwork, TrainingConfig, epsilon_at
from .errors import TTOSCError
from .model import DeploymentPlan, SystemConfig, derive_allocation, validate_deployment
from .scheduler import SolverSettings, solve_slot

__version__ = "0.1.0"

__all__ = [
    "DeploymentAgent", "DeploymentPlan", "QNetwork", "SolverSettings", "SystemConfig",
    "TTOSCError", "TrainingConfig", "derive_allocation", "epsilon_at", "solve_slot",
    "validate_deployment",
]
