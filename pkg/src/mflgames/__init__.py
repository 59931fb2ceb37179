"""Particle simulation of mean-field Langevin dynamics for games on a random environment."""
from . import errors
from .core import (
    Environment,
    Initializer,
    PlayerSpec,
    RngStream,
    StateSnapshot,
    SystemState,
    init_state,
    make_environment,
    snapshot,
)
from .integrator import RunConfig, Trajectory, mfl_step, moment, run
from .metrics import (
    MetricReport,
    avg_wasserstein,
    first_order_residual,
    free_energy,
    kde_entropy,
    w_1d,
    w_exact,
    w_sliced,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "Environment",
    "Initializer",
    "PlayerSpec",
    "RngStream",
    "StateSnapshot",
    "SystemState",
    "init_state",
    "make_environment",
    "snapshot",
    "RunConfig",
    "Trajectory",
    "mfl_step",
    "moment",
    "run",
    "MetricReport",
    "avg_wasserstein",
    "first_order_residual",
    "free_energy",
    "kde_entropy",
    "w_1d",
    "w_exact",
    "w_sliced",
]
