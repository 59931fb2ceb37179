"""Concrete game oracles."""
from .dynamic import (
    AdjointPath,
    DynamicGame,
    DynamicPlayer,
    ThetaPath,
    check_derivatives,
    dynamic_adjoint,
    dynamic_drift,
    dynamic_environment,
    dynamic_forward,
    lq_player,
)
from .quadratic import QuadraticGame, ou_game, quadratic_drift

__all__ = [
    "AdjointPath",
    "DynamicGame",
    "DynamicPlayer",
    "ThetaPath",
    "check_derivatives",
    "dynamic_adjoint",
    "dynamic_drift",
    "dynamic_environment",
    "dynamic_forward",
    "lq_player",
    "QuadraticGame",
    "ou_game",
    "quadratic_drift",
]
