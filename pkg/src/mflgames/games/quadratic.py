"""Quadratic games with mean coupling: the analytic anchors of the test suite.

Player ``i`` feels the drift ``a_i g(y) x + sum_l eps_il m_l(y)`` where
``m_l(y)`` is the mean of player ``l``'s cloud at ``y``.  With one player and
no coupling this is an Ornstein-Uhlenbeck game whose invariant conditional
law is ``N(0, sigma^2 / (2 a g(y)))``.
"""
from __future__ import annotations

import numpy as np

from ..core import PlayerSpec
from ..errors import EnergyUnavailable, EnvironmentMismatch


class QuadraticGame:
    """Quadratic game oracle.

    Parameters
    ----------
    stiffness : sequence of float
        ``a_i > 0`` per player.
    coupling : array (n, n), optional
        ``eps[i, l]`` scales player ``l``'s cloud mean in player ``i``'s drift.
    modulation : array (J,), optional
        ``g(y_j) > 0`` multiplying the stiffness at each environment point.
    dims : sequence of int, optional
        Strategy dimension per player (default 1).  Coupled players must
        share a dimension.
    zero_sum : bool
        Two players with antisymmetric coupling.
    """

    def __init__(self, stiffness, coupling=None, modulation=None, dims=None, zero_sum=False):
        a = np.atleast_1d(np.asarray(stiffness, dtype=float))
        if a.ndim != 1 or a.size == 0 or np.any(~(a > 0)):
            raise ValueError("stiffness must be a nonempty list of positive numbers")
        n = a.size
        eps = np.zeros((n, n)) if coupling is None else np.asarray(coupling, dtype=float)
        if eps.shape != (n, n):
            raise ValueError(f"coupling must be {n}x{n}, got shape {eps.shape}")
        dims = [1] * n if dims is None else [int(d) for d in dims]
        if len(dims) != n:
            raise ValueError(f"{len(dims)} dims for {n} players")
        for i in range(n):
            for l in range(n):
                if eps[i, l] != 0 and dims[i] != dims[l]:
                    raise ValueError(f"players {i} and {l} are coupled but have dims {dims[i]} != {dims[l]}")
        if zero_sum:
            if n != 2:
                raise ValueError("zero_sum games have exactly two players")
            if not np.allclose(eps, -eps.T, rtol=0, atol=0):
                raise ValueError("zero_sum coupling must be antisymmetric")
        self.stiffness = a
        self.coupling = eps
        self.modulation = None if modulation is None else np.asarray(modulation, dtype=float)
        if self.modulation is not None and np.any(~(self.modulation > 0)):
            raise ValueError("modulation must be positive")
        self.players = tuple(PlayerSpec(d) for d in dims)
        self.zero_sum = bool(zero_sum)

    @property
    def n_players(self):
        return len(self.players)

    @property
    def gamma(self) -> float:
        """Mean-field Lipschitz constant ``max_i sum_l |eps_il|``."""
        return float(np.max(np.sum(np.abs(self.coupling), axis=1)))

    def g(self, j, env=None):
        if self.modulation is None:
            return 1.0
        if env is not None and self.modulation.size != env.size:
            raise EnvironmentMismatch(f"modulation has {self.modulation.size} values, environment {env.size}")
        return float(self.modulation[j])

    def kappa_constant(self) -> float:
        """``K`` such that ``kappa(r) = -K`` is a valid contraction profile."""
        gmin = 1.0 if self.modulation is None else float(self.modulation.min())
        return float(self.stiffness.min() * gmin)

    def check_environment(self, env):
        if self.modulation is not None and self.modulation.size != env.size:
            raise EnvironmentMismatch(f"modulation has {self.modulation.size} values, environment {env.size}")

    def drift(self, i, snap, x, j):
        out = (self.stiffness[i] * self.g(j, snap.env)) * np.asarray(x, dtype=float)
        row = self.coupling[i]
        for l in np.flatnonzero(row):
            out = out + row[l] * snap.clouds[l][j].mean(axis=0)
        return out

    def invariant_variance(self, sigma, j=0):
        """Per-coordinate stationary variance of the uncoupled one-player game."""
        return sigma * sigma / (2.0 * self.stiffness[0] * self.g(j))

    def energy(self, snap):
        """``F = sum_j w_j [(a g_j / 2) E|X|^2 + (eps / 2) |m_j|^2]`` (one player only)."""
        if self.n_players != 1:
            raise EnergyUnavailable("multi-player quadratic games have no single potential")
        a, eps = self.stiffness[0], self.coupling[0, 0]
        c = snap.clouds[0]
        total = 0.0
        for j, w in enumerate(snap.env.weights):
            x = c[j]
            total += w * (0.5 * a * self.g(j, snap.env) * np.mean(np.sum(x * x, axis=1))
                          + 0.5 * eps * float(np.sum(x.mean(axis=0) ** 2)))
        return float(total)

    def energy_std_error(self, snap):
        if self.n_players != 1:
            raise EnergyUnavailable("multi-player quadratic games have no single potential")
        a = self.stiffness[0]
        c = snap.clouds[0]
        var = 0.0
        for j, w in enumerate(snap.env.weights):
            sq = np.sum(c[j] * c[j], axis=1)
            if sq.size > 1:
                var += (w * 0.5 * a * self.g(j, snap.env)) ** 2 * np.var(sq, ddof=1) / sq.size
        return float(np.sqrt(var))


def quadratic_drift(spec: QuadraticGame, i, snap, x, j):
    """Functional form of :meth:`QuadraticGame.drift`."""
    return spec.drift(i, snap, x, j)


def ou_game(a=1.0, dim=1):
    """One-player uncoupled quadratic game (Ornstein-Uhlenbeck)."""
    return QuadraticGame([a], dims=[dim])
