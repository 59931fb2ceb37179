"""Continuous-time dynamic games read as games on the time-horizon environment.

The horizon ``[0, T]`` is split into ``J`` equal cells; cell ``j`` is the
environment point ``y_j`` (its midpoint) with weight ``1/J`` and its cloud is
the relaxed control used throughout the cell.  Each player's state
``Theta`` solves

    dTheta/dy = E_{x ~ pi(.|cell)} phi(x, Theta, y, snap),

its objective is ``int_0^T E c(x, Theta_y, y, snap) dy + g(Theta_T)`` and the
adjoint ``P`` solves ``dP/dy = -E grad_theta H`` backward from
``grad g(Theta_T)``, with ``H = c + p . phi``.  The linear functional
derivative is ``H(x, Theta_y, y, P_y)`` and the MFL drift at cell ``j`` is the
cell average of ``grad_x H``.  (The derivative with respect to the joint law
under the uniform probability on ``[0, T]`` is ``T`` times this.)

Both ODEs run on ``substeps`` equal steps per cell with classical RK4, or
with forward Euler and its exact discrete adjoint (the discrete-time game).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..core import PlayerSpec, make_environment
from ..errors import EnvironmentMismatch, OdeBlowup

_BLOWUP = 1e12


@dataclass
class DynamicPlayer:
    """Coefficients of one player.

    Callables take a batch ``x`` of shape ``(m, dx)``, ``theta`` of shape
    ``(dt,)``, the scalar time ``y`` and the snapshot, and return

    * ``phi``: ``(m, dt)``;   ``phi_x``: ``(m, dt, dx)``;   ``phi_theta``: ``(m, dt, dt)``
    * ``cost``: ``(m,)``;     ``cost_x``: ``(m, dx)``;       ``cost_theta``: ``(m, dt)``

    ``terminal(theta)`` is a float and ``terminal_grad(theta)`` a ``(dt,)`` array.
    """

    dim: int
    theta0: np.ndarray
    phi: Callable
    phi_x: Callable
    phi_theta: Callable
    cost: Callable
    cost_x: Callable
    cost_theta: Callable
    terminal: Callable
    terminal_grad: Callable

    def __post_init__(self):
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))


def lq_player(A, B, R=None, Q=None, W=None, theta0=0.0, target=None):
    """Linear-quadratic player.

    ``phi = A theta + B x``, ``c = x'Rx/2 + theta'Q theta/2``,
    ``g = (theta - target)'W(theta - target)/2``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    dth, dx = B.shape
    if A.shape != (dth, dth):
        raise ValueError(f"A must be {dth}x{dth}")
    R = np.eye(dx) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    Q = np.zeros((dth, dth)) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    W = np.eye(dth) if W is None else np.atleast_2d(np.asarray(W, dtype=float))
    target = np.zeros(dth) if target is None else np.broadcast_to(np.asarray(target, dtype=float), (dth,)).copy()
    theta0 = np.broadcast_to(np.asarray(theta0, dtype=float), (dth,)).copy()
    Rs, Qs, Ws = 0.5 * (R + R.T), 0.5 * (Q + Q.T), 0.5 * (W + W.T)

    def phi(x, th, y, snap):
        return x @ B.T + A @ th

    def phi_x(x, th, y, snap):
        return np.broadcast_to(B, (x.shape[0], dth, dx))

    def phi_theta(x, th, y, snap):
        return np.broadcast_to(A, (x.shape[0], dth, dth))

    def cost(x, th, y, snap):
        return 0.5 * np.einsum("mi,ij,mj->m", x, R, x) + 0.5 * th @ Q @ th

    def cost_x(x, th, y, snap):
        return x @ Rs

    def cost_theta(x, th, y, snap):
        return np.broadcast_to(Qs @ th, (x.shape[0], dth))

    def terminal(th):
        e = th - target
        return 0.5 * float(e @ W @ e)

    def terminal_grad(th):
        return Ws @ (th - target)

    return DynamicPlayer(dx, theta0, phi, phi_x, phi_theta, cost, cost_x, cost_theta, terminal, terminal_grad)


def dynamic_environment(horizon, n_cells):
    """Uniform environment on ``[0, horizon]``: cell midpoints, weights ``1/n_cells``."""
    if not horizon > 0 or int(n_cells) != n_cells or n_cells < 1:
        raise ValueError("need horizon > 0 and a positive integer cell count")
    h = horizon / n_cells
    mids = (np.arange(n_cells) + 0.5) * h
    return make_environment(mids.tolist(), [1.0 / n_cells] * n_cells)


def _cell_weights(m):
    """Quadrature weights on m+1 equally spaced nodes of a unit-length interval."""
    if m == 1:
        return np.array([0.5, 0.5])
    w = np.zeros(m + 1)
    start = 0
    if m % 2 == 1:  # Simpson 3/8 on the first three intervals
        w[0:4] += np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 / 8.0
        start = 3
    for s in range(start, m, 2):
        w[s:s + 3] += np.array([1.0, 4.0, 1.0]) / 3.0
    return w / m


@dataclass
class ThetaPath:
    """State path on the ODE nodes; ``values[j, s]`` at ``y = j H + s H / M``."""

    y: np.ndarray        # (J, M+1)
    values: np.ndarray   # (J, M+1, dt)
    slopes: np.ndarray   # (J, M+1, dt), dTheta/dy with cell j's control

    @property
    def terminal(self):
        return self.values[-1, -1]

    def at(self, y):
        """Piecewise-linear interpolation of the node values (for plotting)."""
        yy = self.y.ravel()
        vv = self.values.reshape(-1, self.values.shape[-1])
        return np.stack([np.interp(y, yy, vv[:, k]) for k in range(vv.shape[1])], axis=-1)


@dataclass
class AdjointPath:
    y: np.ndarray        # (J, M+1)
    values: np.ndarray   # (J, M+1, dt)

    def at(self, y):
        yy = self.y.ravel()
        vv = self.values.reshape(-1, self.values.shape[-1])
        return np.stack([np.interp(y, yy, vv[:, k]) for k in range(vv.shape[1])], axis=-1)


class DynamicGame:
    """Game oracle for dynamic games on the horizon environment.

    ``(Theta, P)`` are solved once per snapshot and player and cached on the
    snapshot key, so a full MFL step costs one forward-backward solve per
    player.
    """

    def __init__(self, players, horizon, env, substeps=4, scheme="rk4"):
        self.dyn = list(players)
        if not self.dyn:
            raise ValueError("need at least one player")
        self.players = tuple(PlayerSpec(p.dim) for p in self.dyn)
        self.horizon = float(horizon)
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if scheme not in ("rk4", "euler"):
            raise ValueError(f"scheme must be 'rk4' or 'euler', got {scheme!r}")
        self.scheme = scheme
        if int(substeps) != substeps or substeps < 1:
            raise ValueError("substeps must be a positive integer")
        self.substeps = int(substeps)
        self.check_environment(env)
        self.env = env
        self.n_cells = env.size
        self.cell = self.horizon / self.n_cells
        self._qw = _cell_weights(self.substeps) if scheme == "rk4" else None
        self._cache_key = None
        self._cache = {}

    def check_environment(self, env):
        J = env.size
        if env.values is None or env.values.shape[1] != 1:
            raise EnvironmentMismatch("dynamic games need a scalar numeric time grid")
        mids = (np.arange(J) + 0.5) * self.horizon / J
        if not np.allclose(env.values[:, 0], mids, rtol=0, atol=1e-9 * self.horizon):
            raise EnvironmentMismatch(
                f"environment points are not the {J} cell midpoints of [0, {self.horizon}]")
        if not np.allclose(env.weights, 1.0 / J, rtol=0, atol=1e-12):
            raise EnvironmentMismatch("dynamic-game environment weights must be uniform")

    @property
    def nodes(self):
        M = self.substeps
        return (np.arange(self.n_cells)[:, None] + np.arange(M + 1)[None, :] / M) * self.cell

    # -- ODE solves ------------------------------------------------------------

    def _rate(self, p, x, th, y, snap):
        return np.mean(p.phi(x, th, y, snap), axis=0)

    def forward(self, i, snap) -> ThetaPath:
        p = self.dyn[i]
        M = self.substeps
        k = self.cell / M
        ys = self.nodes
        dth = p.theta0.size
        vals = np.empty((self.n_cells, M + 1, dth))
        slopes = np.empty_like(vals)
        th = p.theta0.copy()
        for j in range(self.n_cells):
            x = snap.clouds[i][j]
            vals[j, 0] = th
            for s in range(M):
                y = ys[j, s]
                k1 = self._rate(p, x, th, y, snap)
                slopes[j, s] = k1
                if self.scheme == "euler":
                    th = th + k * k1
                else:
                    k2 = self._rate(p, x, th + 0.5 * k * k1, y + 0.5 * k, snap)
                    k3 = self._rate(p, x, th + 0.5 * k * k2, y + 0.5 * k, snap)
                    k4 = self._rate(p, x, th + k * k3, y + k, snap)
                    th = th + (k / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                if not np.all(np.isfinite(th)) or np.any(np.abs(th) > _BLOWUP):
                    raise OdeBlowup(f"player {i}: state ODE blew up near y={y + k:.6g}")
                vals[j, s + 1] = th
            slopes[j, M] = self._rate(p, x, th, ys[j, M], snap)
        return ThetaPath(ys, vals, slopes)

    def _adjoint_coeffs(self, p, x, th, y, snap):
        """``E grad_theta c`` and ``E grad_theta phi`` so that ``E grad_theta H = a + J^T P``."""
        a = np.mean(p.cost_theta(x, th, y, snap), axis=0)
        jac = np.mean(p.phi_theta(x, th, y, snap), axis=0)
        return a, jac

    def adjoint(self, i, theta: ThetaPath, snap) -> AdjointPath:
        p = self.dyn[i]
        M = self.substeps
        k = self.cell / M
        ys = theta.y
        dth = theta.values.shape[-1]
        P = np.empty((self.n_cells, M + 1, dth))
        pv = np.asarray(p.terminal_grad(theta.terminal), dtype=float)
        for j in range(self.n_cells - 1, -1, -1):
            x = snap.clouds[i][j]
            P[j, M] = pv
            for s in range(M, 0, -1):
                y = ys[j, s]
                if self.scheme == "euler":
                    # exact adjoint of the forward Euler recursion
                    a0, J0 = self._adjoint_coeffs(p, x, theta.values[j, s - 1], ys[j, s - 1], snap)
                    pv = pv + k * (a0 + J0.T @ pv)
                else:
                    th_mid = _hermite_mid(theta.values[j, s - 1], theta.slopes[j, s - 1],
                                          theta.values[j, s], theta.slopes[j, s], k)
                    a1, J1 = self._adjoint_coeffs(p, x, theta.values[j, s], y, snap)
                    am, Jm = self._adjoint_coeffs(p, x, th_mid, y - 0.5 * k, snap)
                    a4, J4 = self._adjoint_coeffs(p, x, theta.values[j, s - 1], y - k, snap)
                    g1 = a1 + J1.T @ pv
                    g2 = am + Jm.T @ (pv + 0.5 * k * g1)
                    g3 = am + Jm.T @ (pv + 0.5 * k * g2)
                    g4 = a4 + J4.T @ (pv + k * g3)
                    pv = pv + (k / 6.0) * (g1 + 2 * g2 + 2 * g3 + g4)
                if not np.all(np.isfinite(pv)) or np.any(np.abs(pv) > _BLOWUP):
                    raise OdeBlowup(f"player {i}: adjoint ODE blew up near y={y - k:.6g}")
                P[j, s - 1] = pv
        return AdjointPath(ys, P)

    def paths(self, i, snap):
        if self._cache_key != snap.key:
            self._cache_key = snap.key
            self._cache = {}
        if i not in self._cache:
            th = self.forward(i, snap)
            self._cache[i] = (th, self.adjoint(i, th, snap))
        return self._cache[i]

    # -- oracle interface ------------------------------------------------------

    def _grad_x_hamiltonian(self, p, x, th, y, pv, snap):
        return p.cost_x(x, th, y, snap) + np.einsum("mtx,t->mx", p.phi_x(x, th, y, snap), pv)

    def drift(self, i, snap, x, j):
        p = self.dyn[i]
        th, P = self.paths(i, snap)
        x = np.asarray(x, dtype=float)
        M = self.substeps
        out = np.zeros((x.shape[0], p.dim))
        if self.scheme == "euler":
            for s in range(M):
                out += self._grad_x_hamiltonian(p, x, th.values[j, s], th.y[j, s], P.values[j, s + 1], snap) / M
        else:
            for s in range(M + 1):
                out += self._qw[s] * self._grad_x_hamiltonian(p, x, th.values[j, s], th.y[j, s], P.values[j, s], snap)
        return out

    def objective(self, i, snap) -> float:
        """Discretized ``F^i``: running cost by the cell quadrature plus terminal cost."""
        p = self.dyn[i]
        th, _ = self.paths(i, snap)
        M = self.substeps
        total = 0.0
        for j in range(self.n_cells):
            x = snap.clouds[i][j]
            if self.scheme == "euler":
                for s in range(M):
                    total += self.cell / M * float(np.mean(p.cost(x, th.values[j, s], th.y[j, s], snap)))
            else:
                for s in range(M + 1):
                    total += self.cell * self._qw[s] * float(np.mean(p.cost(x, th.values[j, s], th.y[j, s], snap)))
        return total + float(p.terminal(th.terminal))

    def energy(self, snap):
        if len(self.dyn) != 1:
            return None
        return self.objective(0, snap)

    def write_paths_csv(self, path, i, snap):
        """Dump ``y,theta...,p...`` on the ODE nodes of player ``i``."""
        th, P = self.paths(i, snap)
        dth = th.values.shape[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y"] + [f"theta{k}" for k in range(dth)] + [f"p{k}" for k in range(dth)])
            for j in range(self.n_cells):
                for s in range(self.substeps + 1):
                    if j > 0 and s == 0:
                        continue  # shared cell boundary
                    w.writerow([repr(float(th.y[j, s]))] + [repr(float(v)) for v in th.values[j, s]]
                               + [repr(float(v)) for v in P.values[j, s]])


def _hermite_mid(y0, d0, y1, d1, h):
    """Cubic Hermite value at the midpoint of a step of length ``h``."""
    return 0.5 * (y0 + y1) + 0.125 * h * (d0 - d1)


def dynamic_forward(game: DynamicGame, snap, i=0) -> ThetaPath:
    return game.forward(i, snap)


def dynamic_adjoint(game: DynamicGame, theta_path: ThetaPath, snap, i=0) -> AdjointPath:
    return game.adjoint(i, theta_path, snap)


def dynamic_drift(game: DynamicGame, i, snap, x, j):
    return game.drift(i, snap, x, j)


def check_derivatives(player: DynamicPlayer, x, theta, y, snap=None, h=1e-6):
    """Largest relative mismatch between supplied and central-difference derivatives."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    worst = 0.0

    def rel(a, b):
        return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b))))

    for fn, fx, fth in ((player.phi, player.phi_x, player.phi_theta),
                        (player.cost, player.cost_x, player.cost_theta)):
        base_x = np.asarray(fx(x, theta, y, snap))
        base_t = np.asarray(fth(x, theta, y, snap))
        num_x = np.zeros_like(base_x, dtype=float)
        for c in range(x.shape[1]):
            e = np.zeros_like(x)
            e[:, c] = h
            num_x[..., c] = (np.asarray(fn(x + e, theta, y, snap)) - np.asarray(fn(x - e, theta, y, snap))) / (2 * h)
        num_t = np.zeros_like(base_t, dtype=float)
        for c in range(theta.size):
            e = np.zeros_like(theta)
            e[c] = h
            num_t[..., c] = (np.asarray(fn(x, theta + e, y, snap)) - np.asarray(fn(x, theta - e, y, snap))) / (2 * h)
        worst = max(worst, rel(base_x, num_x), rel(base_t, num_t))
    g = np.asarray(player.terminal_grad(theta))
    num_g = np.array([(player.terminal(theta + h * e) - player.terminal(theta - h * e)) / (2 * h)
                      for e in np.eye(theta.size)])
    return max(worst, rel(g, num_g))
