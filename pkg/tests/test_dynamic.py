import math

import numpy as np
import pytest

from mflgames import Initializer, PlayerSpec, RunConfig, SystemState, init_state, run, snapshot
from mflgames.errors import EnvironmentMismatch, OdeBlowup
from mflgames.games import (
    DynamicGame,
    DynamicPlayer,
    check_derivatives,
    dynamic_adjoint,
    dynamic_drift,
    dynamic_environment,
    dynamic_forward,
    lq_player,
)
from mflgames.games.dynamic import _cell_weights
from mflgames.metrics import first_order_residual


def _point_snap(env, value, n=3, dim=1):
    clouds = [np.full((env.size, n, dim), float(value))]
    return snapshot(SystemState(env, [PlayerSpec(dim)], clouds))


def _nonlinear_player():
    # phi = sin(x) - theta/2, c = x^4/4 + theta x, g = (theta - 1)^2
    def phi(x, th, y, snap):
        return np.sin(x) - 0.5 * th

    def phi_x(x, th, y, snap):
        return np.cos(x)[:, :, None]

    def phi_theta(x, th, y, snap):
        return np.full((x.shape[0], 1, 1), -0.5)

    def cost(x, th, y, snap):
        return 0.25 * x[:, 0] ** 4 + th[0] * x[:, 0] * (1 + y)

    def cost_x(x, th, y, snap):
        return x**3 + th[0] * (1 + y)

    def cost_theta(x, th, y, snap):
        return x * (1 + y)

    def terminal(th):
        return float((th[0] - 1.0) ** 2)

    def terminal_grad(th):
        return 2.0 * (th - 1.0)

    return DynamicPlayer(1, np.array([0.3]), phi, phi_x, phi_theta, cost, cost_x, cost_theta, terminal,
                         terminal_grad)


class TestForward:
    def test_linear_integrator(self):
        env = dynamic_environment(2.0, 8)
        game = DynamicGame([lq_player(0.0, 1.0, theta0=0.5)], 2.0, env)
        th = dynamic_forward(game, _point_snap(env, 1.0))
        assert np.allclose(th.values[..., 0], 0.5 + th.y, rtol=0, atol=1e-13)

    def test_exponential(self):
        env = dynamic_environment(1.0, 25)
        game = DynamicGame([lq_player(-1.0, 0.0, theta0=1.0)], 1.0, env, substeps=4)
        th = dynamic_forward(game, _point_snap(env, 0.0))
        assert np.max(np.abs(th.values[..., 0] - np.exp(-th.y))) < 1e-6

    def test_zero_average_constant(self):
        env = dynamic_environment(1.0, 5)
        game = DynamicGame([lq_player(0.0, 1.0, theta0=2.0)], 1.0, env)
        clouds = [np.tile(np.array([-1.0, 1.0])[None, :, None], (5, 1, 1))]
        th = dynamic_forward(game, snapshot(SystemState(env, [PlayerSpec(1)], clouds)))
        assert np.all(th.values == 2.0)

    def test_interpolation(self):
        env = dynamic_environment(1.0, 4)
        game = DynamicGame([lq_player(0.0, 1.0)], 1.0, env)
        th = dynamic_forward(game, _point_snap(env, 1.0))
        assert np.allclose(th.at(np.array([0.1, 0.55, 1.0])), [[0.1], [0.55], [1.0]], atol=1e-13)

    def test_blowup(self):
        env = dynamic_environment(1.0, 8)
        game = DynamicGame([lq_player(1e3, 0.0, theta0=1.0)], 1.0, env, substeps=1, scheme="euler")
        with pytest.raises(OdeBlowup):
            dynamic_forward(game, _point_snap(env, 0.0))


class TestAdjoint:
    def test_constant_adjoint(self):
        env = dynamic_environment(1.0, 6)
        game = DynamicGame([lq_player(0.0, 0.0, R=0.0, theta0=1.5)], 1.0, env)
        snap = _point_snap(env, 0.7)
        th = dynamic_forward(game, snap)
        P = dynamic_adjoint(game, th, snap)
        assert np.all(P.values == 1.5)
        assert np.all(P.values == th.terminal)

    def test_lq_adjoint_and_drift(self):
        env = dynamic_environment(1.0, 5)
        game = DynamicGame([lq_player(0.0, 1.0, theta0=1.0)], 1.0, env)
        rng = np.random.default_rng(0)
        clouds = [rng.standard_normal((5, 40, 1))]
        snap = snapshot(SystemState(env, [PlayerSpec(1)], clouds))
        th = dynamic_forward(game, snap)
        P = dynamic_adjoint(game, th, snap)
        theta_T = 1.0 + 0.2 * clouds[0].mean(axis=1).sum()
        assert th.terminal[0] == pytest.approx(theta_T, rel=1e-13)
        assert np.allclose(P.values, theta_T, rtol=1e-13)
        x = np.linspace(-2, 2, 7)[:, None]
        for j in range(5):
            assert np.allclose(dynamic_drift(game, 0, snap, x, j), x + theta_T, rtol=1e-13)

    def test_zero_game(self):
        env = dynamic_environment(1.0, 3)
        game = DynamicGame([lq_player(0.0, 0.0, R=0.0, W=0.0)], 1.0, env)
        snap = _point_snap(env, 2.0)
        assert np.all(game.drift(0, snap, np.ones((4, 1)), 1) == 0.0)


def _lq_closed_form(alpha, u, theta0, T):
    b = u / alpha
    theta = lambda y: b + (theta0 - b) * np.exp(-alpha * y)
    PT = theta(T)
    p = lambda y: PT * np.exp(-alpha * (T - y))
    return theta, p


@pytest.mark.parametrize("scheme, order", [("rk4", 4), ("euler", 1)])
def test_refinement_order(scheme, order):
    alpha, u, theta0, T = 0.8, 0.5, 1.0, 1.0
    theta, p = _lq_closed_form(alpha, u, theta0, T)
    env = dynamic_environment(T, 10)
    errs = []
    for M in (1, 2, 4, 8):
        game = DynamicGame([lq_player(-alpha, 1.0, theta0=theta0)], T, env, substeps=M, scheme=scheme)
        snap = _point_snap(env, u)
        th = dynamic_forward(game, snap)
        P = dynamic_adjoint(game, th, snap)
        errs.append(max(np.max(np.abs(th.values[..., 0] - theta(th.y))),
                        np.max(np.abs(P.values[..., 0] - p(P.y)))))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(np.log2(ratios) - order) < 0.2)


def _fd_check(game, clouds, env, h_scale=1e-5):
    snap = snapshot(SystemState(env, game.players, clouds))
    base = game.objective(0, snap)
    n = clouds[0].shape[1]
    worst = 0.0
    for j in (0, env.size // 2, env.size - 1):
        for k in (0, n // 3):
            x = clouds[0][j, k].copy()
            drift = game.drift(0, snap, x[None, :], j)[0]
            for c in range(x.size):
                h = h_scale * (1 + abs(x[c]))
                up = [a.copy() for a in clouds]
                dn = [a.copy() for a in clouds]
                up[0][j, k, c] += h
                dn[0][j, k, c] -= h
                fu = game.objective(0, snapshot(SystemState(env, game.players, up)))
                fd = game.objective(0, snapshot(SystemState(env, game.players, dn)))
                fd_grad = (fu - fd) / (2 * h) * n / (env.weights[j] * game.horizon)
                worst = max(worst, abs(fd_grad - drift[c]) / max(1e-12, abs(drift[c])))
    assert math.isfinite(base)
    return worst


@pytest.mark.parametrize("scheme", ["rk4", "euler"])
def test_finite_difference_lq(scheme):
    env = dynamic_environment(1.0, 10)
    player = lq_player([[0.1, -0.5], [0.3, -0.2]], [[1.0, 0.5], [0.0, 1.0]], R=[[1.0, 0.2], [0.2, 2.0]],
                       Q=[[0.5, 0.0], [0.0, 0.1]], W=[[1.0, 0.3], [0.3, 1.0]], theta0=[1.0, -0.5], target=[0.2, 0.1])
    game = DynamicGame([player], 1.0, env, substeps=4, scheme=scheme)
    clouds = [np.random.default_rng(1).standard_normal((10, 30, 2))]
    assert _fd_check(game, clouds, env) <= 1e-3


def test_finite_difference_nonlinear():
    env = dynamic_environment(2.0, 6)
    player = _nonlinear_player()
    assert check_derivatives(player, np.array([[0.3], [-1.2]]), np.array([0.7]), 0.4) < 1e-8
    game = DynamicGame([player], 2.0, env, substeps=4)
    clouds = [np.random.default_rng(2).standard_normal((6, 25, 1))]
    assert _fd_check(game, clouds, env) <= 1e-3


def test_cache_per_snapshot():
    env = dynamic_environment(1.0, 4)
    calls = []
    game = DynamicGame([lq_player(0.0, 1.0)], 1.0, env)
    original = game.forward

    def counting(i, snap):
        calls.append(snap.key)
        return original(i, snap)

    game.forward = counting
    snap = _point_snap(env, 1.0, n=5)
    for j in range(4):
        game.drift(0, snap, np.zeros((5, 1)), j)
    game.drift(0, _point_snap(env, 1.0, n=5), np.zeros((5, 1)), 0)
    assert len(calls) == 2


def test_cell_weights():
    for m in range(1, 9):
        w = _cell_weights(m)
        nodes = np.linspace(0, 1, m + 1)
        assert w.sum() == pytest.approx(1.0, rel=1e-14)
        if m >= 2:
            # Simpson-type rules integrate cubics exactly
            assert np.dot(w, nodes**3) == pytest.approx(0.25, rel=1e-13)


def test_environment_checks():
    env = dynamic_environment(1.0, 4)
    with pytest.raises(EnvironmentMismatch):
        DynamicGame([lq_player(0.0, 1.0)], 2.0, env)
    from mflgames import make_environment
    with pytest.raises(EnvironmentMismatch):
        DynamicGame([lq_player(0.0, 1.0)], 1.0, make_environment(["a", "b"], [0.5, 0.5]))


def test_paths_csv(tmp_path):
    env = dynamic_environment(1.0, 3)
    game = DynamicGame([lq_player(0.0, 1.0, theta0=1.0)], 1.0, env, substeps=2)
    game.write_paths_csv(tmp_path / "p.csv", 0, _point_snap(env, 1.0))
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "y,theta0,p0"
    assert len(lines) == 1 + 3 * 2 + 1
    y, th, p = map(float, lines[-1].split(","))
    assert (y, th, p) == pytest.approx((1.0, 2.0, 2.0), rel=1e-14)


def test_lq_mfl_equilibrium():
    # equilibrium: x + Theta_T = -(sigma^2/2) score with Theta_T = theta0 + T mean(x)
    # gives N(-theta0 / (1 + T), sigma^2 / 2) on every cell
    env = dynamic_environment(1.0, 4)
    game = DynamicGame([lq_player(0.0, 1.0, theta0=1.0)], 1.0, env)
    state = init_state(env, [1], 2000, Initializer.gaussian(), seed=0)
    traj = run(state, game, RunConfig(sigma=0.4, dt=0.01, n_steps=800, record_every=800, seed=1))
    final = traj.final_state
    means = final.clouds[0].mean(axis=1)[:, 0]
    assert np.allclose(means, -0.5, atol=0.03)
    var = final.clouds[0].var(axis=1, ddof=1)[:, 0]
    assert np.allclose(var, 0.08, rtol=0.1)
    res = first_order_residual(final, game, 0.4)[0].value
    rng = np.random.default_rng(5)
    exact = SystemState(env, [PlayerSpec(1)], [rng.standard_normal((4, 2000, 1)) * math.sqrt(0.08) - 0.5])
    floor = first_order_residual(exact, game, 0.4)[0].value
    assert res <= 2.0 * floor + 3 * first_order_residual(exact, game, 0.4)[0].std_error
