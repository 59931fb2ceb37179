"""Linear-quadratic dynamic game on a time environment.

The environment is a grid of times y in [0, T]; the population state theta
follows an ODE driven by the conditional means.  The script runs the
mean-field Langevin flow to equilibrium and prints the per-time means,
which should all approach -theta0 / (1 + T).
"""

from mflgames import Initializer, RunConfig, init_state, run, snapshot
from mflgames.games import DynamicGame, dynamic_environment, dynamic_forward, lq_player


def main(T=1.0, cells=4):
    env = dynamic_environment(T, cells)
    game = DynamicGame([lq_player(0.0, 1.0, theta0=1.0)], T, env)
    state = init_state(env, [1], 2000, Initializer.gaussian(), seed=0)
    traj = run(state, game, RunConfig(sigma=0.4, dt=0.01, n_steps=800, record_every=200, seed=1),
               monitors=["residual"])
    final = traj.final_state
    print("cell means:", final.clouds[0].mean(axis=1)[:, 0].round(4).tolist(), "target", -1.0 / (1 + T))
    path = dynamic_forward(game, snapshot(final))
    print("theta_T:", float(path.terminal[0]))
    for t, v in zip(*traj.series("residual", 0)[:2]):
        print(f"t={t:5.1f} residual={v:.5f}")


if __name__ == "__main__":
    main()
