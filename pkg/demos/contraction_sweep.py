"""Contraction of coupled runs for a two-player zero-sum quadratic game.

For coupling strength eps the interaction Lipschitz constant is gamma = eps
and the bound decays like exp((2 gamma - c sigma^2) t).  Two synchronously coupled
runs from different initial laws approach each other when the rate is
positive; the script prints the measured and theoretical rates.
"""

from mflgames import Initializer, RunConfig, init_state, make_environment
from mflgames.contraction import KappaProfile, eberle_constants, empirical_decay
from mflgames.games import QuadraticGame

SIGMA = 0.4


def main():
    env = make_environment([0.0], [1.0])
    print(f"{'eps':>5} {'bound exp':>11} {'fitted':>8} {'contractive':>12}")
    for eps in (0.05, 0.1, 0.2, 0.3, 0.5):
        game = QuadraticGame([1.0, 1.0], coupling=[[0.0, eps], [-eps, 0.0]], zero_sum=True)
        consts = eberle_constants(KappaProfile.constant(game.kappa_constant()), SIGMA, gamma=game.gamma)
        a = init_state(env, [1, 1], 2000, Initializer.gaussian(-1.0, 1.0), seed=1)
        b = init_state(env, [1, 1], 2000, Initializer.gaussian(1.0, 1.0), seed=2)
        rep = empirical_decay(game, a, b, RunConfig(sigma=SIGMA, dt=0.01, n_steps=300, record_every=10, seed=3),
                              consts)
        print(f"{eps:5.2f} {consts.rate_bound:11.4f} {rep.rate_fitted:8.4f} {str(rep.contractive):>12}")


if __name__ == "__main__":
    main()
