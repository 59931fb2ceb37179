"""MCMC-GAN on an Exp(1) target.

The discriminator is a cloud of ReLU units moved by mean-field Langevin
steps; the generator is the explicit Gibbs law of the current cloud,
sampled by Metropolis-Hastings.  The script prints the training-error
curve and the Wasserstein distance to the data every ten iterations.
"""

from mflgames.gan import GanConfig, train


def main(n_particles=3000, n_steps=60):
    cfg = GanConfig(sigma=0.4, dt=0.01, lam=0.2, n_particles=n_particles, n_steps=n_steps, seed=0,
                    data={"distribution": "exponential", "rate": 1.0})

    def report(k, err, mh):
        if k % 10 == 0:
            print(f"iter {k:3d}  error {err.value:.5f}  acceptance {mh.acceptance:.3f}")

    rep = train(cfg, callback=report)
    print(f"W1 to data: initial {rep.initial_w1:.3f}, final {rep.final_w1:.3f}")


if __name__ == "__main__":
    main()
