import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mflgames import (
    Initializer,
    PlayerSpec,
    SystemState,
    avg_wasserstein,
    first_order_residual,
    free_energy,
    init_state,
    kde_entropy,
    make_environment,
    w_1d,
    w_exact,
    w_sliced,
)
from mflgames.errors import (
    DegenerateSample,
    DimensionMismatch,
    EmptySample,
    EnvironmentMismatch,
    ScoreEstimationFailure,
    TooManyParticles,
)
from mflgames.games import ou_game
from mflgames.kde import GaussianKDE
from mflgames.metrics import read_diagnostics_csv, write_diagnostics_csv, DiagnosticRecord

from oracles import brute_force_assignment, gaussian_entropy, ou_free_energy, wasserstein_by_hungarian

HALF_LN_2PI_E = 0.5 * math.log(2 * math.pi * math.e)


def _one_point_state(cloud):
    cloud = np.asarray(cloud, dtype=float)
    cloud = cloud[:, None] if cloud.ndim == 1 else cloud
    env = make_environment([0.0], [1.0])
    return SystemState(env, [PlayerSpec(cloud.shape[1])], [cloud[None]])


class ZeroGame:
    players = (PlayerSpec(1),)

    def drift(self, i, snap, x, j):
        return np.zeros_like(x)


# ---------------------------------------------------------------- Wasserstein


class TestW1d:
    def test_identical(self):
        x = np.random.default_rng(0).standard_normal(100)
        assert w_1d(x, x) == 0.0

    @pytest.mark.parametrize("p", [1, 2])
    def test_translation(self, p):
        assert w_1d(np.zeros(50), np.full(50, -2.5), p) == pytest.approx(2.5, rel=1e-15)

    def test_shifted_gaussians(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal(100_000)
        b = rng.standard_normal(100_000) + 1.0
        assert w_1d(a, b, 1) == pytest.approx(1.0, abs=0.02)

    def test_unsorted_input(self):
        a = np.array([3.0, 1.0, 2.0])
        b = np.array([0.0, 2.0, 1.0])
        assert w_1d(a, b) == pytest.approx(1.0)

    def test_unequal_counts(self):
        # {0, 1} vs {0, 0.5, 1}: quantile functions differ by 0.5 on a third of (0, 1]
        assert w_1d([0.0, 1.0], [0.0, 0.5, 1.0], 1) == pytest.approx(1.0 / 6.0)

    def test_unequal_counts_match_repetition(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal(6)
        b = rng.standard_normal(4)
        assert w_1d(a, b, 2) == pytest.approx(w_1d(np.repeat(a, 2), np.repeat(b, 3), 2), rel=1e-12)

    def test_empty(self):
        with pytest.raises(EmptySample):
            w_1d([], [1.0])


class TestWExact:
    def test_identical(self):
        x = np.random.default_rng(0).standard_normal((20, 2))
        assert w_exact(x, x) == 0.0

    def test_permutation(self):
        assert w_exact([[0, 0], [1, 0]], [[1, 0], [0, 0]], 1) == 0.0

    def test_matches_hungarian_oracle_2d(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((64, 2))
        b = rng.standard_normal((64, 2))
        for p in (1, 2):
            assert w_exact(a, b, p) == wasserstein_by_hungarian(a, b, p)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = rng.standard_normal((6, 3))
            b = rng.standard_normal((6, 3))
            assert w_exact(a, b, 2) == pytest.approx(brute_force_assignment(a, b, 2), rel=1e-12)

    def test_one_dimensional_agrees_with_sorting(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal(100)
        b = rng.exponential(size=100)
        assert w_exact(a, b, 1) == pytest.approx(w_1d(a, b, 1), rel=1e-12)

    def test_errors(self):
        with pytest.raises(TooManyParticles):
            w_exact(np.zeros((513, 1)), np.zeros((513, 1)))
        with pytest.raises(DimensionMismatch):
            w_exact(np.zeros((3, 1)), np.zeros((3, 2)))
        with pytest.raises(DimensionMismatch):
            w_exact(np.zeros((3, 1)), np.zeros((4, 1)))


clouds = st.integers(2, 12).flatmap(
    lambda n: st.tuples(*[arrays(np.float64, (n, 2), elements=st.floats(-10, 10)) for _ in range(3)]))


class TestMetricAxioms:
    @given(clouds)
    def test_axioms(self, abc):
        a, b, c = abc
        for p in (1, 2):
            ab, ba = w_exact(a, b, p), w_exact(b, a, p)
            assert ab >= 0
            assert ab == pytest.approx(ba, rel=1e-12, abs=1e-12)
            assert w_exact(a, a, p) == 0.0
            assert ab <= w_exact(a, c, p) + w_exact(c, b, p) + 1e-9

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 32))
    def test_triangle_up_to_32(self, seed, n):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.standard_normal((n, 3)) for _ in range(3))
        assert w_exact(a, b) <= w_exact(a, c) + w_exact(c, b) + 1e-9

    @given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e3, 1e3)),
           st.floats(-100, 100))
    def test_w1d_translation_property(self, x, c):
        assert w_1d(x, x + c, 1) == pytest.approx(abs(c), rel=1e-9, abs=1e-9)


class TestWSliced:
    def test_identical(self):
        x = np.random.default_rng(0).standard_normal((100, 3))
        assert w_sliced(x, x) == 0.0

    @pytest.mark.parametrize("k", [1, 5, 64])
    def test_one_dimensional(self, k):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal(200), rng.standard_normal(200) + 0.3
        assert w_sliced(a, b, 1, n_projections=k) == w_1d(a, b, 1)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((50, 2)), rng.standard_normal((50, 2))
        assert w_sliced(a, b, seed=9) == w_sliced(a, b, seed=9)

    def test_shifted_gaussians_3d(self):
        # oracle: average of |<v,u>| over the same directions, plus the exact
        # large-sample limit |v| E|u_1| = |v|/2 on the sphere in R^3
        rng = np.random.default_rng(3)
        v = np.array([1.0, -2.0, 0.5])
        a = rng.standard_normal((100_000, 3))
        b = rng.standard_normal((100_000, 3)) + v
        got = w_sliced(a, b, 1, n_projections=64, seed=11)
        u = np.random.default_rng(11).standard_normal((3, 64))
        u /= np.linalg.norm(u, axis=0)
        mc = float(np.mean(np.abs(v @ u)))
        assert got == pytest.approx(mc, abs=0.02)
        dirs = np.random.default_rng(12).standard_normal((200_000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        assert float(np.mean(np.abs(dirs @ v))) == pytest.approx(np.linalg.norm(v) / 2, rel=0.01)

    def test_bad_projection_count(self):
        with pytest.raises(ValueError):
            w_sliced(np.zeros((3, 2)), np.zeros((3, 2)), n_projections=0)


class TestAvgWasserstein:
    def test_self(self):
        env = make_environment([0.0, 1.0], [0.5, 0.5])
        s = init_state(env, [1, 2], 30, Initializer.gaussian(), seed=0)
        assert avg_wasserstein(s, s) == 0.0

    def test_single_point_reduces(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((40, 2)), rng.standard_normal((40, 2))
        assert avg_wasserstein(_one_point_state(a), _one_point_state(b), 2) == w_exact(a, b, 2)

    def test_two_point_dirac(self):
        c = 1.7
        env = make_environment([0.0, 1.0], [0.5, 0.5])
        zeros = np.zeros((2, 10, 1))
        shifted = zeros.copy()
        shifted[1] += c
        a = SystemState(env, [PlayerSpec(1)], [zeros])
        b = SystemState(env, [PlayerSpec(1)], [shifted])
        assert avg_wasserstein(a, b, 1) == pytest.approx(c / 2, rel=1e-15)

    def test_mismatch(self):
        a = init_state(make_environment([0.0], [1.0]), [1], 5, Initializer.gaussian(), seed=0)
        b = init_state(make_environment([1.0], [1.0]), [1], 5, Initializer.gaussian(), seed=0)
        with pytest.raises(EnvironmentMismatch):
            avg_wasserstein(a, b)


# ------------------------------------------------------------------- entropy


class TestEntropy:
    def test_gaussian(self):
        x = np.random.default_rng(0).standard_normal(100_000)
        assert kde_entropy(x) == pytest.approx(HALF_LN_2PI_E, abs=0.02)
        assert HALF_LN_2PI_E == pytest.approx(1.4189385, abs=1e-7)

    def test_scaling(self):
        x = np.random.default_rng(1).standard_normal(100_000)
        assert kde_entropy(2 * x) - kde_entropy(x) == pytest.approx(math.log(2), abs=0.02)

    def test_exponential_with_support(self):
        x = np.random.default_rng(2).exponential(size=100_000)
        assert kde_entropy(x, bounds=(0.0, None)) == pytest.approx(1.0, abs=0.02)

    def test_gaussian_2d(self):
        x = np.random.default_rng(3).standard_normal((20_000, 2)) * [1.0, 0.5]
        exact = gaussian_entropy(1.0) + gaussian_entropy(0.25)
        assert kde_entropy(x, max_queries=4096) == pytest.approx(exact, abs=0.05)

    def test_binned_matches_direct(self):
        x = np.random.default_rng(4).standard_normal(5000)
        for k in (1, 2):
            direct = GaussianKDE(x, method="direct").loo_at_samples()[k]
            binned = GaussianKDE(x, method="binned").loo_at_samples()[k]
            err = np.abs(direct - binned)
            # linear binning error is largest in the sparse tails
            assert np.median(err) < 1e-5 and np.max(err) < 1e-3

    def test_degenerate(self):
        with pytest.raises(DegenerateSample):
            kde_entropy(np.ones(100))
        with pytest.raises(DegenerateSample):
            kde_entropy(np.arange(5.0))


class TestScore:
    def test_mse_decreases_with_n(self):
        mses = []
        for n in (1000, 10_000, 100_000):
            x = np.random.default_rng(n).standard_normal(n) * math.sqrt(0.08)
            idx, _, s = GaussianKDE(x).loo_at_samples(max_queries=4096)
            mses.append(float(np.mean((s[:, 0] + x[idx] / 0.08) ** 2)))
        assert mses[0] > mses[1] > mses[2]

    def test_exact_invariant_law_residual(self):
        x = np.random.default_rng(7).standard_normal(100_000) * math.sqrt(0.08)
        rep = first_order_residual(_one_point_state(x), ou_game(1.0), 0.4)[0]
        assert rep.value <= 0.05 * 0.08

    def test_far_from_equilibrium_larger(self):
        x = np.random.default_rng(8).standard_normal(10_000)
        eq = first_order_residual(_one_point_state(x * math.sqrt(0.08)), ou_game(1.0), 0.4)[0].value
        narrow = first_order_residual(_one_point_state(x * 0.01), ou_game(1.0), 0.4)[0].value
        wide = first_order_residual(_one_point_state(x * 3.0), ou_game(1.0), 0.4)[0].value
        assert narrow > eq and wide > eq

    def test_zero_drift_uniform(self):
        x = np.random.default_rng(9).uniform(-1, 1, size=(2000, 1))
        sigma = 0.5
        rep = first_order_residual(_one_point_state(x), ZeroGame(), sigma)[0]
        s = GaussianKDE(x).score(x)
        assert rep.value == pytest.approx((sigma**2 / 2) ** 2 * np.mean(np.sum(s**2, axis=1)), rel=1e-12)

    def test_too_few_particles(self):
        with pytest.raises(ScoreEstimationFailure):
            first_order_residual(_one_point_state(np.arange(50.0)), ZeroGame(), 0.4)


class TestFreeEnergy:
    def test_gaussian_closed_form(self):
        v = 0.08
        x = np.random.default_rng(0).standard_normal(100_000) * math.sqrt(v)
        rep = free_energy(_one_point_state(x), ou_game(1.0), 0.4)
        exact = ou_free_energy(1.0, v, 0.4)
        assert exact == pytest.approx(0.02752, abs=1e-5)
        assert rep.value == pytest.approx(exact, rel=0.02)
        assert rep.details["energy"] == pytest.approx(0.5 * np.mean(x**2), rel=1e-12)

    def test_entropy_only(self):
        x = np.random.default_rng(1).standard_normal(1000)
        rep = free_energy(_one_point_state(x), ZeroGame(), 0.4)
        assert rep.details["energy_available"] is False
        assert rep.value == pytest.approx(0.08 * rep.details["entropy"], rel=1e-12)


def test_diagnostics_roundtrip(tmp_path):
    recs = [DiagnosticRecord(0.0, "variance", "0", 0.1, None), DiagnosticRecord(0.5, "residual", "0", 1e-3, 2e-4)]
    write_diagnostics_csv(tmp_path / "d.csv", recs)
    back = read_diagnostics_csv(tmp_path / "d.csv")
    assert back[1] == recs[1]
    assert math.isnan(back[0].std_error)
