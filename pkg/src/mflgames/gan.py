"""MCMC-GAN with a mean-field discriminator and an explicit Gibbs generator.

The discriminator is a cloud of ReLU units ``x = (C, A, b)`` with feature
``phi(x, z) = C (A z + b)^+``.  For a cloud ``nu`` the best generator is the
Gibbs law

    mu*[nu](z) = exp(-(2 / sigma^2) (E_nu phi(X, z) + lam |z|^2 / 2)) / Z(nu),

which is sampled by random-walk Metropolis.  The cloud then takes one
mean-field Langevin step with drift

    grad_x [ -int phi(x, z) (mu*[nu] - mu_hat)(dz) + (lam / 2) |x|^2 ].

Training error.  Writing ``H`` for the entropy relative to Lebesgue
(``int p log p``), the discriminator objective without its own entropy is

    Phi(nu) = -int E phi d(mu* - mu_hat) - (lam / 2)(int |z|^2 dmu* - E|X|^2) - (sigma^2 / 2) H(mu*),

and since ``H(mu*) = -log Z - (2 / sigma^2) int (E phi + lam |z|^2 / 2) dmu*``
the generator terms cancel: ``Phi = mean_data E phi + (lam / 2) E|X|^2 +
(sigma^2 / 2) log Z``.  ``log Z`` comes from trapezoid quadrature (1-D only).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .core import PlayerSpec, SystemState, make_environment, write_particles_csv
from .errors import EmptySampleSet, NonFiniteLogDensity, QuadratureFailure
from .integrator import RunConfig, mfl_step
from .metrics import MetricReport, kde_entropy, w_1d

__all__ = [
    "MHSettings",
    "MHResult",
    "GanConfig",
    "GanRunReport",
    "FeatureField",
    "relu_feature",
    "generator_logdensity",
    "mh_sample",
    "discriminator_grad",
    "training_error",
    "log_normalizer",
    "train",
]

_PURPOSE_MH = 2
_PURPOSE_DATA = 3
_PURPOSE_EVAL = 4
_DENSITY_FLOOR = math.log(1e-12)


def _generator(seed, purpose, index):
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=(purpose, int(index)))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# features


def _split(x, z_dim):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != z_dim + 2:
        raise ValueError(f"discriminator particles have {x.shape[1]} coordinates, expected {z_dim + 2}")
    return x[:, 0], x[:, 1:1 + z_dim], x[:, 1 + z_dim]


def relu_feature(x, z) -> float:
    """``C max(A . z + b, 0)`` for one particle ``x = (C, A, b)``."""
    x = np.asarray(x, dtype=float).ravel()
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if x.size != z.size + 2:
        raise ValueError(f"particle of length {x.size} does not match z of length {z.size}")
    return float(x[0] * max(float(np.dot(x[1:-1], z)) + x[-1], 0.0))


class FeatureField:
    """``z -> mean_k phi(x_k, z)`` for a fixed discriminator cloud.

    In 1-D the mean is piecewise linear with kinks at ``-b_k / A_k``; it is
    evaluated by binary search over sorted kinks and prefix sums, so each
    query costs ``O(log n)``.
    """

    def __init__(self, cloud, z_dim=1):
        self.z_dim = int(z_dim)
        C, A, b = _split(cloud, self.z_dim)
        if C.size == 0:
            raise EmptySampleSet("empty discriminator cloud")
        self.n = C.size
        self.C, self.A, self.b = C, A, b
        if self.z_dim == 1:
            a = A[:, 0]
            pos, neg, flat = a > 0, a < 0, a == 0
            self.const = float(np.sum(C[flat] * np.maximum(b[flat], 0.0)))
            # A > 0: active for z > kink
            kp = -b[pos] / a[pos]
            o = np.argsort(kp, kind="stable")
            self.kp = kp[o]
            self.cum_ca_p = np.concatenate([[0.0], np.cumsum((C[pos] * a[pos])[o])])
            self.cum_cb_p = np.concatenate([[0.0], np.cumsum((C[pos] * b[pos])[o])])
            # A < 0: active for z < kink
            kn = -b[neg] / a[neg]
            o = np.argsort(kn, kind="stable")
            self.kn = kn[o]
            self.cum_ca_n = np.concatenate([[0.0], np.cumsum((C[neg] * a[neg])[o])])
            self.cum_cb_n = np.concatenate([[0.0], np.cumsum((C[neg] * b[neg])[o])])

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.z_dim == 1:
            zz = z.reshape(-1)
            ip = np.searchsorted(self.kp, zz, side="left")  # kinks strictly below z are active
            ca = self.cum_ca_p[ip]
            cb = self.cum_cb_p[ip]
            i_n = np.searchsorted(self.kn, zz, side="right")  # kinks strictly above z are active
            ca = ca + self.cum_ca_n[-1] - self.cum_ca_n[i_n]
            cb = cb + self.cum_cb_n[-1] - self.cum_cb_n[i_n]
            out = (zz * ca + cb + self.const) / self.n
            return out.reshape(z.shape[:-1] if z.ndim > 1 else z.shape)
        zz = z.reshape(-1, self.z_dim)
        pre = zz @ self.A.T + self.b  # (m, n)
        return (np.maximum(pre, 0.0) @ self.C) / self.n


def generator_logdensity(cloud, z, sigma, lam, z_dim=1):
    """Unnormalized ``-(2 / sigma^2)(mean_k phi(x_k, z) + lam |z|^2 / 2)``.

    ``cloud`` may be a particle array or a :class:`FeatureField`.  ``z`` has
    shape ``(m,)`` (1-D) or ``(m, z_dim)``; a scalar or single point returns
    a float.
    """
    field_ = cloud if isinstance(cloud, FeatureField) else FeatureField(cloud, z_dim)
    z = np.asarray(z, dtype=float)
    if field_.z_dim == 1:
        sq = z * z
        val = -(2.0 / sigma ** 2) * (field_(z) + 0.5 * lam * sq)
    else:
        zz = np.atleast_2d(z)
        val = -(2.0 / sigma ** 2) * (field_(zz) + 0.5 * lam * np.sum(zz * zz, axis=1))
        if z.ndim == 1:
            val = val[0]
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# Metropolis sampling


@dataclass(frozen=True)
class MHSettings:
    """Random-walk Metropolis settings.

    The proposal scale adapts by Robbins-Monro towards ``target_acceptance``
    (0.44 in 1-D, 0.234 otherwise when left as None) during the burn-in
    fraction of each chain and is frozen afterwards.
    """

    n_chains: int = 4
    burn_in: float = 0.2
    thin: int = 1
    initial_scale: float = 1.0
    target_acceptance: float | None = None

    def __post_init__(self):
        if self.n_chains < 1 or self.thin < 1:
            raise ValueError("n_chains and thin must be >= 1")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must be in [0, 1)")
        if not self.initial_scale > 0:
            raise ValueError("initial_scale must be positive")


@dataclass
class MHResult:
    samples: np.ndarray
    acceptance: float
    scale: np.ndarray


def _check_logdensity(values, where):
    bad = np.isnan(values) | (values == np.inf)
    if bad.any():
        raise NonFiniteLogDensity(f"log-density is {values[bad][0]} at {where}")


def mh_sample(logdensity, n, settings: MHSettings | None = None, seed=0, x0=None, dim=1) -> MHResult:
    """Draw ``n`` samples by random-walk Metropolis with ``settings.n_chains`` chains.

    ``logdensity`` maps an array of shape ``(chains, dim)`` to ``(chains,)``;
    ``-inf`` marks points outside the support.  Chains run in lockstep and
    their post-burn-in draws are pooled chain by chain.  The reported
    acceptance rate is measured after burn-in.
    """
    settings = settings or MHSettings()
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    c = settings.n_chains
    per_chain = -(-int(n) // c)
    kept = per_chain * settings.thin
    burn = int(math.ceil(kept * settings.burn_in / (1.0 - settings.burn_in)))
    target = settings.target_acceptance
    if target is None:
        target = 0.44 if dim == 1 else 0.234
    start = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float).reshape(dim)
    x = np.tile(start, (c, 1))
    lp = np.asarray(logdensity(x), dtype=float)
    _check_logdensity(lp, "the initial point")
    if np.any(lp == -np.inf):
        raise NonFiniteLogDensity("initial point lies outside the support")
    log_s = np.full(c, math.log(settings.initial_scale))
    out = np.empty((per_chain, c, dim))
    accepted = 0
    steps = burn + kept
    noise = rng.standard_normal((steps, c, dim))
    unif = np.log(rng.random((steps, c)))
    for t in range(steps):
        prop = x + np.exp(log_s)[:, None] * noise[t]
        lq = np.asarray(logdensity(prop), dtype=float)
        _check_logdensity(lq, f"proposal step {t}")
        with np.errstate(invalid="ignore"):
            log_ratio = np.where(lq == -np.inf, -np.inf, lq - lp)
        acc = unif[t] < log_ratio
        x = np.where(acc[:, None], prop, x)
        lp = np.where(acc, lq, lp)
        if t < burn:
            rate = np.minimum(1.0, np.exp(np.minimum(log_ratio, 0.0)))
            log_s += (rate - target) / (t + 1.0) ** 0.6
        else:
            k = t - burn
            accepted += int(acc.sum())
            if k % settings.thin == settings.thin - 1:
                out[k // settings.thin] = x
    samples = out.transpose(1, 0, 2).reshape(-1, dim)[:n]
    return MHResult(samples, accepted / (kept * c), np.exp(log_s))


# ---------------------------------------------------------------------------
# discriminator gradient and training error


def _as_z(samples, z_dim):
    z = np.asarray(samples, dtype=float)
    if z.size == 0:
        raise EmptySampleSet("empty sample set")
    return z.reshape(-1, z_dim)


class _SortedSums:
    """Prefix sums over sorted 1-D samples for ReLU moment queries."""

    def __init__(self, z):
        self.z = np.sort(z[:, 0])
        self.m = self.z.size
        self.cum = np.concatenate([[0.0], np.cumsum(self.z)])

    def moments(self, A, b):
        """``(mean 1{Az+b>0}, mean z 1{Az+b>0})`` for each unit."""
        s0 = np.zeros(A.size)
        s1 = np.zeros(A.size)
        pos, neg, flat = A > 0, A < 0, A == 0
        if pos.any():
            k = -b[pos] / A[pos]
            i = np.searchsorted(self.z, k, side="right")  # z > k
            s0[pos] = self.m - i
            s1[pos] = self.cum[-1] - self.cum[i]
        if neg.any():
            k = -b[neg] / A[neg]
            i = np.searchsorted(self.z, k, side="left")  # z < k
            s0[neg] = i
            s1[neg] = self.cum[i]
        if flat.any():
            on = b[flat] > 0
            s0[flat] = np.where(on, self.m, 0.0)
            s1[flat] = np.where(on, self.cum[-1], 0.0)
        return s0 / self.m, s1 / self.m


def _feature_grad_mean(x, z, z_dim, sums=None):
    """``mean_z grad_x phi(x, z)`` for each particle, shape ``(n, z_dim + 2)``."""
    C, A, b = _split(x, z_dim)
    if z_dim == 1:
        s = sums if sums is not None else _SortedSums(z)
        m0, m1 = s.moments(A[:, 0], b)
        return np.stack([A[:, 0] * m1 + b * m0, C * m1, C * m0], axis=1)
    pre = z @ A.T + b  # (m, n)
    act = pre > 0
    m = z.shape[0]
    gC = np.mean(np.maximum(pre, 0.0), axis=0)
    gA = C[:, None] * (act.T.astype(float) @ z) / m
    gb = C * np.mean(act, axis=0)
    return np.concatenate([gC[:, None], gA, gb[:, None]], axis=1)


def discriminator_grad(cloud, x, gen_samples, data_samples, lam, z_dim=1):
    """Gradient in ``x`` of the Monte Carlo first variation of the discriminator objective.

    ``-(mean_gen grad phi - mean_data grad phi) + lam x`` with the ReLU
    derivative taken as 0 at the kink.  ``cloud`` is accepted for interface
    symmetry; the first variation depends on it only through the samples.
    """
    zg = _as_z(gen_samples, z_dim)
    zd = _as_z(data_samples, z_dim)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return -(_feature_grad_mean(x, zg, z_dim) - _feature_grad_mean(x, zd, z_dim)) + lam * x


def log_normalizer(field_: FeatureField, sigma, lam, n_grid=20001):
    """``log Z = log int exp(l(z)) dz`` by trapezoid quadrature (1-D).

    The grid is widened until the unnormalized density at both ends falls
    below ``1e-12`` of its maximum, then trimmed to that region.
    """
    if field_.z_dim != 1:
        raise QuadratureFailure("the normalizer is computed in 1-D only")
    if not (sigma > 0 and lam > 0):
        raise QuadratureFailure("need sigma > 0 and lam > 0")
    half = 8.0 * sigma / math.sqrt(2.0 * lam)
    lo, hi = -half, half
    for _ in range(60):
        z = np.linspace(lo, hi, 4001)
        ell = generator_logdensity(field_, z, sigma, lam)
        top = float(np.max(ell))
        if not math.isfinite(top):
            raise QuadratureFailure("non-finite generator log-density on the grid")
        left_ok = ell[0] < top + _DENSITY_FLOOR
        right_ok = ell[-1] < top + _DENSITY_FLOOR
        if left_ok and right_ok:
            break
        width = hi - lo
        lo = lo if left_ok else lo - width
        hi = hi if right_ok else hi + width
    else:
        raise QuadratureFailure("could not bracket the generator density")
    keep = np.flatnonzero(ell >= top + _DENSITY_FLOOR)
    a = z[max(keep[0] - 1, 0)]
    b = z[min(keep[-1] + 1, z.size - 1)]
    zz = np.linspace(a, b, n_grid)
    ell = generator_logdensity(field_, zz, sigma, lam)
    h = zz[1] - zz[0]
    w = np.full(n_grid, math.log(h))
    w[0] = w[-1] = math.log(0.5 * h)
    value = float(logsumexp(ell + w))
    if not math.isfinite(value):
        raise QuadratureFailure("log normalizer is not finite")
    return value, zz, ell


def training_error(cloud, gen_samples, data_samples, sigma, lam, normalizer=None, z_dim=1) -> MetricReport:
    """Discriminator objective without its own entropy term.

    ``-(mean_gen E phi - mean_data E phi) - (lam/2)(mean_gen |z|^2 - E|X|^2)
    - (sigma^2/2) H(mu*)`` with ``H(mu*) = -log Z - (2/sigma^2) mean_gen(E phi
    + lam |z|^2 / 2)``.  ``normalizer`` is a precomputed ``log Z``.  For
    ``z_dim > 1`` the entropy term is skipped and ``details["partial"]`` set.
    """
    x = np.atleast_2d(np.asarray(cloud, dtype=float))
    field_ = FeatureField(x, z_dim)
    zg = _as_z(gen_samples, z_dim)
    zd = _as_z(data_samples, z_dim)
    arg_g = zg[:, 0] if z_dim == 1 else zg
    arg_d = zd[:, 0] if z_dim == 1 else zd
    feat_g = field_(arg_g)
    feat_d = field_(arg_d)
    sq_g = np.sum(zg * zg, axis=1)
    sq_x = float(np.mean(np.sum(x * x, axis=1)))
    core = -(feat_g.mean() - feat_d.mean()) - 0.5 * lam * (sq_g.mean() - sq_x)
    details = {"feature_gen": float(feat_g.mean()), "feature_data": float(feat_d.mean()),
               "second_moment_gen": float(sq_g.mean()), "second_moment_cloud": sq_x}
    # the generator terms cancel against H(mu*); the noise left is the data mean
    se = float(np.std(feat_d, ddof=1) / math.sqrt(feat_d.size)) if feat_d.size > 1 else 0.0
    if z_dim != 1:
        details["partial"] = True
        return MetricReport("train_error", float(core), None, details)
    log_z = normalizer if normalizer is not None else log_normalizer(field_, sigma, lam)[0]
    ent = -log_z - (2.0 / sigma ** 2) * float(np.mean(feat_g + 0.5 * lam * sq_g))
    details.update(log_normalizer=log_z, generator_entropy=ent, partial=False)
    return MetricReport("train_error", float(core - 0.5 * sigma ** 2 * ent), se, details)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class GanConfig:
    """Settings of an MCMC-GAN training run.

    ``data`` is ``{"distribution": "exponential", "rate": 1.0}``,
    ``{"distribution": "gaussian", "mean": m, "std": s}`` or
    ``{"file": path}`` (particle CSV, resampled with replacement).
    """

    sigma: float = 0.4
    lam: float = 0.2
    dt: float = 0.01
    n_steps: int = 60
    n_particles: int = 3000
    data: dict = field(default_factory=lambda: {"distribution": "exponential", "rate": 1.0})
    n_gen_samples: int = 20000
    n_data_samples: int = 20000
    n_eval_samples: int = 100000
    mh: MHSettings = field(default_factory=MHSettings)
    z_dim: int = 1
    init_std: float = 1.0
    seed: int = 0
    threads: int = 1
    entropy_column: bool = True
    error_data: str = "fixed"

    def __post_init__(self):
        if isinstance(self.mh, dict):
            self.mh = MHSettings(**self.mh)
        if not (self.sigma > 0 and self.lam > 0 and self.dt > 0):
            raise ValueError("sigma, lam and dt must be positive")
        if self.n_particles < 1 or self.n_gen_samples < 1 or self.n_data_samples < 1:
            raise ValueError("particle and sample counts must be >= 1")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.z_dim < 1:
            raise ValueError("z_dim must be >= 1")
        if self.error_data not in ("fixed", "fresh"):
            raise ValueError("error_data must be 'fixed' or 'fresh'")

    def to_dict(self):
        d = asdict(self)
        d["mh"] = asdict(self.mh)
        return d


def draw_data(spec, n, rng, z_dim=1):
    spec = dict(spec)
    if "file" in spec:
        from .core import read_particles_csv

        rows = read_particles_csv(spec["file"])
        if rows.shape[1] != z_dim:
            raise ValueError(f"data file has {rows.shape[1]} columns, z_dim is {z_dim}")
        return rows[rng.integers(0, rows.shape[0], size=n)]
    kind = spec.get("distribution")
    if kind == "exponential":
        return rng.exponential(1.0 / float(spec.get("rate", 1.0)), size=(n, z_dim))
    if kind == "gaussian":
        return float(spec.get("mean", 0.0)) + float(spec.get("std", 1.0)) * rng.standard_normal((n, z_dim))
    raise ValueError(f"unknown data source {spec!r}")


class _DiscriminatorGame:
    """Game oracle wrapping :func:`discriminator_grad` for fixed sample sets."""

    def __init__(self, z_dim, lam):
        self.z_dim = z_dim
        self.lam = lam
        self.players = (PlayerSpec(z_dim + 2),)
        self._gen = self._data = None

    def set_samples(self, gen, data):
        if self.z_dim == 1:
            self._gen, self._data = _SortedSums(gen), _SortedSums(data)
        else:
            self._gen, self._data = gen, data

    def _grad(self, x, samples):
        if self.z_dim == 1:
            return _feature_grad_mean(x, None, 1, sums=samples)
        return _feature_grad_mean(x, samples, self.z_dim)

    def drift(self, i, snap, x, j):
        return -(self._grad(x, self._gen) - self._grad(x, self._data)) + self.lam * x


@dataclass
class GanRunReport:
    iterations: np.ndarray
    train_error: np.ndarray
    train_error_with_entropy: np.ndarray
    acceptance: np.ndarray
    w1_to_data: np.ndarray
    generated_samples: np.ndarray
    initial_samples: np.ndarray
    discriminator_cloud: np.ndarray
    final_w1: float
    initial_w1: float
    config: dict

    def error_curve_rows(self):
        for row in zip(self.iterations, self.train_error, self.train_error_with_entropy,
                       self.acceptance, self.w1_to_data):
            yield [str(int(row[0]))] + [repr(float(v)) for v in row[1:]]

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "error_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "train_error", "train_error_with_entropy", "acceptance", "w1_to_data"])
            for row in self.error_curve_rows():
                w.writerow(row)
        write_particles_csv(d / "generated_samples.csv", self.generated_samples)
        write_particles_csv(d / "discriminator_cloud.csv", self.discriminator_cloud)
        summary = self.summary()
        summary["run_hash"] = self.run_hash()
        with open(d / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def summary(self):
        return {"final_w1": self.final_w1, "initial_w1": self.initial_w1,
                "final_acceptance": float(self.acceptance[-1]),
                "final_train_error": float(self.train_error[-1]), "config": self.config}

    def run_hash(self) -> str:
        h = hashlib.sha1()
        h.update(json.dumps(self.config, sort_keys=True).encode())
        for row in self.error_curve_rows():
            h.update(",".join(row).encode())
        h.update(np.ascontiguousarray(self.generated_samples).tobytes())
        return h.hexdigest()


def _draw_generator(cloud, cfg: GanConfig, index):
    rng = _generator(cfg.seed, _PURPOSE_MH, index)
    if cfg.z_dim == 1:
        field_ = FeatureField(cloud, 1)
        log_z, grid, ell = log_normalizer(field_, cfg.sigma, cfg.lam)
        start = grid[int(np.argmax(ell))]
        res = mh_sample(lambda z: generator_logdensity(field_, z[:, 0], cfg.sigma, cfg.lam),
                        cfg.n_gen_samples, cfg.mh, rng, x0=[start], dim=1)
        return res, log_z
    field_ = FeatureField(cloud, cfg.z_dim)
    res = mh_sample(lambda z: generator_logdensity(field_, z, cfg.sigma, cfg.lam, cfg.z_dim),
                    cfg.n_gen_samples, cfg.mh, rng, dim=cfg.z_dim)
    return res, None


def _distance_to_data(gen, data):
    if gen.shape[1] == 1:
        return w_1d(gen[:, 0], data[:, 0], 1)
    from .metrics import w_sliced

    return w_sliced(gen, data, 1)


def train(cfg: GanConfig, callback=None) -> GanRunReport:
    """Train the discriminator cloud for ``cfg.n_steps`` MFL steps.

    Each iteration draws a fresh Metropolis chain from the current
    generator and fresh data, records the diagnostics, then moves every
    discriminator particle by one Euler-Maruyama step.  Iteration 0 is the
    initial cloud.
    """
    dim = cfg.z_dim + 2
    env = make_environment([0], [1.0])
    init_rng = _generator(cfg.seed, 0, 0)
    cloud0 = cfg.init_std * init_rng.standard_normal((1, cfg.n_particles, dim))
    state = SystemState(env, (PlayerSpec(dim),), [cloud0], 0.0, 0)
    game = _DiscriminatorGame(cfg.z_dim, cfg.lam)
    run_cfg = RunConfig(cfg.sigma, cfg.dt, cfg.n_steps, seed=cfg.seed, threads=cfg.threads)
    eval_data = draw_data(cfg.data, cfg.n_eval_samples, _generator(cfg.seed, _PURPOSE_EVAL, 0), cfg.z_dim)

    errs, errs_h, accs, w1s = [], [], [], []
    initial_samples = None
    for k in range(cfg.n_steps + 1):
        cloud = state.clouds[0][0]
        res, log_z = _draw_generator(cloud, cfg, k)
        gen = res.samples
        data = draw_data(cfg.data, cfg.n_data_samples, _generator(cfg.seed, _PURPOSE_DATA, k), cfg.z_dim)
        # the recorded error uses one fixed data set so that its increments are free of data noise
        err_data = eval_data if cfg.error_data == "fixed" else data
        rep = training_error(cloud, gen, err_data, cfg.sigma, cfg.lam, normalizer=log_z, z_dim=cfg.z_dim)
        errs.append(rep.value)
        if cfg.entropy_column:
            # add (sigma^2/2) H(nu) with H = -(KDE differential entropy)
            errs_h.append(rep.value - 0.5 * cfg.sigma ** 2 * kde_entropy(cloud))
        else:
            errs_h.append(float("nan"))
        accs.append(res.acceptance)
        w1s.append(_distance_to_data(gen, data))
        if k == 0:
            initial_samples = gen
        if callback is not None:
            callback(k, rep, res)
        if k < cfg.n_steps:
            game.set_samples(gen, data)
            state = mfl_step(state, game, run_cfg, k)
    return GanRunReport(
        iterations=np.arange(cfg.n_steps + 1),
        train_error=np.array(errs),
        train_error_with_entropy=np.array(errs_h),
        acceptance=np.array(accs),
        w1_to_data=np.array(w1s),
        generated_samples=gen,
        initial_samples=initial_samples,
        discriminator_cloud=state.clouds[0][0].copy(),
        final_w1=_distance_to_data(gen, eval_data),
        initial_w1=_distance_to_data(initial_samples, eval_data),
        config=cfg.to_dict(),
    )
