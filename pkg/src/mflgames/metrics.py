"""Distances, entropies and equilibrium diagnostics on particle clouds."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import StateSnapshot, SystemState, check_compatible, snapshot
from .errors import (
    DegenerateSample,
    DimensionMismatch,
    EmptySample,
    EnergyUnavailable,
    ScoreEstimationFailure,
    TooManyParticles,
)
from .kde import GaussianKDE

__all__ = [
    "MetricReport",
    "DiagnosticRecord",
    "w_1d",
    "w_exact",
    "w_sliced",
    "avg_wasserstein",
    "kde_entropy",
    "first_order_residual",
    "free_energy",
    "write_diagnostics_csv",
    "read_diagnostics_csv",
]

EXACT_MAX_N = 512
DEFAULT_PROJECTIONS = 64
DEFAULT_MAX_QUERIES = 4096
MIN_RESIDUAL_PARTICLES = 100


@dataclass
class MetricReport:
    name: str
    value: float
    std_error: float | None = None
    details: dict = field(default_factory=dict)
    failed: bool = False


class DiagnosticRecord(NamedTuple):
    t: float
    metric: str
    player: str
    value: float
    std_error: float


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def write_diagnostics_csv(path, records):
    """Write records as ``t,metric,player,value,std_error`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "metric", "player", "value", "std_error"])
        for r in records:
            w.writerow([_fmt(r.t), r.metric, r.player, _fmt(r.value), _fmt(r.std_error)])


def read_diagnostics_csv(path) -> list[DiagnosticRecord]:
    out = []
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        for r in rows:
            se = r["std_error"]
            out.append(DiagnosticRecord(float(r["t"]), r["metric"], r["player"], float(r["value"]),
                                        float(se) if se else float("nan")))
    return out


# ---------------------------------------------------------------------------
# Wasserstein distances


def _quantile_coupling(a, b, p):
    """Exact W_p^p between 1-D empirical measures of different sizes."""
    n, m = a.size, b.size
    # breakpoints of both quantile functions on (0, 1]
    u = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    u[-1] = 1.0
    lengths = np.diff(np.concatenate([[0.0], u]))
    mid = u - 0.5 * lengths
    ia = np.minimum((mid * n).astype(np.int64), n - 1)
    ib = np.minimum((mid * m).astype(np.int64), m - 1)
    return float(np.sum(lengths * np.abs(a[ia] - b[ib]) ** p))


def w_1d(samples_a, samples_b, p=1) -> float:
    """p-Wasserstein distance between two 1-D empirical measures.

    Equal sample counts pair order statistics,
    ``((1/n) sum_k |a_(k) - b_(k)|^p)^(1/p)``.  Unequal counts integrate
    ``|F_a^{-1}(u) - F_b^{-1}(u)|^p`` exactly over the merged quantile grid.
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("w_1d needs nonempty samples")
    if p <= 0:
        raise ValueError("p must be positive")
    if a.size == b.size:
        wpp = float(np.mean(np.abs(a - b) ** p))
    else:
        wpp = _quantile_coupling(a, b, p)
    return wpp ** (1.0 / p)


def _as_cloud(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def w_exact(cloud_a, cloud_b, p=1, max_n=EXACT_MAX_N) -> float:
    """Optimal-assignment p-Wasserstein distance between equal-size clouds."""
    a = _as_cloud(cloud_a)
    b = _as_cloud(cloud_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptySample("w_exact needs nonempty clouds")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"clouds live in R^{a.shape[1]} and R^{b.shape[1]}")
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"clouds have {a.shape[0]} and {b.shape[0]} points")
    n = a.shape[0]
    if n > max_n:
        raise TooManyParticles(f"{n} particles exceeds the assignment limit {max_n}; use w_sliced")
    diff = a[:, None, :] - b[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2)) ** p
    rows, cols = linear_sum_assignment(cost)
    total = math.fsum(cost[r, c] for r, c in zip(rows, cols))
    return (total / n) ** (1.0 / p)


def w_sliced(cloud_a, cloud_b, p=1, n_projections=DEFAULT_PROJECTIONS, seed=0) -> float:
    """Mean over random unit directions of the 1-D distance between projections."""
    a = _as_cloud(cloud_a)
    b = _as_cloud(cloud_b)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"clouds live in R^{a.shape[1]} and R^{b.shape[1]}")
    if n_projections < 1:
        raise ValueError("n_projections must be >= 1")
    d = a.shape[1]
    if d == 1:
        return w_1d(a[:, 0], b[:, 0], p)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((d, n_projections))
    u /= np.linalg.norm(u, axis=0, keepdims=True)
    pa = a @ u
    pb = b @ u
    return float(np.mean([w_1d(pa[:, k], pb[:, k], p) for k in range(n_projections)]))


def _conditional_distance(a, b, p):
    if a.shape[1] == 1:
        return w_1d(a[:, 0], b[:, 0], p)
    if a.shape[0] == b.shape[0] and a.shape[0] <= EXACT_MAX_N:
        return w_exact(a, b, p)
    return w_sliced(a, b, p)


def _joint_cloud(state, j, player):
    if player is not None:
        return state.clouds[player][j]
    return np.concatenate([c[j] for c in state.clouds], axis=1)


def avg_wasserstein(state_a, state_b, p=1, player=None) -> float:
    """m-weighted average of conditional p-Wasserstein distances.

    ``(sum_j w_j W_p^p(pi_a(.|y_j), pi_b(.|y_j)))^(1/p)``; conditionals are
    the concatenated player coordinates, or one player's if ``player`` is
    given.  1-D conditionals are compared exactly by sorting, clouds of at
    most 512 points by assignment, larger ones by the sliced surrogate.
    """
    check_compatible(state_a, state_b)
    total = 0.0
    for j, w in enumerate(state_a.env.weights):
        a = _joint_cloud(state_a, j, player)
        b = _joint_cloud(state_b, j, player)
        total += w * _conditional_distance(a, b, p) ** p
    return total ** (1.0 / p)


# ---------------------------------------------------------------------------
# entropy and scores


def kde_entropy(samples, bandwidth=None, bounds=None, max_queries=None, return_std_error=False):
    """Leave-one-out Gaussian-KDE estimate of differential entropy.

    ``-(1/n) sum_k log p_{-k}(x_k)`` with a Silverman bandwidth unless one is
    given.  ``bounds`` declares a 1-D support (reflection at the boundary).
    """
    x = _as_cloud(samples)
    if x.shape[0] < 10:
        raise DegenerateSample(f"need at least 10 samples, got {x.shape[0]}")
    kde = GaussianKDE(x, bandwidth=bandwidth, bounds=bounds)
    _, logp, _ = kde.loo_at_samples(max_queries=max_queries)
    h = float(-np.mean(logp))
    if return_std_error:
        return h, float(np.std(logp, ddof=1) / np.sqrt(logp.size))
    return h


def first_order_residual(state, game, sigma, max_queries=DEFAULT_MAX_QUERIES, snap=None):
    """Weighted mean of ``|drift + (sigma^2/2) score|^2`` per player.

    The score is the gradient of log of a Gaussian KDE of each conditional
    cloud, evaluated at the samples themselves.  The leave-one-out score is
    avoided here: at an isolated tail sample it is driven by a single
    neighbour and can be arbitrarily large.  Returns one :class:`MetricReport` per player.
    """
    snap = snap if snap is not None else snapshot(state)
    half_var = 0.5 * sigma * sigma
    reports = []
    for i in range(len(state.players)):
        total = 0.0
        var = 0.0
        for j, w in enumerate(state.env.weights):
            cloud = state.clouds[i][j]
            if cloud.shape[0] < MIN_RESIDUAL_PARTICLES:
                raise ScoreEstimationFailure(
                    f"{cloud.shape[0]} particles per cloud, need >= {MIN_RESIDUAL_PARTICLES}")
            try:
                kde = GaussianKDE(cloud)
                idx = kde._query(max_queries)
                score = kde.score(cloud[idx])
            except DegenerateSample as exc:
                raise ScoreEstimationFailure(f"player {i}, environment {j}: {exc}") from exc
            if not np.all(np.isfinite(score)):
                raise ScoreEstimationFailure(f"player {i}, environment {j}: non-finite score")
            drift = np.asarray(game.drift(i, snap, cloud[idx], j), dtype=float)
            r = np.sum((drift + half_var * score) ** 2, axis=1)
            total += w * float(np.mean(r))
            var += w * w * float(np.var(r, ddof=1)) / r.size
        reports.append(MetricReport("residual", total, math.sqrt(var), {"player": i}))
    return reports


def _energy(game, snap):
    fn = getattr(game, "energy", None)
    if fn is None:
        raise EnergyUnavailable("game has no energy()")
    value = fn(snap)
    if value is None:
        raise EnergyUnavailable("game energy() returned None")
    se_fn = getattr(game, "energy_std_error", None)
    se = float(se_fn(snap)) if se_fn is not None else 0.0
    return float(value), se


def free_energy(state, game, sigma, bounds=None, max_queries=DEFAULT_MAX_QUERIES, snap=None):
    """Estimate ``V = F + (sigma^2/2) H`` with H the relative entropy to Lebesgue.

    H is minus the KDE differential entropy, averaged over environment
    points with their weights and summed over players.  When the game has
    no energy the report carries the entropy part only and
    ``details["energy_available"]`` is False.
    """
    snap = snap if snap is not None else snapshot(state)
    half_var = 0.5 * sigma * sigma
    rel_ent = 0.0
    rel_var = 0.0
    for i in range(len(state.players)):
        for j, w in enumerate(state.env.weights):
            h, se = kde_entropy(state.clouds[i][j], bounds=bounds, max_queries=max_queries,
                                return_std_error=True)
            rel_ent -= w * h
            rel_var += (w * se) ** 2
    rel_se = math.sqrt(rel_var)
    details = {"entropy": rel_ent, "entropy_std_error": rel_se}
    try:
        f, f_se = _energy(game, snap)
    except EnergyUnavailable:
        details["energy_available"] = False
        return MetricReport("free_energy", half_var * rel_ent, half_var * rel_se, details)
    details.update(energy=f, energy_std_error=f_se, energy_available=True)
    value = f + half_var * rel_ent
    se = math.sqrt(f_se ** 2 + (half_var * rel_se) ** 2)
    return MetricReport("free_energy", value, se, details)
