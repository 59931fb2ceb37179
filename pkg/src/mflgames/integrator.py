"""Euler-Maruyama integration of the mean-field Langevin particle system.

Every step takes one snapshot of all clouds, evaluates each player's drift
on each environment cloud against that snapshot, and adds Brownian
increments from the counter-based streams of :mod:`mflgames.core`.  The
result therefore does not depend on how the (player, environment) blocks
are scheduled across threads.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    RngStream,
    SystemState,
    read_particles_csv,
    snapshot,
    write_particles_csv,
)
from .errors import FileFormatError, MonitorFailure, NonFiniteDrift, NonFiniteState
from .metrics import (
    DiagnosticRecord,
    avg_wasserstein,
    first_order_residual,
    free_energy,
    write_diagnostics_csv,
)

__all__ = [
    "RunConfig",
    "Trajectory",
    "mfl_step",
    "run",
    "moment",
    "write_state",
    "read_state",
    "BLOWUP_RADIUS",
]

BLOWUP_RADIUS = 1e8


@dataclass(frozen=True)
class RunConfig:
    """Time stepping parameters.

    ``sigma = 0`` gives the deterministic flow; ``n_steps = 0`` only records
    the initial state.
    """

    sigma: float
    dt: float
    n_steps: int
    record_every: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be a finite nonnegative number, got {self.sigma!r}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValueError(f"n_steps must be a nonnegative integer, got {self.n_steps!r}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError(f"record_every must be a positive integer, got {self.record_every!r}")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ValueError(f"threads must be a positive integer, got {self.threads!r}")


def _trusted_state(env, players, clouds, time, step):
    # skips SystemState validation; callers have already checked the clouds
    st = object.__new__(SystemState)
    st.env, st.players, st.clouds, st.time, st.step = env, players, clouds, time, step
    return st


def _first_bad(mask):
    k, c = np.argwhere(mask)[0]
    return int(k)


def _advance_block(state, snap, game, cfg, step_index, i, j):
    x = state.clouds[i][j]
    n, d = x.shape
    drift = np.asarray(game.drift(i, snap, x, j), dtype=float)
    if drift.shape != (n, d):
        drift = np.broadcast_to(drift, (n, d))
    bad = ~np.isfinite(drift)
    if bad.any():
        raise NonFiniteDrift(i, j, _first_bad(bad), step_index)
    new = x - drift * cfg.dt
    if cfg.sigma > 0:
        new = new + (cfg.sigma * math.sqrt(cfg.dt)) * RngStream(cfg.seed, i, j).normals(step_index, n, d)
    bad = ~np.isfinite(new)
    if bad.any():
        raise NonFiniteState(i, j, _first_bad(bad), step_index)
    big = np.abs(new) > BLOWUP_RADIUS
    if big.any():
        raise NonFiniteState(i, j, _first_bad(big), step_index, reason="blown-up")
    return new


def mfl_step(state: SystemState, game, cfg: RunConfig, step_index: int, executor=None) -> SystemState:
    """Advance all clouds by one Euler-Maruyama step of length ``cfg.dt``.

    ``x <- x - drift(i, snap, x, j) dt + sigma sqrt(dt) xi`` where ``snap``
    is taken once before any particle moves and ``xi`` comes from the
    stream ``(cfg.seed, i, j)`` at counter ``step_index``.
    """
    snap = snapshot(state)
    blocks = [(i, j) for i in range(len(state.players)) for j in range(state.env.size)]
    if executor is not None and len(blocks) > 1:
        results = list(executor.map(lambda ij: _advance_block(state, snap, game, cfg, step_index, *ij), blocks))
    else:
        results = [_advance_block(state, snap, game, cfg, step_index, i, j) for i, j in blocks]
    clouds = []
    it = iter(results)
    for i, spec in enumerate(state.players):
        arr = np.empty_like(state.clouds[i])
        for j in range(state.env.size):
            arr[j] = next(it)
        clouds.append(arr)
    return _trusted_state(state.env, state.players, clouds, state.time + cfg.dt, step_index + 1)


def moment(state: SystemState, q: float) -> float:
    """``sum_j w_j mean_k |x_{j,k}|^q`` over the concatenated player coordinates."""
    if not q > 0:
        raise ValueError("q must be positive")
    total = 0.0
    for j, w in enumerate(state.env.weights):
        x = np.concatenate([c[j] for c in state.clouds], axis=1)
        total += w * float(np.mean(np.linalg.norm(x, axis=1) ** q))
    return total


# ---------------------------------------------------------------------------
# monitors


def _mon_moments(state, snap, game, cfg, qs=(1, 2, 4)):
    return [(f"moment_q{q:g}", "all", moment(state, q), None) for q in qs]


def _mon_mean(state, snap, game, cfg):
    out = []
    for i in range(len(state.players)):
        m = np.tensordot(state.env.weights, state.clouds[i].mean(axis=1), axes=1)
        for k, v in enumerate(np.atleast_1d(m)):
            out.append((f"mean_{k}", str(i), float(v), None))
    return out


def _mon_variance(state, snap, game, cfg):
    """Weighted conditional variance, summed over coordinates."""
    out = []
    for i in range(len(state.players)):
        c = state.clouds[i]
        per_env = c.var(axis=1, ddof=1).sum(axis=1) if c.shape[1] > 1 else np.zeros(c.shape[0])
        out.append(("variance", str(i), float(np.dot(state.env.weights, per_env)), None))
    return out


def _mon_energy(state, snap, game, cfg):
    return [("energy", "all", float(game.energy(snap)), None)]


def _mon_free_energy(state, snap, game, cfg, bounds=None):
    rep = free_energy(state, game, cfg.sigma, bounds=bounds, snap=snap)
    out = [("free_energy", "all", rep.value, rep.std_error),
           ("entropy", "all", rep.details["entropy"], rep.details["entropy_std_error"])]
    if rep.details.get("energy_available"):
        out.append(("energy", "all", rep.details["energy"], rep.details["energy_std_error"]))
    return out


def _mon_residual(state, snap, game, cfg):
    return [("residual", str(r.details["player"]), r.value, r.std_error)
            for r in first_order_residual(state, game, cfg.sigma, snap=snap)]


def _mon_wasserstein(state, snap, game, cfg, reference=None, p=1):
    if reference is None:
        raise MonitorFailure("wasserstein monitor needs a reference state")
    return [(f"wbar{p:g}", "all", avg_wasserstein(state, reference, p), None)]


MONITORS = {
    "moments": _mon_moments,
    "mean": _mon_mean,
    "variance": _mon_variance,
    "energy": _mon_energy,
    "free_energy": _mon_free_energy,
    "residual": _mon_residual,
    "wasserstein": _mon_wasserstein,
}


def _resolve_monitor(spec):
    """A monitor is a name, ``{"name": ..., **options}``, or a callable."""
    if callable(spec):
        return getattr(spec, "__name__", "custom"), spec
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name")
    if name not in MONITORS:
        raise ValueError(f"unknown monitor {name!r}; choose from {sorted(MONITORS)}")
    fn = MONITORS[name]
    return name, (lambda st, sn, g, c: fn(st, sn, g, c, **spec)) if spec else fn


@dataclass
class Trajectory:
    """Recorded times, diagnostic records and the final state of a run."""

    times: list = field(default_factory=list)
    records: list = field(default_factory=list)
    final_state: SystemState | None = None
    checkpoints: dict = field(default_factory=dict)
    monitor_failures: int = 0

    def series(self, metric, player="all"):
        """``(t, value, std_error)`` arrays of one metric."""
        rows = [r for r in self.records if r.metric == metric and r.player == str(player)]
        t = np.array([r.t for r in rows])
        v = np.array([r.value for r in rows])
        se = np.array([np.nan if r.std_error is None else r.std_error for r in rows])
        return t, v, se

    def to_csv(self, path):
        write_diagnostics_csv(path, self.records)


def _record(traj, monitors, state, game, cfg):
    snap = snapshot(state)
    traj.times.append(state.time)
    for name, fn in monitors:
        try:
            rows = fn(state, snap, game, cfg)
        except Exception as exc:  # noqa: BLE001 - monitor errors are non-fatal by contract
            traj.monitor_failures += 1
            warnings.warn(f"monitor {name} failed at t={state.time}: {exc}", RuntimeWarning, stacklevel=3)
            traj.records.append(DiagnosticRecord(state.time, name, "all", float("nan"), None))
            continue
        for metric, player, value, se in rows:
            traj.records.append(DiagnosticRecord(state.time, metric, player, float(value),
                                                 None if se is None else float(se)))


def run(state: SystemState, game, cfg: RunConfig, monitors=(), checkpoint_every=None,
        checkpoint_dir=None, callback=None) -> Trajectory:
    """Apply :func:`mfl_step` ``cfg.n_steps`` times, recording monitors.

    Monitors are evaluated on the initial state, every ``cfg.record_every``
    steps and on the final state.  A failing monitor records NaN, emits a
    warning and increments ``Trajectory.monitor_failures``.  With
    ``checkpoint_every`` set, states are kept in ``Trajectory.checkpoints``
    and, if ``checkpoint_dir`` is given, written as particle CSVs to
    ``checkpoint_dir/step_<k>/``.
    """
    mons = [_resolve_monitor(m) for m in monitors]
    traj = Trajectory()
    _record(traj, mons, state, game, cfg)
    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        start = state.step
        for k in range(cfg.n_steps):
            state = mfl_step(state, game, cfg, start + k, executor=executor)
            done = k + 1
            if done % cfg.record_every == 0 or done == cfg.n_steps:
                _record(traj, mons, state, game, cfg)
            if checkpoint_every and done % checkpoint_every == 0:
                traj.checkpoints[state.step] = state
                if checkpoint_dir is not None:
                    write_state(Path(checkpoint_dir) / f"step_{state.step}", state)
            if callback is not None:
                callback(state)
    finally:
        if executor is not None:
            executor.shutdown()
    traj.final_state = state
    return traj


# ---------------------------------------------------------------------------
# checkpoint files


def write_state(directory, state: SystemState):
    """One ``state_p{i}_y{j}.csv`` particle file per (player, environment index)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, arr in enumerate(state.clouds):
        for j in range(state.env.size):
            write_particles_csv(directory / f"state_p{i}_y{j}.csv", arr[j])


def read_state(directory, env, players, time=0.0, step=0) -> SystemState:
    directory = Path(directory)
    clouds = []
    for i, spec in enumerate(players):
        blocks = []
        for j in range(env.size):
            rows = read_particles_csv(directory / f"state_p{i}_y{j}.csv")
            if rows.shape[1] != spec.dim:
                raise FileFormatError(f"state_p{i}_y{j}.csv has {rows.shape[1]} columns, expected {spec.dim}")
            blocks.append(rows)
        if len({b.shape[0] for b in blocks}) != 1:
            raise FileFormatError(f"player {i} checkpoint files have different particle counts")
        clouds.append(np.stack(blocks))
    return SystemState(env, players, clouds, time, step)
