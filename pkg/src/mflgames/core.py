"""Environment, particle-cloud state, the game-oracle contract and RNG streams.

A game on a random environment is simulated on a finite weighted support
``y_1, ..., y_J`` of the environment law.  For every player ``i`` and every
support point ``j`` the conditional law of the player's strategy is an
equal-weight cloud of ``n_particles`` points in ``R^{d_i}``.  Clouds of
player ``i`` are stored together as one array of shape ``(J, n, d_i)``.
"""
from __future__ import annotations

import csv
import functools
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import (
    BadInitializerSpec,
    EmptySupport,
    EnvironmentMismatch,
    FileFormatError,
    NegativeWeight,
    WeightSumOutOfRange,
)

__all__ = [
    "Environment",
    "PlayerSpec",
    "SystemState",
    "StateSnapshot",
    "GameOracle",
    "RngStream",
    "Initializer",
    "make_environment",
    "init_state",
    "snapshot",
    "read_particles_csv",
    "write_particles_csv",
    "read_environment_csv",
    "write_environment_csv",
]

_NORMALIZE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Environment:
    """Finite weighted support approximating the environment law.

    ``points`` holds the support as given (real vectors or opaque labels);
    ``values`` is the ``(J, dim_y)`` float array when every point is numeric,
    otherwise ``None``.
    """

    points: tuple
    weights: np.ndarray
    values: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.points)

    def __len__(self):
        return len(self.points)

    def same_as(self, other: "Environment") -> bool:
        if self is other:
            return True
        if self.size != other.size:
            return False
        if not np.array_equal(self.weights, other.weights):
            return False
        if self.values is not None and other.values is not None:
            return np.array_equal(self.values, other.values)
        return list(map(repr, self.points)) == list(map(repr, other.points))


def _as_point(p):
    if isinstance(p, str):
        return p
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"environment point must be a scalar or 1-D vector, got shape {arr.shape}")
    return arr


def make_environment(points: Sequence, weights: Sequence[float]) -> Environment:
    """Build a normalized :class:`Environment`.

    Weights within ``1e-9`` of summing to one are rescaled to sum exactly to
    one; anything further off raises :class:`WeightSumOutOfRange`.

    >>> env = make_environment([0.0], [1.0])
    >>> env.size, float(env.weights[0])
    (1, 1.0)
    """
    points = list(points)
    w = np.asarray(weights, dtype=float).ravel()
    if len(points) == 0 or w.size == 0:
        raise EmptySupport("environment needs at least one support point")
    if len(points) != w.size:
        raise ValueError(f"{len(points)} points but {w.size} weights")
    if not np.all(np.isfinite(w)):
        raise NegativeWeight("weights must be finite")
    if np.any(w < 0):
        raise NegativeWeight(f"negative weight at index {int(np.argmax(w < 0))}")
    total = float(w.sum())
    if abs(total - 1.0) > _NORMALIZE_TOL:
        raise WeightSumOutOfRange(f"weights sum to {total!r}, not 1")
    w = w / total

    parsed = [_as_point(p) for p in points]
    numeric = all(not isinstance(p, str) for p in parsed)
    values = None
    if numeric:
        dims = {p.size for p in parsed}
        if len(dims) != 1:
            raise ValueError(f"environment points have mixed dimensions {sorted(dims)}")
        values = np.stack(parsed).astype(float)
        if len({tuple(v) for v in values.tolist()}) != len(parsed):
            raise ValueError("environment points must be distinct")
        stored = tuple(float(v[0]) if v.size == 1 else tuple(v.tolist()) for v in values)
    else:
        if len(set(map(repr, points))) != len(points):
            raise ValueError("environment points must be distinct")
        stored = tuple(points)
    w.setflags(write=False)
    if values is not None:
        values.setflags(write=False)
    return Environment(points=stored, weights=w, values=values)


@dataclass(frozen=True)
class PlayerSpec:
    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"player dimension must be a positive integer, got {self.dim!r}")


@dataclass
class SystemState:
    """Particle clouds of all players on all environment points.

    ``clouds[i]`` has shape ``(J, n_particles, players[i].dim)``.  The
    environment marginal is fixed by construction: cloud ``j`` always carries
    weight ``env.weights[j]``.
    """

    env: Environment
    players: tuple
    clouds: list
    time: float = 0.0
    step: int = 0

    def __post_init__(self):
        self.players = tuple(self.players)
        if not self.players:
            raise ValueError("a state needs at least one player")
        self.validate()

    @property
    def n_particles(self) -> int:
        return self.clouds[0].shape[1]

    @property
    def n_players(self) -> int:
        return len(self.players)

    def validate(self):
        if len(self.clouds) != len(self.players):
            raise ValueError(f"{len(self.clouds)} cloud arrays for {len(self.players)} players")
        n = self.clouds[0].shape[1] if self.clouds[0].ndim == 3 else -1
        if n < 1:
            raise ValueError("clouds need at least one particle")
        for i, (arr, spec) in enumerate(zip(self.clouds, self.players)):
            expect = (self.env.size, n, spec.dim)
            if arr.shape != expect:
                raise ValueError(f"player {i} clouds have shape {arr.shape}, expected {expect}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"player {i} clouds contain non-finite coordinates")
        if self.time < 0:
            raise ValueError("time must be nonnegative")

    def cloud(self, player: int, env_index: int) -> np.ndarray:
        return self.clouds[player][env_index]

    def copy(self) -> "SystemState":
        return SystemState(self.env, self.players, [c.copy() for c in self.clouds], self.time, self.step)


_snapshot_ids = itertools.count()


class StateSnapshot:
    """Immutable copy of a state's clouds, shared by all drift calls of one step.

    ``key`` is unique per snapshot and lets oracles cache per-step work.
    """

    __slots__ = ("env", "players", "clouds", "time", "step", "key")

    def __init__(self, state: SystemState):
        clouds = []
        for arr in state.clouds:
            c = np.array(arr, dtype=float, copy=True)
            c.setflags(write=False)
            clouds.append(c)
        object.__setattr__(self, "env", state.env)
        object.__setattr__(self, "players", state.players)
        object.__setattr__(self, "clouds", tuple(clouds))
        object.__setattr__(self, "time", float(state.time))
        object.__setattr__(self, "step", int(state.step))
        object.__setattr__(self, "key", next(_snapshot_ids))

    def __setattr__(self, name, value):
        raise AttributeError("StateSnapshot is immutable")

    @property
    def n_particles(self) -> int:
        return self.clouds[0].shape[1]

    def cloud(self, player: int, env_index: int) -> np.ndarray:
        return self.clouds[player][env_index]

    def means(self, player: int) -> np.ndarray:
        """Per-environment cloud means of ``player``, shape ``(J, d)``."""
        return self.clouds[player].mean(axis=1)


def snapshot(state: SystemState) -> StateSnapshot:
    return StateSnapshot(state)


@runtime_checkable
class GameOracle(Protocol):
    """What the integrator needs from a game.

    ``drift(i, snap, x, j)`` returns the gradient in ``x`` of player ``i``'s
    linear functional derivative, evaluated at the snapshot's laws, for a
    batch ``x`` of shape ``(m, d_i)`` located at environment index ``j``
    (the point itself is ``snap.env.points[j]``).  It must be a pure function
    of its arguments.

    Oracles may also provide ``energy(snap) -> float`` (the potential value,
    when one exists) and ``gamma`` (the mean-field Lipschitz constant).
    """

    players: tuple

    def drift(self, i: int, snap: StateSnapshot, x: np.ndarray, j: int) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# random streams

_PURPOSE_INIT = 0
_PURPOSE_NOISE = 1


@functools.lru_cache(maxsize=4096)
def _philox_key(seed: int, purpose: int, player: int, env_index: int) -> tuple:
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=(purpose, player, env_index))
    return tuple(int(k) for k in ss.generate_state(2, np.uint64))


@dataclass(frozen=True)
class RngStream:
    """Counter-based normal variates for one (player, environment) pair.

    The Philox key is derived from ``(seed, purpose, player, env_index)`` and
    the block counter from the draw index, so any draw can be regenerated
    without replaying earlier ones.  Within a block the ``k``-th particle
    always receives the ``k``-th variate, independent of how many particles
    are drawn.
    """

    seed: int
    player: int
    env_index: int
    purpose: int = _PURPOSE_NOISE

    def generator(self, draw_index: int) -> np.random.Generator:
        key = np.array(_philox_key(self.seed, self.purpose, self.player, self.env_index), dtype=np.uint64)
        counter = np.array([0, 0, int(draw_index), 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def normals(self, draw_index: int, n: int, dim: int) -> np.ndarray:
        """Standard normals of shape ``(n, dim)``; row ``k`` belongs to particle ``k``."""
        return self.generator(draw_index).standard_normal(n * dim).reshape(n, dim)

    def particle_normal(self, draw_index: int, particle: int, dim: int) -> np.ndarray:
        return self.normals(draw_index, particle + 1, dim)[particle]


# ---------------------------------------------------------------------------
# initializers


@dataclass(frozen=True)
class Initializer:
    """Distribution used to populate clouds; see :func:`init_state`.

    ``kind`` is one of ``gaussian``, ``uniform``, ``point``, ``from_file``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def gaussian(cls, mean=0.0, std=1.0):
        return cls("gaussian", {"mean": mean, "std": std})

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0):
        return cls("uniform", {"lo": lo, "hi": hi})

    @classmethod
    def point(cls, x=0.0):
        return cls("point", {"x": x})

    @classmethod
    def from_file(cls, path):
        return cls("from_file", {"path": str(path)})

    @classmethod
    def parse(cls, spec: Any) -> "Initializer":
        if isinstance(spec, Initializer):
            return spec
        if isinstance(spec, dict):
            spec = dict(spec)
            kind = spec.pop("kind", None)
            if kind not in {"gaussian", "uniform", "point", "from_file"}:
                raise BadInitializerSpec(f"unknown initializer kind {kind!r}")
            allowed = {
                "gaussian": {"mean", "std"},
                "uniform": {"lo", "hi"},
                "point": {"x"},
                "from_file": {"path"},
            }[kind]
            extra = set(spec) - allowed
            if extra:
                raise BadInitializerSpec(f"{kind} initializer got unexpected keys {sorted(extra)}")
            return getattr(cls, kind)(**spec)
        raise BadInitializerSpec(f"cannot interpret initializer {spec!r}")


def _broadcast_param(value, dim, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise BadInitializerSpec(f"{name} has shape {arr.shape}, expected scalar or ({dim},)")
    return arr


def _sample_cloud(init: Initializer, rng_stream: RngStream, n: int, dim: int, player: int, env_index: int):
    p = init.params
    if init.kind == "gaussian":
        mean = _broadcast_param(p.get("mean", 0.0), dim, "mean")
        std = _broadcast_param(p.get("std", 1.0), dim, "std")
        if np.any(std < 0) or not np.all(np.isfinite(std)):
            raise BadInitializerSpec("gaussian std must be finite and nonnegative")
        return mean + std * rng_stream.normals(0, n, dim)
    if init.kind == "uniform":
        lo = _broadcast_param(p.get("lo", 0.0), dim, "lo")
        hi = _broadcast_param(p.get("hi", 1.0), dim, "hi")
        if np.any(hi < lo):
            raise BadInitializerSpec("uniform needs lo <= hi")
        u = rng_stream.generator(0).random(n * dim).reshape(n, dim)
        return lo + (hi - lo) * u
    if init.kind == "point":
        x = _broadcast_param(p.get("x", 0.0), dim, "x")
        return np.tile(x, (n, 1))
    if init.kind == "from_file":
        path = str(p["path"])
        if "{" in path:
            path = path.format(player=player, env=env_index, p=player, y=env_index)
        rows = read_particles_csv(path)
        if rows.shape[1] != dim:
            raise FileFormatError(f"{path}: {rows.shape[1]} columns, player dimension is {dim}")
        if rows.shape[0] == n:
            return rows.copy()
        idx = rng_stream.generator(0).integers(0, rows.shape[0], size=n)
        return rows[idx]
    raise BadInitializerSpec(f"unknown initializer kind {init.kind!r}")


def init_state(
    env: Environment,
    players: Sequence[PlayerSpec],
    n_particles: int,
    initializer,
    seed: int,
) -> SystemState:
    """Populate every (player, environment) cloud i.i.d. from ``initializer``.

    ``initializer`` is an :class:`Initializer`, a config dict, or a list of
    either (one per player).  The result depends only on the arguments.
    """
    players = tuple(p if isinstance(p, PlayerSpec) else PlayerSpec(int(p)) for p in players)
    if not players:
        raise ValueError("need at least one player")
    if int(n_particles) != n_particles or n_particles < 1:
        raise ValueError(f"n_particles must be a positive integer, got {n_particles!r}")
    n_particles = int(n_particles)
    if isinstance(initializer, (list, tuple)):
        if len(initializer) != len(players):
            raise BadInitializerSpec(f"{len(initializer)} initializers for {len(players)} players")
        inits = [Initializer.parse(s) for s in initializer]
    else:
        inits = [Initializer.parse(initializer)] * len(players)

    clouds = []
    for i, (spec, init) in enumerate(zip(players, inits)):
        arr = np.empty((env.size, n_particles, spec.dim))
        for j in range(env.size):
            stream = RngStream(seed, i, j, purpose=_PURPOSE_INIT)
            arr[j] = _sample_cloud(init, stream, n_particles, spec.dim, i, j)
        clouds.append(arr)
    return SystemState(env, players, clouds, 0.0, 0)


def check_compatible(a: SystemState, b: SystemState):
    if not a.env.same_as(b.env):
        raise EnvironmentMismatch("states live on different environments")
    if tuple(p.dim for p in a.players) != tuple(p.dim for p in b.players):
        raise EnvironmentMismatch("states have different player dimensions")


# ---------------------------------------------------------------------------
# CSV formats


def _fmt(x: float) -> str:
    return repr(float(x))


def write_particles_csv(path, cloud: np.ndarray):
    """One particle per row with header ``x0,x1,...``."""
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(cloud.shape[1])])
        for row in cloud:
            w.writerow([_fmt(v) for v in row])


def read_particles_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc
    if not rows:
        raise FileFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header != [f"x{k}" for k in range(len(header))] or not header:
        raise FileFormatError(f"{path}: header must be x0,x1,..., got {','.join(header)}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FileFormatError(f"{path}: no particle rows")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FileFormatError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data)):
        raise FileFormatError(f"{path}: non-finite coordinates")
    return data


def write_environment_csv(path, env: Environment):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if env.values is not None:
            dy = env.values.shape[1]
            ycols = ["y"] if dy == 1 else [f"y{k}" for k in range(dy)]
            w.writerow(ycols + ["weight"])
            for v, wt in zip(env.values, env.weights):
                w.writerow([_fmt(c) for c in v] + [_fmt(wt)])
        else:
            w.writerow(["y", "weight"])
            for p, wt in zip(env.points, env.weights):
                w.writerow([str(p), _fmt(wt)])


def read_environment_csv(path) -> Environment:
    """Read columns ``y...,weight``; non-numeric ``y`` cells become labels."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc
    if len(rows) < 2:
        raise FileFormatError(f"{path}: need a header and at least one row")
    header = [h.strip() for h in rows[0]]
    if header[-1] != "weight" or len(header) < 2 or not all(h.startswith("y") for h in header[:-1]):
        raise FileFormatError(f"{path}: header must be y...,weight, got {','.join(header)}")
    points, weights = [], []
    for r in rows[1:]:
        if len(r) != len(header):
            raise FileFormatError(f"{path}: row {r} has {len(r)} fields")
        try:
            weights.append(float(r[-1]))
        except ValueError as exc:
            raise FileFormatError(f"{path}: bad weight {r[-1]!r}") from exc
        ys = r[:-1]
        try:
            vals = [float(v) for v in ys]
            points.append(vals[0] if len(vals) == 1 else vals)
        except ValueError:
            if len(ys) != 1:
                raise FileFormatError(f"{path}: labels must occupy a single y column")
            points.append(ys[0])
    return make_environment(points, weights)
