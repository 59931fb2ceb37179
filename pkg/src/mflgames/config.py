"""Experiment configuration: schema checks, construction and execution.

A config is a YAML (or JSON) mapping with exactly one kind block among
``quadratic``, ``dynamic``, ``gan`` and ``contraction``, a ``run`` block with
the time-stepping parameters, and optional top-level ``seed``, ``output``,
``threads``, ``monitors``, ``environment`` and ``checkpoint_every`` keys.
See ``README.md`` for the full schema and ``mflgames/configs/`` for
examples.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .contraction import KappaProfile, eberle_constants, empirical_decay
from .core import Environment, Initializer, init_state, make_environment, read_environment_csv
from .errors import BadInitializerSpec, ConfigParseError, EnvironmentMismatch
from .games.dynamic import DynamicGame, dynamic_environment, lq_player
from .games.quadratic import QuadraticGame
from .gan import GanConfig, MHSettings, train
from .integrator import MONITORS, RunConfig, run, write_state

__all__ = ["KINDS", "BUNDLED", "load_config", "resolve_config_path", "Experiment", "parse_experiment"]

KINDS = ("quadratic", "dynamic", "gan", "contraction")
BUNDLED = Path(__file__).parent / "configs"
_TOP_KEYS = {"kind", "seed", "output", "threads", "monitors", "environment", "checkpoint_every", "run", *KINDS}


# ---------------------------------------------------------------------------
# loading


def resolve_config_path(name) -> Path:
    """A path on disk, or the name of a bundled config (``ou_anchor``, ``examples/gan_fig1``)."""
    p = Path(name)
    if p.is_file():
        return p
    stem = p.name[:-5] if p.name.endswith(".yaml") else p.name
    bundled = BUNDLED / f"{stem}.yaml"
    if bundled.is_file() and len(p.parts) <= 2:
        return bundled
    raise ConfigParseError(f"config file not found: {name}", path=str(name))


def load_config(path) -> dict:
    p = resolve_config_path(path)
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"cannot parse {p}: {exc}", path=str(p)) from exc
    if not isinstance(data, dict):
        raise ConfigParseError("top level must be a mapping", path=str(p))
    data.setdefault("_source", str(p))
    return data


# ---------------------------------------------------------------------------
# field helpers


def _num(block, key, path, default=None, positive=False, nonneg=False, integer=False, required=False):
    where = f"{path}.{key}"
    if key not in block or block[key] is None:
        if required:
            raise ConfigParseError("missing required key", path=where)
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigParseError(f"must be a number, got {v!r}", path=where)
    if not math.isfinite(v):
        raise ConfigParseError("must be finite", path=where)
    if integer and int(v) != v:
        raise ConfigParseError(f"must be an integer, got {v!r}", path=where)
    if positive and not v > 0:
        raise ConfigParseError("must be > 0", path=where)
    if nonneg and v < 0:
        raise ConfigParseError("must be >= 0", path=where)
    return int(v) if integer else float(v)


def _block(cfg, key, path=None, required=True):
    where = path or key
    if key not in cfg or cfg[key] is None:
        if required:
            raise ConfigParseError("missing required block", path=where)
        return {}
    b = cfg[key]
    if not isinstance(b, dict):
        raise ConfigParseError("must be a mapping", path=where)
    return b


def _unknown(block, allowed, path):
    extra = sorted(set(block) - set(allowed))
    if extra:
        raise ConfigParseError(f"unknown keys {extra}", path=path)


def _run_config(cfg, seed, threads, positive_steps=False):
    b = _block(cfg, "run")
    _unknown(b, {"sigma", "dt", "n_steps", "record_every"}, "run")
    return RunConfig(
        sigma=_num(b, "sigma", "run", positive=True, required=True),
        dt=_num(b, "dt", "run", positive=True, required=True),
        n_steps=_num(b, "n_steps", "run", nonneg=True, integer=True, required=True),
        record_every=_num(b, "record_every", "run", default=1, positive=True, integer=True),
        seed=seed,
        threads=threads,
    )


def _environment(cfg) -> Environment:
    b = cfg.get("environment")
    if b is None:
        return make_environment([0.0], [1.0])
    if not isinstance(b, dict):
        raise ConfigParseError("must be a mapping", path="environment")
    _unknown(b, {"points", "weights", "file"}, "environment")
    if "file" in b:
        path = Path(b["file"])
        if not path.is_file():
            raise ConfigParseError(f"environment file not found: {path}", path="environment.file")
        return read_environment_csv(path)
    if "points" not in b:
        raise ConfigParseError("needs points and weights, or file", path="environment")
    pts = b["points"]
    w = b.get("weights")
    if w is None:
        w = [1.0 / len(pts)] * len(pts) if pts else []
    return make_environment(pts, w)


def _initializer(spec, path):
    try:
        init = Initializer.parse(spec)
    except BadInitializerSpec as exc:
        raise ConfigParseError(str(exc), path=path) from exc
    if init.kind == "from_file":
        raw = init.params["path"]
        probe = raw.format(player=0, env=0, p=0, y=0) if "{" in raw else raw
        if not Path(probe).is_file():
            raise ConfigParseError(f"initializer file not found: {probe}", path=path)
    return init


def _monitors(cfg, allowed=None):
    mons = cfg.get("monitors", [])
    if not isinstance(mons, list):
        raise ConfigParseError("must be a list", path="monitors")
    out = []
    for k, m in enumerate(mons):
        name = m if isinstance(m, str) else (m.get("name") if isinstance(m, dict) else None)
        if name not in MONITORS:
            raise ConfigParseError(f"unknown monitor {name!r}; choose from {sorted(MONITORS)}", path=f"monitors[{k}]")
        if allowed is not None and name not in allowed:
            raise ConfigParseError(f"monitor {name!r} is not available for this kind", path=f"monitors[{k}]")
        out.append(m)
    return out


def _quadratic_game(b, path, env):
    _unknown(b, {"stiffness", "coupling", "modulation", "dims", "zero_sum", "n_particles", "init"}, path)
    if "stiffness" not in b:
        raise ConfigParseError("missing required key", path=f"{path}.stiffness")
    try:
        game = QuadraticGame(b["stiffness"], b.get("coupling"), b.get("modulation"), b.get("dims"),
                             bool(b.get("zero_sum", False)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, EnvironmentMismatch):
            raise
        raise ConfigParseError(str(exc), path=path) from exc
    game.check_environment(env)
    return game


def _dynamic_game(b, path, env_cfg):
    _unknown(b, {"horizon", "n_cells", "substeps", "scheme", "players", "n_particles", "init"}, path)
    horizon = _num(b, "horizon", path, positive=True, required=True)
    n_cells = _num(b, "n_cells", path, positive=True, integer=True, required=True)
    substeps = _num(b, "substeps", path, default=4, positive=True, integer=True)
    scheme = b.get("scheme", "rk4")
    if scheme not in ("rk4", "euler"):
        raise ConfigParseError("must be 'rk4' or 'euler'", path=f"{path}.scheme")
    env = dynamic_environment(horizon, n_cells) if env_cfg is None else env_cfg
    players = b.get("players")
    if not isinstance(players, list) or not players:
        raise ConfigParseError("must be a nonempty list", path=f"{path}.players")
    dyn = []
    for k, p in enumerate(players):
        where = f"{path}.players[{k}]"
        if not isinstance(p, dict) or set(p) != {"lq"} or not isinstance(p["lq"], dict):
            raise ConfigParseError("each player must be {lq: {A, B, R, Q, W, theta0, target}}", path=where)
        lq = p["lq"]
        _unknown(lq, {"A", "B", "R", "Q", "W", "theta0", "target"}, f"{where}.lq")
        try:
            dyn.append(lq_player(lq.get("A", 0.0), lq.get("B", 1.0), lq.get("R"), lq.get("Q"), lq.get("W"),
                                 lq.get("theta0", 0.0), lq.get("target")))
        except (TypeError, ValueError) as exc:
            raise ConfigParseError(str(exc), path=f"{where}.lq") from exc
    return DynamicGame(dyn, horizon, env, substeps=substeps, scheme=scheme)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class Experiment:
    kind: str
    config: dict
    seed: int
    threads: int
    output: str | None

    # filled by parse_experiment
    env: Environment | None = None
    game: object = None
    run_cfg: RunConfig | None = None
    n_particles: int = 0
    init: object = None
    monitors: list | None = None
    extra: dict | None = None

    def echo(self) -> dict:
        """Resolved config with command-line overrides applied."""
        out = {k: v for k, v in self.config.items() if not k.startswith("_")}
        out["seed"] = self.seed
        out["threads"] = self.threads
        out["kind"] = self.kind
        if self.output is not None:
            out["output"] = self.output
        return out

    # -- cost estimate ---------------------------------------------------------

    def estimate(self) -> dict:
        if self.kind == "gan":
            g = self.extra["gan"]
            dim = g.z_dim + 2
            mem = 8 * (3 * g.n_particles * dim + 2 * g.n_gen_samples * g.z_dim + g.n_data_samples
                       + g.n_eval_samples)
            per_step = {"mh_log_density_evals": int(g.n_gen_samples / (1 - g.mh.burn_in)) * g.mh.thin,
                        "feature_gradient_evals": 2 * g.n_particles}
            steps = g.n_steps
        else:
            dims = sum(p.dim for p in self.game.players)
            copies = 8 if self.kind == "contraction" else 4
            mem = 8 * copies * self.env.size * self.n_particles * dims
            per_step = {"drift_evals": self.env.size * self.n_particles * len(self.game.players)
                        * (2 if self.kind == "contraction" else 1)}
            if self.kind == "dynamic":
                per_step["ode_substeps"] = 2 * self.env.size * self.game.substeps * len(self.game.players)
            steps = self.run_cfg.n_steps
        return {"estimated_memory_bytes": int(mem), "per_step": per_step, "n_steps": int(steps)}

    # -- execution ---------------------------------------------------------------

    def execute(self, out_dir: Path) -> dict:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config_echo.yaml", "w") as fh:
            yaml.safe_dump(self.echo(), fh, sort_keys=True)
        summary = getattr(self, f"_run_{self.kind}")(out_dir)
        summary = {"kind": self.kind, "seed": self.seed, **summary}
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return summary

    def _initial_state(self, seed=None, init=None):
        return init_state(self.env, self.game.players, self.n_particles, init or self.init,
                          self.seed if seed is None else seed)

    def _resolved_monitors(self, state):
        out = []
        for m in self.monitors:
            if isinstance(m, dict) and m.get("name") == "wasserstein":
                m = dict(m)
                if m.get("reference", "initial") != "initial":
                    raise ConfigParseError("only reference: initial is supported", path="monitors")
                m["reference"] = state
            out.append(m)
        return out

    def _trajectory_run(self, out_dir):
        state = self._initial_state()
        ckpt = self.config.get("checkpoint_every")
        traj = run(state, self.game, self.run_cfg, self._resolved_monitors(state),
                   checkpoint_every=ckpt, checkpoint_dir=(out_dir / "checkpoints") if ckpt else None)
        traj.to_csv(out_dir / "diagnostics.csv")
        write_state(out_dir / "final_state", traj.final_state)
        final = {}
        for r in traj.records:
            if r.t == traj.times[-1]:
                final[f"{r.metric}[{r.player}]"] = r.value
        return traj, {"final_time": traj.times[-1], "n_records": len(traj.times),
                      "monitor_failures": traj.monitor_failures, "final": final}

    def _run_quadratic(self, out_dir):
        traj, summary = self._trajectory_run(out_dir)
        g = self.game
        if g.n_players == 1 and not np.any(g.coupling) and g.players[0].dim == 1:
            target = [g.invariant_variance(self.run_cfg.sigma, j) for j in range(self.env.size)]
            cloud = traj.final_state.clouds[0]
            emp = [float(np.var(cloud[j, :, 0], ddof=1)) for j in range(self.env.size)]
            summary["invariant_variance"] = target
            summary["empirical_variance"] = emp
            summary["variance_relative_error"] = [abs(e / t - 1) for e, t in zip(emp, target)]
        return summary

    def _run_dynamic(self, out_dir):
        traj, summary = self._trajectory_run(out_dir)
        from .core import snapshot

        snap = snapshot(traj.final_state)
        for i in range(len(self.game.players)):
            self.game.write_paths_csv(out_dir / f"paths_p{i}.csv", i, snap)
        summary["objective"] = [self.game.objective(i, snap) for i in range(len(self.game.players))]
        return summary

    def _run_contraction(self, out_dir):
        x = self.extra
        consts = x["consts"]
        with open(out_dir / "constants.csv", "w") as fh:
            fh.write("r,phi,Phi,f\n")
            for row in zip(consts.r, consts.phi, consts.Phi, consts.f):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        summary = {"R1": consts.R1, "R2": consts.R2, "c": consts.c, "phi_R1": consts.phi_R1,
                   "gamma": consts.gamma, "rate_bound": consts.rate_bound, "contractive": consts.contractive}
        if self.game is not None:
            a = self._initial_state(self.seed, x["init_a"])
            b = self._initial_state(self.seed + 1, x["init_b"])
            rep = empirical_decay(self.game, a, b, self.run_cfg, consts)
            rep.to_csv(out_dir / "decay.csv")
            rep.to_json(out_dir / "decay.json")
            summary["decay"] = rep.summary()
        return summary

    def _run_gan(self, out_dir):
        rep = train(self.extra["gan"])
        rep.write(out_dir)
        s = rep.summary()
        s.pop("config")
        s["run_hash"] = rep.run_hash()
        return s


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def parse_experiment(cfg: dict, seed=None, threads=None, output=None) -> Experiment:
    """Check a config mapping and build its game, without stepping anything."""
    cfg = copy.deepcopy(cfg)
    _unknown({k: v for k, v in cfg.items() if not k.startswith("_")}, _TOP_KEYS, "config")
    present = [k for k in KINDS if k in cfg]
    if len(present) != 1:
        raise ConfigParseError(f"exactly one of {list(KINDS)} must be present, found {present}", path="config")
    kind = present[0]
    if "kind" in cfg and cfg["kind"] != kind:
        raise ConfigParseError(f"says {cfg['kind']!r} but the block is {kind!r}", path="kind")
    if seed is None:
        seed = _num(cfg, "seed", "config", default=0, nonneg=True, integer=True)
    if threads is None:
        threads = _num(cfg, "threads", "config", default=1, positive=True, integer=True)
    if output is None:
        output = cfg.get("output")
    exp = Experiment(kind, cfg, int(seed), int(threads), output)
    body = _block(cfg, kind)

    if kind == "gan":
        _unknown(body, {"lam", "n_particles", "data", "n_gen_samples", "n_data_samples", "n_eval_samples",
                        "mh", "z_dim", "init_std", "entropy_column", "error_data"}, "gan")
        rc = _run_config(cfg, exp.seed, exp.threads)
        mh = body.get("mh") or {}
        if not isinstance(mh, dict):
            raise ConfigParseError("must be a mapping", path="gan.mh")
        try:
            gc = GanConfig(
                sigma=rc.sigma, lam=_num(body, "lam", "gan", positive=True, required=True), dt=rc.dt,
                n_steps=rc.n_steps,
                n_particles=_num(body, "n_particles", "gan", default=3000, positive=True, integer=True),
                data=body.get("data", {"distribution": "exponential", "rate": 1.0}),
                n_gen_samples=_num(body, "n_gen_samples", "gan", default=20000, positive=True, integer=True),
                n_data_samples=_num(body, "n_data_samples", "gan", default=20000, positive=True, integer=True),
                n_eval_samples=_num(body, "n_eval_samples", "gan", default=100000, positive=True, integer=True),
                mh=MHSettings(**mh),
                z_dim=_num(body, "z_dim", "gan", default=1, positive=True, integer=True),
                init_std=_num(body, "init_std", "gan", default=1.0, positive=True),
                seed=exp.seed, threads=exp.threads,
                entropy_column=bool(body.get("entropy_column", True)),
                error_data=body.get("error_data", "fixed"),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigParseError):
                raise
            raise ConfigParseError(str(exc), path="gan") from exc
        data = gc.data
        if not isinstance(data, dict):
            raise ConfigParseError("must be a mapping", path="gan.data")
        if "file" in data and not Path(data["file"]).is_file():
            raise ConfigParseError(f"data file not found: {data['file']}", path="gan.data.file")
        if "file" not in data and data.get("distribution") not in ("exponential", "gaussian"):
            raise ConfigParseError("distribution must be 'exponential' or 'gaussian', or give file",
                                   path="gan.data")
        exp.run_cfg = rc
        exp.extra = {"gan": gc}
        return exp

    exp.run_cfg = _run_config(cfg, exp.seed, exp.threads)
    if kind == "quadratic":
        exp.env = _environment(cfg)
        exp.game = _quadratic_game(body, "quadratic", exp.env)
    elif kind == "dynamic":
        env_cfg = _environment(cfg) if cfg.get("environment") is not None else None
        exp.game = _dynamic_game(body, "dynamic", env_cfg)
        exp.env = exp.game.env
    else:
        _unknown(body, {"game", "kappa", "gamma", "n_grid", "n_particles", "init_a", "init_b"}, "contraction")
        exp.env = _environment(cfg)
        gspec = body.get("game")
        if gspec is not None:
            if not isinstance(gspec, dict):
                raise ConfigParseError("must be a mapping", path="contraction.game")
            exp.game = _quadratic_game(gspec, "contraction.game", exp.env)
        if "kappa" in body:
            try:
                kappa = KappaProfile.parse(body["kappa"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigParseError(f"bad kappa profile: {exc}", path="contraction.kappa") from exc
        elif exp.game is not None:
            kappa = KappaProfile.constant(exp.game.kappa_constant())
        else:
            raise ConfigParseError("needs kappa or game", path="contraction")
        gamma = _num(body, "gamma", "contraction", nonneg=True)
        if gamma is None:
            gamma = exp.game.gamma if exp.game is not None else 0.0
        consts = eberle_constants(kappa, exp.run_cfg.sigma, gamma,
                                  n_grid=_num(body, "n_grid", "contraction", default=4096, positive=True, integer=True))
        exp.extra = {
            "consts": consts,
            "init_a": _initializer(body.get("init_a", {"kind": "gaussian", "mean": -2.0, "std": 1.0}), "contraction.init_a"),
            "init_b": _initializer(body.get("init_b", {"kind": "gaussian", "mean": 2.0, "std": 1.0}), "contraction.init_b"),
        }
        exp.n_particles = _num(body, "n_particles", "contraction", default=10000, positive=True, integer=True)
        exp.monitors = []
        return exp

    exp.n_particles = _num(body, "n_particles", kind, required=True, positive=True, integer=True)
    exp.init = _initializer(body.get("init", {"kind": "gaussian", "mean": 0.0, "std": 1.0}), f"{kind}.init")
    exp.monitors = _monitors(cfg)
    ck = _num(cfg, "checkpoint_every", "config", positive=True, integer=True)
    if ck is not None:
        exp.config["checkpoint_every"] = ck
    return exp
