"""Reflection-coupling contraction constants and an empirical decay harness.

Given a profile ``kappa`` bounding the drift's monotonicity,

    phi(r) = exp(-1/(2 sigma^2) int_0^r u kappa^+(u) du),   Phi(r) = int_0^r phi,
    1/c    = int_0^{R2} Phi / phi,
    f(r)   = int_0^r phi(s) g(min(s, R2)) ds,   g(r) = 1 - (c/2) int_0^r Phi / phi,

and the average 1-Wasserstein distance of two solutions decays at least like
``exp((2 gamma - c sigma^2) t) (2 / phi(R1))``.  The harness runs two
systems driven by the same Brownian increments (synchronous coupling, not
the reflection coupling of the proof) and compares their distance with the
bound.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import KappaNotEventuallyNegative, QuadratureFailure
from .integrator import mfl_step
from .metrics import avg_wasserstein

__all__ = [
    "KappaProfile",
    "ContractionConstants",
    "DecayReport",
    "eberle_constants",
    "contraction_bound",
    "empirical_decay",
    "fode_violation",
    "bound_f_holds",
]

DEFAULT_GRID = 4096
_BISECT_TOL = 1e-10
_RTOL = 1e-12
_ATOL = 1e-15


# ---------------------------------------------------------------------------
# kappa profiles


@dataclass(frozen=True)
class KappaProfile:
    """Named family of functions ``kappa : (0, inf) -> R``.

    ``constant(K)`` is ``-K``; ``piecewise_linear(knots)`` interpolates
    ``(r, kappa)`` pairs and is constant beyond the outer knots;
    ``quadratic_well(a, b)`` is ``b - a r^2 / 4``, the profile of the
    double-well drift ``a x^3 - b x``.
    """

    family: str
    params: tuple
    breakpoints: tuple = ()
    scale: float = 1.0

    @classmethod
    def constant(cls, K):
        return cls("constant", (-float(K),), (), 1.0)

    @classmethod
    def piecewise_linear(cls, knots):
        pts = sorted((float(r), float(k)) for r, k in knots)
        if len(pts) < 1 or pts[0][0] < 0:
            raise ValueError("knots must be (r >= 0, kappa) pairs")
        rs = tuple(r for r, _ in pts)
        if len(set(rs)) != len(rs):
            raise ValueError("knot abscissae must be distinct")
        return cls("piecewise_linear", tuple(pts), tuple(r for r in rs if r > 0), max(1.0, rs[-1]))

    @classmethod
    def quadratic_well(cls, a, b):
        a, b = float(a), float(b)
        if not a > 0:
            raise ValueError("quadratic_well needs a > 0")
        return cls("quadratic_well", (a, b), (), max(1.0, 2.0 * math.sqrt(max(b, 0.0) / a)))

    @classmethod
    def parse(cls, spec):
        if isinstance(spec, KappaProfile):
            return spec
        spec = dict(spec)
        family = spec.pop("family", None)
        if family == "constant":
            return cls.constant(spec["K"])
        if family == "piecewise_linear":
            return cls.piecewise_linear(spec["knots"])
        if family == "quadratic_well":
            return cls.quadratic_well(spec["a"], spec["b"])
        raise ValueError(f"unknown kappa family {family!r}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "constant":
            return np.full_like(r, self.params[0])
        if self.family == "piecewise_linear":
            rs = np.array([p[0] for p in self.params])
            ks = np.array([p[1] for p in self.params])
            return np.interp(r, rs, ks)
        a, b = self.params
        return b - 0.25 * a * r * r

    def tail_sup(self, r):
        """``sup_{s >= r} kappa(s)`` for each entry of ``r``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if self.family == "constant":
            return np.full_like(r, self.params[0])
        if self.family == "quadratic_well":
            return self(r)  # decreasing in r
        rs = np.array([p[0] for p in self.params])
        ks = np.array([p[1] for p in self.params])
        # the sup over [r, inf) of a piecewise-linear function is attained at r or a later knot
        later = np.array([np.max(ks[rs >= x], initial=-np.inf) for x in r])
        return np.maximum(self(r), np.maximum(later, ks[-1]))

    def limsup(self):
        if self.family == "constant":
            return self.params[0]
        if self.family == "piecewise_linear":
            return self.params[-1][1]
        return -math.inf


# ---------------------------------------------------------------------------
# constants


@dataclass
class ContractionConstants:
    R1: float
    R2: float
    c: float
    phi_R1: float
    r: np.ndarray
    phi: np.ndarray
    Phi: np.ndarray
    f: np.ndarray
    g: np.ndarray
    sigma: float
    gamma: float = 0.0
    kappa: KappaProfile | None = field(default=None, repr=False)

    @property
    def rate_bound(self) -> float:
        """``2 gamma - c sigma^2``; negative means contractive."""
        return float(2.0 * self.gamma - self.c * self.sigma ** 2)

    @property
    def contractive(self) -> bool:
        return bool(self.rate_bound < 0)

    @property
    def prefactor(self) -> float:
        return 2.0 / self.phi_R1

    def fprime(self):
        """``f'(r) = phi(r) g(min(r, R2))`` on the grid."""
        return self.phi * self.g

    def check(self) -> dict:
        """Structural invariants on the grid."""
        fp = self.fprime()
        return {
            "ordered_radii": 0.0 <= self.R1 <= self.R2,
            "c_positive": self.c > 0,
            "phi_at_zero": self.phi[0] == 1.0,
            "phi_nonincreasing": bool(np.all(np.diff(self.phi) <= 1e-10)),  # ODE tolerance
            "Phi_increasing": bool(np.all(np.diff(self.Phi) > 0)),
            "f_increasing": bool(np.all(np.diff(self.f) > 0)),
            "f_concave": bool(np.all(np.diff(fp) <= 1e-12)),
        }


def _find_threshold(pred, lo, hi):
    """Smallest R in [lo, hi] with ``pred(R)`` true, for a monotone predicate."""
    if pred(lo):
        return lo
    while not pred(hi):
        hi *= 2.0
        if hi > 1e12:
            raise KappaNotEventuallyNegative("no finite threshold found")
    for _ in range(400):
        if hi - lo <= _BISECT_TOL * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _radii(kappa: KappaProfile, sigma):
    tail = np.geomspace(2.0 * kappa.scale, 1e3 * kappa.scale, 512)
    if not (kappa.limsup() < 0 and np.all(kappa(tail) < 0)):
        raise KappaNotEventuallyNegative(f"{kappa.family} profile is not negative on [{2 * kappa.scale}, {1e3 * kappa.scale}]")
    R1 = _find_threshold(lambda R: float(kappa.tail_sup(R)[0]) <= 0.0, 0.0, kappa.scale)
    four_var = 4.0 * sigma * sigma

    def pred(R):
        return R > R1 and float(kappa.tail_sup(R)[0]) * R * (R - R1) <= -four_var

    R2 = _find_threshold(pred, R1, max(kappa.scale, R1 + 1.0))
    return R1, R2


def _make_grid(R1, R2, n):
    n_log = n // 2
    inner = np.geomspace(1e-6 * R2, R2, n_log)
    outer = np.linspace(R2, 3.0 * R2, n - n_log + 1)[1:]
    r = np.union1d(np.concatenate([[0.0, R1, R2], inner, outer]), [])
    return r


def _integrate(kappa, sigma, r, R2):
    """Solve for ``(int u kappa^+, Phi, int Phi/phi, int phi * int Phi/phi)`` on ``r``."""
    s2 = 2.0 * sigma * sigma

    def rhs(t, y):
        phi = math.exp(-y[0] / s2)
        kp = max(float(kappa(t)), 0.0)
        return [t * kp, phi, y[1] / phi, phi * y[2]]

    cuts = sorted({0.0, float(r[-1]), R2, *[b for b in kappa.breakpoints if 0 < b < r[-1]]})
    out = np.zeros((r.size, 4))
    y0 = np.zeros(4)
    for a, b in zip(cuts[:-1], cuts[1:]):
        mask = (r >= a) & (r <= b)
        sol = solve_ivp(rhs, (a, b), y0, method="DOP853", t_eval=r[mask], rtol=_RTOL, atol=_ATOL)
        if not sol.success or not np.all(np.isfinite(sol.y)):
            raise QuadratureFailure(f"ODE quadrature failed on [{a}, {b}]: {sol.message}")
        out[mask] = sol.y.T
        end = solve_ivp(rhs, (a, b), y0, method="DOP853", rtol=_RTOL, atol=_ATOL)
        y0 = end.y[:, -1]
    return out


def eberle_constants(kappa, sigma, gamma=0.0, n_grid=DEFAULT_GRID) -> ContractionConstants:
    """Compute ``R1, R2, c, phi, Phi, f`` for a kappa profile.

    ``R1`` and ``R2`` are found by bisection on their monotone tail
    predicates (tolerance 1e-10); the integrals are solved as an ODE system
    with an 8th-order Runge-Kutta method, restarted at every kink of kappa.
    """
    kappa = KappaProfile.parse(kappa)
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValueError("sigma must be positive")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    R1, R2 = _radii(kappa, sigma)
    r = _make_grid(R1, R2, n_grid)
    y = _integrate(kappa, sigma, r, R2)
    s2 = 2.0 * sigma * sigma
    phi = np.exp(-y[:, 0] / s2)
    Phi = y[:, 1]
    G = y[:, 2]
    K = y[:, 3]
    i2 = int(np.searchsorted(r, R2))
    G2, K2, Phi2 = G[i2], K[i2], Phi[i2]
    if not G2 > 0:
        raise QuadratureFailure("int_0^R2 Phi/phi is not positive")
    c = 1.0 / G2
    g = 1.0 - 0.5 * c * np.minimum(G, G2)
    inner = r <= R2
    f = np.where(inner, Phi - 0.5 * c * K, Phi - 0.5 * c * (K2 + G2 * (Phi - Phi2)))
    i1 = int(np.searchsorted(r, R1))
    return ContractionConstants(float(R1), float(R2), float(c), float(phi[i1]), r, phi, Phi, f, g, float(sigma), float(gamma), kappa)


def contraction_bound(consts: ContractionConstants, t, w0):
    """``exp((2 gamma - c sigma^2) t) (2 / phi(R1)) w0``; see ``consts.contractive``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or w0 < 0:
        raise ValueError("need t >= 0 and w0 >= 0")
    out = np.exp(consts.rate_bound * t) * consts.prefactor * w0
    return float(out) if out.ndim == 0 else out


def bound_f_holds(consts: ContractionConstants, rtol=1e-9) -> bool:
    """``r phi(R1) <= Phi <= 2 f <= 2 Phi <= 2 r`` at every grid point."""
    r, Phi, f = consts.r, consts.Phi, consts.f
    slack = rtol * np.maximum(r, 1e-300)
    return bool(np.all(r * consts.phi_R1 <= Phi + slack) and np.all(Phi <= 2 * f + slack)
                and np.all(2 * f <= 2 * Phi + slack) and np.all(2 * Phi <= 2 * r + slack))


def fode_violation(consts: ContractionConstants, exclude=3) -> float:
    """Largest positive part of ``2 sigma^2 f'' + r kappa f' + c sigma^2 f``, scaled.

    ``f'`` and ``f''`` are finite differences on the grid.  Points within
    ``exclude`` grid cells of ``R2`` (where ``f''`` jumps), of ``R1`` and
    the kinks of kappa (where ``f'''`` jumps) and of the ends are skipped.  The value is divided by the largest magnitude among the
    three terms, so ``<= 1e-4`` is a pass.
    """
    r, f = consts.r, consts.f
    s2 = consts.sigma ** 2
    f1 = np.gradient(f, r, edge_order=2)
    f2 = np.gradient(f1, r, edge_order=2)
    k = consts.kappa(r)
    terms = np.stack([2 * s2 * f2, r * k * f1, consts.c * s2 * f])
    lhs = terms.sum(axis=0)
    keep = np.ones(r.size, bool)
    keep[:exclude + 1] = False
    keep[-exclude - 1:] = False
    # finite differences are unreliable where f'' or f''' jumps
    kinks = {consts.R2, consts.R1, *(consts.kappa.breakpoints if consts.kappa is not None else ())}
    for b in kinks:
        i = int(np.searchsorted(r, b))
        keep[max(0, i - exclude):i + exclude + 1] = False
    scale = float(np.max(np.abs(terms[:, keep])))
    return float(max(0.0, np.max(lhs[keep])) / scale)


# ---------------------------------------------------------------------------
# empirical decay


@dataclass
class DecayReport:
    """Distance between two synchronously coupled runs and the theoretical bound."""

    times: np.ndarray
    wbar1: np.ndarray
    std_error: np.ndarray
    bound: np.ndarray
    rate_fitted: float
    rate_bound: float
    contractive: bool
    below_bound: bool

    def summary(self) -> dict:
        rate = self.rate_fitted if math.isfinite(self.rate_fitted) else None
        return {"rate_fitted": rate, "rate_bound": float(self.rate_bound),
                "contractive": bool(self.contractive), "below_bound": bool(self.below_bound)}

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,wbar1,bound\n")
            for t, w, b in zip(self.times, self.wbar1, self.bound):
                fh.write(f"{float(t)!r},{float(w)!r},{float(b)!r}\n")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _coupled_std_error(a, b):
    """Standard error of the paired-distance mean, a proxy for the W1 noise."""
    var = 0.0
    for j, w in enumerate(a.env.weights):
        xa = np.concatenate([c[j] for c in a.clouds], axis=1)
        xb = np.concatenate([c[j] for c in b.clouds], axis=1)
        if xa.shape[1] == 1:
            d = np.abs(np.sort(xa[:, 0]) - np.sort(xb[:, 0]))
        else:
            d = np.linalg.norm(xa - xb, axis=1)
        var += w * w * float(np.var(d, ddof=1)) / d.size if d.size > 1 else 0.0
    return math.sqrt(var)


def fit_rate(times, values):
    """Least-squares slope of ``log(values)`` against ``times`` (positive values only)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = v > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(t[ok], np.log(v[ok]), 1)[0])


def empirical_decay(game, init_a, init_b, cfg, consts: ContractionConstants) -> DecayReport:
    """Run two systems with shared noise and track ``Wbar_1`` between them.

    Both states are stepped with the same ``cfg`` (hence the same Brownian
    increments).  The decay rate is fitted on the second half of the
    recorded times; the curve counts as below the bound when every record
    is at most the bound plus two standard errors.
    """
    a, b = init_a, init_b
    times, dist, ses = [a.time], [avg_wasserstein(a, b, 1)], [_coupled_std_error(a, b)]
    for k in range(cfg.n_steps):
        a = mfl_step(a, game, cfg, a.step)
        b = mfl_step(b, game, cfg, b.step)
        if (k + 1) % cfg.record_every == 0 or k + 1 == cfg.n_steps:
            times.append(a.time)
            dist.append(avg_wasserstein(a, b, 1))
            ses.append(_coupled_std_error(a, b))
    times = np.array(times) - times[0]
    dist = np.array(dist)
    ses = np.array(ses)
    bound = np.atleast_1d(contraction_bound(consts, times, dist[0]))
    half = times >= 0.5 * times[-1]
    rate = fit_rate(times[half], dist[half])
    below = bool(np.all(dist <= bound + 2.0 * ses))
    return DecayReport(times, dist, ses, bound, rate, consts.rate_bound, consts.contractive, below)
