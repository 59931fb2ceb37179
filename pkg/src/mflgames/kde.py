"""Gaussian kernel density, log-density and score estimates.

Two evaluation paths share one estimator:

* ``direct``: exact sums over all kernel centers (chunked), any dimension;
* ``binned``: linear binning on a fine grid plus FFT convolution, 1-D only,
  used for large samples where the exact sum is quadratic in ``n``.

Leave-one-out quantities at the samples remove each sample's own kernel
(and its reflected image when a support bound is declared).
"""
from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import logsumexp

from .errors import DegenerateSample, ScoreEstimationFailure

_LOG2PI = np.log(2.0 * np.pi)
_CUTOFF = 8.0  # kernel support in bandwidths for the binned path
_BINS_PER_BANDWIDTH = 100
_MAX_GRID = 1 << 20
_DIRECT_MAX_1D = 2000
_CHUNK_ELEMS = 1 << 22


def silverman_bandwidth(samples: np.ndarray) -> np.ndarray:
    """Normal-reference bandwidth per coordinate, ``s_d (4 / ((d + 2) n))^{1/(d+4)}``."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    sd = x.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    if np.any(~(sd > 0)):
        bad = int(np.argmax(~(sd > 0)))
        raise DegenerateSample(f"zero variance in coordinate {bad}")
    return sd * (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))


class GaussianKDE:
    """Product-Gaussian KDE with a diagonal bandwidth.

    Parameters
    ----------
    samples : array, shape (n,) or (n, d)
    bandwidth : float or array of shape (d,), optional
        Defaults to :func:`silverman_bandwidth`.
    bounds : (lo, hi), optional
        Declared support of a 1-D sample; kernels are reflected at finite
        bounds so no mass leaks outside.
    method : {"auto", "direct", "binned"}
    """

    def __init__(self, samples, bandwidth=None, bounds=None, method="auto"):
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError("samples must be 1-D or 2-D")
        self.x = x
        self.n, self.d = x.shape
        if bandwidth is None:
            h = silverman_bandwidth(x)
        else:
            h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (self.d,)).copy()
            if np.any(~(h > 0)):
                raise ValueError("bandwidth must be positive")
        self.h = h
        self.lo = self.hi = None
        if bounds is not None:
            if self.d != 1:
                raise ValueError("support bounds are only supported for 1-D samples")
            lo, hi = bounds
            self.lo = None if lo is None else float(lo)
            self.hi = None if hi is None else float(hi)
            if (self.lo is not None and np.any(x < self.lo)) or (self.hi is not None and np.any(x > self.hi)):
                raise ValueError("samples fall outside the declared support")
        if method == "auto":
            method = "binned" if (self.d == 1 and self.n > _DIRECT_MAX_1D) else "direct"
        if method == "binned" and self.d != 1:
            raise ValueError("binned evaluation is 1-D only")
        self.method = method
        self._centers = self._with_reflections(x)

    def _with_reflections(self, x):
        parts = [x]
        if self.lo is not None:
            parts.append(2.0 * self.lo - x)
        if self.hi is not None:
            parts.append(2.0 * self.hi - x)
        return np.concatenate(parts, axis=0)

    def _self_images(self, q):
        """Reflected copies of query points that are themselves samples, shape (r, m, d)."""
        imgs = []
        if self.lo is not None:
            imgs.append(2.0 * self.lo - q)
        if self.hi is not None:
            imgs.append(2.0 * self.hi - q)
        return imgs

    # -- direct ---------------------------------------------------------------

    def _direct(self, q, loo_index=None):
        """Log-density and score at query points ``q`` (m, d) by exact sums."""
        c = self._centers
        h = self.h
        m = q.shape[0]
        logp = np.empty(m)
        score = np.empty((m, self.d))
        lognorm = -np.log(self.n) - np.sum(np.log(h)) - 0.5 * self.d * _LOG2PI
        block = max(1, _CHUNK_ELEMS // max(1, c.shape[0] * self.d))
        for s in range(0, m, block):
            qs = q[s:s + block]
            diff = (c[None, :, :] - qs[:, None, :]) / h  # (b, M, d)
            e = -0.5 * np.sum(diff * diff, axis=2)
            if loo_index is not None:
                rows = np.arange(qs.shape[0])
                idx = loo_index[s:s + block]
                e[rows, idx] = -np.inf
                k = 1
                if self.lo is not None:
                    e[rows, idx + k * self.n] = -np.inf
                    k += 1
                if self.hi is not None:
                    e[rows, idx + k * self.n] = -np.inf
            lse = logsumexp(e, axis=1)
            logp[s:s + block] = lse + lognorm
            wts = np.exp(e - lse[:, None])
            score[s:s + block] = np.einsum("bm,bmd->bd", wts, diff) / h
        if loo_index is not None:
            logp += np.log(self.n) - np.log(self.n - 1)
        return logp, score

    # -- binned ---------------------------------------------------------------

    def _grid_density(self, lo_q, hi_q):
        h = float(self.h[0])
        delta = h / _BINS_PER_BANDWIDTH
        a = lo_q - _CUTOFF * h
        b = hi_q + _CUTOFF * h
        g = int(np.ceil((b - a) / delta)) + 1
        if g > _MAX_GRID:
            return None
        c = self._centers[:, 0]
        c = c[(c >= a) & (c <= b - delta)]
        pos = (c - a) / delta
        i0 = np.floor(pos).astype(np.int64)
        frac = pos - i0
        counts = np.bincount(i0, weights=1.0 - frac, minlength=g) + np.bincount(i0 + 1, weights=frac, minlength=g + 1)[:g]
        half = int(np.ceil(_CUTOFF * _BINS_PER_BANDWIDTH))
        u = np.arange(-half, half + 1) * delta / h
        kern = np.exp(-0.5 * u * u) / (h * np.sqrt(2.0 * np.pi))
        dkern = -u / h * kern  # derivative of the kernel in x
        dens = fftconvolve(counts, kern, mode="same") / self.n
        grad = fftconvolve(counts, dkern, mode="same") / self.n
        return a, delta, b, dens, grad

    def _binned_pair(self, a, delta, b, qx, cx):
        """Contribution of one binned center ``cx`` to the interpolated estimate at ``qx``.

        Mirrors linear binning followed by linear interpolation, so it can be
        subtracted from the grid estimate without cancellation error.
        """
        h = float(self.h[0])
        k0 = 1.0 / (h * np.sqrt(2.0 * np.pi))
        qp = (qx - a) / delta
        cp = (cx - a) / delta
        qi = np.floor(qp)
        ci = np.floor(cp)
        qf = qp - qi
        cf = cp - ci
        inside = (cx >= a) & (cx <= b - delta)
        val = np.zeros_like(qx)
        der = np.zeros_like(qx)
        for wq, dq in ((1.0 - qf, 0.0), (qf, 1.0)):
            for wc, dc in ((1.0 - cf, 0.0), (cf, 1.0)):
                u = ((qi + dq) - (ci + dc)) * delta / h
                kv = k0 * np.exp(-0.5 * u * u)
                val += wq * wc * kv
                der += wq * wc * (-u / h) * kv
        return np.where(inside, val, 0.0), np.where(inside, der, 0.0)

    def _binned(self, q, loo, loo_index=None):
        qq = q[:, 0]
        out = self._grid_density(float(qq.min()), float(qq.max()))
        if out is None:
            return self._direct(q, loo_index if loo else None)
        a, delta, b, dens, grad = out
        grid = a + delta * np.arange(dens.size)
        p = np.interp(qq, grid, dens)
        dp = np.interp(qq, grid, grad)
        if loo:
            num_p = self.n * p
            num_dp = self.n * dp
            removed = np.zeros_like(qq)
            for cx in [qq] + [img[:, 0] for img in self._self_images(q)]:
                v, dv = self._binned_pair(a, delta, b, qq, cx)
                num_p -= v
                num_dp -= dv
                removed += v
            p = num_p / (self.n - 1)
            dp = num_dp / (self.n - 1)
            # isolated points: the remainder is below FFT round-off, use exact sums
            fragile = num_p <= 1e-6 * removed
            if np.any(fragile):
                lp_d, sc_d = self._direct(q[fragile], loo_index[fragile])
                p = p.copy()
                dp = dp.copy()
                p[fragile] = np.exp(lp_d)
                dp[fragile] = sc_d[:, 0] * p[fragile]
        if np.any(p <= 0):
            raise ScoreEstimationFailure("binned density underflowed at a sample point")
        return np.log(p), (dp / p)[:, None]

    # -- public ---------------------------------------------------------------

    def _query(self, max_queries, seed=0):
        if max_queries is None or self.n <= max_queries:
            return np.arange(self.n)
        rng = np.random.default_rng(seed)
        return np.sort(rng.choice(self.n, size=int(max_queries), replace=False))

    def loo_at_samples(self, max_queries=None):
        """Leave-one-out log-density and score at (a subset of) the samples.

        Returns ``(index, logp, score)`` with ``score`` of shape ``(m, d)``.
        """
        if self.n < 2:
            raise ScoreEstimationFailure("need at least two samples")
        idx = self._query(max_queries)
        q = self.x[idx]
        if self.method == "binned":
            logp, score = self._binned(q, loo=True, loo_index=idx)
        else:
            logp, score = self._direct(q, loo_index=idx)
        if not (np.all(np.isfinite(logp)) and np.all(np.isfinite(score))):
            raise ScoreEstimationFailure("non-finite kernel estimate")
        return idx, logp, score

    def logpdf(self, points):
        q = np.asarray(points, dtype=float)
        q = q[:, None] if q.ndim == 1 else q
        if self.method == "binned":
            return self._binned(q, loo=False)[0]
        return self._direct(q)[0]

    def score(self, points):
        """Gradient of the log of the KDE density at ``points``, shape (m, d)."""
        q = np.asarray(points, dtype=float)
        q = q[:, None] if q.ndim == 1 else q
        if self.method == "binned":
            return self._binned(q, loo=False)[1]
        return self._direct(q)[1]
