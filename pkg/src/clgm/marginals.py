"""Univariate marginal densities: representation, summaries, averaging.

Marginals come in three forms: Gaussian mixtures (the Laplace engine's
latent marginals), grid densities (hyperparameter marginals, averaged
marginals, anything loaded from disk), and point masses (degenerate
hyperparameter marginals). Model averaging, moments, quantiles, and
Kolmogorov-Smirnov comparisons all live here.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf
from scipy.stats import gaussian_kde

from clgm.errors import DegenerateSupport, EmptyGrid

# Mixture supports are truncated at this many sds beyond the extreme
# component means; the mass outside is ~3e-7 per tail.
SUPPORT_SDS = 5.0
GRID_POINTS = 201


class GaussianMixture:
    """Finite mixture of Gaussians with normalized weights."""

    __slots__ = ("means", "sds", "weights")

    def __init__(self, means, sds, weights):
        self.means = np.asarray(means, dtype=float)
        self.sds = np.asarray(sds, dtype=float)
        w = np.asarray(weights, dtype=float)
        if not (self.means.shape == self.sds.shape == w.shape) or self.means.ndim != 1:
            raise ValueError("means, sds, weights must be vectors of equal length")
        if self.means.size == 0:
            raise ValueError("mixture needs at least one component")
        if np.any(self.sds < 0) or np.any(w < 0):
            raise ValueError("sds and weights must be non-negative")
        total = float(np.sum(w))
        if total <= 0:
            raise ValueError("weights must not all be zero")
        self.weights = w / total

    def support(self) -> tuple[float, float]:
        lo = float(np.min(self.means - SUPPORT_SDS * self.sds))
        hi = float(np.max(self.means + SUPPORT_SDS * self.sds))
        return lo, hi

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) / self.sds
        comp = np.exp(-0.5 * z**2) / (self.sds * math.sqrt(2.0 * math.pi))
        return comp @ self.weights

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) / self.sds
        return (0.5 * (1.0 + erf(z / math.sqrt(2.0)))) @ self.weights


class GridDensity:
    """Density tabulated on strictly increasing abscissae."""

    __slots__ = ("x", "density")

    def __init__(self, x, density):
        self.x = np.asarray(x, dtype=float)
        self.density = np.asarray(density, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.density.shape:
            raise ValueError("abscissae and densities must be equal-length vectors")
        if self.x.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("abscissae must be strictly increasing")
        if np.any(self.density < 0):
            raise ValueError("densities must be non-negative")

    def support(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def pdf(self, x):
        return np.interp(np.asarray(x, dtype=float), self.x, self.density,
                         left=0.0, right=0.0)

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.x))

    def cdf(self, x):
        cum = _cumtrapz(self.x, self.density)
        total = cum[-1]
        return np.interp(np.asarray(x, dtype=float), self.x, cum / total,
                         left=0.0, right=1.0)


@dataclass(frozen=True)
class PointMass:
    """Degenerate marginal concentrated at one value."""

    value: float


def _cumtrapz(x, y):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def normalize(g: GridDensity) -> GridDensity:
    """Rescale a grid density to unit trapezoid mass. Idempotent."""
    mass = g.mass()
    if mass <= 0:
        raise DegenerateSupport("density has zero mass")
    return GridDensity(g.x, g.density / mass)


def to_grid(m, n_points: int = GRID_POINTS) -> GridDensity:
    """Tabulate a marginal on an equally spaced grid and normalize.

    Mixtures are evaluated on [min(mean - 5 sd), max(mean + 5 sd)]; grid
    densities are re-tabulated over their own support.
    """
    if n_points < 11:
        raise ValueError("n_points must be at least 11")
    if isinstance(m, PointMass):
        raise DegenerateSupport("point mass has zero-width support")
    lo, hi = m.support()
    if not hi > lo:
        raise DegenerateSupport(f"support [{lo}, {hi}] has zero width")
    x = np.linspace(lo, hi, n_points)
    return normalize(GridDensity(x, m.pdf(x)))


def bma_average(ms) -> GridDensity:
    """Equal-weight average of marginals on a common grid.

    The common grid spans the union of the component supports with
    GRID_POINTS abscissae. Mixture components are evaluated exactly; grid
    components are linearly interpolated and contribute zero outside
    their own support.
    """
    ms = list(ms)
    if not ms:
        raise EmptyGrid("no marginals to average")
    supports = [m.support() for m in ms]
    lo = min(s[0] for s in supports)
    hi = max(s[1] for s in supports)
    if not hi > lo:
        raise DegenerateSupport("union support has zero width")
    x = np.linspace(lo, hi, GRID_POINTS)
    acc = np.zeros_like(x)
    for m in ms:
        acc += m.pdf(x)
    return normalize(GridDensity(x, acc / len(ms)))


def moments(m) -> tuple[float, float]:
    """Trapezoid-rule mean and sd of a normalized marginal."""
    if isinstance(m, PointMass):
        return m.value, 0.0
    if isinstance(m, GaussianMixture):
        m = to_grid(m)
    g = normalize(m)
    mean = float(np.trapezoid(g.x * g.density, g.x))
    var = float(np.trapezoid((g.x - mean) ** 2 * g.density, g.x))
    return mean, math.sqrt(max(var, 0.0))


def quantiles(m, ps) -> np.ndarray:
    """Quantiles by linear interpolation of the inverse CDF."""
    ps = np.asarray(ps, dtype=float)
    if np.any(ps < 0) or np.any(ps > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if isinstance(m, PointMass):
        return np.full(ps.shape, m.value)
    if isinstance(m, GaussianMixture):
        m = to_grid(m)
    g = normalize(m)
    cum = _cumtrapz(g.x, g.density)
    cum /= cum[-1]
    return np.interp(ps, cum, g.x)


def ks_distance(samples, m) -> float:
    """Sup-distance between an empirical CDF and a marginal's CDF."""
    samples = np.sort(np.asarray(samples, dtype=float))
    n = samples.size
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    cdf = m.cdf(samples)
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    return float(max(np.max(np.abs(cdf - upper)), np.max(np.abs(cdf - lower))))


def ks_densities(a, b) -> float:
    """Sup-distance between the CDFs of two density-form marginals."""
    xa = to_grid(a).x if isinstance(a, GaussianMixture) else a.x
    xb = to_grid(b).x if isinstance(b, GaussianMixture) else b.x
    x = np.union1d(xa, xb)
    return float(np.max(np.abs(a.cdf(x) - b.cdf(x))))


def samples_to_grid(samples, n_points: int = GRID_POINTS) -> GridDensity:
    """Gaussian kernel density of a sample, tabulated and normalized.

    Scott's-rule bandwidth via scipy; the grid extends three bandwidths
    past the sample range. Raises DegenerateSupport on zero spread.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise ValueError(f"need at least 100 samples, got {x.size}")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise DegenerateSupport("sample has zero spread")
    kde = gaussian_kde(x)
    h = float(kde.factor) * sd
    grid = np.linspace(x.min() - 3.0 * h, x.max() + 3.0 * h, n_points)
    return normalize(GridDensity(grid, kde(grid)))


def grid_to_csv(g: GridDensity) -> str:
    """Two-column CSV serialization with header `x,density`."""
    buf = io.StringIO()
    buf.write("x,density\n")
    for xi, di in zip(g.x, g.density):
        buf.write(f"{float(xi)!r},{float(di)!r}\n")
    return buf.getvalue()


def grid_from_csv(text: str) -> GridDensity:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0].strip() != "x,density":
        raise ValueError("expected header 'x,density'")
    rows = [ln.split(",") for ln in lines[1:]]
    x = np.array([float(r[0]) for r in rows])
    d = np.array([float(r[1]) for r in rows])
    return GridDensity(x, d)


def summary_record(name: str, m, ps=(0.025, 0.5, 0.975)) -> dict:
    """JSON-ready record of moments and quantiles for one parameter."""
    mean, sd = moments(m)
    qs = quantiles(m, np.asarray(ps))
    rec = {"name": name, "mean": mean, "sd": sd}
    for p, q in zip(ps, qs):
        rec[f"q{100 * p:g}"] = float(q)
    return rec
