"""Holding-time distributions and their n-fold / mixed convolutions.

Three families are supported:

* ``Levy(c)`` -- the one-sided stable law with stability index 1/2 and
  scale parameter c**2. Closed under convolution with the scale-root
  parameters adding, so every n-fold or Levy-by-Levy mixed convolution
  stays closed form (no gridding).
* ``Exponential(rate)`` -- n-fold convolutions are Erlang, evaluated in
  closed form.
* ``GriddedEmpirical`` -- an arbitrary density sampled on a uniform grid;
  n-fold convolutions are built numerically.

Convolutions that have no closed form are computed once on a uniform grid
with a trapezoid-weighted discrete convolution and cached. All caches are
safe for concurrent readers; table construction is serialized by a module
lock.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gammainc, gammaln

from .special import erfc, erfcinv_half

LOG_SQRT_2PI = 0.9189385332046727418


class ParameterError(ValueError):
    """A distribution parameter is outside its admissible range."""


class GridRangeError(ValueError):
    """An evaluation point lies beyond the convolution grid."""


_token_counter = itertools.count()


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [0, upper] with ``steps`` subintervals."""

    upper: float
    steps: int = 4096

    def __post_init__(self):
        if not (self.upper > 0):
            raise ParameterError(f"grid upper must be positive, got {self.upper}")
        if self.steps < 8:
            raise ParameterError(f"grid steps must be >= 8, got {self.steps}")

    @property
    def h(self) -> float:
        return self.upper / self.steps

    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.h


@dataclass(frozen=True)
class ConvolutionTable:
    """pdf/cdf samples of an n-fold convolution on a GridSpec.

    ``n == 0`` encodes the unit point mass at 0: the cdf is identically 1
    on the grid and ``pdf`` is None (it acts as the identity element of
    convolution, never as a function).
    """

    grid: GridSpec
    n: int
    pdf: np.ndarray | None
    cdf: np.ndarray

    def cdf_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _check_range(x, self.grid)
        if self.n == 0:
            return np.where(x >= 0.0, 1.0, 0.0)
        return np.interp(x, self.grid.nodes(), self.cdf, left=0.0)

    def pdf_at(self, x) -> np.ndarray:
        if self.pdf is None:
            raise ValueError("point-mass table has no density")
        x = np.asarray(x, dtype=float)
        _check_range(x, self.grid)
        return np.interp(x, self.grid.nodes(), self.pdf, left=0.0)


def _check_range(x: np.ndarray, grid: GridSpec) -> None:
    if x.size and float(np.max(x)) > grid.upper * (1.0 + 1e-12):
        raise GridRangeError(
            f"evaluation point {float(np.max(x)):g} exceeds grid upper bound {grid.upper:g}")


def _point_mass_cdf(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, 1.0, 0.0)


def convolve_samples(f: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    """One trapezoid-weighted discrete convolution of two pdf sample vectors.

    (f*g)(x_i) ~ h * [sum_{j=0..i} f_j g_{i-j} - (f_0 g_i + f_i g_0)/2].
    Second-order accurate; tiny FFT ringing is clipped at zero.
    """
    n = len(f)
    full = fftconvolve(f, g)[:n]
    full -= 0.5 * (f[0] * g[:n] + f[:n] * g[0])
    return np.clip(full * h, 0.0, None)


def _cdf_from_pdf(pdf: np.ndarray, h: float) -> np.ndarray:
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * h * (pdf[1:] + pdf[:-1]))])
    return np.minimum(cdf, 1.0)


class HoldingDistribution:
    """Base class for nonnegative absolutely continuous holding-time laws.

    Subclasses provide vectorized ``pdf``/``cdf`` (zero for x <= 0) and
    ``sample``. n-fold convolution tables are memoized per (grid, n) on
    the instance.
    """

    def __init__(self):
        self._token = next(_token_counter)
        self._tables: dict[tuple[GridSpec, int], ConvolutionTable] = {}

    # -- family interface -------------------------------------------------

    def pdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def nfold_pdf(self, n: int, x, grid: GridSpec | None = None) -> np.ndarray:
        if n < 1:
            raise ValueError("n-fold density requires n >= 1")
        return self.nfold_table(n, _resolve_grid(self, grid, x)).pdf_at(x)

    def nfold_cdf(self, n: int, x, grid: GridSpec | None = None) -> np.ndarray:
        if n < 0:
            raise ValueError("fold count must be nonnegative")
        if n == 0:
            return _point_mass_cdf(x)
        return self.nfold_table(n, _resolve_grid(self, grid, x)).cdf_at(x)

    # -- gridded table machinery ------------------------------------------

    def base_samples(self, grid: GridSpec) -> np.ndarray:
        """Density sampled on the grid nodes (used to build fold tables)."""
        return self.pdf(grid.nodes())

    def nfold_table(self, n: int, grid: GridSpec) -> ConvolutionTable:
        key = (grid, n)
        hit = self._tables.get(key)
        if hit is not None:
            return hit
        with _TABLE_LOCK:
            hit = self._tables.get(key)
            if hit is not None:
                return hit
            table = self._build_table(n, grid)
            self._tables[key] = table
            return table

    def _build_table(self, n: int, grid: GridSpec) -> ConvolutionTable:
        if n == 0:
            return ConvolutionTable(grid, 0, None, np.ones(grid.steps + 1))
        if n == 1:
            pdf = self.base_samples(grid)
            return ConvolutionTable(grid, 1, pdf, _cdf_from_pdf(pdf, grid.h))
        prev = self.nfold_table(n - 1, grid)
        one = self.nfold_table(1, grid)
        pdf = convolve_samples(prev.pdf, one.pdf, grid.h)
        return ConvolutionTable(grid, n, pdf, _cdf_from_pdf(pdf, grid.h))


class Levy(HoldingDistribution):
    """One-sided stable law with index 1/2 and scale parameter ``c**2``."""

    def __init__(self, c: float):
        if not (c > 0) or not np.isfinite(c):
            raise ParameterError(f"Levy scale-root parameter must be positive, got {c}")
        super().__init__()
        self.c = float(c)

    def __repr__(self):
        return f"Levy(c={self.c:g})"

    def pdf(self, x) -> np.ndarray:
        return levy_pdf(self.c, x)

    def cdf(self, x) -> np.ndarray:
        return levy_cdf(self.c, x)

    def nfold_pdf(self, n, x, grid=None) -> np.ndarray:
        if n < 1:
            raise ValueError("n-fold density requires n >= 1")
        return levy_pdf(n * self.c, x)

    def nfold_cdf(self, n, x, grid=None) -> np.ndarray:
        if n < 0:
            raise ValueError("fold count must be nonnegative")
        if n == 0:
            return _point_mass_cdf(x)
        return levy_cdf(n * self.c, x)

    def _build_table(self, n, grid) -> ConvolutionTable:
        # closed form sampled directly; only needed as a factor of a mixed
        # convolution with a non-Levy distribution
        if n == 0:
            return ConvolutionTable(grid, 0, None, np.ones(grid.steps + 1))
        pdf = levy_pdf(n * self.c, grid.nodes())
        cdf = levy_cdf(n * self.c, grid.nodes())
        return ConvolutionTable(grid, n, pdf, cdf)

    def sample(self, rng, size=None):
        z = rng.standard_normal(size)
        scalar = size is None
        z = np.atleast_1d(z)
        while True:
            bad = z == 0.0
            if not bad.any():
                break
            z[bad] = rng.standard_normal(int(bad.sum()))
        out = (self.c / z) ** 2
        return float(out[0]) if scalar else out


class Exponential(HoldingDistribution):
    """Exponential holding times; n-fold convolutions are Erlang."""

    def __init__(self, rate: float):
        if not (rate > 0) or not np.isfinite(rate):
            raise ParameterError(f"exponential rate must be positive, got {rate}")
        super().__init__()
        self.rate = float(rate)

    def __repr__(self):
        return f"Exponential(rate={self.rate:g})"

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(under="ignore"):
            return np.where(x >= 0.0, self.rate * np.exp(-self.rate * x), 0.0)

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(under="ignore"):
            return np.where(x > 0.0, -np.expm1(-self.rate * x), 0.0)

    def nfold_pdf(self, n, x, grid=None) -> np.ndarray:
        if n < 1:
            raise ValueError("n-fold density requires n >= 1")
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0.0
        if pos.any():
            xp = x[pos]
            with np.errstate(under="ignore"):
                out[pos] = np.exp(n * np.log(self.rate) + (n - 1) * np.log(xp)
                                  - self.rate * xp - gammaln(n))
        if n == 1:
            out = np.where(x == 0.0, self.rate, out)
        return out

    def nfold_cdf(self, n, x, grid=None) -> np.ndarray:
        if n < 0:
            raise ValueError("fold count must be nonnegative")
        if n == 0:
            return _point_mass_cdf(x)
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0.0
        if pos.any():
            out[pos] = gammainc(n, self.rate * x[pos])
        return out

    def _build_table(self, n, grid) -> ConvolutionTable:
        if n == 0:
            return ConvolutionTable(grid, 0, None, np.ones(grid.steps + 1))
        nodes = grid.nodes()
        return ConvolutionTable(grid, n, self.nfold_pdf(n, nodes), self.nfold_cdf(n, nodes))

    def sample(self, rng, size=None):
        u = rng.random(size)
        scalar = size is None
        u = np.atleast_1d(u)
        out = -np.log1p(-u) / self.rate
        while True:
            bad = out <= 0.0
            if not bad.any():
                break
            out[bad] = -np.log1p(-rng.random(int(bad.sum()))) / self.rate
        return float(out[0]) if scalar else out


class GriddedEmpirical(HoldingDistribution):
    """Holding-time law given by density samples on a uniform grid."""

    def __init__(self, grid: GridSpec, pdf_samples):
        super().__init__()
        samples = np.asarray(pdf_samples, dtype=float)
        if samples.shape != (grid.steps + 1,):
            raise ParameterError(
                f"expected {grid.steps + 1} density samples, got {samples.shape}")
        if np.any(samples < 0.0):
            raise ParameterError("density samples must be nonnegative")
        mass = float(np.trapezoid(samples, dx=grid.h))
        if mass > 1.0 + 1e-9:
            raise ParameterError(f"density samples integrate to {mass:.12g} > 1")
        self.grid = grid
        self._pdf_samples = samples
        self._cdf_samples = _cdf_from_pdf(samples, grid.h)
        self._mass = mass

    def __repr__(self):
        return f"GriddedEmpirical(upper={self.grid.upper:g}, steps={self.grid.steps})"

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.interp(x, self.grid.nodes(), self._pdf_samples, left=0.0, right=0.0)

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.interp(x, self.grid.nodes(), self._cdf_samples, left=0.0)

    def base_samples(self, grid: GridSpec) -> np.ndarray:
        if grid == self.grid:
            return self._pdf_samples
        return self.pdf(grid.nodes())

    def sample(self, rng, size=None):
        u = (1.0 - rng.random(size)) * self._mass
        scalar = size is None
        u = np.atleast_1d(u)
        out = np.interp(u, self._cdf_samples, self.grid.nodes())
        return float(out[0]) if scalar else out


def _resolve_grid(d: HoldingDistribution, grid: GridSpec | None, x) -> GridSpec:
    """Pick the grid for a table-backed evaluation.

    Preference order: caller-supplied grid, the distribution's own grid
    (gridded family), then an automatic grid whose upper bound is the
    evaluation range rounded up to a power of two (so nearby queries share
    cached tables).
    """
    if grid is not None:
        return grid
    own = getattr(d, "grid", None)
    if own is not None:
        return own
    hi = float(np.max(np.asarray(x, dtype=float), initial=1.0))
    upper = 2.0 ** int(np.ceil(np.log2(max(hi, 1.0))))
    return GridSpec(upper=upper)


# ---------------------------------------------------------------------------
# closed-form Levy evaluations


def levy_pdf(c: float, x) -> np.ndarray:
    """Density of the Levy law with scale parameter c**2 (zero for x <= 0).

    Evaluated as exp(log c - c^2/(2x) - 1.5 log x - log sqrt(2 pi)) so the
    essential singularity at 0 underflows cleanly to 0.
    """
    if not (c > 0):
        raise ParameterError(f"Levy scale-root parameter must be positive, got {c}")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.zeros_like(x)
    pos = x > 0.0
    if pos.any():
        xp = x[pos]
        with np.errstate(under="ignore"):
            out[pos] = np.exp(np.log(c) - c * c / (2.0 * xp)
                              - 1.5 * np.log(xp) - LOG_SQRT_2PI)
    return float(out[0]) if scalar else out


def levy_cdf(c: float, x) -> np.ndarray:
    """Distribution function erfc(c / sqrt(2 x)) of the Levy law (0 for x <= 0)."""
    if not (c > 0):
        raise ParameterError(f"Levy scale-root parameter must be positive, got {c}")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.zeros_like(x)
    pos = x > 0.0
    if pos.any():
        out[pos] = erfc(c / np.sqrt(2.0 * x[pos]))
    return float(out[0]) if scalar else out


def _levy_cdf_any(c: float, x) -> np.ndarray:
    """Levy cdf extended to c == 0 (the unit point mass at 0)."""
    if c == 0.0:
        return _point_mass_cdf(x)
    return levy_cdf(c, np.asarray(x, dtype=float))


def median_to_scale(median: float) -> float:
    """Scale-root parameter of the Levy law with the given median.

    Inverts median = 0.5 c^2 / erfcinv(1/2)^2.
    """
    if not (median > 0):
        raise ParameterError(f"median must be positive, got {median}")
    return erfcinv_half() * np.sqrt(2.0 * median)


# ---------------------------------------------------------------------------
# module-level operations (fold-count conventions live here)


def nfold_cdf(d: HoldingDistribution, n: int, x, grid: GridSpec | None = None):
    """cdf of the sum of ``n`` iid copies of ``d``; n = 0 is the point mass at 0."""
    out = d.nfold_cdf(n, x, grid)
    return float(out) if np.ndim(x) == 0 else out


def nfold_pdf(d: HoldingDistribution, n: int, x, grid: GridSpec | None = None):
    """Density of the sum of ``n >= 1`` iid copies of ``d``."""
    out = d.nfold_pdf(n, x, grid)
    return float(out) if np.ndim(x) == 0 else out


_MIXED_TABLES: dict[tuple, ConvolutionTable] = {}
_TABLE_LOCK = threading.Lock()


def _mixed_table(dA: HoldingDistribution, m: int, dB: HoldingDistribution,
                 k: int, grid: GridSpec) -> ConvolutionTable:
    key = (dA._token, m, dB._token, k, grid)
    hit = _MIXED_TABLES.get(key)
    if hit is not None:
        return hit
    ta = dA.nfold_table(m, grid)
    tb = dB.nfold_table(k, grid)
    with _TABLE_LOCK:
        hit = _MIXED_TABLES.get(key)
        if hit is not None:
            return hit
        pdf = convolve_samples(ta.pdf, tb.pdf, grid.h)
        table = ConvolutionTable(grid, m + k, pdf, _cdf_from_pdf(pdf, grid.h))
        _MIXED_TABLES[key] = table
        return table


def mixed_conv_cdf(dA: HoldingDistribution, m: int, dB: HoldingDistribution,
                   k: int, x, grid: GridSpec | None = None):
    """cdf of (sum of m copies of dA) + (sum of k copies of dB).

    Levy pairs collapse to a single Levy cdf with the scale-roots added;
    a zero fold count reduces to the other factor; anything else costs one
    cached discrete convolution of the two n-fold tables.
    """
    if m < 0 or k < 0:
        raise ValueError("fold counts must be nonnegative")
    scalar = np.ndim(x) == 0
    if isinstance(dA, Levy) and isinstance(dB, Levy):
        out = _levy_cdf_any(m * dA.c + k * dB.c, x)
    elif k == 0:
        out = dA.nfold_cdf(m, x, grid)
    elif m == 0:
        out = dB.nfold_cdf(k, x, grid)
    else:
        g = grid if grid is not None else _resolve_grid(dA, None, x)
        out = _mixed_table(dA, m, dB, k, g).cdf_at(x)
    return float(out) if scalar else out


def mixed_conv_pdf(dA: HoldingDistribution, m: int, dB: HoldingDistribution,
                   k: int, x, grid: GridSpec | None = None):
    """Density of (sum of m copies of dA) + (sum of k copies of dB), m + k >= 1."""
    if m < 0 or k < 0:
        raise ValueError("fold counts must be nonnegative")
    if m + k < 1:
        raise ValueError("mixed convolution density requires m + k >= 1")
    scalar = np.ndim(x) == 0
    if isinstance(dA, Levy) and isinstance(dB, Levy):
        out = levy_pdf(m * dA.c + k * dB.c, x)
    elif k == 0:
        out = dA.nfold_pdf(m, x, grid)
    elif m == 0:
        out = dB.nfold_pdf(k, x, grid)
    else:
        g = grid if grid is not None else _resolve_grid(dA, None, x)
        out = _mixed_table(dA, m, dB, k, g).pdf_at(x)
    return float(out) if scalar else out


def sample(d: HoldingDistribution, rng: np.random.Generator, size=None):
    """Draw from ``d``: Levy via c^2/Z^2, exponential and gridded by inversion."""
    return d.sample(rng, size)
