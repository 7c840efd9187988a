"""Marginal occupation-time law of one off-state type.

The process alternates an operational period (state 0) with a repair
period whose type is chosen by an independent coin flip: short repair
(state 1, probability p1) or long repair (state 2, probability p2).
For a fixed horizon t the occupation time of an off-state has an atom at
0 plus a defective density for each possible current state j, obtained by
summing over the number of completed operating cycles and, inside each
cycle count, the number of short-repair selections.

Everything is evaluated for the short-repair occupation time; the
long-repair law is the same quantity on the spec with the two off-states
interchanged, so both targets share one code path by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .dist import (GridSpec, HoldingDistribution, mixed_conv_cdf,
                   mixed_conv_pdf, nfold_cdf)
from .quadrature import GL_NODES, GRADING, MOMENT_PANELS, graded_panels

#: state relabeling used when the two off-states are interchanged
SWAP_STATE = {0: 0, 1: 2, 2: 1}


class OccupationTarget(Enum):
    """Which off-state occupation time is being evaluated."""

    SHORT_OFF = "S"
    LONG_OFF = "L"


@dataclass(frozen=True)
class SeriesControl:
    """Truncation policy for the cycle-count series.

    The outer sum stops at the first index n >= n_min whose envelope bound
    (the cdf of n stacked operating periods at the horizon) drops below
    eps_term, or at n_max, in which case results are flagged as not
    converged.
    """

    eps_term: float = 1e-12
    n_min: int = 5
    n_max: int = 200

    def __post_init__(self):
        if not (self.eps_term > 0):
            raise ValueError("eps_term must be positive")
        if self.n_min < 1 or self.n_max < self.n_min:
            raise ValueError("need 1 <= n_min <= n_max")


DEFAULT_CONTROL = SeriesControl()


@dataclass(frozen=True)
class ProcessSpec:
    """Holding-time laws for the three states plus the switch probability.

    ``p1`` is the probability that a repair period is of the short type;
    it must lie in (0, 1]. ``p2 = 1 - p1`` exactly.
    """

    dist_U: HoldingDistribution
    dist_S: HoldingDistribution
    dist_L: HoldingDistribution
    p1: float

    def __post_init__(self):
        if not (0.0 < self.p1 <= 1.0):
            raise ValueError(f"p1 must lie in (0, 1], got {self.p1}")
        for name in ("dist_U", "dist_S", "dist_L"):
            if not isinstance(getattr(self, name), HoldingDistribution):
                raise TypeError(f"{name} must be a HoldingDistribution")

    @property
    def p2(self) -> float:
        return 1.0 - self.p1

    def swapped(self) -> "ProcessSpec":
        """The spec with the two off-state types interchanged.

        Memoized, and an involution: ``spec.swapped().swapped() is spec``.
        Constructed without the p1 > 0 check: the swap of p1 = 1 has a
        legitimate switch probability of 0 (the short state is then
        simply unreachable).
        """
        cached = getattr(self, "_swap", None)
        if cached is not None:
            return cached
        swap = object.__new__(ProcessSpec)
        object.__setattr__(swap, "dist_U", self.dist_U)
        object.__setattr__(swap, "dist_S", self.dist_L)
        object.__setattr__(swap, "dist_L", self.dist_S)
        object.__setattr__(swap, "p1", self.p2)
        object.__setattr__(swap, "_swap", self)
        object.__setattr__(self, "_swap", swap)
        return swap

    def with_p1(self, p1: float) -> "ProcessSpec":
        return replace(self, p1=p1)


def binomial_weights(n: int, p1: float, p2: float) -> np.ndarray:
    """Row of binomial probabilities C(n,k) p1^k p2^(n-k), k = 0..n.

    Built by iterative ratio updates (no factorials); degenerate p1 or p2
    collapse to a single unit entry, with 0**0 treated as 1.
    """
    w = np.zeros(n + 1)
    if p2 == 0.0:
        w[n] = p1 ** n
    elif p1 == 0.0:
        w[0] = p2 ** n
    else:
        w[0] = p2 ** n
        ratio = p1 / p2
        for k in range(n):
            w[k + 1] = w[k] * ((n - k) / (k + 1.0)) * ratio
    return w


def truncation_depth(dist_U: HoldingDistribution, t: float,
                     ctl: SeriesControl = DEFAULT_CONTROL,
                     grid: GridSpec | None = None) -> tuple[int, bool]:
    """Cycle count at which the series envelope falls below eps_term.

    Returns (depth, converged); terms up to and including ``depth`` are
    summed. The envelope is the cdf of ``n`` stacked operating periods at
    the horizon, which dominates every term's event probability.
    """
    n = 0
    while True:
        env = float(nfold_cdf(dist_U, n, t, grid))
        if n >= ctl.n_min and env < ctl.eps_term:
            return n, True
        if n >= ctl.n_max:
            return n, False
        n += 1


class _Stacks:
    """Per-evaluation caches of fold pdfs/cdfs and operating/long-repair
    mixed convolutions, all on fixed coordinate vectors."""

    def __init__(self, spec: ProcessSpec, grid: GridSpec | None, s: np.ndarray,
                 ts: np.ndarray):
        self.spec = spec
        self.grid = grid
        self.s = s
        self.ts = ts
        self._pdf_s: dict[int, np.ndarray] = {}
        self._cdf_s: dict[int, np.ndarray] = {}
        self._mix_cdf: dict[tuple[int, int], np.ndarray] = {}
        self._mix_pdf: dict[tuple[int, int], np.ndarray] = {}

    def pdf_s(self, k: int) -> np.ndarray:
        out = self._pdf_s.get(k)
        if out is None:
            out = self.spec.dist_S.nfold_pdf(k, self.s, self.grid)
            self._pdf_s[k] = out
        return out

    def cdf_s(self, k: int) -> np.ndarray:
        out = self._cdf_s.get(k)
        if out is None:
            out = self.spec.dist_S.nfold_cdf(k, self.s, self.grid)
            self._cdf_s[k] = out
        return out

    def mix_cdf(self, m: int, l: int) -> np.ndarray:
        out = self._mix_cdf.get((m, l))
        if out is None:
            out = mixed_conv_cdf(self.spec.dist_U, m, self.spec.dist_L, l,
                                 self.ts, self.grid)
            self._mix_cdf[(m, l)] = out
        return out

    def mix_pdf(self, m: int, l: int) -> np.ndarray:
        out = self._mix_pdf.get((m, l))
        if out is None:
            out = mixed_conv_pdf(self.spec.dist_U, m, self.spec.dist_L, l,
                                 self.ts, self.grid)
            self._mix_pdf[(m, l)] = out
        return out


class MarginalEvaluator:
    """Atoms and defective densities of the short-repair occupation time.

    Holds the truncation depth and the convolution grid for one (spec, t)
    pair; density evaluations are vectorized over the time coordinate.
    """

    def __init__(self, spec: ProcessSpec, t: float,
                 ctl: SeriesControl = DEFAULT_CONTROL,
                 grid: GridSpec | None = None):
        if not (t > 0) or not np.isfinite(t):
            raise ValueError(f"horizon t must be positive, got {t}")
        self.spec = spec
        self.t = float(t)
        self.ctl = ctl
        self.grid = grid if grid is not None else self._default_grid()
        self.depth, self.converged = truncation_depth(spec.dist_U, t, ctl, self.grid)

    def _default_grid(self) -> GridSpec | None:
        from .dist import Levy
        dists = (self.spec.dist_U, self.spec.dist_S, self.spec.dist_L)
        if all(isinstance(d, Levy) for d in dists):
            return None  # fully closed form, no gridding anywhere
        return GridSpec(upper=self.t)

    # -- atoms --------------------------------------------------------------

    def atom(self, j: int) -> float:
        """Probability that the short-repair occupation time is 0 while in
        state j at the horizon. Identically 0 for j = 1."""
        if j not in (0, 1, 2):
            raise ValueError(f"state must be 0, 1 or 2, got {j}")
        if j == 1:
            return 0.0
        spec, t = self.spec, self.t
        x = np.array([t])
        total = 0.0
        for n in range(self.depth + 1):
            if j == 0:
                a = mixed_conv_cdf(spec.dist_U, n, spec.dist_L, n, x, self.grid)
                b = mixed_conv_cdf(spec.dist_U, n + 1, spec.dist_L, n, x, self.grid)
                total += float(a[0] - b[0]) * spec.p2 ** n
            else:
                a = mixed_conv_cdf(spec.dist_U, n + 1, spec.dist_L, n, x, self.grid)
                b = mixed_conv_cdf(spec.dist_U, n + 1, spec.dist_L, n + 1, x, self.grid)
                total += float(a[0] - b[0]) * spec.p2 ** (n + 1)
        return total

    # -- densities ----------------------------------------------------------

    def density(self, j: int, s) -> np.ndarray:
        """Defective density of the short-repair occupation time at state j,
        evaluated on a vector of time coordinates (0 outside (0, t))."""
        return self.densities(s, states=(j,))[j]

    def densities(self, s, states=(0, 1, 2)) -> dict[int, np.ndarray]:
        """Densities for several states in one pass (shared convolution work)."""
        for j in states:
            if j not in (0, 1, 2):
                raise ValueError(f"state must be 0, 1 or 2, got {j}")
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = {j: np.zeros_like(s) for j in states}
        inside = (s > 0.0) & (s < self.t)
        if not inside.any():
            return out
        si = s[inside]
        st = _Stacks(self.spec, self.grid, si, self.t - si)
        p1, p2 = self.spec.p1, self.spec.p2
        acc = {j: np.zeros_like(si) for j in states}
        for n in range(self.depth + 1):
            w = binomial_weights(n, p1, p2)
            for k in range(n + 1):
                if w[k] == 0.0:
                    continue
                if 0 in states and k >= 1:
                    bracket = st.mix_cdf(n, n - k) - st.mix_cdf(n + 1, n - k)
                    acc[0] += w[k] * st.pdf_s(k) * bracket
                if 1 in states:
                    bracket = st.cdf_s(k) - st.cdf_s(k + 1)
                    acc[1] += (w[k] * p1) * st.mix_pdf(n + 1, n - k) * bracket
                if 2 in states and k >= 1:
                    bracket = st.mix_cdf(n + 1, n - k) - st.mix_cdf(n + 1, n - k + 1)
                    acc[2] += (w[k] * p2) * st.pdf_s(k) * bracket
        for j in states:
            out[j][inside] = acc[j]
        return out


def _resolve_target(spec: ProcessSpec, target: OccupationTarget,
                    j: int) -> tuple[ProcessSpec, int]:
    """Map a long-repair query onto the short-repair code path."""
    if target is OccupationTarget.SHORT_OFF:
        return spec, j
    if target is OccupationTarget.LONG_OFF:
        return spec.swapped(), SWAP_STATE[j]
    raise ValueError(f"unknown occupation target {target!r}")


_EVALUATOR_CACHE: dict[tuple, MarginalEvaluator] = {}


def get_evaluator(spec: ProcessSpec, t: float,
                  ctl: SeriesControl = DEFAULT_CONTROL,
                  grid: GridSpec | None = None) -> MarginalEvaluator:
    """Memoized evaluator per (spec, t, ctl, grid) so repeated queries reuse
    truncation depth and convolution tables."""
    key = (id(spec), spec.p1, float(t), ctl, grid)
    ev = _EVALUATOR_CACHE.get(key)
    if ev is None:
        ev = MarginalEvaluator(spec, t, ctl, grid)
        _EVALUATOR_CACHE[key] = ev
    return ev


def atom_probability(spec: ProcessSpec, target: OccupationTarget, j: int,
                     t: float, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Probability of zero occupation time of ``target`` while in state j at t."""
    if not (t > 0):
        raise ValueError(f"horizon t must be positive, got {t}")
    base, jj = _resolve_target(spec, target, j)
    return get_evaluator(base, t, ctl).atom(jj)


def marginal_density(spec: ProcessSpec, target: OccupationTarget, j: int,
                     s, t: float, ctl: SeriesControl = DEFAULT_CONTROL):
    """Defective occupation-time density at state j; scalar in, scalar out."""
    if not (t > 0):
        raise ValueError(f"horizon t must be positive, got {t}")
    base, jj = _resolve_target(spec, target, j)
    out = get_evaluator(base, t, ctl).density(jj, s)
    return float(out[0]) if np.ndim(s) == 0 else out


def total_mass_check(spec: ProcessSpec, target: OccupationTarget, t: float,
                     ctl: SeriesControl = DEFAULT_CONTROL,
                     panels: int = MOMENT_PANELS, nodes: int = GL_NODES,
                     power: float = GRADING) -> float:
    """Atoms plus integrated densities over all three states; equals 1 up to
    truncation and quadrature error."""
    if not (t > 0):
        raise ValueError(f"horizon t must be positive, got {t}")
    base, _ = _resolve_target(spec, target, 0)
    ev = get_evaluator(base, t, ctl)
    x, w = graded_panels(0.0, t, panels, nodes, power)
    dens = ev.densities(x)
    total = sum(float(np.dot(w, dens[j])) for j in (0, 1, 2))
    total += ev.atom(0) + ev.atom(2)
    return total
