"""Joint law of the two off-state occupation times at a fixed horizon.

Both occupation times have an atom at 0, so for each current state j the
joint law splits into four pieces: a point probability (both times zero),
two line densities (exactly one time zero), and a plane density on the
open simplex {u > 0, v > 0, u + v < t}. Four of the twelve pieces vanish
identically: being in an off-state at the horizon forces that state's
occupation time to be positive, and both times can be zero only in the
operational state.

Five pieces are evaluated directly; the remaining three are the same
formulas under the interchange of the two off-state types, evaluated on
the swapped spec through the identical code path (so the symmetry is exact
to the last bit).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dist import GridSpec
from .marginal import (DEFAULT_CONTROL, ProcessSpec, SeriesControl,
                       binomial_weights, get_evaluator, truncation_depth)
from .quadrature import GL_NODES, GRADING, JOINT_PANELS, graded_panels


class OffPart(Enum):
    """One coordinate of the joint law: at its atom, or in its density part."""

    ATOM_ZERO = "atom"
    DENSITY = "density"


class ValueKind(Enum):
    PROBABILITY = "probability"
    LINE_DENSITY = "line_density"
    PLANE_DENSITY = "plane_density"


@dataclass(frozen=True)
class JointCase:
    """(short-repair part, long-repair part, current state)."""

    s_part: OffPart
    l_part: OffPart
    j: int

    def __post_init__(self):
        if self.j not in (0, 1, 2):
            raise ValueError(f"state must be 0, 1 or 2, got {self.j}")

    @property
    def kind(self) -> ValueKind:
        if self.s_part is OffPart.ATOM_ZERO and self.l_part is OffPart.ATOM_ZERO:
            return ValueKind.PROBABILITY
        if self.s_part is OffPart.DENSITY and self.l_part is OffPart.DENSITY:
            return ValueKind.PLANE_DENSITY
        return ValueKind.LINE_DENSITY


@dataclass(frozen=True)
class JointValue:
    case: JointCase
    value: float
    kind: ValueKind


ALL_CASES = tuple(JointCase(sp, lp, j)
                  for sp in OffPart for lp in OffPart for j in (0, 1, 2))

#: cases that are identically zero by construction of the process
ZERO_CASES = frozenset({
    JointCase(OffPart.ATOM_ZERO, OffPart.ATOM_ZERO, 1),
    JointCase(OffPart.ATOM_ZERO, OffPart.ATOM_ZERO, 2),
    JointCase(OffPart.ATOM_ZERO, OffPart.DENSITY, 1),
    JointCase(OffPart.DENSITY, OffPart.ATOM_ZERO, 2),
})


class JointEvaluator:
    """Vectorized evaluation of all joint-law pieces for one (spec, t)."""

    def __init__(self, spec: ProcessSpec, t: float,
                 ctl: SeriesControl = DEFAULT_CONTROL,
                 grid: GridSpec | None = None):
        if not (t > 0) or not np.isfinite(t):
            raise ValueError(f"horizon t must be positive, got {t}")
        self.spec = spec
        self.t = float(t)
        self.ctl = ctl
        # joint formulas involve only single-family fold convolutions, so the
        # marginal evaluator's grid policy (None when fully closed form) applies
        self.grid = grid if grid is not None else get_evaluator(spec, t, ctl).grid
        self.depth, self.converged = truncation_depth(spec.dist_U, t, ctl, self.grid)
        self._swap: JointEvaluator | None = None

    def swap(self) -> "JointEvaluator":
        """Evaluator for the spec with the off-state types interchanged."""
        if self._swap is None:
            self._swap = JointEvaluator(self.spec.swapped(), self.t, self.ctl,
                                        self.grid)
            self._swap._swap = self
        return self._swap

    # -- the five directly-stated pieces -------------------------------------

    def atom_both(self) -> float:
        """Pr(both occupation times are 0, state 0): the first operating
        period outlasts the horizon."""
        return 1.0 - float(self.spec.dist_U.nfold_cdf(1, np.array([self.t]),
                                                      self.grid)[0])

    def _line_long_state0(self, v: np.ndarray) -> np.ndarray:
        """Density in the long-repair coordinate on the {short time = 0}
        line, current state 0: every completed cycle chose the long type."""
        spec, t = self.spec, self.t
        out = np.zeros_like(v)
        inside = (v > 0.0) & (v < t)
        if not inside.any():
            return out
        vi = v[inside]
        tv = t - vi
        acc = np.zeros_like(vi)
        for n in range(1, self.depth + 1):
            w = spec.p2 ** n
            if w == 0.0:
                continue
            bracket = (spec.dist_U.nfold_cdf(n, tv, self.grid)
                       - spec.dist_U.nfold_cdf(n + 1, tv, self.grid))
            acc += w * spec.dist_L.nfold_pdf(n, vi, self.grid) * bracket
        out[inside] = acc
        return out

    def _line_short_state1(self, u: np.ndarray) -> np.ndarray:
        """Density in the short-repair coordinate on the {long time = 0}
        line, current state 1: all cycles plus the running repair are short."""
        spec, t = self.spec, self.t
        out = np.zeros_like(u)
        inside = (u > 0.0) & (u < t)
        if not inside.any():
            return out
        ui = u[inside]
        tu = t - ui
        acc = np.zeros_like(ui)
        for n in range(0, self.depth + 1):
            w = spec.p1 ** (n + 1)
            if w == 0.0:
                continue
            bracket = (spec.dist_S.nfold_cdf(n, ui, self.grid)
                       - spec.dist_S.nfold_cdf(n + 1, ui, self.grid))
            acc += w * spec.dist_U.nfold_pdf(n + 1, tu, self.grid) * bracket
        out[inside] = acc
        return out

    def _plane_state0(self, u, v, w_sum) -> np.ndarray:
        """Plane density at state 0 on coordinate arrays of a common shape;
        ``w_sum`` is t - u - v."""
        spec = self.spec
        acc = np.zeros_like(w_sum)
        for n in range(2, self.depth + 1):
            wk = binomial_weights(n, spec.p1, spec.p2)
            bracket = (spec.dist_U.nfold_cdf(n, w_sum, self.grid)
                       - spec.dist_U.nfold_cdf(n + 1, w_sum, self.grid))
            inner = np.zeros_like(w_sum)
            for k in range(1, n):
                if wk[k] == 0.0:
                    continue
                inner += wk[k] * (spec.dist_S.nfold_pdf(k, u, self.grid)
                                  * spec.dist_L.nfold_pdf(n - k, v, self.grid))
            acc += inner * bracket
        return acc

    def _plane_state1(self, u, v, w_sum) -> np.ndarray:
        """Plane density at state 1 (currently in a short repair)."""
        spec = self.spec
        acc = np.zeros_like(w_sum)
        for n in range(1, self.depth + 1):
            wk = binomial_weights(n, spec.p1, spec.p2)
            pdf_u = spec.dist_U.nfold_pdf(n + 1, w_sum, self.grid)
            inner = np.zeros_like(w_sum)
            for k in range(0, n):
                if wk[k] == 0.0:
                    continue
                bracket = (spec.dist_S.nfold_cdf(k, u, self.grid)
                           - spec.dist_S.nfold_cdf(k + 1, u, self.grid))
                inner += (wk[k] * spec.p1) * (
                    spec.dist_L.nfold_pdf(n - k, v, self.grid) * bracket)
            acc += inner * pdf_u
        return acc

    # -- product-grid fast path ----------------------------------------------

    def _plane_state0_grid(self, un, vn) -> np.ndarray:
        spec = self.spec
        w_sum = self.t - un[:, None] - vn[None, :]
        acc = np.zeros_like(w_sum)
        for n in range(2, self.depth + 1):
            wk = binomial_weights(n, spec.p1, spec.p2)
            bracket = (spec.dist_U.nfold_cdf(n, w_sum, self.grid)
                       - spec.dist_U.nfold_cdf(n + 1, w_sum, self.grid))
            inner = np.zeros_like(w_sum)
            for k in range(1, n):
                if wk[k] == 0.0:
                    continue
                inner += wk[k] * np.outer(spec.dist_S.nfold_pdf(k, un, self.grid),
                                          spec.dist_L.nfold_pdf(n - k, vn, self.grid))
            acc += inner * bracket
        return acc

    def _plane_state1_grid(self, un, vn) -> np.ndarray:
        spec = self.spec
        w_sum = self.t - un[:, None] - vn[None, :]
        acc = np.zeros_like(w_sum)
        for n in range(1, self.depth + 1):
            wk = binomial_weights(n, spec.p1, spec.p2)
            pdf_u = spec.dist_U.nfold_pdf(n + 1, w_sum, self.grid)
            inner = np.zeros_like(w_sum)
            for k in range(0, n):
                if wk[k] == 0.0:
                    continue
                bracket = (spec.dist_S.nfold_cdf(k, un, self.grid)
                           - spec.dist_S.nfold_cdf(k + 1, un, self.grid))
                inner += (wk[k] * spec.p1) * np.outer(
                    bracket, spec.dist_L.nfold_pdf(n - k, vn, self.grid))
            acc += inner * pdf_u
        return acc

    # -- public piece accessors (swap-aware) ----------------------------------

    def line_short(self, j: int, u) -> np.ndarray:
        """Density in the short coordinate on the {long time = 0} line."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if j == 1:
            return self._line_short_state1(u)
        if j == 0:
            return self.swap()._line_long_state0(u)
        return np.zeros_like(u)  # state 2 forces positive long time

    def line_long(self, j: int, v) -> np.ndarray:
        """Density in the long coordinate on the {short time = 0} line."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if j == 0:
            return self._line_long_state0(v)
        if j == 2:
            return self.swap()._line_short_state1(v)
        return np.zeros_like(v)  # state 1 forces positive short time

    def plane(self, j: int, u, v) -> np.ndarray:
        """Plane density at state j on coordinate arrays of a common shape."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if u.shape != v.shape:
            raise ValueError("u and v must have a common shape")
        out = np.zeros_like(u)
        inside = (u > 0.0) & (v > 0.0) & (u + v < self.t)
        if not inside.any():
            return out
        ui, vi = u[inside], v[inside]
        wi = self.t - ui - vi
        if j == 0:
            out[inside] = self._plane_state0(ui, vi, wi)
        elif j == 1:
            out[inside] = self._plane_state1(ui, vi, wi)
        else:
            out[inside] = self.swap()._plane_state1(vi, ui, wi)
        return out

    def plane_grid(self, j: int, un, vn) -> np.ndarray:
        """Plane density on the product grid un x vn (outer-product fast path).

        Points outside the open simplex get exactly 0 through the vanishing
        operating-time factors.
        """
        un = np.asarray(un, dtype=float)
        vn = np.asarray(vn, dtype=float)
        if j == 0:
            return self._plane_state0_grid(un, vn)
        if j == 1:
            return self._plane_state1_grid(un, vn)
        return self.swap()._plane_state1_grid(vn, un).T


_JOINT_CACHE: dict[tuple, JointEvaluator] = {}


def get_joint_evaluator(spec: ProcessSpec, t: float,
                        ctl: SeriesControl = DEFAULT_CONTROL,
                        grid: GridSpec | None = None) -> JointEvaluator:
    key = (id(spec), spec.p1, float(t), ctl, grid)
    ev = _JOINT_CACHE.get(key)
    if ev is None:
        ev = JointEvaluator(spec, t, ctl, grid)
        _JOINT_CACHE[key] = ev
    return ev


def joint_eval(spec: ProcessSpec, case: JointCase, u: float, v: float,
               t: float, ctl: SeriesControl = DEFAULT_CONTROL) -> JointValue:
    """One piece of the joint law at one point.

    Coordinates are read only for density parts: ``u`` for the short-repair
    density, ``v`` for the long-repair density. Out-of-support coordinates
    yield 0 rather than an error.
    """
    if not (t > 0):
        raise ValueError(f"horizon t must be positive, got {t}")
    kind = case.kind
    if case in ZERO_CASES:
        return JointValue(case, 0.0, kind)
    ev = get_joint_evaluator(spec, t, ctl)
    if kind is ValueKind.PROBABILITY:
        return JointValue(case, ev.atom_both(), kind)
    if kind is ValueKind.PLANE_DENSITY:
        val = float(ev.plane(case.j, np.array([u]), np.array([v]))[0])
        return JointValue(case, val, kind)
    if case.l_part is OffPart.ATOM_ZERO:
        val = float(ev.line_short(case.j, np.array([u]))[0])
    else:
        val = float(ev.line_long(case.j, np.array([v]))[0])
    return JointValue(case, val, kind)


def marginalize_from_joint(spec: ProcessSpec, j: int, u: float, t: float,
                           ctl: SeriesControl = DEFAULT_CONTROL,
                           panels: int = JOINT_PANELS, nodes: int = GL_NODES,
                           power: float = GRADING) -> float:
    """Short-repair marginal density recovered from the joint law.

    The {long time = 0} line contributes directly; the plane density is
    integrated over the long coordinate. Agrees with the marginal module
    up to series truncation and quadrature error.
    """
    if not (0.0 < u < t):
        raise ValueError(f"need 0 < u < t, got u={u}, t={t}")
    ev = get_joint_evaluator(spec, t, ctl)
    line = float(ev.line_short(j, np.array([u]))[0])
    vq, wq = graded_panels(0.0, t - u, panels, nodes, power)
    plane = ev.plane_grid(j, np.array([u]), vq)[0]
    return line + float(np.dot(wq, plane))


def joint_total_mass(spec: ProcessSpec, t: float,
                     ctl: SeriesControl = DEFAULT_CONTROL,
                     panels: int = JOINT_PANELS, nodes: int = GL_NODES,
                     power: float = GRADING) -> float:
    """All twelve pieces combined: point mass + line integrals + plane
    integrals; equals 1 up to truncation and quadrature error."""
    if not (t > 0):
        raise ValueError(f"horizon t must be positive, got {t}")
    ev = get_joint_evaluator(spec, t, ctl)
    xq, wq = graded_panels(0.0, t, panels, nodes, power)
    total = ev.atom_both()
    for j in (0, 1, 2):
        total += float(np.dot(wq, ev.line_short(j, xq)))
        total += float(np.dot(wq, ev.line_long(j, xq)))
        total += float(wq @ ev.plane_grid(j, xq, xq) @ wq)
    return total
