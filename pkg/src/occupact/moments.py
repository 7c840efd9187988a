"""Moments of occupation times and of a linear repair cost.

Means and variances come from 1-D quadrature of the defective marginal
densities (the atoms sit at 0 and contribute nothing); the covariance of
the two off-state occupation times needs the 2-D joint density on the
simplex. A cost that is linear in the occupation times,

    C(t) = C0 * U(t) + C1 * S(t) + C2 * L(t),

reduces to C0*t + (C1-C0) S(t) + (C2-C0) L(t) because the three
occupation times partition the horizon, so its moments follow from
(E, Var, Cov) of the off-state times alone.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .joint import get_joint_evaluator
from .marginal import (DEFAULT_CONTROL, OccupationTarget, ProcessSpec,
                       SeriesControl, get_evaluator)
from .quadrature import (GL_NODES, GRADING, JOINT_PANELS, MOMENT_PANELS,
                         graded_panels)


@dataclass(frozen=True)
class CostSpec:
    """Cost rates per unit time in states 0 (on), 1 (short), 2 (long)."""

    c0: float = 0.0
    c1: float = 1.0
    c2: float = 2.0

    def __post_init__(self):
        for r in (self.c0, self.c1, self.c2):
            if not np.isfinite(r):
                raise ValueError("cost rates must be finite")


@dataclass(frozen=True)
class MomentSummary:
    """One row of the moment table for a (t, p1) configuration."""

    t: float
    p1: float
    e_s: float
    var_s: float
    e_l: float
    var_l: float
    e_c: float
    var_c: float
    rho_sl: float
    cov_sl: float

    def __post_init__(self):
        for name in ("var_s", "var_l", "var_c"):
            if getattr(self, name) < -1e-9:
                raise ValueError(f"{name} is negative beyond tolerance: "
                                 f"{getattr(self, name)}")
        if abs(self.rho_sl) > 1.0 + 1e-9:
            raise ValueError(f"correlation out of range: {self.rho_sl}")
        if not (-1e-9 <= self.e_s and -1e-9 <= self.e_l
                and self.e_s + self.e_l <= self.t * (1 + 1e-9)):
            raise ValueError("occupation means must lie in [0, t]")


def thread_count() -> int:
    """Worker cap for embarrassingly parallel sweeps (OCCUPACT_THREADS)."""
    env = os.environ.get("OCCUPACT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def _target_spec(spec: ProcessSpec, target: OccupationTarget) -> ProcessSpec:
    return spec if target is OccupationTarget.SHORT_OFF else spec.swapped()


def occupation_mean_var(spec: ProcessSpec, target: OccupationTarget, t: float,
                        ctl: SeriesControl = DEFAULT_CONTROL,
                        panels: int = MOMENT_PANELS, nodes: int = GL_NODES,
                        power: float = GRADING) -> tuple[float, float]:
    """Mean and variance of one off-state occupation time at horizon t."""
    if not (t > 0):
        raise ValueError(f"horizon t must be positive, got {t}")
    ev = get_evaluator(_target_spec(spec, target), t, ctl)
    x, w = graded_panels(0.0, t, panels, nodes, power)
    dens = ev.densities(x)
    rho = dens[0] + dens[1] + dens[2]
    mean = float(np.dot(w * x, rho))
    second = float(np.dot(w * x * x, rho))
    var = second - mean * mean
    if var < -1e-9:
        raise ArithmeticError(f"negative variance {var} from moment quadrature")
    return mean, max(var, 0.0)


def occupation_cov(spec: ProcessSpec, t: float,
                   ctl: SeriesControl = DEFAULT_CONTROL,
                   panels: int = JOINT_PANELS, nodes: int = GL_NODES,
                   power: float = GRADING) -> float:
    """Covariance of the two off-state occupation times.

    Only the plane part of the joint law enters the cross moment; every
    line and atom piece has one coordinate equal to 0.
    """
    if not (t > 0):
        raise ValueError(f"horizon t must be positive, got {t}")
    ev = get_joint_evaluator(spec, t, ctl)
    x, w = graded_panels(0.0, t, panels, nodes, power)
    wu = w * x
    cross = 0.0
    for j in (0, 1, 2):
        cross += float(wu @ ev.plane_grid(j, x, x) @ wu)
    e_s, _ = occupation_mean_var(spec, OccupationTarget.SHORT_OFF, t, ctl)
    e_l, _ = occupation_mean_var(spec, OccupationTarget.LONG_OFF, t, ctl)
    return cross - e_s * e_l


def cost_mean_var(spec: ProcessSpec, cost: CostSpec, t: float,
                  ctl: SeriesControl = DEFAULT_CONTROL) -> tuple[float, float]:
    """Mean and variance of the linear repair cost at horizon t."""
    s = summarize(spec, cost, t, ctl)
    return s.e_c, s.var_c


def summarize(spec: ProcessSpec, cost: CostSpec, t: float,
              ctl: SeriesControl = DEFAULT_CONTROL) -> MomentSummary:
    """All moment quantities for one (t, p1) configuration."""
    e_s, var_s = occupation_mean_var(spec, OccupationTarget.SHORT_OFF, t, ctl)
    e_l, var_l = occupation_mean_var(spec, OccupationTarget.LONG_OFF, t, ctl)
    cov = occupation_cov(spec, t, ctl)
    a = cost.c1 - cost.c0
    b = cost.c2 - cost.c0
    e_c = cost.c0 * t + a * e_s + b * e_l
    var_c = a * a * var_s + b * b * var_l + 2.0 * a * b * cov
    denom = np.sqrt(var_s * var_l)
    rho = cov / denom if denom > 0.0 else 0.0
    return MomentSummary(t=t, p1=spec.p1, e_s=e_s, var_s=var_s, e_l=e_l,
                         var_l=var_l, e_c=e_c, var_c=max(var_c, 0.0),
                         rho_sl=rho, cov_sl=cov)


def reproduce_table(spec: ProcessSpec, ts, p1s, cost: CostSpec = CostSpec(),
                    ctl: SeriesControl = DEFAULT_CONTROL,
                    workers: int | None = None) -> list[MomentSummary]:
    """Moment summaries over the (t, p1) product, ordered by (t, p1).

    Cells are independent and evaluated on a small thread pool; results
    are deterministic regardless of schedule.
    """
    ts = [float(t) for t in ts]
    p1s = [float(p) for p in p1s]
    if not ts or not p1s:
        raise ValueError("need at least one t and one p1")
    cells = [(t, p1) for t in sorted(ts) for p1 in sorted(p1s)]
    specs = {p1: spec.with_p1(p1) for p1 in set(p1s)}

    def cell(args):
        t, p1 = args
        return summarize(specs[p1], cost, t, ctl)

    n_workers = workers if workers is not None else thread_count()
    if n_workers <= 1 or len(cells) == 1:
        return [cell(c) for c in cells]
    with ThreadPoolExecutor(max_workers=min(n_workers, len(cells))) as pool:
        return list(pool.map(cell, cells))
