"""Composite Gauss-Legendre panels with power-graded breakpoints.

Occupation-time densities are smooth on (0, t) but can be extremely steep
near 0 (small-scale holding-time components concentrate most of their mass
within the first few hundredths of a time unit). Uniform panels misintegrate
that region badly, so panel breakpoints are graded toward the lower endpoint
by a power law. Gauss-Legendre nodes are interior, so the integrand is never
evaluated at 0 or t.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

MOMENT_PANELS = 256
JOINT_PANELS = 64
GL_NODES = 8
GRADING = 3.0


@lru_cache(maxsize=32)
def _leggauss(nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return x, w


def graded_panels(a: float, b: float, panels: int, nodes: int = GL_NODES,
                  power: float = GRADING):
    """Nodes and weights for int_a^b with panels graded toward ``a``.

    Breakpoints are a + (b-a) * (i/panels)**power; power=1 gives uniform
    panels. Returns flat arrays (x, w) with panels*nodes entries.
    """
    if b <= a:
        raise ValueError(f"empty integration interval [{a}, {b}]")
    if panels < 1 or nodes < 1:
        raise ValueError("panels and nodes must be positive")
    xg, wg = _leggauss(nodes)
    bp = a + (b - a) * (np.arange(panels + 1) / panels) ** power
    half = 0.5 * (bp[1:] - bp[:-1])[:, None]
    mid = 0.5 * (bp[1:] + bp[:-1])[:, None]
    x = (mid + half * xg[None, :]).ravel()
    w = (half * wg[None, :]).ravel()
    return x, w


def cell_rule(a: float, b: float, touches_zero: bool, nodes: int = GL_NODES):
    """Quadrature rule for one histogram cell [a, b].

    Cells clear of the origin are smooth and get a single panel; cells
    whose lower edge sits at 0 contain the steep near-zero structure and
    get graded sub-panels.
    """
    if touches_zero:
        return graded_panels(a, b, panels=6, nodes=nodes, power=GRADING)
    return graded_panels(a, b, panels=1, nodes=nodes, power=1.0)
