"""Monte Carlo simulator of the on-off process, with analytic comparison.

Paths follow the generative construction directly: an operating period,
then a coin flip choosing the repair type, then the repair period, until
the clock passes the horizon; the final partial holding is truncated into
its accumulator. Occupation times of unvisited states are exactly 0.0,
so atoms are detected by exact equality.

Draw protocol (shared by the scalar path and the batch engine): every
cycle consumes one draw from each of the three holding families plus one
uniform for the coin, whether or not all four are used. Replications are
organized in fixed-size batches; batch b draws from an independent
substream seeded by (seed, b), and within a batch the rounds draw whole
vectors, so the aggregate is bit-reproducible regardless of thread
schedule or evaluation order. With a single replication the batch engine
consumes the stream exactly like ``simulate_path``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .joint import JointCase, OffPart, get_joint_evaluator
from .marginal import (DEFAULT_CONTROL, OccupationTarget, ProcessSpec,
                       SeriesControl, atom_probability, get_evaluator)
from .moments import CostSpec, summarize, thread_count
from .quadrature import cell_rule

DEFAULT_MARGINAL_BINS = 150
DEFAULT_JOINT_BINS = 75
DEFAULT_BATCH = 1 << 16
#: bins enter the z-score pass/fail statistics only when the analytic
#: expected count is at least this large (below it the normal approximation
#: to the bin count is meaningless)
MIN_EXPECTED_COUNT = 10.0

_MOMENT_KEYS = ("E_S", "Var_S", "E_L", "Var_L", "E_C", "Var_C", "Cov_SL", "rho_SL")


@dataclass(frozen=True)
class PathOutcome:
    """Occupation times, final state and completed cycle count of one path."""

    s_t: float
    l_t: float
    u_t: float
    x_t: int
    n_t: int


@dataclass(frozen=True)
class HistogramSpec:
    """Binning for the empirical marginal and joint histograms."""

    marginal_bins: int = DEFAULT_MARGINAL_BINS
    joint_bins: int = DEFAULT_JOINT_BINS

    def __post_init__(self):
        if self.marginal_bins < 1 or self.joint_bins < 1:
            raise ValueError("histogram bin counts must be positive")


def simulate_path(spec: ProcessSpec, t: float, rng: np.random.Generator) -> PathOutcome:
    """One exact path of the process up to horizon t."""
    if not (t > 0):
        raise ValueError(f"horizon t must be positive, got {t}")
    u_acc = s_acc = l_acc = 0.0
    clock = 0.0
    cycles = 0
    while True:
        hold_u = spec.dist_U.sample(rng)
        coin = rng.random() < spec.p1
        hold_s = spec.dist_S.sample(rng)
        hold_l = spec.dist_L.sample(rng)
        if clock + hold_u >= t:
            u_acc += t - clock
            return PathOutcome(s_acc, l_acc, u_acc, 0, cycles)
        u_acc += hold_u
        clock += hold_u
        off = hold_s if coin else hold_l
        if clock + off >= t:
            rest = t - clock
            if coin:
                return PathOutcome(s_acc + rest, l_acc, u_acc, 1, cycles)
            return PathOutcome(s_acc, l_acc + rest, u_acc, 2, cycles)
        if coin:
            s_acc += off
        else:
            l_acc += off
        clock += off
        cycles += 1


def _simulate_batch(spec: ProcessSpec, t: float, rng: np.random.Generator,
                    size: int):
    """Vectorized batch of paths; same per-cycle draw protocol as
    ``simulate_path`` with all draws taken as whole vectors per round."""
    s_acc = np.zeros(size)
    l_acc = np.zeros(size)
    u_acc = np.zeros(size)
    clock = np.zeros(size)
    x_t = np.zeros(size, dtype=np.int64)
    n_t = np.zeros(size, dtype=np.int64)
    alive = np.ones(size, dtype=bool)
    while alive.any():
        hold_u = spec.dist_U.sample(rng, size)
        coin = rng.random(size) < spec.p1
        hold_s = spec.dist_S.sample(rng, size)
        hold_l = spec.dist_L.sample(rng, size)

        rem = t - clock
        end_on = alive & (hold_u >= rem)
        u_acc[end_on] += rem[end_on]
        cont = alive & ~end_on
        u_acc[cont] += hold_u[cont]
        clock[cont] += hold_u[cont]

        off = np.where(coin, hold_s, hold_l)
        rem = t - clock
        end_off = cont & (off >= rem)
        short_end = end_off & coin
        long_end = end_off & ~coin
        s_acc[short_end] += rem[short_end]
        l_acc[long_end] += rem[long_end]
        x_t[short_end] = 1
        x_t[long_end] = 2

        go = cont & ~end_off
        s_acc[go & coin] += off[go & coin]
        l_acc[go & ~coin] += off[go & ~coin]
        clock[go] += off[go]
        n_t[go] += 1
        alive = go
    return s_acc, l_acc, u_acc, x_t, n_t


@dataclass
class EnsembleEstimate:
    """Aggregated outcome of many independent replications.

    Frequencies and densities are derived floats; the underlying counts
    (used by the exact partition invariants) and the raw per-path arrays
    are retained as well.
    """

    reps: int
    t: float
    seed: int
    bins: HistogramSpec
    atom_freq: dict = field(default_factory=dict)        # (target, j) -> float
    atom_se: dict = field(default_factory=dict)
    case_counts: dict = field(default_factory=dict)      # (s_part, l_part, j) -> int
    marginal_edges: np.ndarray | None = None
    marginal_freq: dict = field(default_factory=dict)    # (target, j) -> per-bin fractions
    joint_edges: np.ndarray | None = None
    joint_freq: dict = field(default_factory=dict)       # j -> (bins, bins) fractions
    n_counts: np.ndarray | None = None                   # completed-cycle histogram
    moments: dict = field(default_factory=dict)
    moment_se: dict = field(default_factory=dict)
    s_values: np.ndarray | None = None
    l_values: np.ndarray | None = None
    x_values: np.ndarray | None = None

    def summary_dict(self) -> dict:
        """JSON-friendly view (raw path arrays omitted)."""
        return {
            "reps": self.reps,
            "t": self.t,
            "seed": self.seed,
            "marginal_bins": self.bins.marginal_bins,
            "joint_bins": self.bins.joint_bins,
            "atoms": {f"{tgt}{j}": {"freq": self.atom_freq[(tgt, j)],
                                    "se": self.atom_se[(tgt, j)]}
                      for (tgt, j) in sorted(self.atom_freq)},
            "case_counts": {f"{sp}_{lp}_X{j}": int(c)
                            for (sp, lp, j), c in sorted(self.case_counts.items())},
            "moments": dict(self.moments),
            "moment_se": dict(self.moment_se),
            "cycle_counts": [int(c) for c in self.n_counts] if self.n_counts is not None else None,
        }


def _block_se(values: np.ndarray, stat, blocks: int = 100) -> float:
    """Standard error of a path-functional statistic by block resampling."""
    n = len(values) if values.ndim == 1 else values.shape[1]
    b = min(blocks, n)
    if b < 2:
        return float("inf")
    idx = np.array_split(np.arange(n), b)
    est = np.array([stat(sl) for sl in idx])
    return float(np.std(est, ddof=1) / np.sqrt(b))


def estimate_ensemble(spec: ProcessSpec, t: float, reps: int,
                      bins: HistogramSpec | None = None, seed: int = 0,
                      batch_size: int = DEFAULT_BATCH,
                      workers: int | None = None) -> EnsembleEstimate:
    """Simulate ``reps`` paths and aggregate atoms, histograms and moments.

    The result depends only on (spec, t, reps, bins, seed, batch_size),
    not on the worker count or completion order.
    """
    if reps < 1:
        raise ValueError("need at least one replication")
    if not (t > 0):
        raise ValueError(f"horizon t must be positive, got {t}")
    bins = bins or HistogramSpec()

    starts = list(range(0, reps, batch_size))
    sizes = [min(batch_size, reps - s) for s in starts]

    def run(args):
        b, size = args
        rng = np.random.default_rng(np.random.SeedSequence((seed, b)))
        return _simulate_batch(spec, t, rng, size)

    n_workers = workers if workers is not None else thread_count()
    jobs = list(enumerate(sizes))
    if n_workers <= 1 or len(jobs) == 1:
        parts = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
            parts = list(pool.map(run, jobs))

    s_v = np.concatenate([p[0] for p in parts])
    l_v = np.concatenate([p[1] for p in parts])
    u_v = np.concatenate([p[2] for p in parts])
    x_v = np.concatenate([p[3] for p in parts])
    n_v = np.concatenate([p[4] for p in parts])

    est = EnsembleEstimate(reps=reps, t=t, seed=seed, bins=bins,
                           s_values=s_v, l_values=l_v, x_values=x_v)

    # atoms: occupation time exactly zero, split by current state
    for j in (0, 1, 2):
        in_state = x_v == j
        for tgt, vals in (("S", s_v), ("L", l_v)):
            p_hat = float(np.mean(in_state & (vals == 0.0)))
            est.atom_freq[(tgt, j)] = p_hat
            est.atom_se[(tgt, j)] = float(np.sqrt(p_hat * (1.0 - p_hat) / reps))

    # twelve-way joint case partition (exact counts)
    for j in (0, 1, 2):
        in_state = x_v == j
        for sp, s_mask in (("atom", s_v == 0.0), ("density", s_v > 0.0)):
            for lp, l_mask in (("atom", l_v == 0.0), ("density", l_v > 0.0)):
                est.case_counts[(sp, lp, j)] = int(np.sum(in_state & s_mask & l_mask))

    # histograms (zeros belong to the atoms, not the bins)
    est.marginal_edges = np.linspace(0.0, t, bins.marginal_bins + 1)
    for j in (0, 1, 2):
        in_state = x_v == j
        for tgt, vals in (("S", s_v), ("L", l_v)):
            sel = vals[in_state & (vals > 0.0)]
            counts, _ = np.histogram(sel, bins=est.marginal_edges)
            est.marginal_freq[(tgt, j)] = counts / reps
    est.joint_edges = np.linspace(0.0, t, bins.joint_bins + 1)
    both = (s_v > 0.0) & (l_v > 0.0)
    for j in (0, 1, 2):
        sel = both & (x_v == j)
        counts, _, _ = np.histogram2d(s_v[sel], l_v[sel],
                                      bins=(est.joint_edges, est.joint_edges))
        est.joint_freq[j] = counts / reps

    est.n_counts = np.bincount(n_v)

    # moments with standard errors (exact for means, block-based otherwise)
    e_s, e_l = float(np.mean(s_v)), float(np.mean(l_v))
    var_s, var_l = float(np.var(s_v)), float(np.var(l_v))
    cov = float(np.mean((s_v - e_s) * (l_v - e_l)))
    rho = cov / np.sqrt(var_s * var_l) if var_s > 0 and var_l > 0 else 0.0
    est.moments = {"E_S": e_s, "Var_S": var_s, "E_L": e_l, "Var_L": var_l,
                   "Cov_SL": cov, "rho_SL": float(rho)}
    if reps < 2:
        est.moment_se = {k: float("inf") for k in
                         ("E_S", "E_L", "Var_S", "Var_L", "Cov_SL", "rho_SL")}
        return est
    est.moment_se = {
        "E_S": float(np.std(s_v, ddof=1) / np.sqrt(reps)),
        "E_L": float(np.std(l_v, ddof=1) / np.sqrt(reps)),
        "Var_S": _block_se(s_v, lambda sl: np.var(s_v[sl])),
        "Var_L": _block_se(l_v, lambda sl: np.var(l_v[sl])),
        "Cov_SL": _block_se(s_v, lambda sl: np.mean(
            (s_v[sl] - e_s) * (l_v[sl] - e_l))),
        "rho_SL": _block_se(s_v, lambda sl: _safe_corr(s_v[sl], l_v[sl])),
    }
    return est


def _safe_corr(a: np.ndarray, b: np.ndarray) -> float:
    va, vb = np.var(a), np.var(b)
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    return float(np.mean((a - a.mean()) * (b - b.mean())) / np.sqrt(va * vb))


def cost_moment_estimates(est: EnsembleEstimate, cost: CostSpec) -> dict:
    """Empirical cost mean/variance with standard errors, from raw paths."""
    c = (cost.c0 * (est.t - est.s_values - est.l_values)
         + cost.c1 * est.s_values + cost.c2 * est.l_values)
    mean = float(np.mean(c))
    var = float(np.var(c))
    return {
        "E_C": mean, "Var_C": var,
        "se_E_C": float(np.std(c, ddof=1) / np.sqrt(est.reps)),
        "se_Var_C": _block_se(c, lambda sl: np.var(c[sl])),
    }


# ---------------------------------------------------------------------------
# analytic reference values on the estimate's binning


@dataclass
class AnalyticReference:
    """Analytic counterparts of every compared empirical quantity."""

    atom_prob: dict          # (target, j) -> probability
    marginal_mass: dict      # (target, j) -> per-bin probability mass
    joint_mass: dict         # j -> (bins, bins) probability mass
    moments: dict


def analytic_reference(spec: ProcessSpec, t: float, bins: HistogramSpec,
                       marginal_edges: np.ndarray, joint_edges: np.ndarray,
                       cost: CostSpec = CostSpec(),
                       ctl: SeriesControl = DEFAULT_CONTROL) -> AnalyticReference:
    """Bin-integrated analytic masses plus atoms and moments."""
    atom = {}
    for j in (0, 1, 2):
        atom[("S", j)] = atom_probability(spec, OccupationTarget.SHORT_OFF, j, t, ctl)
        atom[("L", j)] = atom_probability(spec, OccupationTarget.LONG_OFF, j, t, ctl)

    # per-bin 1-D masses: all bins' quadrature nodes evaluated in one call
    nodes_list, weights_list, owners = [], [], []
    for i in range(len(marginal_edges) - 1):
        a, b = float(marginal_edges[i]), float(marginal_edges[i + 1])
        xq, wq = cell_rule(a, b, touches_zero=(i == 0))
        nodes_list.append(xq)
        weights_list.append(wq)
        owners.append(np.full(len(xq), i))
    xq = np.concatenate(nodes_list)
    wq = np.concatenate(weights_list)
    owner = np.concatenate(owners)
    nbins = len(marginal_edges) - 1

    marg = {}
    for target, base in ((("S"), spec), (("L"), spec.swapped())):
        ev = get_evaluator(base, t, ctl)
        dens = ev.densities(xq)
        for j in (0, 1, 2):
            jj = j if target == "S" else {0: 0, 1: 2, 2: 1}[j]
            mass = np.bincount(owner, weights=wq * dens[jj], minlength=nbins)
            marg[(target, j)] = mass

    # joint cell masses with marginal (line/atom) parts excluded: the 2-D
    # histogram holds only paths with both occupation times positive
    jev = get_joint_evaluator(spec, t, ctl)
    cnodes, cweights, cowner = [], [], []
    for i in range(len(joint_edges) - 1):
        a, b = float(joint_edges[i]), float(joint_edges[i + 1])
        xq1, wq1 = cell_rule(a, b, touches_zero=(i == 0))
        cnodes.append(xq1)
        cweights.append(wq1)
        cowner.append(np.full(len(xq1), i))
    un = np.concatenate(cnodes)
    wn = np.concatenate(cweights)
    own = np.concatenate(cowner)
    njoint = len(joint_edges) - 1
    joint = {}
    for j in (0, 1, 2):
        dens = jev.plane_grid(j, un, un)
        weighted = (wn[:, None] * dens) * wn[None, :]
        row_binned = np.zeros((njoint, weighted.shape[1]))
        for i in range(njoint):
            row_binned[i] = weighted[own == i].sum(axis=0)
        cell = np.zeros((njoint, njoint))
        for i in range(njoint):
            cell[:, i] = row_binned[:, own == i].sum(axis=1)
        joint[j] = cell

    mom = summarize(spec, cost, t, ctl)
    moments = {"E_S": mom.e_s, "Var_S": mom.var_s, "E_L": mom.e_l,
               "Var_L": mom.var_l, "E_C": mom.e_c, "Var_C": mom.var_c,
               "Cov_SL": mom.cov_sl, "rho_SL": mom.rho_sl}
    return AnalyticReference(atom_prob=atom, marginal_mass=marg,
                             joint_mass=joint, moments=moments)


# ---------------------------------------------------------------------------
# z-score comparison


@dataclass(frozen=True)
class CellComparison:
    label: str
    group: str  # "atom" | "marginal" | "joint" | "moment"
    empirical: float
    analytic: float
    se: float
    z: float
    checked: bool  # enters the pass/fail statistics


@dataclass
class ComparisonReport:
    """Per-cell z-scores of the ensemble against the analytic law."""

    cells: list
    n_checked: int
    max_abs_z: float
    frac_over_2: float          # all checked cells
    bin_frac_over_2: float      # marginal + joint density bins only
    flagged: list               # checked cells with |z| > 4
    passed: bool

    def __str__(self):
        lines = [f"cells checked: {self.n_checked}",
                 f"max |z|: {self.max_abs_z:.3f}",
                 f"fraction |z| > 2: {self.frac_over_2:.4f} "
                 f"(density bins: {self.bin_frac_over_2:.4f})",
                 f"passed: {self.passed}"]
        for c in self.flagged:
            lines.append(f"  FLAG {c.label}: emp={c.empirical:.6g} "
                         f"ana={c.analytic:.6g} z={c.z:.2f}")
        return "\n".join(lines)


def _z_cell(label, group, emp, ana, reps, checked=True) -> CellComparison:
    se = float(np.sqrt(max(ana * (1.0 - ana), 0.0) / reps))
    diff = emp - ana
    if se == 0.0:
        z = 0.0 if diff == 0.0 else float("inf")
    else:
        z = diff / se
    return CellComparison(label, group, float(emp), float(ana), se, float(z), checked)


def compare_to_analytic(est: EnsembleEstimate, spec: ProcessSpec, t: float,
                        ctl: SeriesControl = DEFAULT_CONTROL,
                        cost: CostSpec = CostSpec(),
                        z_limit: float = 4.0,
                        frac_2se_limit: float = 0.05) -> ComparisonReport:
    """z-scores of every empirical cell against its analytic value.

    Frequencies use the binomial standard error at the analytic mass;
    moments use the ensemble's own standard errors. Bins whose expected
    count is below MIN_EXPECTED_COUNT are reported but excluded from the
    pass criteria.
    """
    if abs(est.t - t) > 1e-12:
        raise ValueError(f"estimate was generated at t={est.t}, not {t}")
    if est.marginal_edges is None or est.joint_edges is None:
        raise ValueError("estimate carries no histograms")
    ref = analytic_reference(spec, t, est.bins, est.marginal_edges,
                             est.joint_edges, cost, ctl)
    reps = est.reps
    cells: list[CellComparison] = []

    for (tgt, j), p in sorted(ref.atom_prob.items()):
        cells.append(_z_cell(f"atom {tgt}{j}", "atom",
                             est.atom_freq[(tgt, j)], p, reps))

    for (tgt, j), masses in sorted(ref.marginal_mass.items()):
        freq = est.marginal_freq[(tgt, j)]
        for i, p in enumerate(masses):
            checked = p * reps >= MIN_EXPECTED_COUNT
            cells.append(_z_cell(f"marg {tgt}{j} bin{i}", "marginal",
                                 freq[i], p, reps, checked))

    for j, masses in sorted(ref.joint_mass.items()):
        freq = est.joint_freq[j]
        for iu, iv in zip(*np.nonzero(masses * reps >= MIN_EXPECTED_COUNT)):
            cells.append(_z_cell(f"joint X{j} cell({iu},{iv})", "joint",
                                 freq[iu, iv], masses[iu, iv], reps))

    mom_est = dict(est.moments)
    mom_se = dict(est.moment_se)
    cost_est = cost_moment_estimates(est, cost)
    mom_est["E_C"] = cost_est["E_C"]
    mom_est["Var_C"] = cost_est["Var_C"]
    mom_se["E_C"] = cost_est["se_E_C"]
    mom_se["Var_C"] = cost_est["se_Var_C"]
    for key in _MOMENT_KEYS:
        se = mom_se[key]
        diff = mom_est[key] - ref.moments[key]
        z = 0.0 if (se == 0.0 and diff == 0.0) else diff / se
        cells.append(CellComparison(f"moment {key}", "moment", mom_est[key],
                                    ref.moments[key], se, float(z), True))

    checked = [c for c in cells if c.checked]
    abs_z = np.array([abs(c.z) for c in checked]) if checked else np.array([0.0])
    bin_z = np.array([abs(c.z) for c in checked
                      if c.group in ("marginal", "joint")])
    flagged = [c for c in checked if abs(c.z) > z_limit]
    frac2 = float(np.mean(abs_z > 2.0))
    bin_frac2 = float(np.mean(bin_z > 2.0)) if bin_z.size else 0.0
    report = ComparisonReport(
        cells=cells,
        n_checked=len(checked),
        max_abs_z=float(np.max(abs_z)),
        frac_over_2=frac2,
        bin_frac_over_2=bin_frac2,
        flagged=flagged,
        passed=(not flagged) and bin_frac2 <= frac_2se_limit,
    )
    return report
