"""Estimators, summaries and small-case exact oracles over chain output."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import (
    InfeasibleError,
    as_costs,
    as_proportions,
    as_trip_matrix,
    complete_from_submatrix,
    delta,
    round_to_feasible,
)
from .priors import furness_balance, gravity_proportions, mean_proportion_cost

__all__ = [
    "CostSummary",
    "Diagnostics",
    "PosteriorSummary",
    "TldSummary",
    "aggregate_bin_proportions",
    "cell_mode",
    "cost_distribution",
    "credible_interval",
    "diagnostics",
    "effective_sample_size",
    "enumerate_consistent_tables",
    "equal_tailed_interval",
    "event_probability",
    "exact_2x2_posterior",
    "exact_posterior",
    "map_estimate",
    "modal_table",
    "posterior_mean",
    "regional_cost",
    "regional_costs",
    "summarize",
    "table_frequency",
    "tld_distribution",
    "tld_of",
]

LOW_ESS = 100.0


def posterior_mean(out):
    """Cellwise average of the recorded tables."""
    return out.draws.mean(axis=0)


def cell_mode(out, i, j):
    """Most frequent value of cell ``(i, j)`` (0-based); ties go to the smaller."""
    vals, counts = np.unique(out.draws[:, i, j], return_counts=True)
    return int(vals[np.argmax(counts)])


def map_estimate(m, p):
    """Rounded, margin-repaired Furness solution: the MAP candidate."""
    bal = furness_balance(m, p)
    table, _ = round_to_feasible(bal.cells, m, support=np.asarray(p) > 0)
    return table


def modal_table(out):
    """Most frequently sampled table and its relative frequency."""
    flat = out.draws.reshape(out.samples, -1)
    uniq, counts = np.unique(flat, axis=0, return_counts=True)
    k = int(np.argmax(counts))
    return uniq[k].reshape(out.n, out.n), counts[k] / out.samples


def table_frequency(out, table):
    """Fraction of draws exactly equal to ``table``."""
    t = as_trip_matrix(table)
    return float(np.mean(np.all(out.draws == t[None], axis=(1, 2))))


def equal_tailed_interval(values, gamma):
    """Order statistics at ranks ``ceil(G(1-gamma)/2)`` and ``floor(G(1+gamma)/2)``.

    Ranks are 1-based and clipped to ``[1, G]``; at ``gamma = 1`` the interval
    is the full observed range.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    v = np.sort(np.asarray(values).ravel())
    g = v.size
    if g == 0:
        raise ValueError("no values")
    lo = min(max(1, math.ceil(g * (1 - gamma) / 2 - 1e-9)), g)
    hi = min(max(1, math.floor(g * (1 + gamma) / 2 + 1e-9)), g)
    if lo > hi:
        lo, hi = hi, lo
    return v[lo - 1], v[hi - 1]


def credible_interval(out, i, j, gamma=0.95):
    lo, hi = equal_tailed_interval(out.draws[:, i, j], gamma)
    return int(lo), int(hi)


def regional_cost(t, c):
    """Trip-weighted mean cost ``sum c_ij T_ij / T``."""
    t = as_trip_matrix(t)
    total = t.sum()
    if total == 0:
        raise ValueError("regional cost undefined for an empty table")
    return float(np.sum(as_costs(c) * t) / total)


def regional_costs(out, c):
    c = as_costs(c)
    total = out.margins.total
    if total == 0:
        raise ValueError("regional cost undefined for an empty table")
    return np.einsum("gij,ij->g", out.draws.astype(np.float64), c) / total


@dataclass(frozen=True)
class CostSummary:
    mean: float
    interval: tuple
    exceedance: dict
    hist_edges: np.ndarray
    hist_counts: np.ndarray


def cost_distribution(out, c, gamma=0.95, thresholds=()):
    """Posterior of the regional cost: mean, interval, ``P(cost >= x)``, histogram.

    Histogram bins follow the Freedman-Diaconis rule.
    """
    v = regional_costs(out, c)
    lo, hi = equal_tailed_interval(v, gamma)
    exceed = {float(x): float(np.mean(v >= x)) for x in thresholds}
    edges = np.histogram_bin_edges(v, bins="fd")
    counts, _ = np.histogram(v, bins=edges)
    return CostSummary(float(v.mean()), (float(lo), float(hi)), exceed, edges, counts)


def tld_of(t, c, bins):
    """Trips per cost bin, ``T_k = sum T_ij 1{c_ij in (c_{k-1}, c_k]}``."""
    t = as_trip_matrix(t)
    idx = bins.bin_index(as_costs(c))
    return np.bincount(idx.ravel(), weights=t.ravel(), minlength=bins.k).astype(np.int64)


def aggregate_bin_proportions(p, c, bins):
    """Proportion mass per cost bin."""
    p = np.asarray(p, dtype=np.float64)
    idx = bins.bin_index(as_costs(c))
    return np.bincount(idx.ravel(), weights=p.ravel(), minlength=bins.k)


@dataclass(frozen=True)
class TldSummary:
    """Posterior trip-length distribution as shares of the total."""

    labels: list
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    reference: np.ndarray = None


def _draw_tld(out, c, bins):
    idx = bins.bin_index(as_costs(c)).ravel()
    onehot = np.zeros((idx.size, bins.k))
    onehot[np.arange(idx.size), idx] = 1.0
    return out.draws.reshape(out.samples, -1).astype(np.float64) @ onehot


def tld_distribution(out, c, bins, gamma=0.95, reference=None):
    """Per-bin posterior mean and interval of ``T_k / T``.

    ``reference`` is an optional length-K line to carry along, e.g. the
    aggregated prior proportions.
    """
    total = out.margins.total
    if total == 0:
        raise ValueError("trip-length shares undefined for an empty table")
    shares = _draw_tld(out, c, bins) / total
    ivals = [equal_tailed_interval(shares[:, k], gamma) for k in range(bins.k)]
    return TldSummary(
        bins.labels(),
        shares.mean(axis=0),
        np.array([a for a, _ in ivals]),
        np.array([b for _, b in ivals]),
        None if reference is None else np.asarray(reference, dtype=np.float64),
    )


def event_probability(out, predicate):
    """Fraction of draws for which ``predicate(table)`` holds."""
    return float(np.mean([bool(predicate(t)) for t in out.draws]))


def _log_multinomial_weight(tables, p):
    with np.errstate(divide="ignore"):
        lp = np.log(p)
    tf = tables.astype(np.float64)
    term = np.where(tables > 0, tf * lp, 0.0)
    return term.sum(axis=(1, 2)) - gammaln(tf + 1.0).sum(axis=(1, 2))


def exact_2x2_posterior(m, p):
    """Exact posterior of ``T_11`` for a two-zone table.

    Returns ``(support, probabilities)``; each support value is completed to
    a full table and weighted by its multinomial mass.
    """
    if m.n != 2:
        raise ValueError("exact_2x2_posterior needs n == 2")
    p = as_proportions(p)
    lo = max(0, delta(m))
    hi = min(int(m.origins[0]), int(m.destinations[0]))
    if lo > hi:
        raise InfeasibleError("no table matches these margins")
    support = np.arange(lo, hi + 1)
    tables = np.empty((support.size, 2, 2), dtype=np.int64)
    tables[:, 0, 0] = support
    tables[:, 0, 1] = m.origins[0] - support
    tables[:, 1, 0] = m.destinations[0] - support
    tables[:, 1, 1] = support - delta(m)
    logw = _log_multinomial_weight(tables, p)
    if not np.any(np.isfinite(logw)):
        raise InfeasibleError("every feasible table has zero prior mass")
    return support, np.exp(logw - logsumexp(logw))


def enumerate_consistent_tables(m, cap=1_000_000):
    """All nonnegative integer tables with the given margins, row-major order.

    Raises ValueError once more than ``cap`` tables have been produced.
    """
    n = m.n
    rows = m.origins.astype(np.int64).copy()
    cols = m.destinations.astype(np.int64).copy()
    cur = np.zeros((n, n), dtype=np.int64)
    found = []

    def visit(cell):
        if cell == n * n:
            found.append(cur.copy())
            if len(found) > cap:
                raise ValueError(f"more than {cap} consistent tables")
            return
        i, j = divmod(cell, n)
        if j == n - 1 or i == n - 1:
            v = rows[i] if j == n - 1 else cols[j]
            if i == n - 1 and v != cols[j]:
                return
            if j == n - 1 and v != rows[i]:
                return
            choices = (v,) if v <= min(rows[i], cols[j]) else ()
        else:
            hi = min(rows[i], cols[j])
            lo = max(0, rows[i] - int(cols[j + 1:].sum()))
            choices = range(lo, hi + 1)
        for v in choices:
            cur[i, j] = v
            rows[i] -= v
            cols[j] -= v
            visit(cell + 1)
            rows[i] += v
            cols[j] += v
        cur[i, j] = 0

    visit(0)
    return found


def exact_posterior(m, p=None, pi=None, seed=None, cap=1_000_000):
    """Exact table posterior by enumeration for small instances.

    With ``p`` the weights are multinomial, ``T! prod p_ij^T_ij / T_ij!``.
    With ``pi`` (Dirichlet proportions integrated out, optional seed table
    ``T0``) they are ``prod Gamma(T_ij + t_ij + pi_ij) / T_ij!``.
    Returns ``(tables, probabilities)`` with tables stacked ``(N, n, n)``.
    """
    if (p is None) == (pi is None):
        raise ValueError("give exactly one of p or pi")
    tables = np.array(enumerate_consistent_tables(m, cap))
    if tables.size == 0:
        raise InfeasibleError("no table matches these margins")
    if p is not None:
        logw = _log_multinomial_weight(tables, as_proportions(p))
    else:
        alpha = np.broadcast_to(np.asarray(pi, dtype=np.float64), (m.n, m.n))
        if seed is not None:
            alpha = alpha + np.asarray(seed, dtype=np.float64)
        tf = tables.astype(np.float64)
        logw = (gammaln(tf + alpha) - gammaln(tf + 1.0)).sum(axis=(1, 2))
    return tables, np.exp(logw - logsumexp(logw))


def effective_sample_size(x):
    """ESS with Geyer's initial positive sequence truncation, capped at ``G``.

    A constant sequence returns ``G``.
    """
    x = np.asarray(x, dtype=np.float64)
    g = x.size
    if g < 4:
        raise ValueError("need at least 4 draws")
    xc = x - x.mean()
    if not np.any(xc):
        return float(g)
    f = np.fft.rfft(xc, 2 * g)
    acov = np.fft.irfft(f * np.conj(f), 2 * g)[:g]
    rho = acov / acov[0]
    s = 0.0
    k = 0
    while 2 * k + 1 < g:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        s += pair
        k += 1
    tau = 2.0 * s - 1.0
    if tau <= 0:
        return float(g)
    return float(min(g, g / tau))


def _split_half(x):
    h = x.size // 2
    a, b = x[:h], x[h:2 * h]
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        return 0.0 if a[0] == b[0] else math.inf
    se2 = 0.0
    for part, var in ((a, va), (b, vb)):
        if var > 0:
            se2 += var / effective_sample_size(part)
    return float(abs(a.mean() - b.mean()) / math.sqrt(se2))


@dataclass(frozen=True)
class Diagnostics:
    """Per-cell ESS and split-half z-scores, plus per-block acceptance rates.

    ``split_half`` is the difference between first- and second-half means in
    units of their combined standard error.
    """

    ess: np.ndarray
    zero_variance: np.ndarray
    split_half: np.ndarray
    acceptance: dict
    aux_ess: object = None


def diagnostics(out):
    g, n = out.samples, out.n
    if g < 4:
        raise ValueError("diagnostics need at least 4 draws")
    ess = np.empty((n, n))
    split = np.empty((n, n))
    zero = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            x = out.draws[:, i, j].astype(np.float64)
            zero[i, j] = bool(np.all(x == x[0]))
            ess[i, j] = effective_sample_size(x)
            split[i, j] = _split_half(x) if g >= 8 else 0.0
    aux_ess = None
    if out.aux_kind == "beta":
        aux_ess = effective_sample_size(out.aux)
    elif out.aux_kind == "p":
        aux_ess = np.array(
            [[effective_sample_size(out.aux[:, i, j]) for j in range(n)] for i in range(n)]
        )
    return Diagnostics(ess, zero, split, dict(out.acceptance), aux_ess)


@dataclass
class PosteriorSummary:
    """Everything reported for one chain; see ``summarize``."""

    gamma: float
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mode_table: np.ndarray
    mode_frequency: float
    ess: np.ndarray
    low_ess: np.ndarray
    split_half: np.ndarray
    map_table: np.ndarray = None
    map_frequency: float = None
    map_cost: float = None
    events: dict = field(default_factory=dict)
    cost: CostSummary = None
    tld: TldSummary = None
    beta: dict = None
    proportions: dict = None

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        d = {
            "gamma": self.gamma,
            "mean": arr(self.mean),
            "intervals": {"lower": arr(self.lower), "upper": arr(self.upper)},
            "mode_table": {"table": arr(self.mode_table), "frequency": self.mode_frequency},
            "diagnostics": {
                "ess": arr(self.ess),
                "low_ess": arr(self.low_ess),
                "split_half": arr(self.split_half),
            },
            "events": dict(self.events),
        }
        if self.map_table is not None:
            d["map_table"] = {
                "table": arr(self.map_table),
                "frequency": self.map_frequency,
                "cost": self.map_cost,
            }
        if self.cost is not None:
            d["cost"] = {
                "mean": self.cost.mean,
                "interval": list(self.cost.interval),
                "exceedance": {repr(k): v for k, v in self.cost.exceedance.items()},
            }
        if self.tld is not None:
            d["tld"] = {
                "labels": self.tld.labels,
                "mean": arr(self.tld.mean),
                "lower": arr(self.tld.lower),
                "upper": arr(self.tld.upper),
                "reference": arr(self.tld.reference),
            }
        if self.beta is not None:
            d["beta"] = dict(self.beta)
        if self.proportions is not None:
            d["proportions"] = {k: arr(v) for k, v in self.proportions.items()}
        return d


def summarize(out, gamma=0.95, costs=None, bins=None, thresholds=(), p=None):
    """Posterior summary of a chain.

    ``p`` (fixed proportions) adds the rounded Furness MAP candidate. For
    beta chains the MAP candidate is the Furness solution at the posterior
    mean beta; for Dirichlet chains, at the posterior mean proportions.
    """
    g, n = out.samples, out.n
    lower = np.empty((n, n), dtype=np.int64)
    upper = np.empty((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            lower[i, j], upper[i, j] = credible_interval(out, i, j, gamma)
    mode, mode_freq = modal_table(out)
    if g >= 4:
        diag = diagnostics(out)
        ess, split = diag.ess, diag.split_half
    else:
        ess, split = np.full((n, n), float(g)), np.zeros((n, n))
    s = PosteriorSummary(
        gamma, posterior_mean(out), lower, upper, mode, float(mode_freq),
        ess, ess < LOW_ESS, split,
    )

    ref_p = p
    if out.aux_kind == "beta":
        beta_mean = float(out.aux.mean())
        lo, hi = equal_tailed_interval(out.aux, gamma)
        s.beta = {
            "mean": beta_mean,
            "interval": [float(lo), float(hi)],
            "ess": effective_sample_size(out.aux) if g >= 4 else float(g),
        }
        if costs is not None:
            cp = [mean_proportion_cost(gravity_proportions(costs, b), costs) for b in out.aux]
            s.beta["mean_proportion_cost"] = float(np.mean(cp))
            ref_p = gravity_proportions(costs, beta_mean)
    elif out.aux_kind == "p":
        ref_p = out.aux.mean(axis=0)
        s.proportions = {"mean": ref_p}

    if ref_p is not None:
        bal = furness_balance(out.margins, ref_p)
        s.map_table, _ = round_to_feasible(bal.cells, out.margins, support=np.asarray(ref_p) > 0)
        s.map_frequency = table_frequency(out, s.map_table)
        if costs is not None and out.margins.total > 0:
            s.map_cost = bal.regional_cost(costs)

    if costs is not None and out.margins.total > 0:
        s.cost = cost_distribution(out, costs, gamma, thresholds)
        s.events.update(
            {f"cost>={k!r}": v for k, v in s.cost.exceedance.items()}
        )
        if bins is not None:
            reference = None
            if out.aux_kind == "beta":
                reference = np.mean(
                    [aggregate_bin_proportions(gravity_proportions(costs, b), costs, bins)
                     for b in out.aux],
                    axis=0,
                )
            elif out.aux_kind == "p":
                reference = np.mean(
                    [aggregate_bin_proportions(q, costs, bins) for q in out.aux], axis=0
                )
            elif ref_p is not None:
                reference = aggregate_bin_proportions(ref_p, costs, bins)
            s.tld = tld_distribution(out, costs, bins, gamma, reference)
    if s.map_table is not None:
        s.events["table==map"] = s.map_frequency
    return s
