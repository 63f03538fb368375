"""Structural proportions and the classical balancing estimators.

Gravity and logit proportions, mean-cost calibration of the deterrence
parameter, Furness (biproportional) balancing and its seed-matrix extension,
plus the entropy-style weights the classical models maximise.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln

from .core import (
    ConvergenceError,
    InfeasibleError,
    as_costs,
    as_proportions,
    as_trip_matrix,
)

__all__ = [
    "BalancedMatrix",
    "ExtendedBalance",
    "calibrate_beta",
    "dirichlet_params",
    "entropy",
    "extended_furness",
    "furness_balance",
    "gravity_log_proportions",
    "gravity_proportions",
    "log_entropy_weight",
    "log_relative_weight",
    "logit_proportions",
    "mean_proportion_cost",
]


def _log_normalize(logw):
    top = np.max(logw)
    if not np.isfinite(top):
        raise ValueError("all weights are zero")
    shifted = logw - top
    return shifted - np.log(np.exp(shifted).sum())


def gravity_log_proportions(c, beta):
    """``log p_ij`` for ``p_ij ∝ exp(-beta c_ij)``."""
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    return _log_normalize(-beta * as_costs(c))


def gravity_proportions(c, beta):
    """Exponential-deterrence proportions ``exp(-beta c_ij) / Z(beta)``."""
    return np.exp(gravity_log_proportions(c, beta))


def logit_proportions(x, coeffs):
    """Multinomial-logit proportions from per-cell covariates.

    Parameters
    ----------
    x : array_like, shape (n, n, q)
        Covariate vector for each OD pair.
    coeffs : array_like, shape (q,)
        Known coefficients.
    """
    x = np.asarray(x, dtype=np.float64)
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=np.float64))
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3 or x.shape[0] != x.shape[1]:
        raise ValueError(f"covariates must have shape (n, n, q), got {x.shape}")
    if x.shape[2] != coeffs.size:
        raise ValueError(
            f"{x.shape[2]} covariates per cell but {coeffs.size} coefficients"
        )
    return np.exp(_log_normalize(x @ coeffs))


def mean_proportion_cost(p, c):
    """Mean cost ``sum c_ij p_ij`` implied by the proportions."""
    p = np.asarray(p, dtype=np.float64)
    c = as_costs(c)
    if p.shape != c.shape:
        raise ValueError(f"shape mismatch: proportions {p.shape}, costs {c.shape}")
    return float(np.sum(c * p))


def calibrate_beta(c, target_cost, tol=1e-10):
    """Deterrence ``beta`` whose gravity proportions have mean cost ``target_cost``.

    The mean cost is strictly decreasing in beta, running from ``max(c)`` as
    beta -> -inf to ``min(c)`` as beta -> +inf, so any target strictly inside
    that range has a unique root. Negative beta is returned when the target
    exceeds the unweighted mean cost.
    """
    c = as_costs(c)
    lo_c, hi_c = float(c.min()), float(c.max())
    if lo_c == hi_c:
        if target_cost == lo_c:
            return 0.0
        raise ValueError(f"constant costs only attain mean cost {lo_c!r}")
    if not lo_c < target_cost < hi_c:
        raise ValueError(
            f"target cost {target_cost!r} outside attainable range ({lo_c!r}, {hi_c!r})"
        )

    def gap(beta):
        return mean_proportion_cost(gravity_proportions(c, beta), c) - target_cost

    lo, hi = -1.0, 1.0
    for _ in range(60):
        g_lo, g_hi = gap(lo), gap(hi)
        if g_lo >= 0 >= g_hi:
            break
        if g_lo < 0:
            lo *= 2.0
        if g_hi > 0:
            hi *= 2.0
    else:
        raise ConvergenceError("could not bracket the calibration target")
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    beta = brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(gap(beta)) > tol:
        raise ConvergenceError(
            f"calibration residual {abs(gap(beta))!r} exceeds tol {tol!r}"
        )
    return float(beta)


@dataclass(frozen=True, eq=False)
class BalancedMatrix:
    """Expected trips ``A_i O_i B_j D_j p_ij`` with the fitted balancing factors.

    Factors are normalised so the first origin with positive total has
    ``A_i = 1``. Rows or columns with a zero total get a zero factor.
    """

    cells: np.ndarray
    row_factors: np.ndarray
    col_factors: np.ndarray
    iterations: int
    residual: float

    def regional_cost(self, c):
        return float(np.sum(as_costs(c) * self.cells) / self.cells.sum())


@dataclass(frozen=True, eq=False)
class ExtendedBalance(BalancedMatrix):
    """Balanced matrix plus the fixed-point proportions that produced it."""

    proportions: np.ndarray = None


def _margin_residual(x, m):
    rr = np.abs(x.sum(axis=1) - m.origins) / np.maximum(1.0, m.origins)
    cr = np.abs(x.sum(axis=0) - m.destinations) / np.maximum(1.0, m.destinations)
    return float(max(rr.max(), cr.max()))


def furness_balance(m, p, tol=1e-10, max_iter=10_000):
    """Doubly constrained balancing of ``p`` to the margins (IPF).

    Alternately rescales rows to ``O`` and columns to ``D`` until the largest
    relative margin error, ``|achieved - required| / max(1, required)``, falls
    below ``tol``.

    Raises
    ------
    InfeasibleError
        A zone with positive total has no proportion mass to carry it.
    ConvergenceError
        ``max_iter`` passes without meeting ``tol``; usually a zero pattern
        in ``p`` that no table with these margins can match.
    """
    p = as_proportions(p, normalize=True)
    if p.shape != (m.n, m.n):
        raise ValueError(f"proportions are {p.shape} but margins have {m.n} zones")
    o = m.origins.astype(np.float64)
    d = m.destinations.astype(np.float64)
    a = np.ones(m.n)
    b = np.ones(m.n)
    residual = np.inf
    it = 0
    # factors can overflow when the zero pattern of p cannot carry the
    # margins; that is caught explicitly below instead of warned about
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                raise InfeasibleError(
                    "balancing factors diverged; the zero pattern of p cannot "
                    "carry these margins"
                )
            rs = p @ b
            if np.any((rs == 0) & (o > 0)):
                raise InfeasibleError("an origin with trips has no reachable destination")
            a = np.divide(o, rs, out=np.zeros_like(o), where=rs > 0)
            cs = a @ p
            if np.any((cs == 0) & (d > 0)):
                raise InfeasibleError("a destination with trips has no reachable origin")
            b = np.divide(d, cs, out=np.zeros_like(d), where=cs > 0)
            x = a[:, None] * p * b[None, :]
            residual = _margin_residual(x, m)
            if residual < tol:
                break
        else:
            raise ConvergenceError(
                f"Furness did not converge in {max_iter} iterations "
                f"(residual {residual:.3e}); the zero pattern of p may be "
                "incompatible with the margins"
            )
    big_a = np.divide(a, o, out=np.zeros_like(a), where=o > 0)
    big_b = np.divide(b, d, out=np.zeros_like(b), where=d > 0)
    ref = np.flatnonzero(big_a > 0)
    if ref.size:
        scale = big_a[ref[0]]
        big_a = big_a / scale
        big_b = big_b * scale
    return BalancedMatrix(x, big_a, big_b, it, residual)


def entropy(p):
    """Shannon entropy ``-sum p log p`` with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def log_entropy_weight(t):
    """``log W = log T! - sum log T_ij!``, the log count of micro states."""
    t = as_trip_matrix(t)
    return float(gammaln(t.sum() + 1.0) - gammaln(t + 1.0).sum())


def log_relative_weight(t, seed):
    """``log W' = -sum (T_ij log(T_ij / t_ij) - T_ij)`` against a seed table."""
    t = as_trip_matrix(t)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != t.shape:
        raise ValueError(f"seed shape {seed.shape} != table shape {t.shape}")
    if np.any(seed < 0):
        raise ValueError("seed cells must be nonnegative")
    pos = t > 0
    if np.any(pos & (seed <= 0)):
        raise ValueError("seed is zero where the table has trips")
    tp = t[pos].astype(np.float64)
    return float(-np.sum(tp * np.log(tp / seed[pos]) - tp))


def dirichlet_params(pi, shape):
    """Broadcast a scalar or array of Dirichlet pseudo-counts to ``shape``."""
    arr = np.broadcast_to(np.asarray(pi, dtype=np.float64), shape).copy()
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("Dirichlet parameters must be finite and positive")
    return arr


def extended_furness(m, seed=None, pi=1.0, tol=1e-10, max_iter=1_000):
    """Joint-mode candidate for the seed-matrix Dirichlet model.

    Alternates a full Furness balance at the current proportions with the
    update ``p_ij ∝ T_ij + t_ij + pi_ij - 1`` until the proportions stop
    moving (max absolute change below ``tol``). The returned matrix carries
    the final balance; ``proportions`` holds the fixed-point ``p``.
    """
    n = m.n
    pi = dirichlet_params(pi, (n, n))
    t0 = np.zeros((n, n)) if seed is None else np.asarray(seed, dtype=np.float64)
    if t0.shape != (n, n) or np.any(t0 < 0):
        raise ValueError("seed must be a nonnegative n x n table")
    prior = t0 + pi - 1.0
    start = t0 + pi
    p = start / start.sum()
    change = np.inf
    for it in range(1, max_iter + 1):
        bal = furness_balance(m, p, tol=tol)
        num = bal.cells + prior
        if np.any(num < 0):
            i, j = np.argwhere(num < 0)[0]
            raise ConvergenceError(
                f"negative update numerator at cell ({i + 1},{j + 1}); use pi >= 1"
            )
        p_new = num / num.sum()
        change = float(np.max(np.abs(p_new - p)))
        p = p_new
        if change < tol:
            break
    else:
        raise ConvergenceError(
            f"extended Furness did not converge in {max_iter} updates "
            f"(last change {change:.3e})"
        )
    bal = furness_balance(m, p, tol=tol)
    return ExtendedBalance(bal.cells, bal.row_factors, bal.col_factors, it, change, p)
