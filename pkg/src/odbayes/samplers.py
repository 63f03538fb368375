"""Metropolis-within-Gibbs samplers for OD tables given their margins.

Three chains share one cell-update kernel:

* ``run_fixed_p_chain`` -- proportions known;
* ``run_seed_chain`` -- Dirichlet proportions, optionally updated by a seed
  table, resampled exactly after every sweep;
* ``run_beta_tld_chain`` -- gravity proportions with a random deterrence
  parameter, optionally informed by binned trip-length counts.

Each cell move shifts one trip between cell ``(i, j)`` and a reference row
``k`` and column ``l``. Holding the reference fixed at the last zone can
leave sparse tables stuck in one part of their support (for instance when
the last zone has no trips), so the reference cycles through every
``(k, l)`` pair from sweep to sweep, starting at the last zone.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from . import kernels
from .core import (
    ConvergenceError,
    InfeasibleError,
    MarginData,
    as_costs,
    as_proportions,
    as_trip_matrix,
    check_consistency,
    round_to_feasible,
)
from .priors import dirichlet_params, furness_balance, gravity_log_proportions

__all__ = [
    "ChainConfig",
    "ChainOutput",
    "NchgParams",
    "beta_step",
    "dirichlet_step",
    "gibbs_sweep",
    "initial_table",
    "make_rng",
    "metropolis_step",
    "nchg_log_pmf_unnormalized",
    "nchg_support",
    "phi_log",
    "phi_log_derivative",
    "run_beta_tld_chain",
    "run_fixed_p_chain",
    "run_seed_chain",
]


def make_rng(seed):
    """The chain's random stream: PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class NchgParams:
    """Non-central hypergeometric ``HG(o, d, delta; psi)``."""

    o: int
    d: int
    delta: int
    psi: float

    def __post_init__(self):
        if not self.psi >= 0 or not np.isfinite(self.psi):
            raise ValueError(f"psi must be finite and nonnegative, got {self.psi!r}")

    @property
    def log_psi(self):
        return np.log(self.psi) if self.psi > 0 else -np.inf


def nchg_support(p):
    lo, hi = max(0, p.delta), min(p.o, p.d)
    if lo > hi:
        raise InfeasibleError(f"empty support for {p}")
    return lo, hi


def nchg_log_pmf_unnormalized(x, p):
    """``log[C(o, x) C(d - delta, d - x) psi^x]``."""
    lo, hi = nchg_support(p)
    x = np.asarray(x)
    if np.any((x < lo) | (x > hi)):
        raise ValueError(f"x outside support [{lo}, {hi}]")
    xf = x.astype(np.float64)
    m = p.d - p.delta
    val = (
        gammaln(p.o + 1.0) - gammaln(xf + 1.0) - gammaln(p.o - xf + 1.0)
        + gammaln(m + 1.0) - gammaln(p.d - xf + 1.0) - gammaln(xf - p.delta + 1.0)
    )
    if p.psi > 0:
        val = val + xf * np.log(p.psi)
    else:
        val = np.where(xf == 0, val, -np.inf)
    return val if val.ndim else float(val)


def metropolis_step(x, p, rng):
    """Single random-walk Metropolis update of one cell; returns the new value."""
    lo, hi = nchg_support(p)
    if not lo <= x <= hi:
        raise ValueError(f"x={x} outside support [{lo}, {hi}]")
    new, _ = kernels.metropolis_step(
        np.int64(x), np.int64(p.o), np.int64(p.d), np.int64(p.delta), p.log_psi, rng
    )
    return int(new)


@dataclass(frozen=True)
class ChainConfig:
    """Run length, thinning, seed and beta proposal variance.

    ``burn_in=None`` means ``10 n^2`` sweeps for an n-zone table.
    """

    samples: int = 10_000
    burn_in: int = None
    thin: int = 1
    rng_seed: int = 0
    sigma2: float = 1e-4

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    def resolved_burn_in(self, n):
        return 10 * n * n if self.burn_in is None else self.burn_in


@dataclass(frozen=True, eq=False)
class ChainOutput:
    """Recorded draws of one chain.

    ``draws`` has shape ``(G, n, n)``. ``aux`` is ``None``, a ``(G, n, n)``
    array of proportions (``aux_kind == "p"``) or a ``(G,)`` array of beta
    values (``aux_kind == "beta"``). ``acceptance`` maps block names to
    acceptance rates over every sweep, burn-in included.
    """

    draws: np.ndarray
    margins: MarginData
    config: ChainConfig
    aux: np.ndarray = None
    aux_kind: str = None
    acceptance: dict = field(default_factory=dict)
    initial: np.ndarray = None

    def __post_init__(self):
        for name in ("draws", "aux", "initial"):
            arr = getattr(self, name)
            if arr is not None:
                arr.flags.writeable = False

    @property
    def n(self):
        return self.draws.shape[1]

    @property
    def samples(self):
        return self.draws.shape[0]


def _check_psi_denominators(p):
    n = p.shape[0]
    if p[n - 1, n - 1] <= 0 or np.any(p[:-1, n - 1] <= 0) or np.any(p[n - 1, :-1] <= 0):
        raise ValueError(
            "proportions must be positive in the last row and column; "
            "psi_ij is undefined otherwise"
        )


def _log_p(p):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=np.float64))


def initial_table(m, p):
    """Furness solution rounded to integers and repaired onto the margins.

    A Furness fit that cannot converge means no table with positive prior
    mass matches the margins, so it is reported as InfeasibleError.
    """
    try:
        bal = furness_balance(m, p)
    except ConvergenceError as exc:
        raise InfeasibleError(f"no table with positive prior mass fits the margins: {exc}") from exc
    table, _ = round_to_feasible(bal.cells, m, support=np.asarray(p) > 0)
    return table


def _start(m, p, init):
    if init is None:
        return initial_table(m, p)
    t = as_trip_matrix(init).copy()
    if not check_consistency(t, m):
        raise ValueError("initial table does not match the margins")
    return t


def _acceptance(accepts, sweeps):
    # every sweep attempts (n-1)^2 cell updates
    n = accepts.shape[0]
    return float(accepts.sum()) / max(1, (n - 1) ** 2 * sweeps)


def gibbs_sweep(t, p, m, rng, ref=None):
    """One Metropolis-within-Gibbs sweep; returns a new consistent table.

    ``ref = (k, l)`` picks the reference row and column that absorb each cell
    move (0-based); the default is the last zone for both.
    """
    p = as_proportions(p)
    _check_psi_denominators(p)
    t = as_trip_matrix(t).copy()
    if not check_consistency(t, m):
        raise ValueError("table does not match the margins")
    k, l = (m.n - 1, m.n - 1) if ref is None else ref
    if not (0 <= k < m.n and 0 <= l < m.n):
        raise ValueError(f"reference zone {ref} out of range")
    accepts = np.zeros((m.n, m.n), dtype=np.int64)
    kernels.gibbs_sweep(t, _log_p(p), int(k), int(l), rng, accepts)
    return t


def run_fixed_p_chain(m, p, init=None, cfg=ChainConfig()):
    """Sample tables from the posterior with known proportions ``p``."""
    p = as_proportions(p)
    if p.shape != (m.n, m.n):
        raise ValueError(f"proportions are {p.shape} but margins have {m.n} zones")
    _check_psi_denominators(p)
    t = _start(m, p, init)
    start = t.copy()
    rng = make_rng(cfg.rng_seed)
    burn = cfg.resolved_burn_in(m.n)
    draws = np.empty((cfg.samples, m.n, m.n), dtype=np.int64)
    accepts = np.zeros((m.n, m.n), dtype=np.int64)
    kernels.fixed_p_chain(
        t, _log_p(p), burn, cfg.samples, cfg.thin, rng, draws, accepts
    )
    sweeps = burn + cfg.samples * cfg.thin
    return ChainOutput(
        draws, m, replace(cfg, burn_in=burn),
        acceptance={"cells": _acceptance(accepts, sweeps)}, initial=start,
    )


def dirichlet_step(t, seed, pi, rng):
    """Exact draw ``p ~ Dir(pi + T [+ T0])``."""
    t = as_trip_matrix(t)
    alpha = np.broadcast_to(np.asarray(pi, dtype=np.float64), t.shape) + t
    if seed is not None:
        alpha = alpha + np.asarray(seed, dtype=np.float64)
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise ValueError("Dirichlet parameters must be positive")
    out = np.empty(alpha.size)
    kernels.log_dirichlet(np.ascontiguousarray(alpha, dtype=np.float64).ravel(), rng, out)
    return np.exp(out).reshape(t.shape)


def run_seed_chain(m, seed=None, pi=1.0, cfg=ChainConfig(), init=None):
    """Joint sampler for tables and Dirichlet proportions.

    The prior is ``p ~ Dir(pi)``; a seed table ``T0`` enters as multinomial
    data, so each sweep resamples ``p ~ Dir(pi + T + T0)``. Aux draws are the
    proportions recorded with each table.
    """
    n = m.n
    base = dirichlet_params(pi, (n, n))
    if seed is not None:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != (n, n) or np.any(seed < 0):
            raise ValueError("seed must be a nonnegative n x n table")
        base = base + seed
    p0 = base / base.sum()
    t = _start(m, p0, init)
    start = t.copy()
    log_p = np.log((base + t) / (base + t).sum())
    rng = make_rng(cfg.rng_seed)
    burn = cfg.resolved_burn_in(n)
    draws = np.empty((cfg.samples, n, n), dtype=np.int64)
    aux = np.empty((cfg.samples, n, n))
    accepts = np.zeros((n, n), dtype=np.int64)
    kernels.seed_chain(
        t, log_p, base, burn, cfg.samples, cfg.thin, rng, draws, aux, accepts
    )
    sweeps = burn + cfg.samples * cfg.thin
    return ChainOutput(
        draws, m, replace(cfg, burn_in=burn), aux=aux, aux_kind="p",
        acceptance={"cells": _acceptance(accepts, sweeps)}, initial=start,
    )


class _TldModel:
    """Flattened costs, bin membership and Dirichlet exponents for ``Phi``."""

    def __init__(self, c, bins, tld, pi):
        self.costs = np.ascontiguousarray(as_costs(c))
        self.bins = bins
        if bins is None:
            self.bin_idx = np.zeros(self.costs.size, dtype=np.int64)
            k = 1
        else:
            self.bin_idx = bins.bin_index(self.costs).ravel()
            k = bins.k
        counts = np.zeros(k) if tld is None else np.asarray(tld, dtype=np.float64)
        if counts.shape != (k,) or np.any(counts < 0):
            raise ValueError(f"TLD counts must be {k} nonnegative values")
        pik = np.broadcast_to(np.asarray(pi, dtype=np.float64), (k,))
        if np.any(pik <= 0):
            raise ValueError("pi must be positive")
        self.expo = counts + pik - 1.0
        occupied = np.bincount(self.bin_idx, minlength=k) > 0
        if np.any(~occupied & (self.expo != 0)):
            k_bad = int(np.flatnonzero(~occupied & (self.expo != 0))[0])
            raise ValueError(
                f"cost bin {k_bad + 1} contains no OD pair but has nonzero weight"
            )
        self.t0_star = float(self.expo.sum())

    def log_phi(self, beta, t):
        t = np.asarray(t)
        return kernels.phi_log(
            float(beta), float(np.sum(self.costs * t)), self.costs.ravel(),
            self.bin_idx, self.expo, float(t.sum()) + self.t0_star,
        )


def phi_log(beta, t, tld, pi, c, bins):
    """``log Phi(beta; T, T0)``, the beta-dependent factor of the joint posterior.

    ``-beta sum c_ij T_ij + sum_k (t_k + pi_k - 1) log Z_k - (T + T0*) log Z``
    with ``T0* = sum_k (t_k + pi_k - 1)``. ``tld=None`` means no trip-length
    counts; ``bins=None`` puts every cost in a single bin.
    """
    return _TldModel(c, bins, tld, pi).log_phi(beta, as_trip_matrix(t))


def phi_log_derivative(beta, t, tld, pi, c, bins):
    """Analytic ``d log Phi / d beta``."""
    model = _TldModel(c, bins, tld, pi)
    t = as_trip_matrix(t)
    costs = model.costs.ravel()
    w = -beta * costs
    w = np.exp(w - w.max())
    k = model.expo.size
    zk = np.bincount(model.bin_idx, weights=w, minlength=k)
    czk = np.bincount(model.bin_idx, weights=w * costs, minlength=k)
    mean_all = czk.sum() / zk.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_k = np.where(zk > 0, czk / zk, 0.0)
    return float(
        -np.sum(model.costs * t)
        - np.sum(model.expo * mean_k)
        + (t.sum() + model.t0_star) * mean_all
    )


def beta_step(beta, t, tld, pi, c, bins, sigma2, rng):
    """One ``N(beta, sigma2)`` random-walk Metropolis update of beta."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    model = _TldModel(c, bins, tld, pi)
    t = as_trip_matrix(t)
    new, _ = kernels.beta_step(
        float(beta), float(np.sum(model.costs * t)), model.costs.ravel(),
        model.bin_idx, model.expo, float(t.sum()) + model.t0_star,
        float(np.sqrt(sigma2)), rng,
    )
    return float(new)


def run_beta_tld_chain(m, c, bins=None, tld=None, pi=1.0, cfg=ChainConfig(),
                       beta0=0.0, init=None):
    """Joint sampler for tables and the gravity deterrence parameter.

    Each sweep updates the free cells at ``p(beta)`` and then takes one
    random-walk step in beta with proposal variance ``cfg.sigma2``. Aux draws
    are the beta values recorded with each table.
    """
    model = _TldModel(c, bins, tld, pi)
    costs = model.costs
    if costs.shape != (m.n, m.n):
        raise ValueError(f"costs are {costs.shape} but margins have {m.n} zones")
    t = _start(m, np.exp(gravity_log_proportions(costs, beta0)), init)
    start = t.copy()
    rng = make_rng(cfg.rng_seed)
    n = m.n
    burn = cfg.resolved_burn_in(n)
    draws = np.empty((cfg.samples, n, n), dtype=np.int64)
    aux = np.empty(cfg.samples)
    accepts = np.zeros((n, n), dtype=np.int64)
    beta_accepts = np.zeros(1, dtype=np.int64)
    kernels.beta_chain(
        t, float(beta0), costs, model.bin_idx,
        model.expo, float(m.total) + model.t0_star, float(np.sqrt(cfg.sigma2)),
        burn, cfg.samples, cfg.thin, rng, draws, aux, accepts, beta_accepts,
    )
    sweeps = burn + cfg.samples * cfg.thin
    return ChainOutput(
        draws, m, replace(cfg, burn_in=burn), aux=aux, aux_kind="beta",
        acceptance={
            "cells": _acceptance(accepts, sweeps),
            "beta": float(beta_accepts[0]) / sweeps,
        },
        initial=start,
    )
