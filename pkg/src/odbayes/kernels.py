"""Inner loops of the samplers.

Every function here is compiled by numba unless ``ODBAYES_DISABLE_NUMBA`` is
set, in which case it runs as ordinary Python. Random numbers always come
from the ``numpy.random.Generator`` passed in, drawn in the same order on
both paths:

* cell update: proposal coin, then (only for in-range proposals) the
  acceptance uniform;
* Dirichlet draw: one gamma variate per cell, plus one uniform for cells
  whose shape is below one;
* beta update: normal proposal, then the acceptance uniform.

Tables are mutated in place; the caller owns all buffers.
"""

import math

import numpy as np

from ._accel import jit


@jit
def log_ratio_up(x, o, d, delta, log_psi):
    # log H(x+1)/H(x) for H(x) = C(o, x) C(d - delta, d - x) psi^x
    return (
        math.log(o - x)
        - math.log(x + 1)
        + math.log(d - x)
        - math.log(x + 1 - delta)
        + log_psi
    )


@jit
def metropolis_step(x, o, d, delta, log_psi, rng):
    """One +-1 random-walk step on the non-central hypergeometric.

    Returns ``(new_x, accepted)``.
    """
    lower = max(0, delta)
    upper = min(o, d)
    if rng.random() < 0.5:
        prop = x - 1
    else:
        prop = x + 1
    if prop < lower or prop > upper:
        return x, 0
    if prop > x:
        logr = log_ratio_up(x, o, d, delta, log_psi)
    else:
        logr = -log_ratio_up(prop, o, d, delta, log_psi)
    u = rng.random()
    if logr >= 0.0 or u < math.exp(logr):
        return prop, 1
    return x, 0


@jit
def reference_zone(sweep, n):
    """Reference ``(row, column)`` for a sweep.

    Sweep 0 uses the corner ``(n-1, n-1)``; successive sweeps cycle through
    all ``n^2`` pairs so that every basic 2x2 move is eventually proposed.
    """
    return n - 1 - sweep % n, n - 1 - (sweep // n) % n


@jit
def gibbs_sweep(t, log_p, k, l, rng, accepts):
    """Row-major sweep over the cells outside row ``k`` and column ``l``.

    Cell ``(i, j)`` moves together with ``(i, l)``, ``(k, j)`` and ``(k, l)``
    so the margins never change; its conditional is ``HG(o, d, delta; psi)``
    with ``psi = p_ij p_kl / (p_il p_kj)``. ``log_p`` may be unnormalised and
    may hold ``-inf``; a cell whose ``log psi`` is undefined is skipped.
    """
    n = t.shape[0]
    for i in range(n):
        if i == k:
            continue
        for j in range(n):
            if j == l:
                continue
            lpsi = log_p[i, j] + log_p[k, l] - log_p[i, l] - log_p[k, j]
            if math.isnan(lpsi):
                continue
            x = t[i, j]
            new, acc = metropolis_step(x, x + t[i, l], x + t[k, j], x - t[k, l], lpsi, rng)
            if new != x:
                diff = new - x
                t[i, j] = new
                t[i, l] -= diff
                t[k, j] -= diff
                t[k, l] += diff
            accepts[i, j] += acc


@jit
def fixed_p_chain(t, log_p, burn_in, samples, thin, rng, draws, accepts):
    n = t.shape[0]
    total = burn_in + samples * thin
    g = 0
    for s in range(total):
        k, l = reference_zone(s, n)
        gibbs_sweep(t, log_p, k, l, rng, accepts)
        if s >= burn_in and (s - burn_in + 1) % thin == 0:
            draws[g] = t
            g += 1


@jit
def log_dirichlet(alpha, rng, out):
    """Write ``log p`` for ``p ~ Dir(alpha)`` (flat arrays) into ``out``.

    Shapes below one use the boost ``G(a) = G(a + 1) U^(1/a)`` evaluated in
    log space, so tiny shapes never underflow to an exact zero.
    """
    k = alpha.size
    top = -np.inf
    for c in range(k):
        a = alpha[c]
        if a < 1.0:
            g = rng.standard_gamma(a + 1.0)
            u = 1.0 - rng.random()
            lg = math.log(g) + math.log(u) / a
        else:
            lg = math.log(rng.standard_gamma(a))
        out[c] = lg
        if lg > top:
            top = lg
    s = 0.0
    for c in range(k):
        s += math.exp(out[c] - top)
    norm = top + math.log(s)
    for c in range(k):
        out[c] -= norm


@jit
def seed_chain(t, log_p, base, burn_in, samples, thin, rng, draws, aux, accepts):
    """Alternate a cell sweep at the current ``p`` with ``p ~ Dir(base + T)``."""
    n = t.shape[0]
    alpha = np.empty(n * n)
    flat = np.empty(n * n)
    total = burn_in + samples * thin
    g = 0
    for s in range(total):
        k, l = reference_zone(s, n)
        gibbs_sweep(t, log_p, k, l, rng, accepts)
        for i in range(n):
            for j in range(n):
                alpha[i * n + j] = base[i, j] + t[i, j]
        log_dirichlet(alpha, rng, flat)
        for i in range(n):
            for j in range(n):
                log_p[i, j] = flat[i * n + j]
        if s >= burn_in and (s - burn_in + 1) % thin == 0:
            draws[g] = t
            for i in range(n):
                for j in range(n):
                    aux[g, i, j] = math.exp(log_p[i, j])
            g += 1


@jit
def phi_log(beta, cost_sum, costs, bin_idx, expo, total_plus):
    """``log Phi(beta)`` for flat ``costs``/``bin_idx`` and per-bin exponents."""
    k = expo.size
    top_k = np.full(k, -np.inf)
    top = -np.inf
    for c in range(costs.size):
        v = -beta * costs[c]
        b = bin_idx[c]
        if v > top_k[b]:
            top_k[b] = v
        if v > top:
            top = v
    sum_k = np.zeros(k)
    s = 0.0
    for c in range(costs.size):
        v = -beta * costs[c]
        sum_k[bin_idx[c]] += math.exp(v - top_k[bin_idx[c]])
        s += math.exp(v - top)
    val = -beta * cost_sum - total_plus * (top + math.log(s))
    for b in range(k):
        if expo[b] != 0.0:
            val += expo[b] * (top_k[b] + math.log(sum_k[b]))
    return val


@jit
def beta_step(beta, cost_sum, costs, bin_idx, expo, total_plus, sigma, rng):
    """Gaussian random-walk Metropolis update of beta. Returns ``(beta, accepted)``."""
    prop = rng.normal(beta, sigma)
    logr = phi_log(prop, cost_sum, costs, bin_idx, expo, total_plus) - phi_log(
        beta, cost_sum, costs, bin_idx, expo, total_plus
    )
    u = rng.random()
    if logr >= 0.0 or u < math.exp(logr):
        return prop, 1
    return beta, 0


@jit
def beta_chain(
    t, beta, costs, bin_idx, expo, total_plus, sigma,
    burn_in, samples, thin, rng, draws, aux, accepts, beta_accepts,
):
    """Alternate a cell sweep at gravity ``p(beta)`` with a beta update.

    The sweep uses the unnormalised ``log p = -beta c``; the normaliser
    cancels in every odds ratio.
    """
    n = t.shape[0]
    flat_costs = costs.ravel()
    log_p = np.empty((n, n))
    total = burn_in + samples * thin
    g = 0
    for s in range(total):
        for i in range(n):
            for j in range(n):
                log_p[i, j] = -beta * costs[i, j]
        k, l = reference_zone(s, n)
        gibbs_sweep(t, log_p, k, l, rng, accepts)
        cost_sum = 0.0
        for i in range(n):
            for j in range(n):
                cost_sum += costs[i, j] * t[i, j]
        beta, acc = beta_step(
            beta, cost_sum, flat_costs, bin_idx, expo, total_plus, sigma, rng
        )
        beta_accepts[0] += acc
        if s >= burn_in and (s - burn_in + 1) % thin == 0:
            draws[g] = t
            aux[g] = beta
            g += 1
    return beta
