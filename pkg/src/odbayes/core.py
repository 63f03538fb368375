"""Domain types and margin bookkeeping for origin-destination trip tables.

Trip tables are plain ``int64`` arrays of shape ``(n, n)``; proportions and
costs are ``float64`` arrays of the same shape. The validators below turn
array-likes into checked, read-only arrays.
"""

from dataclasses import dataclass

import numpy as np


class ODError(Exception):
    """Base class for errors raised by this package."""


class MarginError(ODError, ValueError):
    """Margins are malformed or not self-consistent."""


class InfeasibleError(ODError):
    """No nonnegative table satisfies the requested constraints."""


class ConvergenceError(ODError):
    """An iterative solver stopped before reaching its tolerance."""


def _readonly(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def _as_int_array(values, name):
    arr = np.asarray(values)
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError(f"{name} must hold integer values")
        arr = arr.astype(np.int64)
    elif arr.dtype.kind in "iub":
        arr = arr.astype(np.int64)
    else:
        raise ValueError(f"{name} must be numeric, got dtype {arr.dtype}")
    return arr


@dataclass(frozen=True, eq=False)
class MarginData:
    """Origin totals ``O_i``, destination totals ``D_j`` and their common total."""

    origins: np.ndarray
    destinations: np.ndarray

    def __post_init__(self):
        o = _as_int_array(self.origins, "origins")
        d = _as_int_array(self.destinations, "destinations")
        if o.ndim != 1 or d.ndim != 1:
            raise MarginError("origins and destinations must be 1-D")
        if o.shape != d.shape:
            raise MarginError(
                f"origins has {o.size} zones but destinations has {d.size}"
            )
        if o.size < 2:
            raise MarginError("at least two zones are required")
        if np.any(o < 0) or np.any(d < 0):
            raise MarginError("margins must be nonnegative")
        if int(o.sum()) != int(d.sum()):
            raise MarginError(
                f"margins not self-consistent: sum(origins)={int(o.sum())} "
                f"!= sum(destinations)={int(d.sum())}"
            )
        object.__setattr__(self, "origins", _readonly(o))
        object.__setattr__(self, "destinations", _readonly(d))

    @property
    def n(self):
        return self.origins.size

    @property
    def total(self):
        return int(self.origins.sum())

    def __eq__(self, other):
        if not isinstance(other, MarginData):
            return NotImplemented
        return np.array_equal(self.origins, other.origins) and np.array_equal(
            self.destinations, other.destinations
        )

    def __hash__(self):
        return hash((self.origins.tobytes(), self.destinations.tobytes()))

    def __repr__(self):
        return (
            f"MarginData(origins={self.origins.tolist()}, "
            f"destinations={self.destinations.tolist()})"
        )


@dataclass(frozen=True, eq=False)
class CostBins:
    """Cost range edges ``c_0 < c_1 < ... < c_K``; bin k is ``(c_{k-1}, c_k]``."""

    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.float64)
        if e.ndim != 1 or e.size < 2:
            raise ValueError("cost bins need at least two edges")
        if not np.all(np.isfinite(e)) or e[0] < 0:
            raise ValueError("bin edges must be finite with c_0 >= 0")
        if np.any(np.diff(e) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        object.__setattr__(self, "edges", _readonly(e))

    @property
    def k(self):
        return self.edges.size - 1

    def bin_index(self, costs):
        """0-based bin of each cost; raises if any cost is outside ``(c_0, c_K]``."""
        c = np.asarray(costs, dtype=np.float64)
        idx = np.searchsorted(self.edges, c, side="left") - 1
        bad = (idx < 0) | (idx >= self.k)
        if np.any(bad):
            raise ValueError(
                f"cost {c[bad].flat[0]!r} outside bin range "
                f"({self.edges[0]!r}, {self.edges[-1]!r}]"
            )
        return idx.astype(np.int64)

    def labels(self):
        return [f"({lo:g}, {hi:g}]" for lo, hi in zip(self.edges[:-1], self.edges[1:])]


def as_trip_matrix(t):
    """Validate a square, nonnegative integer trip table (n >= 2)."""
    arr = _as_int_array(t, "trip matrix")
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
        raise ValueError(f"trip matrix must be n x n with n >= 2, got {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("trip matrix cells must be nonnegative")
    return arr


def as_proportions(p, normalize=False, tol=1e-12):
    """Validate nonnegative cell proportions summing to one.

    With ``normalize=True`` any nonnegative weights with positive sum are
    rescaled instead of rejected.
    """
    arr = np.array(p, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
        raise ValueError(f"proportions must be n x n with n >= 2, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("proportions must be finite and nonnegative")
    s = arr.sum()
    if normalize:
        if s <= 0:
            raise ValueError("proportions sum to zero")
        arr /= s
    elif abs(s - 1.0) > tol:
        raise ValueError(f"proportions sum to {s!r}, not 1")
    return arr


def as_costs(c):
    arr = np.array(c, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
        raise ValueError(f"cost matrix must be n x n with n >= 2, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("costs must be finite and nonnegative")
    return arr


def _check_dims(t, m):
    if t.shape[0] != m.n:
        raise ValueError(f"table has {t.shape[0]} zones but margins have {m.n}")


def check_consistency(t, m):
    """True iff every row of ``t`` sums to ``O_i`` and every column to ``D_j``."""
    t = as_trip_matrix(t)
    _check_dims(t, m)
    return bool(
        np.array_equal(t.sum(axis=1), m.origins)
        and np.array_equal(t.sum(axis=0), m.destinations)
    )


def margins_of(t):
    t = as_trip_matrix(t)
    return MarginData(t.sum(axis=1), t.sum(axis=0))


def delta(m):
    """``T - O_n - D_n``; the offset tying the corner cell to the free block."""
    return m.total - int(m.origins[-1]) - int(m.destinations[-1])


def complete_from_submatrix(s, m):
    """Fill the last row, last column and corner of a table from its free block.

    Raises InfeasibleError if any completed cell comes out negative.
    """
    s = _as_int_array(s, "submatrix")
    n = m.n
    if s.shape != (n - 1, n - 1):
        raise ValueError(f"submatrix must be {(n - 1, n - 1)}, got {s.shape}")
    if np.any(s < 0):
        raise InfeasibleError("submatrix has negative cells")
    t = np.zeros((n, n), dtype=np.int64)
    t[:-1, :-1] = s
    t[-1, :-1] = m.destinations[:-1] - s.sum(axis=0)
    t[:-1, -1] = m.origins[:-1] - s.sum(axis=1)
    t[-1, -1] = int(s.sum()) - delta(m)
    if np.any(t < 0):
        i, j = np.argwhere(t < 0)[0]
        raise InfeasibleError(
            f"completed cell ({i + 1},{j + 1}) = {t[i, j]} is negative"
        )
    return t


def round_to_feasible(x, m, support=None):
    """Round a real table to the nearest integers, then repair the margins.

    Repair first trims rows/columns whose sums overshoot (taking units from
    the cells most above their real value), then fills deficits one unit at
    a time at the (row, column) pair with the largest shortfall. Cells where
    ``support`` is False are never increased.

    Returns ``(table, adjustments)`` where ``adjustments`` lists
    ``(i, j, +1 | -1)`` edits in the order applied.
    """
    x = np.asarray(x, dtype=np.float64)
    n = m.n
    if x.shape != (n, n):
        raise ValueError(f"table must be {(n, n)}, got {x.shape}")
    if support is None:
        support = np.ones((n, n), dtype=bool)
    t = np.rint(np.clip(x, 0.0, None)).astype(np.int64)
    t[~support] = 0
    trace = []

    def shrink(axis_residual, get_line, idx_of):
        for k in np.flatnonzero(axis_residual() < 0):
            while axis_residual()[k] < 0:
                cells, real = get_line(k)
                score = np.where(cells > 0, cells - real, -np.inf)
                pos = int(np.argmax(score))
                i, j = idx_of(k, pos)
                t[i, j] -= 1
                trace.append((i, j, -1))

    row_res = lambda: m.origins - t.sum(axis=1)
    col_res = lambda: m.destinations - t.sum(axis=0)
    shrink(row_res, lambda k: (t[k], x[k]), lambda k, pos: (k, pos))
    shrink(col_res, lambda k: (t[:, k], x[:, k]), lambda k, pos: (pos, k))

    while True:
        r, c = row_res(), col_res()
        if not r.any() and not c.any():
            break
        rows = np.flatnonzero(r > 0)
        cols = np.flatnonzero(c > 0)
        ok = support[np.ix_(rows, cols)]
        if rows.size == 0 or cols.size == 0 or not ok.any():
            raise InfeasibleError(
                "cannot repair rounded table to the margins under the zero pattern"
            )
        gain = (x[np.ix_(rows, cols)] - t[np.ix_(rows, cols)]) + 1e-9 * (
            r[rows][:, None] + c[cols][None, :]
        )
        gain = np.where(ok, gain, -np.inf)
        a, b = np.unravel_index(int(np.argmax(gain)), gain.shape)
        i, j = int(rows[a]), int(cols[b])
        t[i, j] += 1
        trace.append((i, j, 1))
    return t, trace
