"""File formats: margin/grid/TLD CSVs, the framed ``draws.bin`` and JSON output.

``draws.bin`` layout (all little-endian)::

    offset 0   5 bytes   magic b"ODMC1"
    offset 5   uint32    n (zones)
    offset 9   uint32    G (draws)
    offset 13  int32     G*n*n cells, draw-major then row-major
    then       uint8     aux kind: 0 none, 1 proportions, 2 beta
    then       float64   aux payload: G*n*n proportions, G betas, or nothing
"""

import csv
import json
import struct

import numpy as np

from .core import CostBins, MarginData

MAGIC = b"ODMC1"
AUX_KINDS = {None: 0, "p": 1, "beta": 2}
_AUX_NAMES = {v: k for k, v in AUX_KINDS.items()}


class DrawsFormatError(ValueError):
    """A draws file is truncated, corrupt or of an unknown layout."""


def _fmt(x):
    # repr round-trips floats exactly
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def read_margins(path):
    """``zone,origin,destination`` CSV, one row per zone in zone order."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"zone", "origin", "destination"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must be zone,origin,destination")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no zones")
    try:
        o = [float(r["origin"]) for r in rows]
        d = [float(r["destination"]) for r in rows]
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return MarginData(o, d)


def write_margins(path, m):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["zone", "origin", "destination"])
        for k, (o, d) in enumerate(zip(m.origins, m.destinations), start=1):
            w.writerow([k, int(o), int(d)])


def read_grid(path):
    """Headerless numeric grid, one matrix row per line."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    try:
        arr = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if arr.ndim != 2:
        raise ValueError(f"{path}: rows have unequal lengths")
    return arr


def write_grid(path, a):
    a = np.asarray(a)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.atleast_2d(a):
            w.writerow([_fmt(x) for x in row])


def read_tld(path):
    """``lower,upper,count`` CSV of contiguous cost bins; returns ``(bins, counts)``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"lower", "upper", "count"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must be lower,upper,count")
        rows = list(reader)
    lower = np.array([float(r["lower"]) for r in rows])
    upper = np.array([float(r["upper"]) for r in rows])
    counts = np.array([float(r["count"]) for r in rows])
    if not rows or np.any(lower[1:] != upper[:-1]):
        raise ValueError(f"{path}: bins must be contiguous")
    return CostBins(np.append(lower, upper[-1])), counts


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) if isinstance(x, (float, int, np.number)) else x for x in r])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_draws(path, draws, aux=None, aux_kind=None):
    draws = np.asarray(draws)
    g, n, _ = draws.shape
    if draws.size and (draws.min() < 0 or draws.max() > np.iinfo(np.int32).max):
        raise ValueError("cells do not fit in int32")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, g))
        fh.write(draws.astype("<i4").tobytes())
        fh.write(struct.pack("<B", AUX_KINDS[aux_kind]))
        if aux_kind is not None:
            fh.write(np.asarray(aux, dtype="<f8").tobytes())


def read_draws(path):
    """Parse ``draws.bin``; returns ``(draws, aux, aux_kind)``."""
    with open(path, "rb") as fh:
        buf = fh.read()

    def need(offset, size, what):
        if len(buf) < offset + size:
            raise DrawsFormatError(
                f"{path}: truncated at byte offset {len(buf)} while reading {what} "
                f"(needed bytes {offset}..{offset + size})"
            )

    need(0, 13, "header")
    if buf[:5] != MAGIC:
        raise DrawsFormatError(f"{path}: bad magic at byte offset 0")
    n, g = struct.unpack_from("<II", buf, 5)
    off = 13
    ncell = g * n * n
    need(off, 4 * ncell, "cells")
    draws = np.frombuffer(buf, dtype="<i4", count=ncell, offset=off).astype(np.int64)
    draws = draws.reshape(g, n, n)
    off += 4 * ncell
    need(off, 1, "aux kind")
    code = buf[off]
    off += 1
    if code not in _AUX_NAMES:
        raise DrawsFormatError(f"{path}: unknown aux kind {code} at byte offset {off - 1}")
    kind = _AUX_NAMES[code]
    aux = None
    if kind is not None:
        count = ncell if kind == "p" else g
        need(off, 8 * count, "aux payload")
        aux = np.frombuffer(buf, dtype="<f8", count=count, offset=off).copy()
        if kind == "p":
            aux = aux.reshape(g, n, n)
        off += 8 * count
    if off != len(buf):
        raise DrawsFormatError(f"{path}: {len(buf) - off} trailing bytes at byte offset {off}")
    return draws, aux, kind
