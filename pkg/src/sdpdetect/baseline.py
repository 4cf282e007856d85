"""Reference detectors: exhaustive ML, Schnorr-Euchner sphere decoding, ZF."""

from __future__ import annotations

import math
import time
from typing import Optional

import numpy as np

from .model import (
    Constellation,
    DecodeResult,
    ExpansionStructure,
    SystemInstance,
    expansion_for,
    residual_norm2,
)

MAX_CANDIDATES = 2**24
COND_GUARD = 1e12
_CHUNK = 1 << 15


def _groups(expansion: ExpansionStructure):
    """Column groups of ``H`` belonging to each block and the real
    coordinates of every candidate (K_p x group size)."""
    nd = expansion.n_dims
    out = []
    for p, pts in enumerate(expansion.point_sets):
        pts = np.asarray(pts)
        if expansion.mode == "psk":
            out.append(([p, p + nd], np.column_stack([pts.real, pts.imag]).astype(float)))
        else:
            out.append(([p], np.asarray(pts, dtype=float).reshape(-1, 1)))
    return out


def _result(instance, expansion, idx, method, t0, **kw) -> DecodeResult:
    u = expansion.selector(idx)
    x = expansion.x_of(u)
    return DecodeResult(x, u, residual_norm2(instance, x), method, time.perf_counter() - t0, **kw)


def candidate_count(expansion: ExpansionStructure) -> int:
    return math.prod(expansion.block_sizes)


def exhaustive_ml(instance: SystemInstance, expansion: Optional[ExpansionStructure] = None) -> DecodeResult:
    """Brute-force minimizer of ``||y - H S u||^2``; ties go to the first
    index tuple in lexicographic order."""
    t0 = time.perf_counter()
    expansion = expansion or expansion_for(instance)
    sizes = expansion.block_sizes
    total = candidate_count(expansion)
    if total > MAX_CANDIDATES:
        raise ValueError(f"{total} candidates exceed the exhaustive guard of {MAX_CANDIDATES}")
    hs = instance.h @ expansion.s
    off = expansion.offsets
    cols = [hs[:, off[p]:off[p + 1]] for p in range(len(sizes))]
    best_val, best_flat = np.inf, 0
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(start + _CHUNK, total))
        idx = np.unravel_index(flat, sizes)
        hx = sum(c[:, i] for c, i in zip(cols, idx))
        r = instance.y[:, None] - hx
        val = np.einsum("ij,ij->j", r, r)
        j = int(np.argmin(val))
        if val[j] < best_val:
            best_val, best_flat = float(val[j]), int(flat[j])
    idx = np.array(np.unravel_index(best_flat, sizes))
    return _result(instance, expansion, idx, "exhaustive", t0, status="optimal")


def sphere_decode(
    instance: SystemInstance,
    expansion: Optional[ExpansionStructure] = None,
    initial_radius: float = math.inf,
) -> DecodeResult:
    """Depth-first Schnorr-Euchner search on the QR-triangularized model.

    Each tree level is one block (a real coordinate, or a Re/Im pair for
    joint PSK symbols); children are visited in order of increasing partial
    metric and the radius shrinks at every leaf.  ``initial_radius`` bounds
    ``||y - H x||`` (not squared).
    """
    t0 = time.perf_counter()
    expansion = expansion or expansion_for(instance)
    groups = _groups(expansion)
    order = [c for cols, _ in groups for c in cols]
    h = instance.h[:, order]
    if h.shape[0] < h.shape[1] or np.linalg.matrix_rank(h) < h.shape[1]:
        if candidate_count(expansion) <= MAX_CANDIDATES:
            res = exhaustive_ml(instance, expansion)
            res.method = "sphere"
            res.flagged = True
            return res
        raise ValueError("rank-deficient channel and too many candidates for exhaustive search")
    q, r = np.linalg.qr(h)
    z = q.T @ instance.y
    base = float(instance.y @ instance.y - z @ z)
    # row ranges of each level in the triangular system
    spans = []
    pos = 0
    for cols, pts in groups:
        spans.append((pos, pos + len(cols)))
        pos += len(cols)
    nlev = len(groups)
    cand = [pts for _, pts in groups]

    best = {"d": initial_radius**2 - base if math.isfinite(initial_radius) else math.inf, "idx": None}
    chosen = np.zeros(nlev, dtype=int)
    xs = np.zeros(pos)
    visited = 0

    def search(level, dist):
        nonlocal visited
        lo, hi = spans[level]
        target = z[lo:hi] - r[lo:hi, hi:] @ xs[hi:]
        pred = cand[level] @ r[lo:hi, lo:hi].T
        inc = np.sum((target[None, :] - pred) ** 2, axis=1)
        for i in np.argsort(inc, kind="stable"):
            d = dist + inc[i]
            if d >= best["d"]:
                break
            visited += 1
            xs[lo:hi] = cand[level][i]
            chosen[level] = i
            if level == 0:
                best["d"] = d
                best["idx"] = chosen.copy()
            else:
                search(level - 1, d)
        xs[lo:hi] = 0.0

    search(nlev - 1, 0.0)
    if best["idx"] is None:
        # nothing inside the initial radius
        return DecodeResult(np.full(instance.h.shape[1], np.nan), None, math.inf, "sphere",
                            time.perf_counter() - t0, status="empty", visited_nodes=visited, flagged=True)
    return _result(instance, expansion, best["idx"], "sphere", t0, status="optimal", visited_nodes=visited)


def nearest_indices(x, expansion: ExpansionStructure) -> np.ndarray:
    """Per-block nearest candidate to an unconstrained real estimate."""
    x = np.asarray(x, dtype=float)
    idx = []
    for cols, pts in _groups(expansion):
        d = np.sum((pts - x[cols][None, :]) ** 2, axis=1)
        idx.append(int(np.argmin(d)))
    return np.array(idx)


def zero_forcing(
    instance: SystemInstance,
    constellation: Optional[Constellation] = None,
    mode: Optional[str] = None,
) -> DecodeResult:
    """Slice the pseudo-inverse estimate; ill-conditioned channels are flagged."""
    t0 = time.perf_counter()
    if constellation is not None and constellation is not instance.constellation:
        instance = SystemInstance(instance.h, instance.y, instance.snr, constellation,
                                  instance.n_complex, instance.m_complex, instance.e_s_av)
    expansion = expansion_for(instance, mode)
    cond = np.linalg.cond(instance.h)
    x_hat = np.linalg.pinv(instance.h) @ instance.y
    idx = nearest_indices(x_hat, expansion)
    return _result(instance, expansion, idx, "zf", t0, flagged=bool(not cond < COND_GUARD))
