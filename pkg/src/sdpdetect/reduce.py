"""LLL preprocessing and the windowed expansion around a ZF starting point.

Real PAM/QAM coordinates ``b + a*z`` with ``z in {0..levels-1}`` are mapped to
the integer grid, the scaled channel ``a H`` is LLL-reduced to ``L = a H Q``,
and each coordinate of ``x' = Q^-1 z`` gets a window of ``l_points``
consecutive integers around the rounded estimate ``s' = round(L^-1 y')``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    DecodeResult,
    ExpansionStructure,
    SystemInstance,
    decision_indices,
    expansion_for,
    expansion_from_sets,
    residual_norm2,
)

DELTA = 0.75
COND_GUARD = 1e12


def lll_reduce(h, delta: float = DELTA):
    """LLL reduction of the columns of ``h``.  Returns ``(L, Q)`` with
    integer unimodular ``Q`` and ``L = h Q``."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    if not 0.25 < delta <= 1.0:
        raise ValueError("delta must lie in (1/4, 1]")
    n = h.shape[1]
    if h.shape[0] < n or np.linalg.matrix_rank(h) < n:
        raise np.linalg.LinAlgError("LLL needs a full column rank basis")
    b = h.copy()
    q = np.eye(n, dtype=np.int64)
    r = np.linalg.qr(b, mode="r")
    k = 1
    while k < n:
        for j in range(k - 1, -1, -1):
            mu = round(r[j, k] / r[j, j])
            if mu:
                b[:, k] -= mu * b[:, j]
                r[:, k] -= mu * r[:, j]
                q[:, k] -= mu * q[:, j]
        if delta * r[k - 1, k - 1] ** 2 > r[k - 1, k] ** 2 + r[k, k] ** 2:
            b[:, [k - 1, k]] = b[:, [k, k - 1]]
            q[:, [k - 1, k]] = q[:, [k, k - 1]]
            r = np.linalg.qr(b, mode="r")
            k = max(k - 1, 1)
        else:
            k += 1
    return h @ q, q


def lll_conditions(l_basis, delta: float = DELTA, tol: float = 1e-9) -> bool:
    """Size reduction and Lovasz conditions on the columns of ``l_basis``."""
    r = np.linalg.qr(np.asarray(l_basis, dtype=float), mode="r")
    n = r.shape[1]
    for k in range(1, n):
        for j in range(k):
            if abs(r[j, k] / r[j, j]) > 0.5 + tol:
                return False
        if delta * r[k - 1, k - 1] ** 2 > r[k - 1, k] ** 2 + r[k, k] ** 2 + tol:
            return False
    return True


def zf_initial(l_basis, y):
    """``round(L^-1 y)``; pseudo-inverse when ``L`` is not square.
    Returns ``(s_prime, cond)``."""
    l_basis = np.atleast_2d(np.asarray(l_basis, dtype=float))
    cond = float(np.linalg.cond(l_basis))
    if l_basis.shape[0] == l_basis.shape[1] and cond < COND_GUARD:
        est = np.linalg.solve(l_basis, y)
    else:
        est = np.linalg.pinv(l_basis) @ y
    return np.rint(est).astype(np.int64), cond


def window(center: int, l_points: int) -> np.ndarray:
    """``l_points`` consecutive integers, one extra above the center when even."""
    lo = center - math.ceil(l_points / 2) + 1
    return np.arange(lo, lo + l_points, dtype=np.int64)


def grid_map(real_points):
    """``(a, b)`` with ``real_points = b + a * arange(levels)``."""
    pts = np.sort(np.asarray(real_points, dtype=float))
    if pts.size < 2:
        raise ValueError("need at least two levels")
    a = pts[1] - pts[0]
    if not np.allclose(np.diff(pts), a):
        raise ValueError("points are not equally spaced")
    return float(a), float(pts[0])


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """Everything needed to decode in the reduced basis and map back.

    ``reduced_instance`` is ``y' = L x' + n`` with ``y' = y - b H 1``.
    ``flagged`` marks a channel too ill-conditioned to reduce; callers then
    decode the original instance instead.
    """

    l_basis: np.ndarray
    q_unimodular: np.ndarray
    s_prime: np.ndarray
    l_points: int
    window: np.ndarray
    scale: float
    shift: float
    levels: int
    instance: SystemInstance
    reduced_instance: SystemInstance
    flagged: bool = False


def default_l_points(instance: SystemInstance) -> int:
    return max(2, int(round(math.log2(instance.constellation.size))))


def reduce_system(
    instance: SystemInstance,
    l_points: Optional[int] = None,
    delta: float = DELTA,
) -> ReducedSystem:
    const = instance.constellation
    if not const.separable:
        raise ValueError("lattice reduction needs a PAM/QAM constellation")
    l_points = l_points or default_l_points(instance)
    if l_points < 2:
        raise ValueError("l_points must be at least 2")
    a, b = grid_map(const.real_points)
    levels = len(const.real_points)
    h_int = a * instance.h
    y_int = instance.y - b * instance.h.sum(axis=1)
    flagged = False
    try:
        l_basis, q = lll_reduce(h_int, delta)
    except np.linalg.LinAlgError:
        l_basis, q, flagged = h_int, np.eye(h_int.shape[1], dtype=np.int64), True
    s_prime, cond = zf_initial(l_basis, y_int)
    flagged = flagged or not cond < COND_GUARD
    win = np.array([window(int(c), l_points) for c in s_prime])
    reduced = SystemInstance(l_basis, y_int, instance.snr, const, instance.n_complex,
                             instance.m_complex, instance.e_s_av)
    return ReducedSystem(l_basis, q, s_prime, l_points, win, a, b, levels, instance, reduced, flagged)


def build_reduced_expansion(reduced: ReducedSystem) -> ExpansionStructure:
    """Per-dimension expansion over the integer windows (no bit labels)."""
    if reduced.l_points < 2:
        raise ValueError("l_points must be at least 2")
    return expansion_from_sets([w.astype(float) for w in reduced.window], None, "qam")


def map_back(u_reduced, reduced: ReducedSystem, method: str = "lll", elapsed: float = 0.0, **kw) -> DecodeResult:
    """``x = b + a Q x'``.  Points outside the constellation are flagged and
    kept as they are (never clamped)."""
    t0 = time.perf_counter()
    exp_r = build_reduced_expansion(reduced)
    x_prime = exp_r.x_of(u_reduced)
    z = reduced.q_unimodular @ np.rint(x_prime).astype(np.int64)
    x = reduced.shift + reduced.scale * z.astype(float)
    inside = bool(np.all((z >= 0) & (z < reduced.levels)))
    u = None
    if inside:
        exp = expansion_for(reduced.instance, "qam")
        u = exp.selector(decision_indices(x, exp))
    return DecodeResult(x, u, residual_norm2(reduced.instance, x), method,
                        elapsed + time.perf_counter() - t0, out_of_region=not inside, **kw)
