"""Rounding of a relaxed lifted matrix ``Y`` to a feasible binary selector.

Three methods: per-block argmax of the first column, random hyperplanes after
the {0,1} -> {-1,1} map (Algorithm I), and random spheres on the {0,1}
factorization (Algorithm II).  Randomized methods always include the simple
candidate, so they can never do worse on the BQP objective.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .relax import BqpProblem, ProjectionBasis, Sizes, block_sizes

METHODS = ("simple", "alg1", "alg2")
RADIUS_MODES = ("random_radius", "fixed_radius_random_scale")

# radius used by the fixed-radius variant of Algorithm II
FIXED_RADIUS = 0.5


@dataclass(frozen=True)
class RoundingConfig:
    method: str = "alg1"
    m_rand: int = 50
    seed: Optional[int] = None
    radius_mode: str = "random_radius"
    factor_r: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown rounding method {self.method!r}")
        if self.radius_mode not in RADIUS_MODES:
            raise ValueError(f"unknown radius mode {self.radius_mode!r}")
        if self.method != "simple" and self.m_rand < 1:
            raise ValueError("m_rand must be at least 1")


def _blocks(sizes):
    off = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return [(off[b], off[b + 1]) for b in range(len(sizes))]


def simple_round(y, k: Sizes, n: Optional[int] = None) -> np.ndarray:
    """Per-block argmax of ``Y[1:, 0]``; ties go to the lowest index."""
    sizes = block_sizes(k, n)
    y = np.asarray(y, dtype=float)
    col = y[1:, 0] if y.ndim == 2 else y[1:]
    if col.size != sum(sizes):
        raise ValueError(f"first column has {col.size + 1} entries, expected {sum(sizes) + 1}")
    u = np.zeros(col.size, dtype=np.uint8)
    for lo, hi in _blocks(sizes):
        u[lo + int(np.argmax(col[lo:hi]))] = 1
    return u


def pm_map(n: int) -> np.ndarray:
    """``M`` with ``M [1; u] = [1; 2u - 1]``."""
    m = 2.0 * np.eye(n + 1)
    m[0, 0] = 1.0
    m[1:, 0] = -1.0
    return m


def psd_factor(mat) -> np.ndarray:
    """Rows ``v_i`` with ``mat ~= V V'``; negative eigenvalues clipped to 0."""
    mat = np.asarray(mat, dtype=float)
    lam, vec = np.linalg.eigh(0.5 * (mat + mat.T))
    if not np.all(np.isfinite(lam)):
        raise np.linalg.LinAlgError("non-finite eigenvalues")
    return vec * np.sqrt(np.clip(lam, 0.0, None))


def _pick(candidates, score, fallback, sizes) -> np.ndarray:
    """Selectors (one per column) from boolean ``candidates`` (n x m): in each
    block the candidate with the highest ``score``, else ``fallback``."""
    n, m = candidates.shape
    u = np.zeros((m, n), dtype=np.uint8)
    cols = np.arange(m)
    for b, (lo, hi) in enumerate(_blocks(sizes)):
        s = np.where(candidates[lo:hi], score[lo:hi], -np.inf)
        best = np.argmax(s, axis=0)
        none = ~np.isfinite(s[best, cols])
        best[none] = fallback[b]
        u[cols, lo + best] = 1
    return u


def _best_of(cands: np.ndarray, base: np.ndarray, bqp: BqpProblem, trace):
    allc = np.vstack([base[None, :], cands])
    obj = bqp.objective(allc)
    if trace is not None:
        trace.extend((i, float(v)) for i, v in enumerate(obj))
    # argmin keeps the first minimum, i.e. the simple candidate on ties
    return allc[int(np.argmin(obj))].copy()


def _fallback_indices(y, sizes):
    col = y[1:, 0]
    return [int(np.argmax(col[lo:hi])) for lo, hi in _blocks(sizes)]


def randomize_alg1(y, bqp: BqpProblem, config: RoundingConfig = RoundingConfig(), trace=None) -> np.ndarray:
    """Random hyperplanes through the origin on the factor of ``M Y M'``.

    Signs are taken relative to the homogenizing row.  A block with several
    +1 entries keeps the one with the largest signed projection; a block with
    none falls back to the first-column argmax.
    """
    y = np.asarray(y, dtype=float)
    sizes = bqp.sizes
    base = simple_round(y, sizes)
    try:
        v = psd_factor(pm_map(bqp.n) @ y @ pm_map(bqp.n).T)
    except np.linalg.LinAlgError:
        return base
    rng = np.random.default_rng(config.seed)
    r = rng.standard_normal((v.shape[1], config.m_rand))
    r /= np.linalg.norm(r, axis=0)
    proj = v @ r
    s0 = np.where(proj[0] >= 0, 1.0, -1.0)
    score = proj[1:] * s0
    cands = _pick(score >= 0, score, _fallback_indices(y, sizes), sizes)
    return _best_of(cands, base, bqp, trace)


def randomize_alg2(
    y,
    bqp: BqpProblem,
    config: RoundingConfig = RoundingConfig(method="alg2"),
    r=None,
    basis: Optional[ProjectionBasis] = None,
    trace=None,
) -> np.ndarray:
    """Random spheres on the factor of ``Y`` itself (no sign map).

    ``random_radius``: one radius per draw, ``rho ~ U(0, 1)``; entries with
    ``||v_i|| > rho`` are candidates and a block with several picks one of
    them uniformly at random.  ``fixed_radius_random_scale``: every norm is
    scaled by its own ``U(0, 1)`` draw and compared to a fixed radius; the
    largest scaled norm wins.  Blocks with no candidate fall back to the
    first-column argmax.  With ``config.factor_r`` the factor comes from
    ``R`` (pass ``r`` and ``basis``), which is smaller but gives the same norms.
    """
    y = np.asarray(y, dtype=float)
    sizes = bqp.sizes
    base = simple_round(y, sizes)
    try:
        if config.factor_r:
            if r is None or basis is None:
                raise ValueError("factor_r needs r and basis")
            v = basis.v_hat @ psd_factor(r)
        else:
            v = psd_factor(y)
    except np.linalg.LinAlgError:
        return base
    norms = np.linalg.norm(v[1:], axis=1)
    rng = np.random.default_rng(config.seed)
    m = config.m_rand
    if config.radius_mode == "random_radius":
        rho = rng.uniform(0.0, 1.0, m)
        cand = norms[:, None] > rho[None, :]
        score = rng.random((norms.size, m))
    else:
        score = norms[:, None] * rng.uniform(0.0, 1.0, (norms.size, m))
        cand = score > FIXED_RADIUS
    cands = _pick(cand, score, _fallback_indices(y, sizes), sizes)
    return _best_of(cands, base, bqp, trace)


def round_solution(y, bqp: BqpProblem, config: RoundingConfig, r=None, basis=None, trace=None) -> np.ndarray:
    if config.method == "simple":
        u = simple_round(y, bqp.sizes)
        if trace is not None:
            trace.append((0, bqp.objective(u)))
        return u
    if config.method == "alg1":
        return randomize_alg1(y, bqp, config, trace=trace)
    return randomize_alg2(y, bqp, config, r=r, basis=basis, trace=trace)


def write_candidate_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        w.writerows(trace)
