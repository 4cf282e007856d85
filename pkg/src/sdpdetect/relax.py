"""Binary quadratic program and its projected SDP relaxations (Models II-IV).

All structural builders accept either a uniform block size ``k`` with ``n``
blocks, or a sequence of per-block sizes (``n`` then omitted).  Index
convention for the lifted matrix ``Y``: row/column 0 is the homogenizing
coordinate, selector entry ``i`` (0-based) lives at index ``i + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .model import ExpansionStructure, SystemInstance

Sizes = Union[int, Sequence[int]]

TIERS = ("II", "III", "IV")


def block_sizes(k: Sizes, n: Optional[int] = None) -> tuple:
    if np.isscalar(k):
        if n is None:
            raise ValueError("n is required with a scalar block size")
        sizes = (int(k),) * int(n)
    else:
        sizes = tuple(int(v) for v in k)
        if n is not None and len(sizes) != n:
            raise ValueError(f"{len(sizes)} block sizes given for n={n}")
    if not sizes or min(sizes) < 1:
        raise ValueError(f"invalid block sizes {sizes}")
    return sizes


def _offsets(sizes) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


@dataclass(frozen=True, eq=False)
class BqpProblem:
    """``min u'Qu + 2c'u  s.t.  A u = e, u binary``; ``const = ||y||^2`` turns
    the objective into the squared residual."""

    q: np.ndarray
    c: np.ndarray
    lq: np.ndarray
    sizes: tuple
    const: float

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def n_dims(self) -> int:
        return len(self.sizes)

    @property
    def k(self) -> Optional[int]:
        s = set(self.sizes)
        return s.pop() if len(s) == 1 else None

    def objective(self, u) -> np.ndarray:
        """Objective for one selector or a stack of selectors (rows)."""
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return float(u @ self.q @ u + 2 * self.c @ u)
        return np.einsum("ij,jk,ik->i", u, self.q, u) + 2 * u @ self.c


def build_bqp(instance: SystemInstance, expansion: ExpansionStructure) -> BqpProblem:
    hs = instance.h @ expansion.s
    if hs.shape[0] != instance.y.size:
        raise ValueError("channel and expansion dimensions disagree")
    q = hs.T @ hs
    q = 0.5 * (q + q.T)
    c = -hs.T @ instance.y
    n = q.shape[0]
    lq = np.zeros((n + 1, n + 1))
    lq[0, 1:] = c
    lq[1:, 0] = c
    lq[1:, 1:] = q
    return BqpProblem(q, c, lq, expansion.block_sizes, float(instance.y @ instance.y))


def lift(u) -> np.ndarray:
    """Rank-one lifting ``[1; u][1 u']``."""
    v = np.concatenate([[1.0], np.asarray(u, dtype=float)])
    return np.outer(v, v)


@dataclass(frozen=True, eq=False)
class ProjectionBasis:
    """Minimal-face basis.  ``v_hat`` maps the reduced variable R to
    ``Y = v_hat R v_hat'``; ``t = [-e | A]`` spans the null space of feasible Y.
    ``v_small`` and ``f`` are only defined for a uniform block size."""

    sizes: tuple
    v_small: Optional[np.ndarray]
    f: Optional[np.ndarray]
    v_hat: np.ndarray
    w: np.ndarray
    t: np.ndarray

    @property
    def m(self) -> int:
        return self.v_hat.shape[1]


def simplex_basis(k: int) -> np.ndarray:
    """``[I_{k-1}; -e']``: a basis of the complement of the all-ones vector."""
    return np.vstack([np.eye(k - 1), -np.ones((1, k - 1))])


def build_projection(k: Sizes, n: Optional[int] = None) -> ProjectionBasis:
    sizes = block_sizes(k, n)
    nn = sum(sizes)
    m = sum(s - 1 for s in sizes) + 1
    v_hat = np.zeros((nn + 1, m))
    v_hat[0, 0] = 1.0
    t = np.zeros((len(sizes), nn + 1))
    t[:, 0] = -1.0
    row, col = 1, 1
    for p, s in enumerate(sizes):
        vk = simplex_basis(s)
        # first column: (e - V e) / s, which is the indicator of the block's last entry
        v_hat[row:row + s, 0] = (np.ones(s) - vk.sum(axis=1)) / s
        v_hat[row:row + s, col:col + s - 1] = vk
        t[p, row:row + s] = 1.0
        row += s
        col += s - 1
    uniform = len(set(sizes)) == 1
    v_small = simplex_basis(sizes[0]) if uniform else None
    f = None
    if uniform:
        kk, nb = sizes[0], len(sizes)
        f = (np.ones((kk, nb)) - v_small @ np.ones((kk - 1, nb))) / kk
    return ProjectionBasis(sizes, v_small, f, v_hat, v_hat[1:].copy(), t)


def reconstruct_column_stochastic(z, basis: ProjectionBasis) -> np.ndarray:
    """``X = F + V Z`` for a ``(K-1) x N`` matrix Z."""
    if basis.v_small is None:
        raise ValueError("column-stochastic reconstruction needs a uniform block size")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return basis.f + basis.v_small @ z


@dataclass(frozen=True)
class GangsterIndex:
    """Index sets on the upper triangle of Y.

    ``j``: off-diagonal pairs inside a block (structurally zero);
    ``j_bar``: ``j`` plus ``(0, 0)``; ``j_hat``: pairs from different blocks,
    the candidates for non-negativity rows.  First-row and diagonal entries
    are excluded from ``j_hat``: the first row equals the diagonal on the
    feasible set and the diagonal is non-negative by semidefiniteness.
    """

    j: tuple
    j_bar: tuple
    j_hat: tuple


def gangster_indices(k: Sizes, n: Optional[int] = None) -> GangsterIndex:
    sizes = block_sizes(k, n)
    off = _offsets(sizes) + 1
    j = []
    for p, s in enumerate(sizes):
        base = off[p]
        j.extend((base + q, base + r) for q in range(s) for r in range(q + 1, s))
    j_hat = []
    for p in range(len(sizes)):
        for pp in range(p + 1, len(sizes)):
            j_hat.extend((a, b) for a in range(off[p], off[p + 1]) for b in range(off[pp], off[pp + 1]))
    return GangsterIndex(tuple(j), ((0, 0),) + tuple(j), tuple(j_hat))


def redundant_nonneg_indices(k: Sizes, n: Optional[int] = None) -> tuple:
    """First-row and diagonal pairs: non-negativity there is implied."""
    nn = sum(block_sizes(k, n))
    return tuple((0, i) for i in range(1, nn + 1)) + tuple((i, i) for i in range(1, nn + 1))


def gangster(y, index_pairs) -> np.ndarray:
    """Keep only the (symmetrized) entries listed in ``index_pairs``."""
    out = np.zeros_like(np.asarray(y, dtype=float))
    for i, j in index_pairs:
        out[i, j] = y[i, j]
        out[j, i] = y[j, i]
    return out


def barycenter(k: Sizes, n: Optional[int] = None) -> np.ndarray:
    """Average of the lifted matrices of all feasible selectors."""
    sizes = block_sizes(k, n)
    first = np.concatenate([np.full(s, 1.0 / s) for s in sizes])
    y = np.outer(np.concatenate([[1.0], first]), np.concatenate([[1.0], first]))
    off = _offsets(sizes) + 1
    for p, s in enumerate(sizes):
        y[off[p]:off[p + 1], off[p]:off[p + 1]] = np.eye(s) / s
    return y


def interior_point(k: Sizes, n: Optional[int] = None) -> np.ndarray:
    """The strictly feasible R with ``v_hat R v_hat' = barycenter``."""
    sizes = block_sizes(k, n)
    mean = np.concatenate([np.full(s - 1, 1.0 / s) for s in sizes])
    r = np.outer(np.concatenate([[1.0], mean]), np.concatenate([[1.0], mean]))
    pos = 1
    for s in sizes:
        if s > 1:
            r[pos:pos + s - 1, pos:pos + s - 1] += (s * np.eye(s - 1) - np.ones((s - 1, s - 1))) / s**2
        pos += s - 1
    return r


@dataclass(frozen=True)
class EntryConstraint:
    """``sum(coef * Y[i, j] for i, j, coef in terms) == rhs``."""

    terms: tuple
    rhs: float


@dataclass(frozen=True, eq=False)
class SdpModel:
    """``min <objective, R>`` over ``R >= 0`` subject to linear equalities on
    the entries of ``Y = v_hat R v_hat'`` and ``Y[i, j] >= 0`` on ``inequalities``.

    ``offset`` is the constant dropped from the objective (``||y||^2``); the
    solver only uses it to scale its relative gap.
    """

    objective: np.ndarray
    equalities: tuple
    inequalities: tuple
    tier: str
    basis: ProjectionBasis
    offset: float = 0.0

    @property
    def m(self) -> int:
        return self.objective.shape[0]


def assemble_model(
    bqp: BqpProblem,
    tier: str,
    ineq_budget: Union[int, str, None] = "all",
    y_prior: Optional[np.ndarray] = None,
) -> SdpModel:
    """Assemble relaxation ``tier`` (``"II"``, ``"III"`` or ``"IV"``).

    For tier IV with a numeric ``ineq_budget`` smaller than the full set, the
    rows are the most violated entries of ``y_prior`` (a tier III solution):
    smallest values first, ties by index.
    """
    tier = tier.upper()
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}")
    basis = build_projection(bqp.sizes)
    obj = basis.v_hat.T @ bqp.lq @ basis.v_hat
    obj = 0.5 * (obj + obj.T)
    gi = gangster_indices(bqp.sizes)
    if tier == "II":
        eqs = [EntryConstraint(((0, 0, 1.0),), 1.0)]
        eqs += [EntryConstraint(((i, i, 1.0), (0, i, -1.0)), 0.0) for i in range(1, bqp.n + 1)]
        return SdpModel(obj, tuple(eqs), (), "II", basis, bqp.const)
    eqs = [EntryConstraint(((0, 0, 1.0),), 1.0)]
    eqs += [EntryConstraint(((i, j, 1.0),), 0.0) for i, j in gi.j]
    ineqs: tuple = ()
    if tier == "IV":
        ineqs = select_inequalities(gi.j_hat, ineq_budget, y_prior)
    return SdpModel(obj, tuple(eqs), ineqs, tier, basis, bqp.const)


def select_inequalities(candidates, budget, y_prior=None) -> tuple:
    if budget is None:
        raise ValueError("tier IV needs an inequality budget")
    if budget == "all" or (not isinstance(budget, str) and budget >= len(candidates)):
        return tuple(candidates)
    if isinstance(budget, str) or budget < 0:
        raise ValueError(f"invalid inequality budget {budget!r}")
    if budget == 0:
        return ()
    if y_prior is None:
        raise ValueError("a partial inequality budget needs a prior tier III solution")
    vals = np.array([y_prior[i, j] for i, j in candidates])
    order = sorted(range(len(candidates)), key=lambda t: (vals[t], candidates[t]))
    return tuple(candidates[t] for t in order[:budget])


# --- model dump -------------------------------------------------------------


def dump_model(model: SdpModel, path) -> None:
    """Text dump: header, objective rows, ``eq rhs n_terms (i j coef)*`` lines,
    ``ineq i j`` lines.  Block sizes are recorded so the basis can be rebuilt."""
    lines = [
        "# sdpdetect sdp model v1",
        f"m {model.m}",
        f"tier {model.tier}",
        "sizes " + " ".join(str(s) for s in model.basis.sizes),
        f"equalities {len(model.equalities)}",
        f"inequalities {len(model.inequalities)}",
        f"offset {model.offset!r}",
        "objective",
    ]
    lines += [" ".join(repr(float(v)) for v in row) for row in model.objective]
    for con in model.equalities:
        terms = " ".join(f"{i} {j} {coef!r}" for i, j, coef in con.terms)
        lines.append(f"eq {con.rhs!r} {len(con.terms)} {terms}")
    lines += [f"ineq {i} {j}" for i, j in model.inequalities]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> SdpModel:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    head = {}
    i = 0
    while rows[i][0] != "objective":
        head[rows[i][0]] = rows[i][1:]
        i += 1
    m = int(head["m"][0])
    obj = np.array([[float(v) for v in rows[i + 1 + r]] for r in range(m)])
    i += 1 + m
    eqs, ineqs = [], []
    for row in rows[i:]:
        if row[0] == "eq":
            rhs, nt = float(row[1]), int(row[2])
            vals = row[3:]
            terms = tuple((int(vals[3 * t]), int(vals[3 * t + 1]), float(vals[3 * t + 2])) for t in range(nt))
            eqs.append(EntryConstraint(terms, rhs))
        elif row[0] == "ineq":
            ineqs.append((int(row[1]), int(row[2])))
    basis = build_projection([int(s) for s in head["sizes"]])
    offset = float(head["offset"][0]) if "offset" in head else 0.0
    return SdpModel(obj, tuple(eqs), tuple(ineqs), head["tier"][0], basis, offset)
