"""Primal-dual interior-point solver for the projected SDP relaxations.

Standard form handled here::

    min <C, R>  s.t.  <A_k, R> = b_k          (equality rows)
                      <B_l, R> - s_l = 0      (non-negativity rows, s >= 0)
                      R >= 0

Infeasible-start path following with the HKM search direction and a
Mehrotra predictor-corrector.  The Schur complement (one row per
constraint) is formed densely and factored by Cholesky.

Once the tolerances hold, a few more iterations try to shrink the gap and the
best qualifying iterate is kept.  A numerical failure is retried with a more
cautious step fraction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .relax import ProjectionBasis, SdpModel, interior_point

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"

TOL_PSD = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    tol_gap: float = 1e-7
    tol_feas: float = 1e-8
    max_iter: int = 100
    step_fraction: float = 0.95
    warm_blend: float = 1e-3
    # extra iterations after the tolerances are met; the best such iterate
    # is returned, so a later breakdown cannot lose it
    polish_iter: int = 3
    polish_factor: float = 1e-2
    # a numerical failure is retried from scratch with these step fractions
    retry_step_fractions: tuple = (0.8,)

    def __post_init__(self):
        if not self.tol_gap > 0 or not self.tol_feas > 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if any(not 0 < f < 1 for f in self.retry_step_fractions):
            raise ValueError("retry step fractions must lie in (0, 1)")
        if self.polish_iter < 0:
            raise ValueError("polish_iter must be non-negative")


@dataclass
class SdpSolution:
    r: np.ndarray
    y_lift: np.ndarray
    lower_bound: float
    dual_objective: float
    gap: float
    feasibility: float
    iterations: int
    status: str
    slacks: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trace: list = field(default_factory=list)


def constraint_operators(model: SdpModel):
    """Dense constraint stacks ``(A_eq, b_eq, B_ineq)`` in the R space."""
    vh = model.basis.v_hat
    m = model.m

    def sym_outer(i, j):
        o = np.outer(vh[i], vh[j])
        return 0.5 * (o + o.T)

    a_eq = np.zeros((len(model.equalities), m, m))
    b_eq = np.zeros(len(model.equalities))
    for k, con in enumerate(model.equalities):
        for i, j, coef in con.terms:
            a_eq[k] += coef * sym_outer(i, j)
        b_eq[k] = con.rhs
    if model.inequalities:
        idx = np.array(model.inequalities)
        left, right = vh[idx[:, 0]], vh[idx[:, 1]]
        outer = np.einsum("li,lj->lij", left, right)
        b_in = 0.5 * (outer + outer.transpose(0, 2, 1))
    else:
        b_in = np.zeros((0, m, m))
    return a_eq, b_eq, b_in


def _independent_rows(a_eq, b_eq, tol=1e-10):
    """Drop linearly dependent equality rows (they appear in Model II)."""
    p = a_eq.shape[0]
    if p == 0:
        return a_eq, b_eq
    flat = a_eq.reshape(p, -1)
    _, r, piv = sla.qr(flat.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * max(diag[0], 1.0)))
    if rank == p:
        return a_eq, b_eq
    keep = np.sort(piv[:rank])
    sol, *_ = np.linalg.lstsq(flat[keep].T, flat.T, rcond=None)
    if not np.allclose(sol.T @ b_eq[keep], b_eq, atol=1e-8):
        raise ValueError("inconsistent equality constraints")
    return a_eq[keep], b_eq[keep]


def _max_step_psd(chol_lower, d):
    """Largest alpha with ``X + alpha d >= 0`` given ``X = L L'``."""
    li = sla.solve_triangular(chol_lower, np.eye(chol_lower.shape[0]), lower=True, check_finite=False)
    s = li @ d @ li.T
    lam = np.linalg.eigvalsh(0.5 * (s + s.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _is_pd(mat):
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return True


def _max_step_lp(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def default_start(model: SdpModel, config: SolverConfig) -> np.ndarray:
    r_hat = interior_point(model.basis.sizes)
    mu = config.warm_blend
    return (1 - mu) * r_hat + mu * np.eye(model.m)


def dual_start(v_hat, a_eq, b_in, cs):
    """Strictly feasible dual point ``(y, Z, z)`` when one can be read off.

    On the minimal face the equality rows combine to ``-A*(d) = v_hat' v_hat``
    (block rows of ``v_hat`` sum to row 0), so ``Z = cs - B*(1) + t v_hat' v_hat``
    is positive definite for large enough ``t``.  Falls back to ``(0, I, 1)``.
    """
    m, p_eq, p_in = cs.shape[0], a_eq.shape[0], b_in.shape[0]
    fallback = (np.zeros(p_eq + p_in), np.eye(m), np.ones(p_in))
    if p_eq == 0:
        return fallback
    target = v_hat.T @ v_hat
    flat = a_eq.reshape(p_eq, -1)
    d, *_ = np.linalg.lstsq(flat.T, -target.ravel(), rcond=None)
    if np.linalg.norm(flat.T @ d + target.ravel()) > 1e-8 * np.linalg.norm(target):
        return fallback
    base = cs - b_in.sum(axis=0)
    lam_t = np.linalg.eigvalsh(target)[0]
    t = max(0.0, (1.0 - np.linalg.eigvalsh(base)[0]) / lam_t)
    z_mat = base + t * target
    z_mat = 0.5 * (z_mat + z_mat.T)
    return np.concatenate([t * d, np.ones(p_in)]), z_mat, np.ones(p_in)


def solve(
    model: SdpModel,
    config: Optional[SolverConfig] = None,
    warm_start: Optional[np.ndarray] = None,
    record_trace: bool = False,
) -> SdpSolution:
    """Solve ``model``; never raises on numerical trouble, reports it in ``status``."""
    cfg = config or SolverConfig()
    sol = _solve_once(model, cfg, warm_start, record_trace)
    spent = sol.iterations
    for frac in cfg.retry_step_fractions:
        if sol.status != NUMERICAL_FAILURE:
            break
        sol = _solve_once(model, replace(cfg, step_fraction=frac), warm_start, record_trace)
        spent += sol.iterations
    sol.iterations = spent
    return sol


def _solve_once(model, cfg, warm_start, record_trace) -> SdpSolution:
    m = model.m
    a_eq, b_eq, b_in = constraint_operators(model)
    a_eq, b_eq = _independent_rows(a_eq, b_eq)
    p_eq, p_in = a_eq.shape[0], b_in.shape[0]
    p = p_eq + p_in
    amat = np.concatenate([a_eq, b_in]) if p_in else a_eq
    aflat = amat.reshape(p, m * m)
    b = np.concatenate([b_eq, np.zeros(p_in)])
    in_rows = np.arange(p_eq, p)

    c_full = model.objective
    c_norm = float(np.linalg.norm(c_full))
    # shift the objective by A*(w): unchanged on the feasible set, smaller
    # norm, so the iterates need less relative precision
    if p_eq:
        w_shift, *_ = np.linalg.lstsq(a_eq.reshape(p_eq, -1).T, c_full.ravel(), rcond=None)
    else:
        w_shift = np.zeros(0)
    c_red = c_full - np.einsum("k,kij->ij", w_shift, a_eq)
    c_scale = max(1.0, float(np.linalg.norm(c_red)))
    cs = c_red / c_scale
    obj_shift = float(b_eq @ w_shift)
    b_norm = float(np.linalg.norm(b))
    off = float(model.offset)

    # Gram matrix of the constraint map on (X, s); used to pull iterates back
    # onto the affine set, which the ill-conditioned Schur solves let drift
    gram = aflat @ aflat.T
    gram[in_rows, in_rows] += 1.0
    gram_fac = sla.cho_factor(gram, lower=True, check_finite=False)

    x_mat = default_start(model, cfg) if warm_start is None else np.array(warm_start, dtype=float)
    s_vec = aflat[in_rows] @ x_mat.ravel() if p_in else np.zeros(0)
    if np.any(s_vec <= 0):
        s_vec = np.maximum(s_vec, 1e-2)
    y, z_mat, z_vec = dual_start(model.basis.v_hat, a_eq, b_in, cs)
    nu = m + p_in

    def a_op(mat):
        return aflat @ mat.ravel()

    def a_adj(vec):
        return (vec @ aflat).reshape(m, m)

    best = None

    def finish(status, it, trace, pobj, dobj, relgap, feas):
        if best is not None:
            status = OPTIMAL
            xm, sv, pobj, dobj, relgap, feas, it = best
        else:
            xm, sv = x_mat, s_vec
        r = 0.5 * (xm + xm.T)
        vh = model.basis.v_hat
        return SdpSolution(r, vh @ r @ vh.T, pobj, dobj, relgap, feas, it, status, sv.copy(), trace)

    trace = []
    pobj = dobj = np.nan
    relgap = feas = np.inf
    for it in range(cfg.max_iter + 1):
        rp = b - a_op(x_mat)
        rp[in_rows] += s_vec
        rd = cs - z_mat - a_adj(y)
        rd_l = y[in_rows] - z_vec
        pobj = float(np.sum(c_full * x_mat))
        dobj = float(b @ y) * c_scale + obj_shift
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj + off) + abs(dobj + off))
        pinf = float(np.linalg.norm(rp)) / (1.0 + b_norm)
        dinf = c_scale * float(np.sqrt(np.sum(rd * rd) + rd_l @ rd_l)) / (1.0 + c_norm)
        feas = max(pinf, dinf)
        compl = (float(np.sum(x_mat * z_mat)) + float(s_vec @ z_vec)) * c_scale
        if record_trace:
            trace.append({"iter": it, "primal_obj": pobj, "dual_obj": dobj, "gap": compl, "feas_residual": feas})
        if not np.isfinite(relgap) or not np.isfinite(feas):
            return finish(NUMERICAL_FAILURE, it, trace, pobj, dobj, relgap, feas)
        if relgap <= cfg.tol_gap and feas <= cfg.tol_feas:
            if best is None:
                polished = 0
            if best is None or relgap < best[4]:
                best = (x_mat.copy(), s_vec.copy(), pobj, dobj, relgap, feas, it)
            if relgap <= cfg.tol_gap * cfg.polish_factor or polished >= cfg.polish_iter:
                return finish(OPTIMAL, it, trace, pobj, dobj, relgap, feas)
            polished += 1
        elif best is not None:
            polished += 1
            if polished > cfg.polish_iter:
                return finish(OPTIMAL, it, trace, pobj, dobj, relgap, feas)
        if it == cfg.max_iter:
            break
        try:
            lx = np.linalg.cholesky(x_mat)
            lz = np.linalg.cholesky(z_mat)
        except np.linalg.LinAlgError:
            return finish(NUMERICAL_FAILURE, it, trace, pobj, dobj, relgap, feas)
        z_inv = sla.cho_solve((lz, True), np.eye(m), check_finite=False)
        g = np.matmul(np.matmul(x_mat, amat), z_inv)
        schur = aflat @ g.reshape(p, m * m).T
        schur = 0.5 * (schur + schur.T)
        d_lp = s_vec / z_vec
        schur[in_rows, in_rows] += d_lp
        # Jacobi scaling before the factorization
        dsc = 1.0 / np.sqrt(np.maximum(np.diag(schur), 1e-300))
        schur_s = schur * np.outer(dsc, dsc)
        try:
            fac = sla.cho_factor(schur_s, lower=True, check_finite=False)

            def base_solve(v):
                return dsc * sla.cho_solve(fac, dsc * v, check_finite=False)
        except np.linalg.LinAlgError:
            try:
                lu = sla.lu_factor(schur_s, check_finite=False)
            except (ValueError, np.linalg.LinAlgError):
                return finish(NUMERICAL_FAILURE, it, trace, pobj, dobj, relgap, feas)

            def base_solve(v):
                return dsc * sla.lu_solve(lu, dsc * v, check_finite=False)

        def schur_solve(v):
            # a couple of refinement sweeps keep the primal residual from drifting
            x = base_solve(v)
            for _ in range(2):
                x = x + base_solve(v - schur @ x)
            return x

        xrdz = x_mat @ rd @ z_inv

        def direction(h_mat, h_vec):
            rhs = rp - a_op(h_mat - xrdz)
            rhs[in_rows] += h_vec - d_lp * rd_l
            dy = schur_solve(rhs)
            dz_mat = rd - a_adj(dy)
            dx_mat = h_mat - x_mat @ dz_mat @ z_inv
            dx_mat = 0.5 * (dx_mat + dx_mat.T)
            dz_vec = rd_l + dy[in_rows]
            dx_vec = h_vec - d_lp * dz_vec
            # the Schur solve loses accuracy near the end; restore A(dx) = rp
            # exactly so the iterate stays on the affine set
            miss = rp - a_op(dx_mat)
            miss[in_rows] += dx_vec
            delta = sla.cho_solve(gram_fac, miss, check_finite=False)
            dx_mat = dx_mat + a_adj(delta)
            dx_vec = dx_vec - delta[in_rows]
            return dx_mat, dx_vec, dy, dz_mat, dz_vec

        def steps(dx_mat, dx_vec, dz_mat, dz_vec):
            ap = min(_max_step_psd(lx, dx_mat), _max_step_lp(s_vec, dx_vec))
            ad = min(_max_step_psd(lz, dz_mat), _max_step_lp(z_vec, dz_vec))
            return ap, ad

        mu = (float(np.sum(x_mat * z_mat)) + float(s_vec @ z_vec)) / nu
        # predictor
        dxa, dxva, _, dza, dzva = direction(-x_mat, -s_vec)
        ap, ad = steps(dxa, dxva, dza, dzva)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (float(np.sum((x_mat + ap * dxa) * (z_mat + ad * dza)))
                  + float((s_vec + ap * dxva) @ (z_vec + ad * dzva))) / nu
        sigma = min(1.0, (max(mu_aff, 0.0) / mu) ** 3)
        # corrector
        h_mat = sigma * mu * z_inv - x_mat - dxa @ dza @ z_inv
        h_vec = (sigma * mu - dxva * dzva) / z_vec - s_vec
        dx, dxv, dy, dz, dzv = direction(h_mat, h_vec)
        ap, ad = steps(dx, dxv, dz, dzv)
        ap = min(1.0, cfg.step_fraction * ap)
        ad = min(1.0, cfg.step_fraction * ad)
        if ap < 1e-12 and ad < 1e-12:
            return finish(NUMERICAL_FAILURE, it, trace, pobj, dobj, relgap, feas)
        x_mat = x_mat + ap * dx
        x_mat = 0.5 * (x_mat + x_mat.T)
        s_vec = s_vec + ap * dxv
        y = y + ad * dy
        z_mat = z_mat + ad * dz
        z_mat = 0.5 * (z_mat + z_mat.T)
        z_vec = z_vec + ad * dzv
    return finish(MAX_ITER, cfg.max_iter, trace, pobj, dobj, relgap, feas)


def extract_lifted(solution: SdpSolution, basis: ProjectionBasis) -> np.ndarray:
    """``Y = v_hat R v_hat'``."""
    if solution.status == NUMERICAL_FAILURE:
        raise ValueError("cannot lift a failed solve")
    return basis.v_hat @ solution.r @ basis.v_hat.T


def write_trace(solution: SdpSolution, path) -> None:
    cols = ["iter", "primal_obj", "dual_obj", "gap", "feas_residual"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(solution.trace)
