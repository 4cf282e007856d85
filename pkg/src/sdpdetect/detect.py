"""Method dispatch and the relax -> solve -> round pipeline.

Method names::

    exhaustive | sd | zf
    [lll+]model_<ii|iii|iv>[_budget(n)][+<simple|alg1|alg2>]

A rounding suffix overrides the configured rounding method for that entry.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .baseline import exhaustive_ml, sphere_decode, zero_forcing
from .model import DecodeResult, ExpansionStructure, SystemInstance, expansion_for
from .reduce import build_reduced_expansion, map_back, reduce_system
from .relax import assemble_model, build_bqp
from .rounding import RoundingConfig, round_solution, simple_round
from .solver import MAX_ITER, NUMERICAL_FAILURE, OPTIMAL, SolverConfig, extract_lifted, solve

BASELINES = ("exhaustive", "sd", "zf")
_SDP_RE = re.compile(r"^(lll\+)?model_(ii|iii|iv)(?:_budget\((\d+)\))?(?:\+(simple|alg1|alg2))?$")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str  # "sdp" or one of BASELINES
    tier: Optional[str] = None
    budget: Union[int, str] = "all"
    rounding: Optional[str] = None
    lll: bool = False


def parse_method(name: str) -> MethodSpec:
    key = name.strip().lower()
    if key in BASELINES:
        return MethodSpec(key, key)
    m = _SDP_RE.match(key)
    if not m:
        raise ValueError(f"unknown method {name!r}")
    lll, tier, budget, rnd = m.groups()
    tier = tier.upper()
    if budget is not None and tier != "IV":
        raise ValueError(f"an inequality budget only applies to model_iv, got {name!r}")
    return MethodSpec(key, "sdp", tier, int(budget) if budget is not None else "all", rnd, bool(lll))


@dataclass(frozen=True)
class PipelineConfig:
    tier: str = "IV"
    ineq_budget: Union[int, str] = "all"
    rounding: RoundingConfig = field(default_factory=RoundingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    lll: bool = False
    l_points: Optional[int] = None


def _usable(sol) -> bool:
    return sol.status in (OPTIMAL, MAX_ITER)


def sdp_detect(
    instance: SystemInstance,
    config: PipelineConfig = PipelineConfig(),
    expansion: Optional[ExpansionStructure] = None,
    method: str = "sdp",
) -> DecodeResult:
    """Quasi-ML decision from one relaxation.

    A failed tier IV solve retries tier III; if that fails too the last
    iterate is rounded with the simple rule.  ``lower_bound`` is the dual
    objective shifted to the ``||y - H x||^2`` scale.
    """
    t0 = time.perf_counter()
    if config.lll:
        return _lll_detect(instance, config, method, t0)
    expansion = expansion or expansion_for(instance)
    bqp = build_bqp(instance, expansion)
    tiers = [config.tier] + (["III"] if config.tier == "IV" else [])
    iterations = 0
    sol = model = None
    for tier in tiers:
        y_prior = None
        if tier == "IV" and config.ineq_budget != "all":
            pre_model = assemble_model(bqp, "III")
            pre = solve(pre_model, config.solver)
            iterations += pre.iterations
            if _usable(pre):
                y_prior = extract_lifted(pre, pre_model.basis)
            elif config.ineq_budget:
                continue
        model = assemble_model(bqp, tier, config.ineq_budget, y_prior)
        sol = solve(model, config.solver)
        iterations += sol.iterations
        if _usable(sol):
            break
    basis = model.basis
    if _usable(sol):
        y = extract_lifted(sol, basis)
        u = round_solution(y, bqp, config.rounding, r=sol.r, basis=basis)
    else:
        y = basis.v_hat @ sol.r @ basis.v_hat.T
        u = simple_round(y, bqp.sizes)
    x = expansion.x_of(u)
    r = instance.y - instance.h @ x
    lb = sol.dual_objective + bqp.const if sol.status == OPTIMAL else None
    return DecodeResult(x, u.astype(float), float(r @ r), method, time.perf_counter() - t0,
                        lower_bound=lb, status=sol.status, iterations=iterations,
                        flagged=sol.status == NUMERICAL_FAILURE)


def _lll_detect(instance, config, method, t0):
    reduced = reduce_system(instance, config.l_points)
    inner = replace(config, lll=False)
    if reduced.flagged:
        res = sdp_detect(instance, inner, method=method)
        res.flagged = True
        return res
    exp_r = build_reduced_expansion(reduced)
    res = sdp_detect(reduced.reduced_instance, inner, exp_r, method)
    out = map_back(res.u, reduced, method, status=res.status, iterations=res.iterations)
    out.elapsed = time.perf_counter() - t0
    return out


def pipeline_for(spec: MethodSpec, rounding: RoundingConfig, solver: SolverConfig,
                 seed: Optional[int] = None) -> PipelineConfig:
    rnd = replace(rounding, seed=seed if seed is not None else rounding.seed)
    if spec.rounding:
        rnd = replace(rnd, method=spec.rounding)
    return PipelineConfig(spec.tier, spec.budget, rnd, solver, spec.lll)


def run_method(
    instance: SystemInstance,
    method: Union[str, MethodSpec],
    rounding: RoundingConfig = RoundingConfig(),
    solver: SolverConfig = SolverConfig(),
    seed: Optional[int] = None,
    expansion: Optional[ExpansionStructure] = None,
) -> DecodeResult:
    spec = parse_method(method) if isinstance(method, str) else method
    if spec.kind == "exhaustive":
        res = exhaustive_ml(instance, expansion)
    elif spec.kind == "sd":
        res = sphere_decode(instance, expansion)
    elif spec.kind == "zf":
        res = zero_forcing(instance)
    else:
        return sdp_detect(instance, pipeline_for(spec, rounding, solver, seed), expansion, spec.name)
    res.method = spec.name
    return res

