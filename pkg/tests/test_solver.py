import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdpdetect.model import Constellation, build_expansion, expansion_for, get_constellation
from sdpdetect.relax import (
    SdpModel,
    assemble_model,
    barycenter,
    build_bqp,
    gangster,
    interior_point,
    lift,
)
from sdpdetect.solver import (
    NUMERICAL_FAILURE,
    OPTIMAL,
    TOL_PSD,
    SolverConfig,
    constraint_operators,
    extract_lifted,
    solve,
    write_trace,
)

from conftest import brute_min, random_instance


def tiny_model(tiny_instance, tier="III"):
    exp = build_expansion(Constellation.pam(2), 1, "qam")
    return assemble_model(build_bqp(tiny_instance, exp), tier)


def eq_residual(model, r):
    a_eq, b_eq, b_in = constraint_operators(model)
    return np.abs(np.einsum("kij,ij->k", a_eq, r) - b_eq).max()


def test_config_validation():
    for bad in (dict(tol_gap=0), dict(tol_feas=-1), dict(step_fraction=1.0), dict(max_iter=0),
                dict(polish_iter=-1), dict(retry_step_fractions=(1.5,))):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_zero_objective(tiny_instance):
    m = tiny_model(tiny_instance)
    zero = SdpModel(np.zeros_like(m.objective), m.equalities, m.inequalities, m.tier, m.basis)
    sol = solve(zero)
    assert sol.status == OPTIMAL
    assert abs(sol.lower_bound) < 1e-7


def test_tiny_instance_is_tight(tiny_instance):
    for tier in ("II", "III", "IV"):
        sol = solve(tiny_model(tiny_instance, tier))
        assert sol.status == OPTIMAL
        assert sol.lower_bound == pytest.approx(-0.8, abs=1e-6)
        assert np.allclose(sol.y_lift[:, 0], [1, 0, 1], atol=1e-4)


def test_first_iterations_reduce_gap():
    rng = np.random.default_rng(2)
    inst, _ = random_instance(rng, Constellation.qam(16), ebn0_db=10)
    model = assemble_model(build_bqp(inst, expansion_for(inst)), "III")
    sol = solve(model, warm_start=interior_point(model.basis.sizes), record_trace=True)
    gaps = [row["gap"] for row in sol.trace]
    assert all(np.isfinite([row["primal_obj"] for row in sol.trace]))
    assert all(b < a for a, b in zip(gaps[:5], gaps[1:6]))


def solution_invariants(model, sol, cfg=SolverConfig()):
    assert np.allclose(sol.r, sol.r.T, atol=1e-10)
    assert np.linalg.eigvalsh(sol.r)[0] >= -TOL_PSD
    if sol.status == OPTIMAL:
        assert sol.gap <= cfg.tol_gap and sol.feasibility <= cfg.tol_feas
        assert eq_residual(model, sol.r) <= 1e-7
        y = sol.y_lift
        assert np.allclose(y[0, 1:], np.diag(y)[1:], atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["qpsk", "16qam", "8psk"]), st.sampled_from([0.0, 5.0, 10.0]))
def test_bound_hierarchy_and_invariants(seed, name, ebn0):
    rng = np.random.default_rng(seed)
    const = get_constellation(name)
    inst, _ = random_instance(rng, const, 2 if name != "16qam" else 1, ebn0_db=ebn0)
    exp = expansion_for(inst)
    bqp = build_bqp(inst, exp)
    best = brute_min(bqp, exp)
    vals = {}
    for tier in ("II", "III", "IV"):
        model = assemble_model(bqp, tier)
        sol = solve(model)
        solution_invariants(model, sol)
        assert sol.status != NUMERICAL_FAILURE
        vals[tier] = sol
        # weak duality on every recorded iterate is not required, but the
        # certified dual value must bound the ML minimum
        assert sol.dual_objective <= best + 1e-6
        assert sol.lower_bound <= best + 1e-6
    assert vals["IV"].lower_bound >= vals["III"].lower_bound - 1e-7
    assert vals["III"].lower_bound >= vals["II"].lower_bound - 1e-6


def test_weak_duality_along_the_path():
    rng = np.random.default_rng(11)
    inst, _ = random_instance(rng, Constellation.qam(4))
    model = assemble_model(build_bqp(inst, expansion_for(inst)), "IV")
    sol = solve(model, record_trace=True)
    assert sol.status == OPTIMAL
    for row in sol.trace:
        assert row["dual_obj"] <= row["primal_obj"] + 1e-8


def test_deterministic():
    rng = np.random.default_rng(5)
    inst, _ = random_instance(rng, Constellation.qam(16), 1)
    model = assemble_model(build_bqp(inst, expansion_for(inst)), "IV")
    a, b = solve(model, record_trace=True), solve(model, record_trace=True)
    assert np.array_equal(a.r, b.r) and a.trace == b.trace


def test_extract_lifted_examples():
    rng = np.random.default_rng(0)
    inst, _ = random_instance(rng, Constellation.qam(4))
    model = assemble_model(build_bqp(inst, expansion_for(inst)), "III")
    sol = solve(model)
    vh = model.basis.v_hat
    sol.r = interior_point(model.basis.sizes)
    assert np.allclose(extract_lifted(sol, model.basis), barycenter(model.basis.sizes), atol=1e-12)
    u = np.array([0, 1, 1, 0, 1, 0, 0, 1.0])
    keep = u[[0, 2, 4, 6]]
    sol.r = lift(keep)
    assert np.allclose(extract_lifted(sol, model.basis), lift(u))
    # a random PSD R: the gangster residual equals the equality residual
    g = rng.standard_normal((model.m, model.m))
    r = g @ g.T
    r /= r[0, 0]
    y = vh @ r @ vh.T
    target = np.zeros_like(y)
    target[0, 0] = 1
    jbar = ((0, 0),) + tuple((i, j) for con in model.equalities[1:] for i, j, _ in con.terms)
    assert np.abs(gangster(y, jbar) - target).max() == pytest.approx(eq_residual(model, r), abs=1e-12)


def test_extract_lifted_rejects_failure():
    rng = np.random.default_rng(0)
    inst, _ = random_instance(rng, Constellation.qam(4))
    model = assemble_model(build_bqp(inst, expansion_for(inst)), "III")
    sol = solve(model)
    sol.status = NUMERICAL_FAILURE
    with pytest.raises(ValueError):
        extract_lifted(sol, model.basis)


def test_tier_iv_lifted_entries_in_unit_range():
    rng = np.random.default_rng(9)
    for _ in range(5):
        inst, _ = random_instance(rng, Constellation.qam(16), 1, ebn0_db=5)
        model = assemble_model(build_bqp(inst, expansion_for(inst)), "IV")
        sol = solve(model)
        assert sol.status == OPTIMAL
        y = extract_lifted(sol, model.basis)
        assert y.min() >= -1e-6 and y.max() <= 1 + 1e-6


def test_max_iter_status(tiny_instance):
    sol = solve(tiny_model(tiny_instance), SolverConfig(max_iter=1))
    assert sol.status == "max_iter" and sol.iterations == 1


def test_trace_csv(tmp_path, tiny_instance):
    sol = solve(tiny_model(tiny_instance), record_trace=True)
    p = tmp_path / "trace.csv"
    write_trace(sol, p)
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "primal_obj", "dual_obj", "gap", "feas_residual"]
    assert len(rows) == len(sol.trace) + 1


def test_polishing_only_improves_the_gap():
    rng = np.random.default_rng(21)
    for _ in range(10):
        inst, _ = random_instance(rng, Constellation.qam(16), ebn0_db=15)
        model = assemble_model(build_bqp(inst, expansion_for(inst)), "III")
        plain = solve(model, SolverConfig(polish_iter=0))
        polished = solve(model)
        if plain.status == OPTIMAL:
            assert polished.status == OPTIMAL and polished.gap <= plain.gap
