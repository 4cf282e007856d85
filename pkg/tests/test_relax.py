import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdpdetect.model import Constellation, SystemInstance, build_expansion
from sdpdetect.relax import (
    assemble_model,
    barycenter,
    build_bqp,
    build_projection,
    dump_model,
    gangster,
    gangster_indices,
    interior_point,
    lift,
    load_model,
    reconstruct_column_stochastic,
    select_inequalities,
)

from conftest import random_instance


def all_selectors(sizes):
    off = np.concatenate([[0], np.cumsum(sizes)])
    for idx in itertools.product(*[range(s) for s in sizes]):
        u = np.zeros(off[-1])
        u[off[:-1] + np.array(idx)] = 1
        yield u


def test_bqp_scalar_example(tiny_instance):
    exp = build_expansion(Constellation.pam(2), 1, "qam")
    bqp = build_bqp(tiny_instance, exp)
    assert np.allclose(bqp.q, [[1, -1], [-1, 1]])
    assert np.allclose(bqp.c, [0.9, -0.9])
    assert bqp.objective([0, 1]) == pytest.approx(-0.8)
    assert bqp.objective([1, 0]) == pytest.approx(2.8)


def test_bqp_zero_y():
    inst = SystemInstance(np.eye(2), np.zeros(2), 1.0, Constellation.pam(2))
    bqp = build_bqp(inst, build_expansion(Constellation.pam(2), 2, "qam"))
    assert np.array_equal(bqp.c, np.zeros(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["qpsk", "16qam", "8psk"]))
def test_bqp_objective_is_shifted_residual(seed, name):
    from sdpdetect.model import get_constellation

    rng = np.random.default_rng(seed)
    const = get_constellation(name)
    inst, _ = random_instance(rng, const, 1 if name == "16qam" else 2)
    exp = build_expansion(const, inst.n_complex, const.default_mode)
    bqp = build_bqp(inst, exp)
    assert np.min(np.linalg.eigvalsh(bqp.q)) > -1e-9
    for u in all_selectors(exp.block_sizes):
        r = inst.y - inst.h @ exp.x_of(u)
        assert bqp.objective(u) + bqp.const == pytest.approx(r @ r, abs=1e-9)
        # lifting identity
        assert np.trace(bqp.lq @ lift(u)) == pytest.approx(bqp.objective(u), abs=1e-9)


def test_projection_k2():
    b = build_projection(2, 1)
    assert np.array_equal(b.v_small, [[1], [-1]])
    assert np.array_equal(b.f, [[0], [1]])


@pytest.mark.parametrize("k,n", [(3, 2), (2, 3), (4, 2), ([2, 3, 4], None)])
def test_projection_structure(k, n):
    b = build_projection(k, n)
    assert np.array_equal(b.t @ b.v_hat, np.zeros((b.t.shape[0], b.m)))
    assert np.linalg.matrix_rank(b.v_hat) == b.m
    if b.v_small is not None:
        assert np.allclose(np.ones(k) @ b.v_small, 0)
        assert np.allclose(np.ones(k) @ b.f, np.ones(n))


def test_reconstruct_column_stochastic():
    b = build_projection(2, 1)
    assert np.array_equal(reconstruct_column_stochastic(np.zeros((1, 1)), b), b.f)
    assert np.array_equal(reconstruct_column_stochastic([[1.0]], b), [[1], [0]])
    b = build_projection(4, 3)
    z = np.array([[1, 0, 0], [0, 0, 0], [0, 1, 0]], dtype=float)
    x = reconstruct_column_stochastic(z, b)
    assert np.allclose(x.sum(axis=0), 1) and set(np.unique(x)) <= {0.0, 1.0}
    assert np.array_equal(x[:3], z)


def test_gangster_examples():
    assert gangster_indices(3, 1).j == ((1, 2), (1, 3), (2, 3))
    assert gangster_indices(2, 2).j == ((1, 2), (3, 4))
    gi = gangster_indices(2, 2)
    for u in all_selectors((2, 2)):
        assert np.all(gangster(lift(u), gi.j) == 0)


@pytest.mark.parametrize("k,n", [(2, 1), (3, 2), (4, 3)])
def test_gangster_partition(k, n):
    gi = gangster_indices(k, n)
    assert len(gi.j) == n * k * (k - 1) // 2
    nn = k * n
    upper = {(i, j) for i in range(nn + 1) for j in range(i, nn + 1)}
    redundant = {(0, i) for i in range(1, nn + 1)} | {(i, i) for i in range(1, nn + 1)}
    assert set(gi.j_bar) | set(gi.j_hat) | redundant == upper
    assert not (set(gi.j_bar) & set(gi.j_hat))


def test_barycenter_k2n1():
    assert np.allclose(barycenter(2, 1), [[1, .5, .5], [.5, .5, 0], [.5, 0, .5]])


@pytest.mark.parametrize("k", [2, 3, 4, 8])
@pytest.mark.parametrize("n", [1, 2, 4])
def test_barycenter_is_average_and_spectrum(k, n):
    y = barycenter(k, n)
    if k**n <= 4096:
        avg = np.mean([lift(u) for u in all_selectors((k,) * n)], axis=0)
        assert np.allclose(y, avg, atol=1e-12)
    lam = np.sort(np.linalg.eigvalsh(y))
    expected = np.sort([(k + n) / k] + [1 / k] * (n * (k - 1)) + [0] * n)
    assert np.allclose(lam, expected, atol=1e-9)
    assert np.linalg.matrix_rank(y, tol=1e-9) == n * (k - 1) + 1
    b = build_projection(k, n)
    assert np.allclose(b.t @ y, 0, atol=1e-12)


def test_interior_point_k2n1():
    assert np.allclose(interior_point(2, 1), [[1, .5], [.5, .5]])


@pytest.mark.parametrize("k,n", [(2, 2), (4, 2), (8, 2), (2, 4), (4, 4), (8, 4), ([2, 3, 5], None)])
def test_interior_point_is_strict_and_lifts_to_barycenter(k, n):
    r = interior_point(k, n)
    b = build_projection(k, n)
    assert np.min(np.linalg.eigvalsh(r)) > 0
    assert np.allclose(b.v_hat @ r @ b.v_hat.T, barycenter(k, n), atol=1e-12)


def truncated_r(u, sizes):
    """R of a rank-one point: [1; u without each block's last entry]."""
    off = np.concatenate([[0], np.cumsum(sizes)])
    keep = np.concatenate([u[off[p]:off[p + 1] - 1] for p in range(len(sizes))])
    return lift(keep)


@pytest.mark.parametrize("sizes", [(2, 2), (3, 3), (4, 2), (2, 3, 4)])
def test_truth_is_feasible_for_every_tier(sizes):
    rng = np.random.default_rng(0)
    n = sum(sizes)
    q = rng.standard_normal((n, n))
    from sdpdetect.relax import BqpProblem

    q = q @ q.T
    c = rng.standard_normal(n)
    lq = np.block([[np.zeros((1, 1)), c[None, :]], [c[:, None], q]])
    bqp = BqpProblem(q, c, lq, sizes, 0.0)
    models = {t: assemble_model(bqp, t) for t in ("II", "III", "IV")}
    for u in all_selectors(sizes):
        r = truncated_r(u, sizes)
        y = models["III"].basis.v_hat @ r @ models["III"].basis.v_hat.T
        assert np.allclose(y, lift(u), atol=1e-12)
        assert np.allclose(models["III"].basis.t @ y, 0)
        for model in models.values():
            for con in model.equalities:
                assert sum(cf * y[i, j] for i, j, cf in con.terms) == pytest.approx(con.rhs, abs=1e-12)
            for i, j in model.inequalities:
                assert y[i, j] >= 0
            assert np.trace(model.objective @ r) == pytest.approx(bqp.objective(u), abs=1e-9)


def test_model_sizes():
    bqp = build_bqp(SystemInstance(np.eye(2), np.ones(2), 1.0, Constellation.pam(2)),
                    build_expansion(Constellation.pam(2), 2, "qam"))
    m3 = assemble_model(bqp, "III")
    assert len(m3.equalities) == 3 and m3.m == 3 and not m3.inequalities
    m4 = assemble_model(bqp, "IV", 0)
    assert m4.equalities == m3.equalities and m4.inequalities == ()
    m2 = assemble_model(bqp, "II")
    assert len(m2.equalities) == 5 and not m2.inequalities
    with pytest.raises(ValueError):
        assemble_model(bqp, "I")
    with pytest.raises(ValueError):
        assemble_model(bqp, "IV", None)


def test_model_dimension_16qam():
    exp = build_expansion(Constellation.qam(16), 2, "qam")
    inst = SystemInstance(np.eye(4), np.ones(4), 1.0, Constellation.qam(16), 2, 2)
    m = assemble_model(build_bqp(inst, exp), "IV")
    assert m.objective.shape == (13, 13)
    assert np.allclose(m.objective, m.objective.T)


def test_budget_selects_most_violated():
    cands = ((1, 3), (1, 4), (2, 3), (2, 4))
    y = np.zeros((5, 5))
    y[1, 4], y[2, 3] = -0.3, -0.1
    assert select_inequalities(cands, 2, y) == ((1, 4), (2, 3))
    # ties broken by index order
    assert select_inequalities(cands, 1, np.zeros((5, 5))) == ((1, 3),)
    assert select_inequalities(cands, "all") == cands


def test_model_dump_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    inst, _ = random_instance(rng, Constellation.qam(4))
    exp = build_expansion(Constellation.qam(4), 2, "qam")
    model = assemble_model(build_bqp(inst, exp), "IV")
    p = tmp_path / "m.txt"
    dump_model(model, p)
    back = load_model(p)
    assert np.array_equal(back.objective, model.objective)
    assert back.equalities == model.equalities and back.inequalities == model.inequalities
    assert back.tier == "IV" and back.offset == model.offset
