import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdpdetect.model import (
    Constellation,
    SystemInstance,
    bits_to_selector,
    build_expansion,
    check_selector,
    complex_to_real,
    constellation_to_toml,
    decision_indices,
    expansion_for,
    get_constellation,
    load_constellation,
    read_instance,
    selector_indices,
    selector_to_bits,
    stack_complex,
    write_instance,
)


def test_complex_to_real_scalar():
    h, y = complex_to_real(np.array([[1 + 2j]]), np.array([3 - 1j]))
    # [[Re, -Im], [Im, Re]] so that H stack(x) = stack(H x)
    assert np.array_equal(h, [[1, -2], [2, 1]])
    assert np.array_equal(y, [3, -1])


def test_complex_to_real_identity():
    h, _ = complex_to_real(np.eye(3), np.zeros(3))
    assert np.array_equal(h, np.eye(6))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4))
def test_complex_to_real_matches_complex_product(seed, m, n):
    rng = np.random.default_rng(seed)
    hc = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    xc = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    h, _ = complex_to_real(hc, np.zeros(m))
    assert np.allclose(h @ stack_complex(xc), stack_complex(hc @ xc), atol=1e-12)


def test_complex_to_real_dimension_mismatch():
    with pytest.raises(ValueError):
        complex_to_real(np.ones((2, 2)), np.ones(3))


def test_pam4_selector():
    exp = build_expansion(Constellation.pam(4), 1, "qam")
    assert np.array_equal(exp.x_of([0, 1, 0, 0]), [-1.0])


def test_qpsk_expansion_shapes():
    exp = build_expansion(Constellation.qam(4), 2, "qam")
    assert exp.s.shape == (4, 8)
    assert np.array_equal(exp.a, np.kron(np.eye(4), [1, 1]))


def test_8psk_expansion_columns():
    const = Constellation.psk(8)
    exp = build_expansion(const, 1, "psk")
    theta = 2 * np.pi * np.arange(8) / 8
    assert exp.s.shape == (2, 8)
    assert np.allclose(exp.s, np.vstack([np.cos(theta), np.sin(theta)]))


def test_qam_mode_rejects_psk():
    with pytest.raises(ValueError):
        build_expansion(Constellation.psk(8), 1, "qam")


@pytest.mark.parametrize("name,n_tx", [("qpsk", 2), ("16qam", 1), ("8psk", 2), ("pam4", 2)])
def test_expansion_reaches_every_vector_once(name, n_tx):
    const = get_constellation(name)
    exp = build_expansion(const, n_tx, const.default_mode)
    vecs = set()
    for idx in itertools.product(*[range(s) for s in exp.block_sizes]):
        u = exp.selector(idx)
        assert check_selector(u, exp)
        vecs.add(tuple(np.round(exp.x_of(u), 9)))
    expected = const.size**n_tx
    assert len(vecs) == expected


def test_selector_to_bits_bpsk():
    exp = build_expansion(Constellation.pam(2), 1, "qam")
    assert list(selector_to_bits([0, 1], exp)) == [1]


def test_selector_to_bits_pam4_gray():
    exp = build_expansion(Constellation.pam(4), 1, "qam")
    assert list(selector_to_bits([0, 0, 1, 0], exp)) == [1, 1]


@pytest.mark.parametrize("name", ["pam4", "16qam", "8psk", "64qam"])
def test_bits_selector_round_trip(name):
    const = get_constellation(name)
    exp = build_expansion(const, 1, const.default_mode)
    for idx in itertools.product(*[range(s) for s in exp.block_sizes]):
        u = exp.selector(idx)
        assert np.array_equal(bits_to_selector(selector_to_bits(u, exp), exp), u)


def test_invalid_selector_rejected():
    exp = build_expansion(Constellation.pam(2), 2, "qam")
    with pytest.raises(ValueError):
        selector_to_bits([1, 1, 0, 1], exp)


def test_qam_labels_are_gray():
    const = Constellation.qam(16)
    pts, labs = const.points, const.labels
    for i in range(16):
        for j in range(16):
            if abs(abs(pts[i] - pts[j]) - 2) < 1e-9:
                assert np.sum(labs[i] != labs[j]) == 1


def test_constellation_validation():
    with pytest.raises(ValueError):
        Constellation(np.array([1, 1]), np.array([[0], [1]]))
    with pytest.raises(ValueError):
        Constellation(np.array([1, -1]), np.array([[0], [0]]))
    with pytest.raises(ValueError):
        Constellation(np.array([1, -1, 2]), np.array([[0], [1], [1]]))


def test_constellation_file_round_trip(tmp_path):
    const = Constellation.qam(16)
    p = tmp_path / "c.toml"
    p.write_text(constellation_to_toml(const))
    back = load_constellation(p)
    assert np.allclose(back.points, const.points)
    assert np.array_equal(back.labels, const.labels)
    assert back.separable and np.allclose(back.real_points, [-3, -1, 1, 3])


def test_instance_scaling_and_shape():
    const = Constellation.qam(4)
    hc = np.array([[1.0, 0.5j], [0.2, 1.0]])
    inst = SystemInstance.from_complex(hc, np.zeros(2), 4.0, const)
    h, _ = complex_to_real(hc, np.zeros(2))
    assert np.allclose(inst.h, np.sqrt(4.0 / (2 * const.energy)) * h)
    with pytest.raises(ValueError):
        SystemInstance(np.ones((2, 2)), np.ones(2), -1.0, const)
    with pytest.raises(ValueError):
        SystemInstance(np.ones((2, 2)), np.ones(3), 1.0, const)


def test_real_and_complex_ml_agree():
    rng = np.random.default_rng(7)
    const = Constellation.qam(4)
    for _ in range(10):
        hc = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        yc = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        cands = list(itertools.product(const.points, repeat=2))
        best_c = min(cands, key=lambda x: np.linalg.norm(yc - hc @ np.array(x)))
        h, y = complex_to_real(hc, yc)
        best_r = min(cands, key=lambda x: np.linalg.norm(y - h @ stack_complex(np.array(x))))
        assert best_c == best_r


def test_instance_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    const = Constellation.qam(16)
    hc = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    inst = SystemInstance.from_complex(hc, rng.standard_normal(2) + 0j, 10.0, const)
    p = tmp_path / "inst.txt"
    write_instance(p, inst, x_true=np.arange(4.0))
    back, mode, x = read_instance(p)
    assert np.array_equal(back.h, inst.h) and np.array_equal(back.y, inst.y)
    assert back.snr == inst.snr and back.n_complex == 2 and mode == "qam"
    assert np.array_equal(x, np.arange(4.0))


def test_decision_indices_off_grid():
    exp = build_expansion(Constellation.pam(4), 2, "qam")
    assert list(decision_indices([1.0, 5.0], exp)) == [2, -1]


def test_expansion_for_modes():
    inst = SystemInstance(np.eye(4), np.zeros(4), 1.0, Constellation.psk(8), 2, 2)
    assert expansion_for(inst).mode == "psk" and expansion_for(inst).n_dims == 2
    inst = SystemInstance(np.eye(4), np.zeros(4), 1.0, Constellation.qam(16), 2, 2)
    assert expansion_for(inst).n_dims == 4


def test_selector_indices():
    exp = build_expansion(Constellation.pam(4), 2, "qam")
    assert list(selector_indices(exp.selector([3, 1]), exp)) == [3, 1]
