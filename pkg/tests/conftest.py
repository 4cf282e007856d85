import itertools
import math

import numpy as np
import pytest

from sdpdetect.harness import draw_instance, ebn0_to_snr
from sdpdetect.model import Constellation, SystemInstance


def random_instance(rng, const, n_tx=2, n_rx=None, ebn0_db=10.0):
    n_rx = n_rx or n_tx
    snr = ebn0_to_snr(ebn0_db, const.bits_per_symbol, n_tx, n_rx)
    inst, idx = draw_instance(rng, const, n_tx, n_rx, snr)
    return inst, idx


def brute_min(bqp, expansion):
    """Minimum of the BQP objective by plain enumeration."""
    best = math.inf
    for idx in itertools.product(*[range(s) for s in expansion.block_sizes]):
        best = min(best, bqp.objective(expansion.selector(idx)))
    return best


TINY = """# K=2, N=1 golden instance
snr 1.0
n_complex -
m_complex -
e_s_av 1.0
constellation bpsk
mode qam
H 1 1
1.0
y 1
0.9
"""


@pytest.fixture
def tiny_path(tmp_path):
    p = tmp_path / "tiny.txt"
    p.write_text(TINY)
    return p


@pytest.fixture
def tiny_instance():
    return SystemInstance(np.array([[1.0]]), np.array([0.9]), 1.0, Constellation.pam(2))
