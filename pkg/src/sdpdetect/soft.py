"""Max-log soft output from ``N N_b + 1`` hard-decision subproblems."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .baseline import exhaustive_ml
from .detect import PipelineConfig, sdp_detect
from .model import (
    DecodeResult,
    ExpansionStructure,
    SystemInstance,
    expansion_for,
    expansion_from_sets,
    selector_to_bits,
)

LLR_CLAMP = 50.0

Detector = Callable[[SystemInstance, ExpansionStructure], DecodeResult]


@dataclass
class LlrResult:
    """``llr[k] > 0`` means the ``b_k = 1`` side is closer.  ``distances``
    holds ``(d0, d1)`` per bit on the ``||y - H x||^2`` scale."""

    llr: np.ndarray
    hard_bits: np.ndarray
    distances: np.ndarray
    solved_subproblems: int
    statuses: list
    prior: Optional[np.ndarray] = None


def bit_position(expansion: ExpansionStructure, bit_index: int):
    """Block and in-label position of a global bit index (0-based)."""
    pos = 0
    for p, lab in enumerate(expansion.labels):
        nb = lab.shape[1]
        if bit_index < pos + nb:
            return p, bit_index - pos
        pos += nb
    raise IndexError(f"bit index {bit_index} out of range")


def n_bits(expansion: ExpansionStructure) -> int:
    return int(sum(lab.shape[1] for lab in expansion.labels))


def constrained_expansion(expansion: ExpansionStructure, bit_index: int, value: int) -> ExpansionStructure:
    """Keep only the candidates of the affected block whose label bit equals ``value``."""
    if expansion.labels is None:
        raise ValueError("expansion carries no bit labels")
    p, j = bit_position(expansion, bit_index)
    keep = expansion.labels[p][:, j] == value
    sets = list(expansion.point_sets)
    labels = list(expansion.labels)
    sets[p] = np.asarray(sets[p])[keep]
    labels[p] = labels[p][keep]
    return expansion_from_sets(sets, labels, expansion.mode)


def sdp_detector(config: PipelineConfig = PipelineConfig()) -> Detector:
    def run(instance, expansion):
        return sdp_detect(instance, config, expansion)
    return run


def exhaustive_detector(instance, expansion):
    return exhaustive_ml(instance, expansion)


def soft_decode(
    instance: SystemInstance,
    detector: Optional[Detector] = None,
    sigma2: Optional[float] = None,
    mode: Optional[str] = None,
    clamp: float = LLR_CLAMP,
) -> LlrResult:
    """``LLR_k = (d0^2 - d1^2) / (2 sigma^2)`` with ``sigma^2 = 1/snr`` by default.

    The unconstrained decision supplies the distance on its own side of every
    bit; the other side is one constrained solve per bit.  A constrained
    result closer than the unconstrained one (possible with a relaxation) is
    capped at the unconstrained distance so the LLR signs keep the hard
    decision.
    """
    detector = detector or sdp_detector()
    sigma2 = 1.0 / instance.snr if sigma2 is None else sigma2
    expansion = expansion_for(instance, mode)
    hard = detector(instance, expansion)
    hard_bits = selector_to_bits(hard.u, expansion)
    nb = n_bits(expansion)
    dist = np.empty((nb, 2))
    statuses = []
    for k in range(nb):
        b = int(hard_bits[k])
        res = detector(instance, constrained_expansion(expansion, k, 1 - b))
        dist[k, b] = hard.objective
        dist[k, 1 - b] = max(res.objective, hard.objective)
        statuses.append(res.status)
    llr = np.clip((dist[:, 0] - dist[:, 1]) / (2.0 * sigma2), -clamp, clamp)
    return LlrResult(llr, hard_bits, dist, nb + 1, statuses, np.zeros(nb))


def brute_force_llr(instance: SystemInstance, sigma2: Optional[float] = None, mode: Optional[str] = None,
                    clamp: float = LLR_CLAMP) -> np.ndarray:
    """Max-log LLRs by enumerating every candidate."""
    sigma2 = 1.0 / instance.snr if sigma2 is None else sigma2
    exp = expansion_for(instance, mode)
    nb = n_bits(exp)
    best = np.full((nb, 2), np.inf)
    for idx in itertools.product(*[range(s) for s in exp.block_sizes]):
        u = exp.selector(idx)
        r = instance.y - instance.h @ exp.x_of(u)
        d = float(r @ r)
        bits = selector_to_bits(u, exp)
        rows = np.arange(nb)
        best[rows, bits] = np.minimum(best[rows, bits], d)
    return np.clip((best[:, 0] - best[:, 1]) / (2.0 * sigma2), -clamp, clamp)


def write_llr_csv(results, path) -> None:
    """``results`` is an iterable of ``(trial, LlrResult)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "bit_index", "llr", "hard_bit", "subproblem_status"])
        for trial, res in results:
            for k, v in enumerate(res.llr):
                w.writerow([trial, k, repr(float(v)), int(res.hard_bits[k]), res.statuses[k]])
