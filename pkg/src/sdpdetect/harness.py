"""Monte Carlo BER / timing simulation over an E_b/N0 grid.

Every trial draws its own RNG stream from ``(seed, point, trial)``, so the
realizations do not depend on method order or worker count, and all methods
at a grid point decode the same ``(H, y)``.  The per-antenna SNR is
``E_b/N0 * N_b * n_tx / n_rx`` (linear).
"""

from __future__ import annotations

import csv
import math
import os
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .detect import parse_method, run_method
from .model import Constellation, SystemInstance, decision_indices, expansion_for, get_constellation
from .rounding import RoundingConfig
from .solver import NUMERICAL_FAILURE, SolverConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TOP_TIMES = 100
BATCH = 50
WORKERS_ENV = "SDPDETECT_WORKERS"
SNR_CONVENTION = "snr = EbN0 * N_b * n_tx / n_rx (linear, per receive antenna)"


@dataclass
class SimPlan:
    antennas: tuple = (2, 2)  # (n_tx, n_rx)
    constellation: str = "qpsk"
    snr_grid: list = field(default_factory=lambda: [0.0])
    trials_per_point: int = 100
    methods: list = field(default_factory=lambda: ["exhaustive"])
    rounding: RoundingConfig = field(default_factory=RoundingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    min_errors: int = 0
    noise_scale: float = 1.0

    def __post_init__(self):
        self.antennas = tuple(int(a) for a in self.antennas)
        if len(self.antennas) != 2 or min(self.antennas) < 1:
            raise ValueError("antennas must be two positive counts")
        if self.trials_per_point < 1:
            raise ValueError("trials_per_point must be at least 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        for m in self.methods:
            parse_method(m)
        self.snr_grid = [float(s) for s in self.snr_grid]

    def get_constellation(self) -> Constellation:
        return get_constellation(self.constellation)


def plan_from_dict(data: dict, base_dir: Optional[Path] = None) -> SimPlan:
    data = dict(data)
    known = {f.name for f in fields(SimPlan)}
    extra = set(data) - known
    if extra:
        raise ValueError(f"unknown plan keys: {sorted(extra)}")
    if "rounding" in data:
        data["rounding"] = RoundingConfig(**data["rounding"])
    if "solver" in data:
        data["solver"] = SolverConfig(**data["solver"])
    const = data.get("constellation")
    if const and base_dir is not None and (base_dir / const).exists():
        data["constellation"] = str(base_dir / const)
    return SimPlan(**data)


def load_plan(path) -> SimPlan:
    path = Path(path)
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    try:
        return plan_from_dict(data, path.parent)
    except TypeError as exc:
        raise ValueError(f"bad plan {path}: {exc}") from exc


def ebn0_to_snr(ebn0_db: float, bits_per_symbol: int, n_tx: int, n_rx: int) -> float:
    return 10 ** (ebn0_db / 10) * bits_per_symbol * n_tx / n_rx


def draw_instance(rng, const: Constellation, n_tx: int, n_rx: int, snr: float, noise_scale: float = 1.0):
    """One realization: unit-variance Gaussian channel and noise, uniform
    symbols.  Returns ``(instance, symbol_indices)``."""
    idx = rng.integers(0, const.size, n_tx)
    x = const.points[idx]
    if const.is_real:
        h = rng.standard_normal((n_rx, n_tx))
        n = rng.standard_normal(n_rx)
        gain = math.sqrt(snr / (n_rx * const.energy))
        inst = SystemInstance(gain * h, gain * h @ x.real + noise_scale * n, snr, const, e_s_av=const.energy)
        return inst, idx
    h = (rng.standard_normal((n_rx, n_tx)) + 1j * rng.standard_normal((n_rx, n_tx))) / math.sqrt(2)
    n = (rng.standard_normal(n_rx) + 1j * rng.standard_normal(n_rx)) / math.sqrt(2)
    y = math.sqrt(snr / (n_rx * const.energy)) * h @ x + noise_scale * n
    return SystemInstance.from_complex(h, y, snr, const), idx


def trial_rng(seed: int, point: int, trial: int):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(point, trial)))


def method_seed(seed: int, point: int, trial: int, method: str) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(point, trial, zlib.crc32(method.encode())))
    return int(ss.generate_state(1)[0])


def decided_bits(x, expansion) -> tuple:
    """Bits of a decision; blocks off the constellation count as all-wrong
    (returned as a mask)."""
    idx = decision_indices(x, expansion)
    bits, bad = [], []
    for p, i in enumerate(idx):
        nb = expansion.labels[p].shape[1]
        bits.append(expansion.labels[p][max(i, 0)])
        bad.append(np.full(nb, i < 0))
    return np.concatenate(bits), np.concatenate(bad)


def complex_symbols(x, const: Constellation, n_tx: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.astype(complex) if const.is_real else x[:n_tx] + 1j * x[n_tx:]


def inst_vector(x, const: Constellation) -> np.ndarray:
    return x.real.astype(float) if const.is_real else np.concatenate([x.real, x.imag])


def run_trial(plan: SimPlan, point: int, trial: int) -> list:
    """Decode one realization with every method; one record per method."""
    const = plan.get_constellation()
    n_tx, n_rx = plan.antennas
    snr = ebn0_to_snr(plan.snr_grid[point], const.bits_per_symbol, n_tx, n_rx)
    inst, idx = draw_instance(trial_rng(plan.seed, point, trial), const, n_tx, n_rx, snr, plan.noise_scale)
    exp = expansion_for(inst)
    x_true = const.points[idx]
    true_bits, _ = decided_bits(inst_vector(x_true, const), exp)
    nbits = true_bits.size
    out = []
    for name in plan.methods:
        seed = method_seed(plan.seed, point, trial, name)
        t0 = time.perf_counter()
        try:
            res = run_method(inst, name, plan.rounding, plan.solver, seed)
            elapsed = time.perf_counter() - t0
        except Exception as exc:  # recorded, not fatal
            out.append(dict(method=name, bit_errors=nbits, symbol_errors=n_tx, time=time.perf_counter() - t0,
                            out_of_region=False, iterations=0, solver_failure=False, failed=True,
                            visited=0, error=repr(exc)))
            continue
        dec = complex_symbols(res.x, const, n_tx)
        sym_err = int(np.sum(np.abs(dec - x_true) > 1e-6))
        bits, bad = decided_bits(res.x, exp)
        bit_err = int(np.sum((bits != true_bits) | bad))
        out.append(dict(method=name, bit_errors=bit_err, symbol_errors=sym_err, time=elapsed,
                        out_of_region=res.out_of_region, iterations=res.iterations,
                        solver_failure=res.status == NUMERICAL_FAILURE, failed=False,
                        visited=res.visited_nodes, error=""))
    return out


@dataclass
class PointResult:
    method: str
    ebn0_db: float
    snr: float
    trials: int
    bits: int
    bit_errors: int
    symbol_errors: int
    ber: float
    ser: float
    ave_time: float
    max_time: float
    ave_max_time: float
    out_of_region_rate: float
    mean_iterations: float
    solver_failures: int
    method_failures: int
    mean_visited: float


COLUMNS = [f.name for f in fields(PointResult)]


@dataclass
class SimResult:
    rows: list
    plan: Optional[SimPlan] = None

    def get(self, method: str, ebn0_db: float) -> PointResult:
        for r in self.rows:
            if r.method == method and abs(r.ebn0_db - ebn0_db) < 1e-12:
                return r
        raise KeyError((method, ebn0_db))


def summarize(records: list, method: str, ebn0_db: float, snr: float, bits_per_trial: int, syms_per_trial: int) -> PointResult:
    n = len(records)
    times = np.array([r["time"] for r in records])
    top = np.sort(times)[::-1][:TOP_TIMES]
    be = sum(r["bit_errors"] for r in records)
    se = sum(r["symbol_errors"] for r in records)
    return PointResult(
        method, ebn0_db, snr, n, n * bits_per_trial, be, se,
        be / (n * bits_per_trial), se / (n * syms_per_trial),
        float(times.mean()), float(times.max()), float(top.mean()),
        sum(r["out_of_region"] for r in records) / n,
        float(np.mean([r["iterations"] for r in records])),
        sum(r["solver_failure"] for r in records),
        sum(r["failed"] for r in records),
        float(np.mean([r["visited"] for r in records])),
    )


def _batch(args):
    plan, point, trials = args
    return [run_trial(plan, point, t) for t in trials]


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_plan(plan: SimPlan, workers: Optional[int] = None, trace: Optional[list] = None, progress=None) -> SimResult:
    """Simulate every grid point.  A point stops after ``trials_per_point``
    trials, or earlier once every method has ``min_errors`` bit errors
    (checked after each batch of 50 trials in order, so the outcome is independent of the
    worker count)."""
    const = plan.get_constellation()
    n_tx, n_rx = plan.antennas
    bits_per_trial = n_tx * const.bits_per_symbol
    workers = workers or worker_count()
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    rows = []
    try:
        for point, ebn0 in enumerate(plan.snr_grid):
            snr = ebn0_to_snr(ebn0, const.bits_per_symbol, n_tx, n_rx)
            per_method = {m: [] for m in plan.methods}
            done = 0
            while done < plan.trials_per_point:
                stop = min(done + BATCH * workers, plan.trials_per_point)
                chunks = [range(s, min(s + BATCH, stop)) for s in range(done, stop, BATCH)]
                jobs = [(plan, point, c) for c in chunks]
                results = pool.map(_batch, jobs) if pool else map(_batch, jobs)
                enough = False
                for chunk, batch in zip(chunks, results):
                    for t, recs in zip(chunk, batch):
                        for rec in recs:
                            per_method[rec["method"]].append(rec)
                            if trace is not None:
                                trace.append(dict(ebn0_db=ebn0, trial=t, **rec))
                    done = chunk.stop
                    enough = plan.min_errors and all(
                        sum(r["bit_errors"] for r in recs) >= plan.min_errors for recs in per_method.values()
                    )
                    if enough:
                        break
                if progress:
                    progress(ebn0, done)
                if enough:
                    break
            for m in plan.methods:
                rows.append(summarize(per_method[m], m, ebn0, snr, bits_per_trial, n_tx))
    finally:
        if pool:
            pool.shutdown()
    return SimResult(rows, plan)


def emit_csv(result: SimResult, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SNR_CONVENTION}\n")
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in result.rows:
            d = asdict(r)
            w.writerow([repr(v) if isinstance(v, float) else v for v in (d[c] for c in COLUMNS)])


def parse_csv(path) -> SimResult:
    types = {f.name: f.type for f in fields(PointResult)}
    conv = {"str": str, "int": int, "float": float}
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != COLUMNS:
        raise ValueError(f"unexpected columns {reader.fieldnames}")
    rows = [PointResult(**{k: conv[types[k]](v) for k, v in rec.items()}) for rec in reader]
    return SimResult(rows)


def write_trace(trace: list, path) -> None:
    cols = ["ebn0_db", "trial", "method", "bit_errors", "symbol_errors", "time", "out_of_region",
            "iterations", "solver_failure", "failed", "visited", "error"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(trace)


def timing_table(result: SimResult) -> str:
    """AveTime / MaxTime / AveMaxTime (seconds) per method, one column per grid point."""
    grid = sorted({r.ebn0_db for r in result.rows})
    methods = list(dict.fromkeys(r.method for r in result.rows))
    head = "method,stat," + ",".join(f"{g:g}dB" for g in grid)
    lines = [head]
    for m in methods:
        for label, attr in (("AveTime", "ave_time"), ("MaxTime", "max_time"), ("AveMaxTime", "ave_max_time")):
            vals = [getattr(result.get(m, g), attr) for g in grid]
            lines.append(f"{m},{label}," + ",".join(f"{v:.6g}" for v in vals))
    return "\n".join(lines) + "\n"
