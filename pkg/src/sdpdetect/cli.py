"""Command line: ``decode``, ``simulate``, ``soft`` and ``bench``.

Exit codes: 0 success, 2 bad arguments or configuration, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .detect import parse_method, pipeline_for, run_method
from .harness import SimPlan, emit_csv, load_plan, run_plan, timing_table, write_trace
from .model import read_instance
from .rounding import RoundingConfig
from .soft import exhaustive_detector, sdp_detector, soft_decode, write_llr_csv
from .solver import SolverConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _fmt_vec(v) -> str:
    return "[" + ", ".join(f"{float(a):.10g}" for a in np.asarray(v).ravel()) + "]"


def _rounding(args) -> RoundingConfig:
    try:
        return RoundingConfig(method=args.rounding, m_rand=args.m_rand, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_instance(path):
    if not Path(path).exists():
        raise ConfigError(f"instance file {path} not found")
    try:
        return read_instance(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _method(name):
    try:
        return parse_method(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_decode(args) -> int:
    inst, mode, _ = _load_instance(args.instance)
    spec = _method(args.method)
    res = run_method(inst, spec, _rounding(args), SolverConfig(), args.seed)
    lines = [
        f"method = {res.method}",
        f"x = {_fmt_vec(res.x)}",
        f"objective = {res.objective:.12g}",
        f"status = {res.status}",
        f"lower_bound = {res.lower_bound if res.lower_bound is None else format(res.lower_bound, '.12g')}",
        f"iterations = {res.iterations}",
        f"out_of_region = {res.out_of_region}",
        f"flagged = {res.flagged}",
        f"elapsed = {res.elapsed:.6g}",
    ]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


def _plan(args) -> SimPlan:
    if not Path(args.plan).exists():
        raise ConfigError(f"plan file {args.plan} not found")
    try:
        plan = load_plan(args.plan)
        if args.seed is not None:
            plan = replace(plan, seed=args.seed)
        if args.method:
            plan = replace(plan, methods=list(args.method))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return plan


def cmd_simulate(args) -> int:
    plan = _plan(args)
    trace = [] if args.trace else None
    result = run_plan(plan, args.workers, trace)
    if args.out:
        emit_csv(result, args.out)
    if trace is not None:
        write_trace(trace, args.trace)
    for r in result.rows:
        print(f"{r.method:24s} {r.ebn0_db:6.2f} dB  ber={r.ber:.4g}  ser={r.ser:.4g}  "
              f"trials={r.trials}  ave_time={r.ave_time:.4g}s  failures={r.solver_failures}")
    return EXIT_OK


def cmd_soft(args) -> int:
    inst, mode, _ = _load_instance(args.instance)
    spec = _method(args.method)
    if spec.kind == "exhaustive":
        detector = exhaustive_detector
    elif spec.kind == "sdp" and not spec.lll:
        detector = sdp_detector(pipeline_for(spec, _rounding(args), SolverConfig(), args.seed))
    else:
        raise ConfigError(f"soft output supports exhaustive or model_* methods, not {args.method!r}")
    try:
        res = soft_decode(inst, detector, args.sigma2, mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.out:
        write_llr_csv([(0, res)], args.out)
    print(f"subproblems = {res.solved_subproblems}")
    print(f"llr = {_fmt_vec(res.llr)}")
    print(f"hard_bits = {_fmt_vec(res.hard_bits)}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.plan:
        plan = _plan(args)
    else:
        try:
            plan = SimPlan(tuple(args.antennas), args.constellation, args.snr, args.trials,
                           args.method or ["sd", "model_iii"], _rounding(args),
                           seed=args.seed or 0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    result = run_plan(plan, args.workers)
    table = timing_table(result)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdpdetect", description="SDP-relaxation MIMO detection")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, method_default, multi=False):
        if multi:
            sp.add_argument("--method", action="append", help="method name (repeatable)")
        else:
            sp.add_argument("--method", default=method_default)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--rounding", default="alg1", choices=["simple", "alg1", "alg2"])
        sp.add_argument("--m-rand", type=int, default=50)

    d = sub.add_parser("decode", help="decode one instance file")
    d.add_argument("--instance", required=True)
    common(d, "model_iv")
    d.set_defaults(func=cmd_decode)

    s = sub.add_parser("simulate", help="run a simulation plan (TOML)")
    s.add_argument("--plan", required=True)
    s.add_argument("--trace", default=None)
    s.add_argument("--workers", type=int, default=None)
    common(s, None, multi=True)
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("soft", help="max-log LLRs for one instance file")
    o.add_argument("--instance", required=True)
    o.add_argument("--sigma2", type=float, default=None)
    common(o, "model_iv")
    o.set_defaults(func=cmd_soft)

    b = sub.add_parser("bench", help="AveTime/MaxTime/AveMaxTime table")
    b.add_argument("--plan", default=None)
    b.add_argument("--antennas", type=int, nargs=2, default=[8, 8])
    b.add_argument("--constellation", default="qpsk")
    b.add_argument("--snr", type=float, nargs="+", default=[-5.0, 15.0])
    b.add_argument("--trials", type=int, default=200)
    b.add_argument("--workers", type=int, default=None)
    common(b, None, multi=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime failure: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
