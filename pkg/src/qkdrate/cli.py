"""Command-line interface: ``qkdrate solve | precision | bench``.

Exit codes: 0 success, 1 solver did not converge, 2 bad input (usage or
problem-file errors), 3 constraints detected infeasible.

With ``--json`` every command prints one JSON object per line. Each record
has a ``"record"`` field naming its type (``"solve"``, ``"precision"``,
``"bench"``); numbers are finite floats or ``null``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

from . import __version__
from . import entropy as E
from . import precision as P
from . import problem_io
from . import protocols as pr
from .solver import InfeasibleError, SolveReport, SolverOptions, solve

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 1
EXIT_INPUT_ERROR = 2
EXIT_INFEASIBLE = 3

LN2 = math.log(2)

PROTOCOLS = ("bb84", "mub", "overlap")


# -- shared helpers --------------------------------------------------------------


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _emit(record: dict, as_json: bool, out) -> None:
    if as_json:
        print(json.dumps({k: _finite(v) if isinstance(v, float) else v for k, v in record.items()}, allow_nan=False), file=out)
        return
    width = max(len(k) for k in record)
    for k, v in record.items():
        if k == "record":
            continue
        print(f"{k:<{width}}  {v}", file=out)


def build_instance(protocol: str, *, qx=None, qz=None, d=None, v=None, num_bases=None) -> pr.ProtocolInstance:
    """Protocol instance from command-line style parameters."""
    if protocol == "bb84":
        qx = 0.025 if qx is None else qx
        return pr.bb84(qx, qx if qz is None else qz)
    if protocol == "mub":
        return pr.mub(2 if d is None else d, 0.95 if v is None else v, num_bases)
    if protocol == "overlap":
        return pr.overlap(2 if d is None else d, 0.95 if v is None else v)
    raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def _options(args) -> SolverOptions:
    return SolverOptions(
        tol_gap=args.tol_gap,
        tol_feas=args.tol_feas,
        max_iter=args.max_iter,
        use_third_order=not args.no_third_order,
        precision=args.precision,
    )


def _exit_code(status: str) -> int:
    if status in ("optimal", "near_optimal"):
        return EXIT_OK
    if status == "infeasible_detected":
        return EXIT_INFEASIBLE
    return EXIT_SOLVER_FAILURE


def _report_fields(rep: SolveReport) -> dict:
    return {
        "status": rep.status,
        "iterations": rep.iterations,
        "primal_obj": _finite(rep.primal_obj),
        "dual_obj": _finite(rep.dual_obj),
        "gap": _finite(rep.gap),
        "primal_res": _finite(rep.primal_res),
        "dual_res": _finite(rep.dual_res),
        "solve_time": rep.solve_time,
    }


# -- solve ---------------------------------------------------------------------------


def cmd_solve(args, out=None) -> int:
    out = out or sys.stdout
    opts = _options(args)
    if args.problem is not None:
        try:
            problem = problem_io.load(args.problem)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT_ERROR
        except problem_io.ProblemFileError as exc:
            print(f"error: {args.problem}: {exc}", file=sys.stderr)
            return EXIT_INPUT_ERROR
        rep = solve(problem, opts)
        record = {"record": "solve", "source": str(args.problem)}
        if problem.metadata.get("formulation") in ("qkd", "rel_entropy") and rep.primal_obj is not None:
            record["H_AE_bits"] = _finite(rep.primal_obj / LN2)
            record["H_AE_dual_bits"] = _finite(rep.dual_obj / LN2)
        record.update(_report_fields(rep))
        _emit(record, args.json, out)
        return _exit_code(rep.status)

    instance = build_instance(args.protocol, qx=args.qx, qz=args.qz, d=args.d, v=args.v, num_bases=args.num_bases)
    if args.emit is not None:
        problem_io.dump(pr.qkd_problem(instance), args.emit)
    result = pr.key_rate(instance, opts)
    record = {"record": "solve", "protocol": args.protocol, **_params(instance)}
    record.update(result.as_dict())
    _emit(record, args.json, out)
    return _exit_code(record["status"])


def _params(instance) -> dict:
    return {k: v for k, v in instance.params.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}


# -- precision -----------------------------------------------------------------------


@dataclass
class PrecisionRow:
    protocol: str
    precision: str
    computed: float
    reference: float
    abs_error: float
    reference_kind: str
    status: str
    iterations: int


def precision_rows(protocol: str, precisions: Sequence[str], *, qx=0.025, qz=None, d=3, v=0.95) -> list[PrecisionRow]:
    """``|reference - computed|`` of ``H(A|E)`` (bits) for each scalar precision.

    BB84 is compared with the closed form ``1 - h(q_x)`` (evaluated in the
    working precision); MUB with the relative-entropy formulation solved in
    double precision.
    """
    if protocol == "bb84":
        instance = pr.bb84(qx, qx if qz is None else qz)
        kind = "analytic"
    elif protocol == "mub":
        instance = pr.mub(d, v)
        ref_rep = solve(pr.re_problem(instance))
        reference = ref_rep.primal_obj / LN2
        kind = "relative-entropy formulation"
    else:
        raise ValueError(f"no reference value for protocol {protocol!r}")
    rows = []
    for prec in precisions:
        P.check_precision(prec)
        res = pr.key_rate(instance, SolverOptions(precision=prec))
        if protocol == "bb84":
            with P.context(prec):
                reference = 1 - E.binary_entropy(P.scalar(qx, prec))
                err = abs(res.H_AE - reference)
        else:
            err = abs(res.H_AE - reference)
        rep = res.report
        rows.append(
            PrecisionRow(
                protocol,
                prec,
                float(res.H_AE),
                float(reference),
                float(err),
                kind,
                rep.status if rep is not None else "optimal",
                rep.iterations if rep is not None else 0,
            )
        )
    return rows


def cmd_precision(args, out=None) -> int:
    out = out or sys.stdout
    precisions = args.precisions.split(",")
    for prec in precisions:
        if prec not in P.PRECISIONS:
            print(f"error: unsupported precision {prec!r}; available: {', '.join(P.PRECISIONS)}", file=sys.stderr)
            return EXIT_INPUT_ERROR
    rows = precision_rows(args.protocol, precisions, qx=args.qx, qz=args.qz, d=args.d, v=args.v)
    if args.json:
        for r in rows:
            print(json.dumps({"record": "precision", **asdict(r)}), file=out)
    else:
        print(f"{'precision':<10} {'H(A|E) bits':>22} {'reference':>22} {'abs error':>10}  status", file=out)
        for r in rows:
            print(f"{r.precision:<10} {r.computed:>22.17f} {r.reference:>22.17f} {r.abs_error:>10.2e}  {r.status}", file=out)
    return EXIT_OK if all(r.status in ("optimal", "near_optimal") for r in rows) else EXIT_SOLVER_FAILURE


# -- bench -----------------------------------------------------------------------------


@dataclass
class BenchmarkRecord:
    protocol: str
    param: float
    seconds: float | None
    iterations: int | None
    objective: float | None
    gap: float | None
    precision: str
    status: str
    repeat: int = 0


def _setup(protocol: str, param, v: float):
    """Everything that is not timed: instance, facial reduction, problem assembly."""
    if protocol == "bb84":
        instance = pr.bb84(param, param)
    elif protocol == "mub":
        instance = pr.mub(int(param), v)
    elif protocol == "overlap":
        instance = pr.overlap(int(param), v)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    return pr.qkd_problem(instance)


def bench_one(
    protocol: str,
    param,
    *,
    v: float = 0.95,
    options: SolverOptions | None = None,
    repeat: int = 0,
    solve_fn: Callable = solve,
    clock: Callable[[], float] = time.perf_counter,
) -> BenchmarkRecord:
    """Time ``solve_fn`` on one instance; setup is excluded from the timing.

    ``solve_fn`` and ``clock`` are injectable so the timing boundary can be
    instrumented.
    """
    opts = options or SolverOptions()
    try:
        problem = _setup(protocol, param, v)
        t0 = clock()
        rep = solve_fn(problem, opts)
        t1 = clock()
    except Exception as exc:  # a failed instance is recorded and the sweep continues
        logging.getLogger(__name__).warning("instance %s(%s) failed: %s", protocol, param, exc)
        return BenchmarkRecord(protocol, param, None, None, None, None, opts.precision, f"error: {exc}", repeat)
    obj = None if rep.primal_obj is None else float(rep.primal_obj) / LN2
    return BenchmarkRecord(protocol, param, t1 - t0, rep.iterations, obj, _finite(rep.gap), opts.precision, rep.status, repeat)


def _bench_task(task):
    protocol, param, v, opts, rep = task
    return bench_one(protocol, param, v=v, options=opts, repeat=rep)


def run_benchmark(
    protocol: str,
    params: Sequence,
    *,
    v: float = 0.95,
    repeats: int = 1,
    options: SolverOptions | None = None,
    jobs: int = 1,
    solve_fn: Callable = solve,
    clock: Callable[[], float] = time.perf_counter,
) -> list[BenchmarkRecord]:
    """Benchmark sweep; records come back ordered by parameter, then repetition."""
    opts = options or SolverOptions()
    tasks = [(protocol, p, v, opts, r) for p in sorted(params) for r in range(repeats)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_bench_task, tasks))
    else:
        records = [bench_one(p, q, v=vv, options=o, repeat=r, solve_fn=solve_fn, clock=clock) for p, q, vv, o, r in tasks]
    return sorted(records, key=lambda r: (r.param, r.repeat))


def plot_data(records: Sequence[BenchmarkRecord]) -> str:
    """``<param> <seconds>`` per line for every timed record."""
    lines = []
    for r in records:
        if r.seconds is not None:
            param = int(r.param) if float(r.param).is_integer() else r.param
            lines.append(f"{param} {r.seconds:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")


def _parse_params(text: str) -> list:
    vals = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            vals.extend(range(int(lo), int(hi) + 1))
        elif part:
            f = float(part)
            vals.append(int(f) if f.is_integer() and "." not in part else f)
    return vals


def cmd_bench(args, out=None) -> int:
    out = out or sys.stdout
    try:
        params = _parse_params(args.params)
    except ValueError:
        print(f"error: cannot parse parameter list {args.params!r}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    if not params:
        print("error: empty parameter list", file=sys.stderr)
        return EXIT_INPUT_ERROR
    records = run_benchmark(args.protocol, params, v=args.v, repeats=args.repeat, options=_options(args), jobs=args.jobs)
    for r in records:
        if args.json:
            print(json.dumps({"record": "bench", **asdict(r)}), file=out)
        else:
            secs = "-" if r.seconds is None else f"{r.seconds:.3f}"
            gap = "-" if r.gap is None else f"{r.gap:.1e}"
            print(f"{r.protocol} {r.param} time={secs}s iterations={r.iterations} gap={gap} status={r.status}", file=out)
    if args.plot_data is not None:
        with open(args.plot_data, "w") as fh:
            fh.write(plot_data(records))
    return EXIT_OK if all(r.status in ("optimal", "near_optimal") for r in records) else EXIT_SOLVER_FAILURE


# -- argument parsing ----------------------------------------------------------------


def _add_solver_flags(p):
    p.add_argument("--tol-gap", type=float, default=None, help="relative gap tolerance (default 1e-8 in double)")
    p.add_argument("--tol-feas", type=float, default=None, help="feasibility tolerance (default 1e-8 in double)")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--no-third-order", action="store_true", help="disable third-order corrections")
    p.add_argument("--precision", choices=P.PRECISIONS, default="double", help="scalar type for the whole solve")
    p.add_argument("--json", action="store_true", help="one JSON record per line")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdrate", description="Numerical QKD key rates via the QKD cone.", allow_abbrev=False
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    sub_kw = {"allow_abbrev": False}

    ps = sub.add_parser("solve", help="solve a protocol instance or a problem file", **sub_kw)
    ps.add_argument("problem", nargs="?", help="problem file (JSON); omit to use --protocol")
    ps.add_argument("--protocol", choices=PROTOCOLS, default="bb84")
    ps.add_argument("--qx", type=float, default=None, help="BB84 X-basis error rate (default 0.025)")
    ps.add_argument("--qz", type=float, default=None, help="BB84 Z-basis error rate (default: --qx)")
    ps.add_argument("--d", type=int, default=None, help="dimension for mub/overlap (default 2)")
    ps.add_argument("--v", type=float, default=None, help="visibility for mub/overlap (default 0.95)")
    ps.add_argument("--num-bases", type=int, default=None, help="number of MUBs (default: all)")
    ps.add_argument("--emit", metavar="FILE", default=None, help="also write the problem file")
    _add_solver_flags(ps)
    ps.set_defaults(func=cmd_solve)

    pp = sub.add_parser("precision", help="error against a reference at each scalar precision", **sub_kw)
    pp.add_argument("--protocol", choices=("bb84", "mub"), default="bb84")
    pp.add_argument("--qx", type=float, default=0.025)
    pp.add_argument("--qz", type=float, default=None)
    pp.add_argument("--d", type=int, default=3)
    pp.add_argument("--v", type=float, default=0.95)
    pp.add_argument("--precisions", default=",".join(P.PRECISIONS), help="comma-separated list")
    pp.add_argument("--json", action="store_true")
    pp.set_defaults(func=cmd_precision)

    pb = sub.add_parser("bench", help="time solve() over a parameter sweep", **sub_kw)
    pb.add_argument("--protocol", choices=PROTOCOLS, default="mub")
    pb.add_argument("--params", default="2,3,5,7", help="comma list, ranges as lo..hi (e.g. 2..8)")
    pb.add_argument("--v", type=float, default=0.95)
    pb.add_argument("--repeat", type=int, default=1)
    pb.add_argument("--jobs", type=int, default=1, help="worker processes")
    pb.add_argument("--plot-data", metavar="FILE", default=None, help="write '<param> <seconds>' lines")
    _add_solver_flags(pb)
    pb.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
