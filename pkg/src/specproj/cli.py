"""Command-line interface: ``specproj generate | project | verify | rankscan | bench``.

Exit codes: 0 success, 2 invalid flags, 3 I/O failure, 4 Cholesky
breakdown, 5 matrix too large for the dense oracle.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .banded import SpectrumSpec, read_sbm, synth_banded, write_sbm
from .fastqr import reduce_stacked
from .hodlr import NotPositiveDefiniteError, diagnostics
from .qdwh import DEFAULT_DELTA, DEFAULT_EPS, default_n_min, error_metrics, hqdwh, oracle_projector
from .theory import verify_decay

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CHOLESKY = 4
EXIT_ORACLE_CAP = 5
DEFAULT_ORACLE_CAP = 4096

RANKSCAN_COLUMNS = ["gap", "eps", "max_rank", "e_id", "e_trace", "e_sp", "decay_margin"]
BENCH_COLUMNS = ["n", "b", "wall_ms", "memory_bytes", "max_rank"]


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def oracle_cap() -> int:
    raw = os.environ.get("SPECPROJ_ORACLE_CAP")
    if raw is None:
        return DEFAULT_ORACLE_CAP
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"SPECPROJ_ORACLE_CAP must be an integer, got {raw!r}", EXIT_USAGE) from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _check_problem(n: int, b: int, gap: float | None = None) -> None:
    if n < 2:
        raise CliError("--n must be at least 2", EXIT_USAGE)
    if not 1 <= b < n:
        raise CliError(f"--band must satisfy 1 <= b < n (got b={b}, n={n})", EXIT_USAGE)
    if gap is not None and not 0 < gap < 1:
        raise CliError(f"--gap must lie in (0, 1), got {gap}", EXIT_USAGE)


def _load(path: str):
    try:
        return read_sbm(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _write_csv(path: str | None, columns: list[str], rows: list[dict]) -> None:
    fh = sys.stdout if path is None else None
    try:
        if fh is None:
            fh = open(path, "w", encoding="utf-8", newline="")
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in columns})
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc
    finally:
        if fh is not None and fh is not sys.stdout:
            fh.close()


def _fmt(value):
    return repr(float(value)) if isinstance(value, float) else value


def _run(A, n_min, eps, delta):
    t0 = time.perf_counter()
    try:
        result = hqdwh(A, n_min=n_min, eps=eps, delta=delta)
    except NotPositiveDefiniteError as exc:
        raise CliError(f"{exc}; the truncation tolerance may be too large, retry with a smaller --eps", EXIT_CHOLESKY) from exc
    return result, 1e3 * (time.perf_counter() - t0)


def build_report(A, result, wall_ms, *, n_min, eps, delta, shift=0.0, file=None, gap=None, seed=None, errors=None) -> dict:
    """RunReport as an ordered dict (field order is part of the format)."""
    diag = diagnostics(result.P)
    return {
        "input": {"n": A.n, "b": A.b, "gap": gap, "seed": seed, "file": file, "shift": shift},
        "parameters": {"n_min": n_min, "eps": eps, "delta": delta, "alpha": result.alpha, "l0": result.l0},
        "iterations": result.iterations,
        "per_iteration": [
            {"k": h.k, "kind": h.kind, "l_k": h.l, "c_k": h.c, "max_rank": h.max_rank, "memory_bytes": h.memory_bytes, "wall_ms": h.wall_ms}
            for h in result.history
        ],
        "errors": errors,
        "totals": {"wall_ms": wall_ms, "max_rank": diag["max_offdiag_rank"], "memory_bytes": diag["memory_bytes"], "trace_P": result.P.trace()},
    }


def _emit_report(report: dict, path: str | None) -> None:
    text = json.dumps(report, indent=2, allow_nan=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        _write_text(path, text)


def projector_errors(A, P_dense: np.ndarray) -> dict:
    """Error metrics of a computed projector against the dense oracle."""
    Pi, nu = oracle_projector(A.to_dense())
    U = np.eye(A.n) - 2.0 * P_dense
    return error_metrics(U, Pi, nu)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_generate(args) -> int:
    _check_problem(args.n, args.band, args.gap)
    spec = SpectrumSpec.uniform(args.n, args.gap)
    A = synth_banded(spec, args.band, seed=args.seed)
    try:
        write_sbm(A, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from exc
    lam = spec.eigenvalues
    print(f"wrote {args.out}: n={A.n} b={A.b} nu={spec.nu} spectrum=[{lam.min():.3g}, {-args.gap:.3g}] U [{args.gap:.3g}, {lam.max():.3g}]")
    return 0


def _project_common(args):
    A = _load(args.input)
    if args.shift:
        A = A.shifted(args.shift)
    n_min = args.nmin or default_n_min(A.b)
    return A, n_min


def cmd_project(args) -> int:
    A, n_min = _project_common(args)
    result, wall = _run(A, n_min, args.eps, args.delta)
    report = build_report(A, result, wall, n_min=n_min, eps=args.eps, delta=args.delta, shift=args.shift, file=args.input)
    _emit_report(report, args.report)
    if args.dump_projector:
        if A.n > oracle_cap():
            raise CliError(f"n={A.n} exceeds the dense size cap; not dumping P", EXIT_ORACLE_CAP)
        try:
            np.save(args.dump_projector, result.P.to_dense())
        except OSError as exc:
            raise CliError(f"cannot write {args.dump_projector}: {exc}", EXIT_IO) from exc
    if args.dump_givens:
        givens, _ = reduce_stacked(A.scaled(math.sqrt(result.history[0].c) / result.alpha) if result.history else A)
        try:
            with open(args.dump_givens, "wb") as fh:
                fh.write(givens.to_bytes())
        except OSError as exc:
            raise CliError(f"cannot write {args.dump_givens}: {exc}", EXIT_IO) from exc
    return 0


def cmd_verify(args) -> int:
    A, n_min = _project_common(args)
    cap = args.oracle_cap if args.oracle_cap is not None else oracle_cap()
    if A.n > cap:
        raise CliError(f"n={A.n} exceeds the dense oracle cap {cap} (set --oracle-cap or SPECPROJ_ORACLE_CAP)", EXIT_ORACLE_CAP)
    result, wall = _run(A, n_min, args.eps, args.delta)
    errors = projector_errors(A, result.P.to_dense())
    report = build_report(A, result, wall, n_min=n_min, eps=args.eps, delta=args.delta, shift=args.shift, file=args.input, errors=errors)
    _emit_report(report, args.report)
    return 0


def rankscan_rows(n, b, gaps, eps_list, n_min, seed=None) -> list[dict]:
    rows = []
    for gap in gaps:
        A = synth_banded(SpectrumSpec.uniform(n, gap), b, seed=seed)
        Pi, nu = oracle_projector(A.to_dense())
        decay = verify_decay(Pi, b, gap, n_min=n_min)
        for eps in eps_list:
            result, _ = _run(A, n_min, eps, DEFAULT_DELTA)
            U = np.eye(n) - 2.0 * result.P.to_dense()
            err = error_metrics(U, Pi, nu)
            rows.append({"gap": gap, "eps": eps, "max_rank": diagnostics(result.P)["max_offdiag_rank"], **err, "decay_margin": decay.worst_margin})
    return rows


def cmd_rankscan(args) -> int:
    for gap in args.gaps:
        _check_problem(args.n, args.band, gap)
    if args.n > oracle_cap():
        raise CliError(f"n={args.n} exceeds the dense oracle cap", EXIT_ORACLE_CAP)
    n_min = args.nmin or default_n_min(args.band)
    rows = rankscan_rows(args.n, args.band, args.gaps, args.eps_list, n_min, seed=args.seed)
    _write_csv(args.out, RANKSCAN_COLUMNS, rows)
    return 0


def bench_rows(sizes, b, gap, repeat, n_min=None, eps=DEFAULT_EPS) -> list[dict]:
    rows = []
    for n in sizes:
        A = synth_banded(SpectrumSpec.uniform(n, gap), b)
        nm = n_min or default_n_min(b)
        times = []
        for _ in range(repeat):
            result, wall = _run(A, nm, eps, DEFAULT_DELTA)
            times.append(wall)
        diag = diagnostics(result.P)
        rows.append({"n": n, "b": b, "wall_ms": min(times), "memory_bytes": diag["memory_bytes"], "max_rank": diag["max_offdiag_rank"]})
    return rows


def cmd_bench(args) -> int:
    for n in args.sizes:
        _check_problem(n, args.band, args.gap)
    if args.repeat < 1:
        raise CliError("--repeat must be at least 1", EXIT_USAGE)
    rows = bench_rows(args.sizes, args.band, args.gap, args.repeat, n_min=args.nmin, eps=args.eps)
    _write_csv(args.out, BENCH_COLUMNS, rows)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specproj", description="Spectral projectors of banded symmetric matrices in HODLR format.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic banded matrix (SBM format)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--band", type=int, default=1)
    p.add_argument("--gap", type=float, default=1e-1)
    p.add_argument("--seed", type=int, default=None, help="shuffle the eigenvalue order")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    def solver_flags(p):
        p.add_argument("--in", dest="input", required=True, help="SBM input file")
        p.add_argument("--nmin", type=int, default=None, help="leaf size (default 250 for b = 1, else 500)")
        p.add_argument("--eps", type=_positive_float, default=DEFAULT_EPS)
        p.add_argument("--delta", type=_positive_float, default=DEFAULT_DELTA)
        p.add_argument("--shift", type=float, default=0.0, help="compute the projector of A - shift*I")
        p.add_argument("--report", default=None, help="JSON report path (default stdout)")

    p = sub.add_parser("project", help="run hQDWH and write a JSON report")
    solver_flags(p)
    p.add_argument("--dump-projector", default=None, help="save dense P as .npy (small n only)")
    p.add_argument("--dump-givens", default=None, help="save the first-iterate rotations as binary records")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("verify", help="run hQDWH and compare with the dense oracle")
    solver_flags(p)
    p.add_argument("--oracle-cap", type=int, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rankscan", help="CSV of ranks and errors over gaps and tolerances")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--band", type=int, default=1)
    p.add_argument("--gaps", type=_float_list, default=[1e-1, 1e-5, 1e-10, 1e-15])
    p.add_argument("--eps-list", type=_float_list, default=[1e-10])
    p.add_argument("--nmin", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_rankscan)

    p = sub.add_parser("bench", help="CSV of wall time and memory over problem sizes")
    p.add_argument("--sizes", type=_int_list, default=[4096, 8192, 16384, 32768])
    p.add_argument("--band", type=int, default=1)
    p.add_argument("--gap", type=float, default=1e-6)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--nmin", type=int, default=None)
    p.add_argument("--eps", type=_positive_float, default=DEFAULT_EPS)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "nmin", None) is not None and args.nmin < 2:
        parser.error("--nmin must be at least 2")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"specproj: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
