"""Command-line entry point: ``ctmbound <command> [options]``.

Commands
  solve   converge CTMRG and write an F-matrix file
  bound   trace-ratio upper bound from an F-matrix file (sharded, resumable)
  exact   dominant transfer-matrix eigenvalues with enclosures
  lower   strip-ratio lower bound
  study   sweep (m, n) grids and write a table for plotting
  verify  run the small exhaustive self-checks (and check an F-file)

Exit status: 0 success, 1 other failure, 2 usage error, 3 ansatz not
positive (no bound emitted), 4 incomplete shards, 5 corrupt or mismatched
input file.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import gmpy2

from . import __version__
from .bound import ansatz_from_state, load_ansatz, run_shards, similarity_reduce, upper_bound
from .bracelets import shard_range
from .ctmrg import GrowthSchedule, ctm_residuals, ctmrg_solve, kappa_estimate, read_ffile, save_state
from .errors import (
    AnsatzNotPositive,
    ChecksumMismatch,
    CTMBoundError,
    DimensionMismatch,
    FormatVersionMismatch,
    IncompleteShards,
    ModelMismatch,
    OddWidth,
    WidthTooLarge,
)
from .exact import Boundary, cw_lower, dominant_eigenvalue, enumerate_states
from .hplinalg import DEFAULT_BOUND_BITS, DEFAULT_CTMRG_BITS, context, decimal_digits, nth_root, to_decimal
from .spins import MODELS, get_model

log = logging.getLogger("ctmbound")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NOT_POSITIVE = 3
EXIT_INCOMPLETE = 4
EXIT_BAD_INPUT = 5


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    model: str
    m: int | None = None
    n: int | None = None
    precision_bits: int = DEFAULT_CTMRG_BITS
    bound_precision_bits: int = DEFAULT_BOUND_BITS
    tol: str = "1e-40"
    max_iters: int = 2000
    polish_iters: int = 50
    shard_count: int = 1
    shard_index: int | None = None
    workers: int = 1
    f_file: Path | None = None
    checkpoint_dir: Path | None = None
    out: Path | None = None
    resume: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self, command: str) -> None:
        paths = [p.resolve() for p in (self.f_file, self.checkpoint_dir, self.out) if p is not None]
        if len(set(paths)) != len(paths):
            raise UsageError("--f-file, --checkpoint-dir and --out must be distinct paths")
        if command == "bound":
            if self.m is None or self.m < 2 or self.m % 2:
                raise UsageError(f"bound needs an even --m >= 2 (got {self.m})")
        if self.shard_count < 1:
            raise UsageError("--shards must be positive")
        if self.shard_index is not None and not 0 <= self.shard_index < self.shard_count:
            raise UsageError("--shard-index must lie in [0, --shards)")
        if self.workers < 1:
            raise UsageError("--workers must be positive")

    def header(self) -> dict:
        """Provenance fields embedded in outputs.

        Worker count and file paths are left out so that outputs do not
        depend on where or how widely a run was executed.
        """
        out = {
            "version": __version__,
            "model": self.model,
            "m": self.m,
            "n": self.n,
            "precision_bits": self.precision_bits,
            "bound_precision_bits": self.bound_precision_bits,
            "tol": self.tol,
            "max_iters": self.max_iters,
            "polish_iters": self.polish_iters,
            "shards": self.shard_count,
        }
        out.update(self.extra)
        return {k: v for k, v in out.items() if v is not None}


def _int_list(text: str) -> list:
    """``4,6,8`` or an inclusive range ``2-20`` / ``4-16:2``."""
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            span, _, step = part.partition(":")
            lo, hi = (int(x) for x in span.split("-", 1))
            values.extend(range(lo, hi + 1, int(step) if step else 1))
        else:
            values.append(int(part))
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctmbound", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, m=True, n=True, m_list=False):
        p.add_argument("--model", required=True, choices=sorted(MODELS))
        if m:
            p.add_argument("--m", type=_int_list if m_list else int, required=True,
                           help="circumference (study: list such as 4,6,8 or 4-12:2)")
        if n:
            p.add_argument("--n", type=_int_list if m_list else int,
                           required=m_list, help="F-matrix size")
        p.add_argument("--precision-bits", type=int, default=DEFAULT_CTMRG_BITS)
        p.add_argument("--bound-precision-bits", type=int, default=DEFAULT_BOUND_BITS)
        p.add_argument("--tol", default=None)
        p.add_argument("--max-iters", type=int, default=2000)
        p.add_argument("--out", type=Path)

    p = sub.add_parser("solve", help="converge CTMRG and write an F-matrix file")
    common(p, m=False)
    p.add_argument("--polish-iters", type=int, default=50)

    p = sub.add_parser("bound", help="upper bound from an F-matrix file")
    common(p)
    p.add_argument("--f-file", type=Path, required=True)
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--shard-index", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--checkpoint-dir", type=Path)
    p.add_argument("--checkpoint-every", type=int, default=100_000)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--aggregate", action="store_true",
                   help="only combine finished shard results from --checkpoint-dir")
    p.add_argument("--similarity-reduce", action="store_true")

    p = sub.add_parser("exact", help="transfer-matrix eigenvalues with enclosures")
    common(p, n=False)

    p = sub.add_parser("lower", help="strip-ratio lower bound")
    common(p, m=False, n=False)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--q", type=int, required=True)

    p = sub.add_parser("study", help="sweep (m, n) and tabulate bounds")
    common(p, m_list=True)
    p.add_argument("--polish-iters", type=int, default=30)

    p = sub.add_parser("verify", help="run exhaustive small-case self-checks")
    p.add_argument("--model", choices=sorted(MODELS))
    p.add_argument("--f-file", type=Path)
    p.add_argument("--out", type=Path)
    return parser


def _config(args) -> RunConfig:
    return RunConfig(
        model=args.model,
        m=getattr(args, "m", None) if not isinstance(getattr(args, "m", None), list) else None,
        n=getattr(args, "n", None) if not isinstance(getattr(args, "n", None), list) else None,
        precision_bits=getattr(args, "precision_bits", DEFAULT_CTMRG_BITS),
        bound_precision_bits=getattr(args, "bound_precision_bits", DEFAULT_BOUND_BITS),
        tol=getattr(args, "tol", None) or "1e-40",
        max_iters=getattr(args, "max_iters", 2000),
        polish_iters=getattr(args, "polish_iters", 50),
        shard_count=getattr(args, "shards", 1),
        shard_index=getattr(args, "shard_index", None),
        workers=getattr(args, "workers", 1),
        f_file=getattr(args, "f_file", None),
        checkpoint_dir=getattr(args, "checkpoint_dir", None),
        out=getattr(args, "out", None),
        resume=getattr(args, "resume", False),
    )


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def cmd_solve(args) -> int:
    cfg = _config(args)
    if cfg.n is None or cfg.n < 1:
        raise UsageError("solve needs --n >= 1")
    cfg.validate("solve")
    schedule = GrowthSchedule(cfg.n, polish_iters=min(cfg.polish_iters, cfg.max_iters),
                              tol=cfg.tol, max_iters=cfg.max_iters)
    t0 = time.monotonic()
    state = ctmrg_solve(cfg.model, schedule, cfg.precision_bits)
    out = cfg.out or Path(f"F-{cfg.model}-n{cfg.n}.txt")
    header = cfg.header()
    del header["bound_precision_bits"], header["shards"]
    header.pop("m", None)
    digest = save_state(state, out, header)
    r1, r2 = ctm_residuals(state)
    kappa = kappa_estimate(state)
    print(f"model={cfg.model} n={state.n} iterations={state.iteration}")
    print(f"kappa_estimate={to_decimal(kappa, 40)}")
    print(f"residual_xi={to_decimal(r1, 3)} residual_eta={to_decimal(r2, 3)}")
    print(f"f_file={out} checksum={digest} seconds={time.monotonic() - t0:.1f}")
    return EXIT_OK


def _load_for_bound(cfg: RunConfig, reduce: bool):
    ff = read_ffile(cfg.f_file, cfg.model)
    if cfg.n is not None and cfg.n != ff.state.n:
        raise DimensionMismatch(f"--n {cfg.n} does not match the F-file (n={ff.state.n})")
    aset = load_ansatz(cfg.f_file, cfg.bound_precision_bits, cfg.model)
    if reduce:
        aset = similarity_reduce(aset)
    return ff, aset


def cmd_bound(args) -> int:
    cfg = _config(args)
    cfg.validate("bound")
    if cfg.shard_index is not None and cfg.checkpoint_dir is None:
        raise UsageError("--shard-index needs --checkpoint-dir for its result file")
    if args.aggregate and cfg.checkpoint_dir is None:
        raise UsageError("--aggregate needs --checkpoint-dir")
    ff, aset = _load_for_bound(cfg, args.similarity_reduce)
    cfg.n = aset.n
    if cfg.checkpoint_dir is not None:
        cfg.checkpoint_dir.mkdir(parents=True, exist_ok=True)
    if cfg.shard_index is not None:
        (summary,) = run_shards(aset, cfg.m, cfg.shard_count, [cfg.shard_index], 1,
                                cfg.checkpoint_dir, cfg.resume, args.checkpoint_every)
        print(f"shard {summary.shard_index}/{summary.shard_count} status={summary.status} "
              f"bracelets={summary.processed}")
        return EXIT_OK
    header = cfg.header()
    header["ctmrg_precision_bits"] = ff.header.get("precision_bits")
    header["ctmrg_iterations"] = ff.header.get("iterations")
    header["basis"] = aset.basis_note
    for drop in ("precision_bits", "max_iters", "polish_iters", "tol"):
        header.pop(drop, None)
    report = upper_bound(
        cfg.model, cfg.m, aset, cfg.shard_count, cfg.workers, cfg.checkpoint_dir,
        cfg.resume, aggregate_only=args.aggregate,
        checkpoint_every=args.checkpoint_every, config=header,
    )
    _emit(report.text(), cfg.out)
    if cfg.out is not None:
        timing = cfg.out.with_name(cfg.out.name + ".timing")
        timing.write_text(
            f"wall_seconds={report.wall_seconds:.3f}\ncpu_seconds={report.cpu_seconds:.3f}\n"
            f"workers={cfg.workers}\n", encoding="utf-8")
        print(f"upper_bound={report.upper_bound}")
    return EXIT_OK


def cmd_exact(args) -> int:
    cfg = _config(args)
    bits = cfg.bound_precision_bits
    tol = args.tol or gmpy2.mul_2exp(gmpy2.mpfr(1, bits), -(bits // 2))
    m = cfg.m
    lines = [f"model={cfg.model}", f"m={m}", f"precision_bits={bits}"]
    digits = decimal_digits(bits) // 2
    for boundary in (Boundary.CYCLIC, Boundary.PATH):
        if boundary is Boundary.CYCLIC and m < 2:
            continue
        space = enumerate_states(cfg.model, m, boundary)
        res = dominant_eigenvalue(cfg.model, m, boundary, bits, tol, cfg.max_iters)
        tag = boundary.value
        lines += [
            f"{tag}.states={len(space)}",
            f"{tag}.lambda={to_decimal(res.value, digits)}",
            f"{tag}.lambda_lower={to_decimal(res.lower, digits, 'D')}",
            f"{tag}.lambda_upper={to_decimal(res.upper, digits, 'U')}",
            f"{tag}.iterations={res.iterations}",
        ]
        if boundary is Boundary.CYCLIC:
            lines.append(f"cyclic.root={to_decimal(nth_root(res.value, m), digits)}")
            if m % 2 == 0:
                ub = nth_root(res.upper, m, gmpy2.RoundUp)
                lines.append(f"upper_bound={to_decimal(ub, digits, 'U')}")
            else:
                lines.append("upper_bound=none")  # the cylinder bound needs an even width
    _emit("\n".join(lines) + "\n", cfg.out)
    return EXIT_OK


def cmd_lower(args) -> int:
    cfg = _config(args)
    bits = cfg.bound_precision_bits
    tol = args.tol or gmpy2.mul_2exp(gmpy2.mpfr(1, bits), -(bits // 2))
    value = cw_lower(cfg.model, args.p, args.q, bits, tol)
    digits = decimal_digits(bits) // 2
    text = (f"model={cfg.model}\np={args.p}\nq={args.q}\nprecision_bits={bits}\n"
            f"lower_bound={to_decimal(value, digits, 'D')}\n")
    _emit(text, cfg.out)
    return EXIT_OK


def study_rows(model: str, ms: list, ns: list, ctm_bits: int, bound_bits: int,
               tol: str, max_iters: int, polish_iters: int, progress=None) -> list:
    """Bound and exact cylinder value for every (m, n); ``n`` swept upwards."""
    exact = {}
    for m in ms:
        try:
            res = dominant_eigenvalue(model, m, Boundary.CYCLIC, bound_bits)
            exact[m] = nth_root(res.value, m)
        except WidthTooLarge:
            exact[m] = None
    rows = []
    state = None
    for n in sorted(ns):
        schedule = GrowthSchedule(n, polish_iters=min(polish_iters, max_iters), tol=tol, max_iters=max_iters)
        state = ctmrg_solve(model, schedule, ctm_bits, initial=state)
        aset = ansatz_from_state(state, bound_bits)
        kappa = kappa_estimate(state)
        for m in ms:
            report = upper_bound(model, m, aset)
            value = report.upper_bound_value
            row = {"m": m, "n": n, "bound": report.upper_bound, "kappa_estimate": to_decimal(kappa, 25)}
            if exact[m] is not None:
                with context(bound_bits):
                    gap = value - exact[m]
                row["exact_root"] = to_decimal(exact[m], 40)
                row["gap"] = to_decimal(gap, 6)
                row["log10_gap"] = f"{math.log10(float(gap)):.4f}" if gap > 0 else "-inf"
            else:
                row.update(exact_root="", gap="", log10_gap="")
            rows.append(row)
            if progress:
                progress(row)
    return rows


STUDY_COLUMNS = ("m", "n", "bound", "exact_root", "gap", "log10_gap", "kappa_estimate")


def cmd_study(args) -> int:
    cfg = _config(args)
    ms, ns = args.m, args.n
    if not ms or not ns:
        raise UsageError("study needs non-empty --m and --n grids")
    bad = [m for m in ms if m < 2 or m % 2]
    if bad:
        raise UsageError(f"study circumferences must be even: {bad}")
    tol = args.tol or "1e-30"
    rows = study_rows(cfg.model, ms, ns, cfg.precision_bits, cfg.bound_precision_bits, tol,
                      cfg.max_iters, cfg.polish_iters,
                      progress=lambda r: log.info("m=%s n=%s gap=%s", r["m"], r["n"], r["gap"]))
    header = {k: v for k, v in cfg.header().items() if k not in ("m", "n", "shards")}
    header["tol"] = tol
    lines = [f"# {k}={v}" for k, v in header.items()]
    lines.append("# grid.m=" + ",".join(map(str, ms)))
    lines.append("# grid.n=" + ",".join(map(str, sorted(ns))))
    lines.append("\t".join(STUDY_COLUMNS))
    lines += ["\t".join(str(r[c]) for c in STUDY_COLUMNS) for r in rows]
    _emit("\n".join(lines) + "\n", cfg.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(args.model, args.f_file)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}{': ' + detail if detail else ''}"
             for name, ok, detail in results]
    passed = sum(ok for _, ok, _ in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if passed == len(results) else EXIT_FAILURE


COMMANDS = {
    "solve": cmd_solve,
    "bound": cmd_bound,
    "exact": cmd_exact,
    "lower": cmd_lower,
    "study": cmd_study,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, OddWidth) as exc:
        parser.print_usage(sys.stderr)
        print(f"ctmbound: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AnsatzNotPositive as exc:
        print(f"ctmbound: INVALID BOUND: {exc}; no bound emitted", file=sys.stderr)
        return EXIT_NOT_POSITIVE
    except IncompleteShards as exc:
        print(f"ctmbound: {exc}; no bound emitted", file=sys.stderr)
        return EXIT_INCOMPLETE
    except (ChecksumMismatch, FormatVersionMismatch, ModelMismatch, DimensionMismatch) as exc:
        print(f"ctmbound: bad input: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (CTMBoundError, OSError) as exc:
        print(f"ctmbound: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
