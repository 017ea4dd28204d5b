"""Trace-ratio upper bounds from an F-matrix eigenvector ansatz.

For a cut state ``sigma`` of a cylinder of circumference ``m`` the ansatz
component is ``psi = tr F(s1,s2) F(s2,s3) ... F(sm,s1)`` and the transfer
matrix acts on it as the same trace over the enlarged matrices ``Fl``.  The
largest ratio ``vpsi / psi`` over all legal cut states bounds the cylinder
eigenvalue from above (Collatz-Wielandt), and its ``m``-th root bounds the
growth rate.  Traces are invariant under rotations and, because
``F(a, b) = F(b, a)^T``, under reflections, so only bracelets are visited.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .bracelets import Bracelet, ShardSpec, canonicalize, count_bracelets, enumerate_bracelets, shard_range
from .ctmrg import CTMState, read_ffile
from .errors import (
    AnsatzNotPositive,
    ChecksumMismatch,
    DimensionMismatch,
    FormatVersionMismatch,
    IncompleteShards,
    ModelMismatch,
    OddWidth,
)
from .hplinalg import DEFAULT_BOUND_BITS, HPMatrix, context, decimal_digits, from_decimal, nth_root, sym_eigen, to_decimal
from .spins import SPINS, ModelSpec, face_weight, get_model

log = logging.getLogger(__name__)

PAIRS = tuple((a, b) for a in SPINS for b in SPINS)
SHARD_FORMAT = "ctmbound-shard/1"
REPORT_FORMAT = "ctmbound-report/1"
CHECK_STRIDE = 100


@dataclass(frozen=True)
class AnsatzSet:
    model: ModelSpec
    n: int
    bits: int
    F: dict = field(repr=False)
    Fl: dict = field(repr=False)
    basis_note: str = "as computed"
    checksum: str = ""
    diagonal: frozenset = frozenset()

    def with_precision(self, bits: int) -> "AnsatzSet":
        """Same ansatz (identical values) carried at a different working precision."""
        return build_fl(
            {k: m.with_precision(bits) for k, m in self.F.items()},
            self.model, bits, basis_note=self.basis_note, checksum=self.checksum,
        )

    def max_asymmetry(self) -> mpfr:
        with context(self.bits):
            return max(
                abs(x - y)
                for a, b in PAIRS
                for x, y in zip(self.F[a, b].data.flat, self.F[b, a].data.T.flat)
            )


def _is_diagonal(m: HPMatrix) -> bool:
    d = m.data
    return all(d[i, j] == 0 for i in range(d.shape[0]) for j in range(d.shape[1]) if i != j)


def build_fl(
    F: dict,
    model: ModelSpec | str,
    bits: int | None = None,
    basis_note: str = "as computed",
    checksum: str = "",
) -> AnsatzSet:
    """Assemble ``Fl(c, a)`` with block ``(d, b)`` equal to ``w(a b; c d) F(d, b)``."""
    model = get_model(model)
    if set(F) != set(PAIRS):
        raise DimensionMismatch("need F(a, b) for all four spin pairs")
    n = F[0, 0].rows
    if any(m.shape != (n, n) for m in F.values()):
        raise DimensionMismatch(f"F matrices must all be {n}x{n}")
    bits = bits or F[0, 0].bits
    F = {k: (m if m.bits == bits else m.with_precision(bits)) for k, m in F.items()}
    zero = HPMatrix.zeros(n, n, bits)
    Fl = {}
    for c, a in PAIRS:
        Fl[c, a] = HPMatrix.block([
            [F[d, b] if face_weight(model, a, b, c, d) else zero for b in SPINS]
            for d in SPINS
        ])
    diagonal = frozenset(k for k, m in F.items() if _is_diagonal(m))
    return AnsatzSet(model, n, bits, F, Fl, basis_note, checksum, diagonal)


def ansatz_from_state(state: CTMState, bits: int = DEFAULT_BOUND_BITS, checksum: str = "") -> AnsatzSet:
    return build_fl(state.F, state.model, bits, checksum=checksum)


def load_ansatz(path, bits: int = DEFAULT_BOUND_BITS, model=None) -> AnsatzSet:
    ff = read_ffile(path, model)
    return build_fl(ff.state.F, ff.state.model, bits, checksum=ff.checksum)


def similarity_reduce(aset: AnsatzSet) -> AnsatzSet:
    """Rotate every F into the eigenbasis of ``F(0, 0)``.

    Traces are unchanged; ``F(0, 0)`` becomes diagonal (its residual
    off-diagonal entries are set to zero) so it multiplies as a scaling.
    """
    eig = sym_eigen(aset.F[0, 0])
    Q = eig.vectors
    bits = aset.bits
    with context(bits):
        F = {k: HPMatrix._wrap(np.dot(np.dot(Q.data.T, m.data), Q.data), bits)
             for k, m in aset.F.items()}
    F[0, 0] = HPMatrix.diag(eig.values, bits)
    return build_fl(F, aset.model, bits,
                    basis_note="eigenbasis of F(0,0)", checksum=aset.checksum)


# ---------------------------------------------------------------------------
# trace chains
# ---------------------------------------------------------------------------


def _normalise(arr: np.ndarray, bits: int) -> tuple:
    """Scale by an exact power of two so the largest entry lies in [1/2, 1)."""
    top = max(abs(v) for v in arr.flat)
    if top == 0:
        return arr, 0
    e = gmpy2.get_exp(top)
    with context(bits):
        f = np.frompyfunc(lambda v: gmpy2.mul_2exp(v, -e), 1, 1)
        return np.asarray(f(arr), dtype=object), e


class TraceChain:
    """``tr M(k1) M(k2) ... M(km)`` with cached, normalised prefix products.

    Consecutive bracelets in lexicographic order share long prefixes, so the
    products of the shared part are reused.  Every prefix is always formed
    left to right in the same way, so cached and uncached evaluations are
    bit-identical.
    """

    def __init__(self, mats: dict, bits: int, diagonal=frozenset()):
        self.mats = {k: m.data for k, m in mats.items()}
        self.diag = {k: np.diagonal(self.mats[k]).copy() for k in diagonal}
        self.bits = bits
        self._keys: list = []
        self._prefix: list = []  # (array, exponent) after each factor

    def _times(self, p: np.ndarray, key) -> np.ndarray:
        if key in self.diag:
            return p * self.diag[key][None, :]
        return np.dot(p, self.mats[key])

    def trace(self, keys) -> mpfr:
        keys = list(keys)
        bits = self.bits
        common = 0
        limit = min(len(self._keys), len(keys) - 1)
        while common < limit and self._keys[common] == keys[common]:
            common += 1
        del self._keys[common:]
        del self._prefix[common:]
        with context(bits):
            for key in keys[common:-1]:
                if self._prefix:
                    prod, e0 = self._prefix[-1]
                    arr, e = _normalise(self._times(prod, key), bits)
                    e += e0
                else:
                    arr, e = _normalise(self.mats[key], bits)
                self._keys.append(key)
                self._prefix.append((arr, e))
            last = self.mats[keys[-1]]
            if self._prefix:
                prod, e = self._prefix[-1]
                tr = np.sum(prod * last.T)
            else:
                tr, e = np.trace(last), 0
            return gmpy2.mul_2exp(tr, e)


def cyclic_pairs(bits) -> list:
    m = len(bits)
    return [(bits[i], bits[(i + 1) % m]) for i in range(m)]


def psi_raw(aset: AnsatzSet, sigma) -> mpfr:
    """Ansatz component evaluated on ``sigma`` exactly as given (no canonicalisation)."""
    return TraceChain(aset.F, aset.bits, aset.diagonal).trace(cyclic_pairs(tuple(sigma)))


def vpsi_raw(aset: AnsatzSet, sigma) -> mpfr:
    return TraceChain(aset.Fl, aset.bits).trace(cyclic_pairs(tuple(sigma)))


def _spins_of(sigma) -> tuple:
    return tuple(getattr(sigma, "spins", sigma))


def psi(aset: AnsatzSet, sigma) -> mpfr:
    """``psi_sigma``; evaluated on the bracelet representative, so it is
    identical for every rotation and reflection of ``sigma``."""
    return psi_raw(aset, canonicalize(_spins_of(sigma), aset.model).bits)


def vpsi(aset: AnsatzSet, sigma) -> mpfr:
    return vpsi_raw(aset, canonicalize(_spins_of(sigma), aset.model).bits)


@dataclass(frozen=True)
class RatioRecord:
    bracelet: Bracelet
    psi: mpfr
    vpsi: mpfr
    ratio_root: mpfr


class RatioEvaluator:
    """Evaluates trace ratios over a stream of bracelets with prefix caching."""

    def __init__(self, aset: AnsatzSet):
        self.aset = aset
        self._f = TraceChain(aset.F, aset.bits, aset.diagonal)
        self._fl = TraceChain(aset.Fl, aset.bits)

    def __call__(self, bracelet: Bracelet) -> RatioRecord:
        pairs = cyclic_pairs(bracelet.bits)
        p = self._f.trace(pairs)
        if not p > 0:
            raise AnsatzNotPositive(bracelet.text, p)
        v = self._fl.trace(pairs)
        if not v > 0:
            raise AnsatzNotPositive(bracelet.text, v)
        bits = self.aset.bits
        with context(bits):
            root = gmpy2.root(v / p, bracelet.m)
        return RatioRecord(bracelet, p, v, root)


def ratio(aset: AnsatzSet, sigma) -> RatioRecord:
    """Trace ratio root ``(vpsi / psi) ** (1/m)``; raises AnsatzNotPositive if ``psi <= 0``."""
    return RatioEvaluator(aset)(canonicalize(_spins_of(sigma), aset.model))


# ---------------------------------------------------------------------------
# shards, checkpoints and aggregation
# ---------------------------------------------------------------------------


@dataclass
class ShardSummary:
    model: str
    m: int
    n: int
    bits: int
    shard_index: int
    shard_count: int
    start: int
    stop: int
    checksum: str
    processed: int = 0
    max_index: int = -1
    max_record: RatioRecord | None = None
    min_index: int = -1
    min_record: RatioRecord | None = None
    status: str = "running"
    aborted_bracelet: str = ""

    @property
    def last_index(self) -> int:
        return self.start + self.processed - 1

    def update(self, index: int, rec: RatioRecord) -> None:
        # strict comparisons keep the earliest index on ties
        if self.max_record is None or rec.ratio_root > self.max_record.ratio_root:
            self.max_index, self.max_record = index, rec
        if self.min_record is None or rec.ratio_root < self.min_record.ratio_root:
            self.min_index, self.min_record = index, rec
        self.processed += 1

    def identity(self) -> tuple:
        return (self.model, self.m, self.n, self.bits, self.shard_index,
                self.shard_count, self.start, self.stop, self.checksum)

    def lines(self) -> list:
        digits = decimal_digits(self.bits)
        out = [
            f"format={SHARD_FORMAT}",
            f"model={self.model}",
            f"m={self.m}",
            f"n={self.n}",
            f"precision_bits={self.bits}",
            f"shard_index={self.shard_index}",
            f"shard_count={self.shard_count}",
            f"range={self.start}:{self.stop}",
            f"f_file_checksum={self.checksum}",
        ]
        for tag, idx, rec in (("max", self.max_index, self.max_record),
                              ("min", self.min_index, self.min_record)):
            if rec is None:
                continue
            out.append(f"{tag}_bracelet={rec.bracelet.text} {tag}_ratio_root={to_decimal(rec.ratio_root, digits)}")
            out.append(f"{tag}_index={idx}")
            out.append(f"{tag}_psi={to_decimal(rec.psi, digits)}")
            out.append(f"{tag}_vpsi={to_decimal(rec.vpsi, digits)}")
        out.append(f"bracelets_processed={self.processed}")
        if self.aborted_bracelet:
            out.append(f"aborted_bracelet={self.aborted_bracelet}")
        out.append(f"status={self.status}")
        return out

    def write(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("\n".join(self.lines()) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def read(cls, path) -> "ShardSummary":
        kv = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            for item in line.split(" "):
                if "=" in item:
                    k, v = item.split("=", 1)
                    kv[k] = v
        if kv.get("format") != SHARD_FORMAT:
            raise FormatVersionMismatch(f"{path}: not a shard result file")
        bits = int(kv["precision_bits"])
        start, stop = (int(x) for x in kv["range"].split(":"))
        s = cls(kv["model"], int(kv["m"]), int(kv["n"]), bits, int(kv["shard_index"]),
                int(kv["shard_count"]), start, stop, kv["f_file_checksum"],
                processed=int(kv["bracelets_processed"]), status=kv["status"],
                aborted_bracelet=kv.get("aborted_bracelet", ""))
        for tag in ("max", "min"):
            if f"{tag}_bracelet" in kv:
                rec = RatioRecord(
                    Bracelet.from_text(kv[f"{tag}_bracelet"]),
                    from_decimal(kv[f"{tag}_psi"], bits),
                    from_decimal(kv[f"{tag}_vpsi"], bits),
                    from_decimal(kv[f"{tag}_ratio_root"], bits),
                )
                setattr(s, f"{tag}_record", rec)
                setattr(s, f"{tag}_index", int(kv[f"{tag}_index"]))
        return s


def shard_path(directory, shard_index: int, shard_count: int) -> Path:
    return Path(directory) / f"shard-{shard_index:05d}-of-{shard_count:05d}.txt"


def _fresh_summary(aset: AnsatzSet, shard: ShardSpec) -> ShardSummary:
    return ShardSummary(aset.model.token, shard.m, aset.n, aset.bits, shard.shard_index,
                        shard.shard_count, shard.start, shard.stop, aset.checksum)


def run_shard(
    aset: AnsatzSet,
    shard: ShardSpec,
    checkpoint_dir=None,
    *,
    resume: bool = False,
    checkpoint_every: int = 100_000,
    checkpoint_seconds: float = 60.0,
    stop_after: int | None = None,
) -> ShardSummary:
    """Evaluate every bracelet in ``shard``, tracking the extreme ratios.

    With ``checkpoint_dir`` the running state is written there periodically
    and the final result is left in the same file.  ``resume`` continues
    from a checkpoint (or returns a finished result unchanged).
    ``stop_after`` ends the call early, as an interruption would, after that
    many bracelets; the checkpoint is then left in the running state.
    """
    if shard.model != aset.model:
        raise ModelMismatch(f"shard is for {shard.model}, ansatz for {aset.model}")
    path = shard_path(checkpoint_dir, shard.shard_index, shard.shard_count) if checkpoint_dir else None
    summary = _fresh_summary(aset, shard)
    if resume and path is not None and path.exists():
        saved = ShardSummary.read(path)
        if saved.identity() != summary.identity():
            raise ChecksumMismatch(f"{path}: checkpoint was written for a different run")
        if saved.status == "complete":
            return saved
        if saved.status == "running":
            summary = saved
    evaluate = RatioEvaluator(aset)
    skip = summary.processed
    last_save = time.monotonic()
    done_now = 0
    for index, bracelet in shard.bracelets():
        if index - shard.start < skip:
            continue
        try:
            rec = evaluate(bracelet)
        except AnsatzNotPositive:
            summary.status = "aborted"
            summary.aborted_bracelet = bracelet.text
            if path is not None:
                summary.write(path)
            raise
        summary.update(index, rec)
        done_now += 1
        if path is not None and (
            summary.processed % checkpoint_every == 0
            or time.monotonic() - last_save >= checkpoint_seconds
        ):
            summary.write(path)
            last_save = time.monotonic()
        if stop_after is not None and done_now >= stop_after and index + 1 < shard.stop:
            if path is not None:
                summary.write(path)
            return summary
    summary.status = "complete"
    if path is not None:
        summary.write(path)
    return summary


def _run_shard_job(args):
    aset, shard, checkpoint_dir, resume, checkpoint_every = args
    return run_shard(aset, shard, checkpoint_dir, resume=resume, checkpoint_every=checkpoint_every)


def run_shards(
    aset: AnsatzSet,
    m: int,
    shard_count: int = 1,
    indices=None,
    workers: int = 1,
    checkpoint_dir=None,
    resume: bool = False,
    checkpoint_every: int = 100_000,
) -> list:
    """Run the selected shards (all by default), in parallel when ``workers > 1``."""
    indices = range(shard_count) if indices is None else indices
    jobs = [(aset, shard_range(aset.model, m, shard_count, i), checkpoint_dir, resume, checkpoint_every)
            for i in indices]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_run_shard_job, jobs))
    return [_run_shard_job(job) for job in jobs]


def collect_shards(directory, model: ModelSpec, m: int, n: int, bits: int,
                   shard_count: int, checksum: str) -> list:
    """Load finished shard results; raises IncompleteShards if any is missing."""
    found, missing = [], []
    for i in range(shard_count):
        path = shard_path(directory, i, shard_count)
        if not path.exists():
            missing.append(i)
            continue
        s = ShardSummary.read(path)
        if s.checksum != checksum:
            raise ChecksumMismatch(f"{path}: shard computed from a different F-file")
        if (s.model, s.m, s.n, s.bits) != (model.token, m, n, bits):
            raise ModelMismatch(f"{path}: shard belongs to a different run")
        if s.status != "complete":
            missing.append(i)
        else:
            found.append(s)
    if missing:
        raise IncompleteShards(missing)
    return found


# ---------------------------------------------------------------------------
# the bound
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    model: str
    m: int
    n: int
    precision_bits: int
    check_precision_bits: int
    shard_count: int
    checksum: str
    shards: list
    bracelets: int
    max_index: int
    max_record: RatioRecord
    min_index: int
    min_record: RatioRecord
    checked: int
    agreeing_digits: int
    reported_digits: int
    upper_bound: str
    config: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    cpu_seconds: float = 0.0

    @property
    def upper_bound_value(self) -> mpfr:
        return from_decimal(self.upper_bound, self.precision_bits)

    def lines(self) -> list:
        digits = decimal_digits(self.precision_bits)
        special = _special_states(self.m)
        out = [
            f"format={REPORT_FORMAT}",
            f"model={self.model}",
            f"m={self.m}",
            f"n={self.n}",
            f"precision_bits={self.precision_bits}",
            f"check_precision_bits={self.check_precision_bits}",
            f"shard_count={self.shard_count}",
            f"f_file_checksum={self.checksum}",
        ]
        out += [f"config.{k}={v}" for k, v in sorted(self.config.items())]
        for s in self.shards:
            p = f"shard.{s.shard_index}"
            out += [
                f"{p}.range={s.start}:{s.stop}",
                f"{p}.bracelets_processed={s.processed}",
                f"{p}.max_bracelet={s.max_record.bracelet.text} {p}.max_ratio_root={to_decimal(s.max_record.ratio_root, digits)}",
                f"{p}.min_bracelet={s.min_record.bracelet.text} {p}.min_ratio_root={to_decimal(s.min_record.ratio_root, digits)}",
            ]
        out += [
            f"bracelets_processed={self.bracelets}",
            f"max_bracelet={self.max_record.bracelet.text} max_ratio_root={to_decimal(self.max_record.ratio_root, digits)}",
            f"min_bracelet={self.min_record.bracelet.text} min_ratio_root={to_decimal(self.min_record.ratio_root, digits)}",
            "min_ratio_note=diagnostic only; bounds the cylinder eigenvalue root from below, not the growth rate",
            f"observed.max_at_special_state={'yes' if self.max_record.bracelet.bits in special else 'no'}",
            f"observed.min_at_special_state={'yes' if self.min_record.bracelet.bits in special else 'no'}",
            f"check.bracelets={self.checked}",
            f"check.agreeing_digits={self.agreeing_digits}",
            f"reported_digits={self.reported_digits}",
            f"upper_bound={self.upper_bound}",
            "status=complete",
        ]
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _special_states(m: int) -> set:
    """All-vacant and alternating cut states (bracelet representatives)."""
    return {(0,) * m, (0, 1) * (m // 2)}


def _fold(shards: list):
    best = worst = None
    for s in sorted(shards, key=lambda s: s.shard_index):
        if s.max_record is None:
            continue
        if best is None or s.max_record.ratio_root > best[1].ratio_root:
            best = (s.max_index, s.max_record)
        if worst is None or s.min_record.ratio_root < worst[1].ratio_root:
            worst = (s.min_index, s.min_record)
    return best, worst


def agreeing_digits(x: mpfr, y: mpfr, cap: int) -> int:
    """Leading significant decimal digits on which ``x`` and ``y`` agree."""
    if x == y:
        return cap
    with context(max(x.precision, y.precision)):
        rel = abs(x - y) / abs(y)
    return max(0, min(cap, math.floor(-math.log10(float(rel)))))


def upper_bound(
    model: ModelSpec | str,
    m: int,
    aset: AnsatzSet,
    shard_count: int = 1,
    workers: int = 1,
    checkpoint_dir=None,
    resume: bool = False,
    check_aset: AnsatzSet | None = None,
    aggregate_only: bool = False,
    checkpoint_every: int = 100_000,
    config: dict | None = None,
) -> BoundReport:
    """Certified-by-policy upper bound over all legal bracelets of length ``m``.

    Every bracelet is evaluated at the ansatz precision.  The extreme
    bracelets and every hundredth bracelet are then re-evaluated with
    ``check_aset`` (by default the same F values at twice the precision);
    the bound keeps one digit fewer than the two runs agree on and is
    rounded up in its last digit.
    """
    t0, c0 = time.monotonic(), _cpu()
    model = get_model(model)
    if m < 2 or m % 2:
        raise OddWidth(f"the bound needs an even circumference >= 2, got {m}")
    if aset.model != model:
        raise ModelMismatch(f"ansatz is for {aset.model}, requested {model}")
    if aggregate_only:
        if checkpoint_dir is None:
            raise IncompleteShards(range(shard_count))
        shards = collect_shards(checkpoint_dir, model, m, aset.n, aset.bits, shard_count, aset.checksum)
    else:
        shards = run_shards(aset, m, shard_count, None, workers, checkpoint_dir, resume, checkpoint_every)
        incomplete = [s.shard_index for s in shards if s.status != "complete"]
        if incomplete:
            raise IncompleteShards(incomplete)
    (max_index, max_rec), (min_index, min_rec) = _fold(shards)
    total = sum(s.processed for s in shards)

    check_aset = check_aset or aset.with_precision(2 * aset.bits)
    wanted = set(range(0, total, CHECK_STRIDE)) | {max_index, min_index}
    primary = RatioEvaluator(aset)
    secondary = RatioEvaluator(check_aset)
    cap = decimal_digits(aset.bits) - 1
    agree = cap
    check_max = None
    for index, bracelet in enumerate(enumerate_bracelets(model, m)):
        if index not in wanted:
            continue
        r1 = max_rec if index == max_index else primary(bracelet)
        r2 = secondary(bracelet)
        agree = min(agree, agreeing_digits(r1.ratio_root, r2.ratio_root, cap))
        if index == max_index:
            check_max = r2
    reported = max(1, agree - 1)
    with context(check_aset.bits):
        top = max(max_rec.ratio_root, check_max.ratio_root)
    bound = to_decimal(top, reported, "U")
    return BoundReport(
        model.token, m, aset.n, aset.bits, check_aset.bits, shard_count, aset.checksum,
        sorted(shards, key=lambda s: s.shard_index), total, max_index, max_rec, min_index,
        min_rec, len(wanted), agree, reported, bound, dict(config or {}),
        wall_seconds=time.monotonic() - t0, cpu_seconds=_cpu() - c0,
    )


def _cpu() -> float:
    t = os.times()
    return t.user + t.system + t.children_user + t.children_system


def exact_ratio_spread(aset: AnsatzSet, m: int) -> tuple:
    """(min, max) ratio roots over all bracelets, without sharding (small ``m``)."""
    ev = RatioEvaluator(aset)
    roots = [ev(b).ratio_root for b in enumerate_bracelets(aset.model, m)]
    return min(roots), max(roots)
