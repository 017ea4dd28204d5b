import gmpy2
import numpy as np
import pytest
from gmpy2 import mpfr

from ctmbound.bound import (
    PAIRS,
    AnsatzSet,
    BoundReport,
    RatioEvaluator,
    ShardSummary,
    agreeing_digits,
    ansatz_from_state,
    build_fl,
    collect_shards,
    psi,
    psi_raw,
    ratio,
    run_shard,
    shard_path,
    similarity_reduce,
    upper_bound,
    vpsi,
    vpsi_raw,
)
from ctmbound.bracelets import canonicalize, enumerate_bracelets, shard_range
from ctmbound.ctmrg import init_state
from ctmbound.errors import (
    AnsatzNotPositive,
    ChecksumMismatch,
    DimensionMismatch,
    IncompleteShards,
    ModelMismatch,
    OddWidth,
)
from ctmbound.exact import Boundary, code_to_spins, dense_matrix, dominant_eigenvalue, enumerate_states, tm_apply
from ctmbound.hplinalg import HPMatrix, context, nth_root
from ctmbound.spins import HARD_SQUARES, MODELS, SPINS, face_weight


@pytest.fixture(scope="module")
def seed_hs():
    return ansatz_from_state(init_state("hard-squares"), 64)


@pytest.fixture(scope="module")
def asets(small_states):
    return {name: ansatz_from_state(s, 128) for name, s in small_states.items()}


def test_seed_examples(seed_hs):
    assert seed_hs.Fl[0, 0].to_float().tolist() == [[1, 1], [1, 0]]
    assert psi(seed_hs, (0, 0, 0, 0)) == 1
    assert psi(seed_hs, (0, 1, 0, 1)) == 1
    assert vpsi_raw(seed_hs, (0, 0)) == 3
    rec = ratio(seed_hs, (0, 0))
    assert rec.psi == 1 and rec.vpsi == 3
    with context(64):
        assert rec.ratio_root == gmpy2.sqrt(mpfr(3, 64))


def test_seed_desk_oracle_m6(seed_hs):
    # every psi is 1, so each ratio is the number of legal successor columns
    space = enumerate_states(HARD_SQUARES, 6)
    rows = dense_matrix(space).sum(axis=1)
    report = upper_bound(HARD_SQUARES, 6, seed_hs)
    assert report.bracelets == 5
    assert report.max_record.vpsi == int(rows.max()) == 18
    assert report.max_record.bracelet.text == "000000"
    assert report.max_record.ratio_root == nth_root(mpfr(18, 64), 6)


def test_fl_construction_identity(asets):
    for aset in asets.values():
        n = aset.n
        for c, a in PAIRS:
            for d in SPINS:
                for b in SPINS:
                    block = aset.Fl[c, a].data[d * n:(d + 1) * n, b * n:(b + 1) * n]
                    if face_weight(aset.model, a, b, c, d):
                        assert (block == aset.F[d, b].data).all()
                    else:
                        assert all(v == 0 for v in block.flat)
        with context(aset.bits):
            for c, a in PAIRS:
                diff = max(abs(x - y) for x, y in zip(aset.Fl[c, a].data.flat, aset.Fl[a, c].data.T.flat))
                assert diff < 1e-30


def test_build_fl_dimension_mismatch():
    F = {k: HPMatrix.identity(2, 64) for k in PAIRS}
    F[1, 1] = HPMatrix.identity(3, 64)
    with pytest.raises(DimensionMismatch):
        build_fl(F, "nak")
    with pytest.raises(DimensionMismatch):
        build_fl({(0, 0): HPMatrix.identity(2, 64)}, "nak")


@pytest.mark.parametrize("model", sorted(MODELS))
@pytest.mark.parametrize("m", [4, 6, 8])
def test_vpsi_equals_direct_transfer(asets, model, m):
    aset = asets[model]
    space = enumerate_states(model, m)
    states = [code_to_spins(s, m) for s in space.states]
    ps = np.array([psi_raw(aset, s) for s in states], dtype=object)
    direct = tm_apply(space, ps)
    with context(aset.bits):
        for s, d in zip(states, direct):
            assert abs(vpsi_raw(aset, s) - d) <= abs(d) * mpfr("1e-33", 128)


@pytest.mark.parametrize("model", sorted(MODELS))
def test_orbit_invariance(asets, model):
    aset = asets[model]
    for m in (4, 7, 10):
        for b in enumerate_bracelets(model, m):
            ref = ratio(aset, b.bits)
            for s in b.orbit():
                assert psi(aset, s) == ref.psi and vpsi(aset, s) == ref.vpsi
                assert ratio(aset, s).ratio_root == ref.ratio_root
                with context(aset.bits):
                    assert abs(psi_raw(aset, s) - ref.psi) <= abs(ref.psi) * mpfr("1e-33", 128)


@pytest.mark.parametrize("model", sorted(MODELS))
def test_sandwich(asets, model):
    aset = asets[model]
    for m in (4, 6, 8, 10):
        exact = nth_root(dominant_eigenvalue(model, m, Boundary.CYCLIC, 128).value, m)
        report = upper_bound(model, m, aset)
        assert report.min_record.ratio_root <= exact <= report.max_record.ratio_root
        assert report.upper_bound_value >= report.max_record.ratio_root


def test_prefix_cache_is_bit_exact(asets):
    aset = asets["rwim"]
    ev = RatioEvaluator(aset)
    for b in enumerate_bracelets("rwim", 9):
        cached = ev(b)
        fresh = RatioEvaluator(aset)(b)
        assert cached == fresh


def test_similarity_reduce(asets):
    aset = asets["hard-squares"]
    red = similarity_reduce(aset)
    assert (0, 0) in red.diagonal and red.basis_note != aset.basis_note
    tol = gmpy2.mul_2exp(mpfr(1, 128), -32)
    for b in enumerate_bracelets("hard-squares", 10):
        r1, r2 = ratio(aset, b.bits).ratio_root, ratio(red, b.bits).ratio_root
        with context(128):
            assert abs(r1 - r2) <= tol
    again = similarity_reduce(red)
    with context(128):
        d = max(abs(x - y) for x, y in zip(np.diagonal(again.F[0, 0].data), np.diagonal(red.F[0, 0].data)))
    assert d < 1e-30


def test_positivity_gate(seed_hs, tmp_path):
    F = dict(seed_hs.F)
    F[0, 1] = HPMatrix([[-1]], 64)
    bad = build_fl(F, HARD_SQUARES)
    with pytest.raises(AnsatzNotPositive) as info:
        upper_bound(HARD_SQUARES, 6, bad, checkpoint_dir=tmp_path)
    assert info.value.bracelet == "000001"
    saved = ShardSummary.read(shard_path(tmp_path, 0, 1))
    assert saved.status == "aborted" and saved.aborted_bracelet == "000001"


def test_errors(seed_hs, tmp_path):
    with pytest.raises(OddWidth):
        upper_bound(HARD_SQUARES, 5, seed_hs)
    with pytest.raises(ModelMismatch):
        upper_bound("nak", 4, seed_hs)
    with pytest.raises(IncompleteShards) as info:
        upper_bound(HARD_SQUARES, 8, seed_hs, shard_count=3, checkpoint_dir=tmp_path, aggregate_only=True)
    assert info.value.missing == [0, 1, 2]


def test_resume_is_bit_exact(asets, tmp_path):
    aset = asets["rwim"]
    shard = shard_range("rwim", 10, 1, 0)
    full_dir, cut_dir = tmp_path / "full", tmp_path / "cut"
    full_dir.mkdir(), cut_dir.mkdir()
    full = run_shard(aset, shard, full_dir)
    part = run_shard(aset, shard, cut_dir, checkpoint_every=7, stop_after=30)
    assert part.status == "running" and part.processed == 30
    resumed = run_shard(aset, shard, cut_dir, resume=True, checkpoint_every=7)
    assert resumed.status == "complete"
    path = shard_path(full_dir, 0, 1).name
    assert (full_dir / path).read_bytes() == (cut_dir / path).read_bytes()
    again = run_shard(aset, shard, cut_dir, resume=True)
    assert again.lines() == full.lines()


def test_shard_count_and_aggregation(asets, tmp_path):
    aset = asets["nak"]
    one = upper_bound("nak", 12, aset)
    three = upper_bound("nak", 12, aset, shard_count=3, checkpoint_dir=tmp_path)
    assert (one.max_index, one.max_record) == (three.max_index, three.max_record)
    assert (one.min_index, one.min_record) == (three.min_index, three.min_record)
    assert one.upper_bound == three.upper_bound
    again = upper_bound("nak", 12, aset, shard_count=3, checkpoint_dir=tmp_path, aggregate_only=True)
    assert again.text() == three.text()
    other = build_fl(aset.F, aset.model, aset.bits, checksum="different")
    with pytest.raises(ChecksumMismatch):
        collect_shards(tmp_path, other.model, 12, other.n, other.bits, 3, other.checksum)


def test_worker_count_does_not_change_report(asets, tmp_path):
    aset = asets["hard-squares"]
    a = upper_bound("hard-squares", 14, aset, shard_count=4, workers=1)
    b = upper_bound("hard-squares", 14, aset, shard_count=4, workers=3)
    assert a.text() == b.text()


def test_report_fields(asets):
    rep = upper_bound("hard-squares", 8, asets["hard-squares"], config={"tol": "1e-25"})
    text = rep.text()
    for key in ("model=hard-squares", "m=8", "n=4", "precision_bits=128", "config.tol=1e-25",
                "max_bracelet=", "min_ratio_root=", "bracelets_processed=", "upper_bound=",
                "min_ratio_note=", "check.agreeing_digits="):
        assert key in text
    assert rep.reported_digits == rep.agreeing_digits - 1
    assert rep.upper_bound_value >= rep.max_record.ratio_root


def test_agreeing_digits():
    x = mpfr("1.2345678", 64)
    assert agreeing_digits(x, x, 10) == 10
    assert agreeing_digits(x, mpfr("1.2345679", 64), 20) == 7
