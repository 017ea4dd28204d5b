"""Acceptance suite: the eight criteria at their stated tolerances.

Each test prints one ``CRITERION k: PASS|FAIL`` line (also collected into
the pytest terminal summary) and then asserts, so a failing criterion shows
up red.  Run on its own with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``.

The converged F-files (n = 16, 1024 bits, tol 1e-40) for all three models
are produced once per session through the ``solve`` command.
"""

from __future__ import annotations

import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from gmpy2 import mpfr

from conftest import ACCEPTANCE_LINES
from ctmbound.bound import ansatz_from_state, load_ansatz, psi, psi_raw, ratio, vpsi_raw
from ctmbound.bracelets import brute_force_bracelets, enumerate_bracelets
from ctmbound.cli import EXIT_NOT_POSITIVE, main
from ctmbound.ctmrg import GrowthSchedule, checksum, ctm_residuals, ctmrg_solve, kappa_estimate, load_state
from ctmbound.exact import Boundary, code_to_spins, dominant_eigenvalue, enumerate_states, tm_apply
from ctmbound.hplinalg import context, nth_root
from ctmbound.spins import MODELS, SPINS, Face, face_weight, face_weight_from_pairs

pytestmark = pytest.mark.acceptance

# best known digits (lower-bound digits; the true growth rate is at least this)
KAPPA_DIGITS = {
    "hard-squares": "1.503048082475332264",
    "nak": "1.34264395112460",
    "rwim": "1.44895737",
}
LOWER_PQ = {"hard-squares": (4, 4), "nak": (2, 2), "rwim": (2, 2)}
N = 16
SOLVE_TIMES: dict = {}


def record(k: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def run_cli(*args: str) -> tuple:
    proc = subprocess.run([sys.executable, "-m", "ctmbound.cli", *args], capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def kv(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        for item in line.split(" "):
            if "=" in item:
                k, v = item.split("=", 1)
                out[k] = v
    return out


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def ffiles(workdir):
    """Production F-files for all three models, n = 16 at 1024 bits."""
    files = {}
    for model in MODELS:
        path = workdir / f"F-{model}-n{N}.txt"
        t0 = time.monotonic()
        code, out, err = run_cli("solve", "--model", model, "--n", str(N),
                                 "--precision-bits", "1024", "--tol", "1e-40", "--out", str(path))
        assert code == 0, err
        SOLVE_TIMES[model] = time.monotonic() - t0
        files[model] = path
    return files


def bound_report(ffile: Path, model: str, m: int, out: Path, *extra: str) -> dict:
    code, _, err = run_cli("bound", "--model", model, "--m", str(m), "--f-file", str(ffile),
                           "--out", str(out), *extra)
    assert code == 0, err
    return kv(out.read_text())


def test_criterion_1_oracle_equality_small_m(ffiles, workdir):
    t0 = time.monotonic()
    rows, ok = [], True
    for m in (4, 6, 8, 10):
        rep = bound_report(ffiles["hard-squares"], "hard-squares", m, workdir / f"c1-{m}.txt")
        res = dominant_eigenvalue("hard-squares", m, Boundary.CYCLIC, 256)
        assert res.width <= mpfr("1e-30", 256)
        with context(256):
            exact = nth_root(res.value, m)
            gap = mpfr(rep["upper_bound"], 256) - exact
            rel = gap / exact
        good = 0 <= gap and rel <= mpfr("1e-6", 256)
        ok &= good
        rows.append(f"m={m} rel gap {float(rel):.2e}")
    elapsed = time.monotonic() - t0
    ok &= elapsed <= 300
    record(1, ok, f"{'; '.join(rows)} (limit 1e-6); {elapsed:.0f}s")
    assert ok


def test_criterion_2_known_digit_sandwich(ffiles, workdir):
    t0 = time.monotonic()
    rows, ok = [], True
    for model, digits in KAPPA_DIGITS.items():
        p, q = LOWER_PQ[model]
        code, out, err = run_cli("lower", "--model", model, "--p", str(p), "--q", str(q))
        assert code == 0, err
        lower = mpfr(kv(out)["lower_bound"], 256)
        upper = mpfr(bound_report(ffiles[model], model, 12, workdir / f"c2-{model}.txt")["upper_bound"], 256)
        kappa = mpfr(digits, 256)
        with context(256):
            good = lower < kappa < upper and upper - kappa <= mpfr("1e-3", 256)
        ok &= bool(good)
        rows.append(f"{model} {float(lower):.12f} < {digits} < {float(upper):.12f}")
    elapsed = time.monotonic() - t0 + sum(SOLVE_TIMES.values())
    ok &= elapsed <= 1800
    record(2, ok, f"{'; '.join(rows)}; {elapsed:.0f}s including CTMRG")
    assert ok


def test_criterion_3_bound_sequence_in_m(ffiles, workdir):
    kappa = mpfr(KAPPA_DIGITS["hard-squares"], 256)
    bounds = []
    for m in range(4, 17, 2):
        rep = bound_report(ffiles["hard-squares"], "hard-squares", m, workdir / f"c3-{m}.txt")
        bounds.append(mpfr(rep["upper_bound"], 256))
    monotone = all(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:]))
    above = all(b > kappa for b in bounds)
    record(3, monotone and above,
           "m=4..16: " + ", ".join(f"{float(b):.10f}" for b in bounds))
    assert monotone and above


def test_criterion_4_ctmrg_quality(ffiles):
    state = load_state(ffiles["hard-squares"], "hard-squares")
    kappa = kappa_estimate(state)
    r1, r2 = ctm_residuals(state)
    t = SOLVE_TIMES.get("hard-squares", 0.0)
    ok = str(kappa).startswith("1.50304808") and r1 <= 1e-30 and r2 <= 1e-30 and t <= 600
    record(4, ok, f"kappa {str(kappa)[:22]}, residuals {float(r1):.1e}/{float(r2):.1e}, "
                  f"{state.iteration} iterations, {t:.0f}s")
    assert ok


def test_criterion_5_structural_identities(ffiles, small_states):
    problems = []
    cases = 0
    for model in MODELS.values():
        for face in np.ndindex(2, 2, 2, 2):
            cases += 1
            if face_weight(model, *face) != face_weight_from_pairs(model, Face(*face)):
                problems.append(f"face {model} {face}")
    for name in MODELS:
        aset = load_ansatz(ffiles[name], 256, name)
        for m in (4, 6, 8):
            space = enumerate_states(name, m)
            states = [code_to_spins(s, m) for s in space.states]
            ps = np.array([psi_raw(aset, s) for s in states], dtype=object)
            direct = tm_apply(space, ps)
            with context(256):
                worst = max(abs(vpsi_raw(aset, s) - d) / d for s, d in zip(states, direct))
            if worst > 1e-60:
                problems.append(f"vpsi {name} m={m} {float(worst):.1e}")
        for m in range(2, 17):
            if list(enumerate_bracelets(name, m)) != brute_force_bracelets(name, m):
                problems.append(f"bracelets {name} m={m}")
        small = ansatz_from_state(small_states[name], 256)
        for m in range(2, 13):
            for b in enumerate_bracelets(name, m):
                ref = ratio(small, b.bits)
                for s in b.orbit():
                    if psi(small, s) != ref.psi or ratio(small, s) != ref:
                        problems.append(f"orbit {name} {b}")
    ok = not problems
    record(5, ok, f"{cases} face cases, vpsi oracle m=4,6,8, bracelets m<=16, orbits m<=12"
                  + (f"; problems: {problems[:5]}" if problems else ""))
    assert ok


def _wait_for_running_checkpoint(path: Path, proc, minimum: int, timeout: float = 600) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline and proc.poll() is None:
        if path.exists():
            data = kv(path.read_text())
            if data.get("status") == "running" and int(data.get("bracelets_processed", 0)) >= minimum:
                return True
        time.sleep(0.05)
    return False


def test_criterion_6_determinism_and_resume(ffiles, workdir):
    ffile = ffiles["rwim"]
    base = ["--model", "rwim", "--m", "12", "--f-file", str(ffile)]
    ref = workdir / "c6-ref.txt"
    code, _, err = run_cli("bound", *base, "--out", str(ref))
    assert code == 0, err

    ck = workdir / "c6-ck"
    resumed = workdir / "c6-resumed.txt"
    args = [sys.executable, "-m", "ctmbound.cli", "bound", *base, "--checkpoint-dir", str(ck),
            "--checkpoint-every", "5", "--out", str(resumed)]
    proc = subprocess.Popen(args, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    checkpoint = ck / "shard-00000-of-00001.txt"
    killed_mid_shard = _wait_for_running_checkpoint(checkpoint, proc, 20)
    proc.send_signal(signal.SIGKILL)
    proc.wait()
    interrupted = killed_mid_shard and not resumed.exists()
    code, _, err = run_cli("bound", *base, "--checkpoint-dir", str(ck), "--checkpoint-every", "5",
                           "--resume", "--out", str(resumed))
    assert code == 0, err
    resume_ok = interrupted and resumed.read_bytes() == ref.read_bytes()

    outs = []
    for workers in (1, 8):
        out = workdir / f"c6-w{workers}.txt"
        code, _, err = run_cli("bound", *base, "--shards", "8", "--workers", str(workers), "--out", str(out))
        assert code == 0, err
        outs.append(out.read_bytes())
    workers_ok = outs[0] == outs[1]
    ok = resume_ok and workers_ok
    record(6, ok, f"killed mid-shard={interrupted}, resumed report identical={resume_ok}, "
                  f"workers 1 vs 8 identical={workers_ok}")
    assert ok


def test_criterion_7_positivity_gate(ffiles, workdir):
    lines = ffiles["hard-squares"].read_text().splitlines()[:-1]
    i = lines.index("F 0 1") + 1
    row = lines[i].split()
    row[0] = row[0][1:] if row[0].startswith("-") else "-" + row[0]
    lines[i] = " ".join(row)
    bad = workdir / "F-corrupted.txt"
    bad.write_text("\n".join(lines) + f"\nchecksum={checksum(lines)}\n")
    out = workdir / "c7-report.txt"
    code, stdout, err = run_cli("bound", "--model", "hard-squares", "--m", "8", "--f-file", str(bad),
                                "--out", str(out))
    ok = code == EXIT_NOT_POSITIVE and not out.exists() and "upper_bound" not in stdout
    record(7, ok, f"exit status {code}, report written={out.exists()}; {err.strip()[:90]}")
    assert ok


def test_criterion_8_study_in_n(workdir):
    out = workdir / "c8-study.tsv"
    code, _, err = run_cli("study", "--model", "hard-squares", "--m", "12", "--n", "2-20",
                           "--precision-bits", "256", "--tol", "1e-30", "--out", str(out))
    assert code == 0, err
    rows = [line.split("\t") for line in out.read_text().splitlines() if not line.startswith("#")][1:]
    bounds = [mpfr(r[2], 256) for r in rows]
    exact = mpfr(rows[0][3], 256)
    with context(256):
        rises = [(int(rows[i + 1][1]), float(bounds[i + 1] - bounds[i]))
                 for i in range(len(bounds) - 1) if bounds[i + 1] - bounds[i] > mpfr("1e-12", 256)]
        plateau = bounds[-1] - exact
    ok = not rises and plateau <= mpfr("1e-6", 256)
    worst = max(rises, key=lambda r: r[1]) if rises else None
    record(8, ok, f"{len(rises)} increases above 1e-12 over n=2..20"
                  + (f" (largest {worst[1]:.1e} at n={worst[0]})" if worst else "")
                  + f"; final gap to exact {float(plateau):.1e} (limit 1e-6)")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
