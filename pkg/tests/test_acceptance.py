"""Acceptance criteria, one test and one printed PASS/FAIL line each.

The full ``lorank verify`` run is executed once (and a second time for the
determinism check); criteria 2 to 11 read its JSON reports and re-check the
metrics against the stated bounds, independently of the stored pass flags.
Run directly with ``python tests/test_acceptance.py`` or through pytest.
"""

import filecmp
import json
import os
import subprocess
import sys
import time

import pytest

from conftest import ACCEPTANCE_LINES
from lorank import harness

VERIFY_BUDGET = 300.0
SOLVE_BUDGET = 10.0


def record(n, ok, text):
    line = "criterion %2d: %s  %s" % (n, "PASS" if ok else "FAIL", text)
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def verify(out):
    env = dict(os.environ)
    env.pop("LORANK_OUT", None)
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "lorank", "verify", "--out", str(out)], capture_output=True, text=True, env=env)
    return proc, time.perf_counter() - start


@pytest.fixture(scope="module")
def run1(tmp_path_factory):
    out = tmp_path_factory.mktemp("verify1")
    proc, elapsed = verify(out)
    return out, proc, elapsed


@pytest.fixture(scope="module")
def reports(run1):
    out = run1[0]
    found = {}
    for name in os.listdir(out / "reports"):
        with open(out / "reports" / name) as fh:
            found[name[: -len(".json")]] = json.load(fh)
    return found


def metric(reports, name, key):
    return reports[name]["metrics"][key]


def test_criterion_01_rpca_recovery():
    r = harness.rpca_recovery(n_instances=20, size=200, rank=10, fraction=0.05, magnitude=10.0, seed=0)
    err = r.metrics["max_recovery_error"]
    slowest = max(r.timings)
    ok = err <= 1e-5 and slowest <= SOLVE_BUDGET and len(r.timings) == 20 and r.parameters["lam"] == 200**-0.5
    record(1, ok, "RPCA recovery: max rel error %.2e (<= 1e-5), slowest solve %.2f s (<= 10 s), 20 instances" % (err, slowest))


def test_criterion_02_admm_feasibility(reports):
    res = metric(reports, "rpca", "max_final_residual")
    unconv = metric(reports, "rpca", "unconverged")
    asym = metric(reports, "rpca", "symmetric_asymmetry")
    sym_ok = metric(reports, "rpca", "symmetric_converged") == 1
    ok = unconv == 0 and res <= 1e-7 and sym_ok and asym <= 1e-8
    record(2, ok, "ADMM feasibility: max residual %.2e (<= 1e-7), unconverged %d, symmetric L asymmetry %.2e (<= 1e-8)" % (res, unconv, asym))


def test_criterion_03_jacobian(reports):
    dev = metric(reports, "jacobian", "max_abs_deviation")
    p = reports["jacobian"]["parameters"]
    ok = dev <= 1e-6 and p["n_z"] == 10 and p["step"] == 1e-4
    record(3, ok, "Jacobian vs central differences: max abs deviation %.2e (<= 1e-6) over %d generators x 10 codes" % (dev, len(p["generators"])))


def test_criterion_04_rank_monotonicity(reports):
    inc = metric(reports, "rank", "increases")
    frac = metric(reports, "rank", "bottleneck_fraction")
    ok = inc == 0 and frac == 1.0
    record(4, ok, "per-layer ranks: %d increases (== 0), bottleneck rank-deficient fraction %.2f (== 1)" % (inc, frac))


def test_criterion_05_principal_direction(reports):
    beaten = metric(reports, "principal", "min_beaten")
    p = reports["principal"]["parameters"]
    ok = beaten >= 99 and p["n_random"] == 100 and p["alpha"] == 0.1
    record(5, ok, "top Gram direction beats %d of 100 random directions on every generator (>= 99)" % beaten)


def test_criterion_06_nullspace_locality(reports):
    b0 = metric(reports, "nullspace-blocky-c0", "change_b")
    a0 = metric(reports, "nullspace-blocky-c0", "change_a")
    r5 = metric(reports, "nullspace-blocky-c005", "ratio")
    ok = b0 <= 1e-8 and a0 >= 1e-2 and r5 <= 1e-3
    record(6, ok, "null-space locality: coupling 0 B %.2e (<= 1e-8), A %.2e (>= 1e-2); coupling 0.05 B/A %.2e (<= 1e-3)" % (b0, a0, r5))


def test_criterion_07_projection_benefit(reports):
    parts, ok = [], True
    for name in ("projection-blocky-c0", "projection-blocky-c005"):
        w = metric(reports, name, "mse_with")
        wo = metric(reports, name, "mse_without")
        ok &= w <= 0.1 * wo and reports[name]["parameters"]["alpha"] == 1.0
        parts.append("%s %.2e vs %.2e" % (name.split("-", 1)[1], w, wo))
    record(7, ok, "projection: masked MSE with <= 0.1 x without (%s)" % "; ".join(parts))


def test_criterion_08_generalization(reports):
    fr0 = metric(reports, "generalization-blocky-c0", "pass_fraction")
    fr5 = metric(reports, "generalization-blocky-c005", "pass_fraction")
    spread = metric(reports, "generalization-linear", "delta_spread")
    n = metric(reports, "generalization-blocky-c005", "targets")
    ok = n == 50 and fr0 >= 0.9 and fr5 >= 0.9 and spread <= 1e-12
    record(8, ok, "generalization: A >= 10x B on %.0f%% / %.0f%% of 50 targets (>= 90%%); linear delta spread %.1e" % (100 * fr0, 100 * fr5, spread))


def test_criterion_09_mask_robustness(reports):
    c0 = metric(reports, "mask-blocky-c0", "mean_abs_cos")
    c5 = metric(reports, "mask-blocky-c005", "mean_abs_cos")
    p = reports["mask-blocky-c0"]["parameters"]
    ok = min(c0, c5) >= 0.9 and p["submasks"] == 5 and p["min_fraction"] == 0.25
    record(9, ok, "mask robustness: worst mean pairwise |cos| %.3f / %.3f over 5 sub-boxes (>= 0.9)" % (c0, c5))


def test_criterion_10_relaxation(reports):
    dec = metric(reports, "relaxation", "decreases")
    dirs = metric(reports, "relaxation", "directions")
    ok = dec == 0 and dirs > 0
    record(10, ok, "relaxation: retained norm nondecreasing for %d directions (%d decreases)" % (dirs, dec))


def test_criterion_11_lambda_sweep(reports):
    parts, ok = [], True
    for name in ("lambda-blocky-c0", "lambda-blocky-c005"):
        dims = metric(reports, name, "null_dim_b")
        ok &= reports[name]["parameters"]["n_values"] == [20, 40, 60, 80]
        ok &= all(b >= a for a, b in zip(dims, dims[1:]))
        parts.append("%s %s" % (name.split("-", 1)[1], dims))
    record(11, ok, "lambda sweep n = 20..80: null-space dims nondecreasing in n (%s)" % "; ".join(parts))


def test_criterion_12_determinism_and_tooling(run1, reports, tmp_path_factory):
    out1, proc1, t1 = run1
    out2 = tmp_path_factory.mktemp("verify2")
    proc2, t2 = verify(out2)
    cmp = filecmp.dircmp(out1, out2)

    def identical(c):
        if c.left_only or c.right_only or c.diff_files or c.funny_files:
            return False
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        return not mismatch and not errors and all(identical(s) for s in c.subdirs.values())

    same = identical(cmp)
    lossy = metric(reports, "roundtrip", "lossy")
    ok = proc1.returncode == 0 and proc2.returncode == 0 and t1 <= VERIFY_BUDGET and same and lossy == 0
    record(
        12,
        ok,
        "verify exit %d in %.0f s (<= 300 s); rerun byte-identical: %s; lossy round-trips: %d"
        % (proc1.returncode, t1, "yes" if same else "no", lossy),
    )


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
