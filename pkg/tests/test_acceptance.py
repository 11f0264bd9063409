"""End-to-end acceptance run.

`simfold verify` runs twice into the same directory. The second run decides
determinism by comparing its files with the first run's. Each test prints one
[PASS]/[FAIL] line for its criterion, visible without ``-s``.
"""

import csv
import subprocess
import sys

import numpy as np
import pytest

from simfold.acceptance import COLLOCATION_ORDER_TARGETS, collocation_errors

TITLES = {
    1: "linear oracle equivalence",
    2: "chi decay",
    3: "Davis-Skodje SIM recovery",
    4: "c2 oracle consistency",
    5: "forward vs reverse invariance",
    6: "derivative correctness",
    7: "collocation order",
    8: "mechanism structure",
    9: "mechanism SIM",
    10: "determinism",
}


def _verify(out):
    return subprocess.run([sys.executable, "-m", "simfold", "verify", "--out", str(out)],
                          capture_output=True, text=True, timeout=3600)


@pytest.fixture(scope="module")
def verify_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("verify")
    first = _verify(out)
    first_files = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    second = _verify(out)
    with open(out / "summary.csv", newline="") as fh:
        summary = {int(r["criterion"]): r for r in csv.DictReader(fh)}
    return {"first": first, "second": second, "first_files": first_files, "out": out, "summary": summary}


def _line(number, passed, detail):
    tag = "PASS" if passed else "FAIL"
    return f"[{tag}] {number:2d} {TITLES[number]}: {detail}"


def _report(capsys, number, passed, detail):
    with capsys.disabled():
        print("\n" + _line(number, passed, detail))


@pytest.mark.parametrize("number", [1, 2, 3, 4, 5, 6])
def test_criterion(verify_runs, capsys, number):
    row = verify_runs["summary"][number]
    passed = row["passed"] == "true"
    _report(capsys, number, passed, row["detail"])
    assert passed, row["detail"]


@pytest.mark.xfail(strict=True, reason="degree 1 Radau IIA is implicit Euler, first order; 1.8 is unreachable")
def test_criterion_07_collocation_order(verify_runs, capsys):
    row = verify_runs["summary"][7]
    passed = row["passed"] == "true"
    _report(capsys, 7, passed, row["detail"])
    assert passed, row["detail"]


@pytest.mark.parametrize("degree", [2, 3])
def test_collocation_order_higher_degrees(degree):
    errs = collocation_errors(degree)
    assert np.log2(errs[:-1] / errs[1:]).min() >= COLLOCATION_ORDER_TARGETS[degree]


@pytest.mark.parametrize("number", [8, 9])
def test_criterion_mechanism(verify_runs, capsys, number):
    row = verify_runs["summary"][number]
    passed = row["passed"] == "true"
    _report(capsys, number, passed, row["detail"])
    assert passed, row["detail"]


def test_criterion_10_determinism(verify_runs, capsys):
    out = verify_runs["out"]
    second_files = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    same = second_files == verify_runs["first_files"]
    differing = sorted(n for n in second_files if verify_runs["first_files"].get(n) != second_files[n])
    detail = (f"{len(second_files)} result files byte-identical across two runs" if same
              else f"files differ: {differing}")
    _report(capsys, 10, same, detail)
    assert "[PASS] 10" in verify_runs["second"].stdout
    assert same, detail


def test_verify_exit_codes(verify_runs):
    # criterion 7 fails, so verify reports failure both times
    assert verify_runs["first"].returncode == 1, verify_runs["first"].stderr
    assert verify_runs["second"].returncode == 1, verify_runs["second"].stderr
    assert "[SKIP] 10" in verify_runs["first"].stdout
