"""Acceptance battery: one test per criterion, at the stated tolerances.

The whole battery runs once per session (criterion 12 reruns it to compare
CSV bytes). Each test prints its pass/fail line; run with ``-s`` to see them
inline, or read them from the captured output.
"""
import os

import pytest

from unsure_lab.harness.acceptance import CRITERIA, run_suite

MASTER_SEED = int(os.environ.get("UNSURE_SEED", "0"))


@pytest.fixture(scope="module")
def battery(tmp_path_factory):
    lines = []
    results, _ = run_suite(MASTER_SEED, out_dir=str(tmp_path_factory.mktemp("acceptance")), echo=lines.append)
    return {r.number: r for r in results}


@pytest.mark.parametrize("number", [c.number for c in CRITERIA] + [12])
def test_criterion(battery, number):
    res = battery[number]
    print(res.line())
    failing = [",".join(r.cells()) for r in res.rows if not r.passed]
    assert res.within_budget, f"criterion {number} took {res.elapsed:.1f}s (budget {res.budget_s}s)"
    assert res.passed, f"criterion {number} failing rows:\n" + "\n".join(failing)
