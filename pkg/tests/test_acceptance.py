"""Acceptance criteria AC1..AC10 at full workload.

Each criterion adds one ``PASS``/``FAIL`` line to the terminal summary.
"""

import pytest

from conftest import ACCEPTANCE_LINES
from evkit import selftest

RUNTIME_LIMITS = {"AC1": 10.0, "AC2": 10.0, "AC7": 60.0}


@pytest.mark.slow
@pytest.mark.parametrize("check_id", list(selftest.CHECKS))
def test_acceptance(check_id):
    result = selftest.run_check(check_id, scale=1.0)
    limit = RUNTIME_LIMITS.get(check_id)
    in_time = limit is None or result.seconds < limit
    ok = result.passed and in_time
    budget = f" (limit {limit:.0f}s)" if limit else ""
    ACCEPTANCE_LINES.append(f"{check_id} {'PASS' if ok else 'FAIL'} {result.seconds:.2f}s"
                            f"{budget} {result.name}: {result.detail}")
    assert result.passed, result.detail
    assert in_time, f"{check_id} took {result.seconds:.2f}s, limit {limit}s"
