"""Exit criteria. Each criterion prints one PASS/FAIL line per sub-check.

Run on its own with ``pytest tests/test_acceptance.py -s``.
"""

import pytest

from conftest import ACCEPTANCE_LINES
from magfilter.verify import CRITERIA, check_invariants


def report(line):
    print(line)
    ACCEPTANCE_LINES.append(line)


@pytest.mark.parametrize("key", sorted(CRITERIA), ids=lambda k: f"criterion-{k}-{CRITERIA[k][0]}")
def test_criterion(key):
    title, fn = CRITERIA[key]
    results = fn()
    failed = []
    for res in results:
        report(f"criterion {key} ({title}): {res.line()}")
        if not res.ok:
            failed.append(res.line())
    assert results
    assert not failed, "\n".join(failed)


def test_invariants():
    failed = []
    for res in check_invariants():
        report(f"invariant: {res.line()}")
        if not res.ok:
            failed.append(res.line())
    assert not failed, "\n".join(failed)
