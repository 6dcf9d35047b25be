"""One test per acceptance criterion; each prints its pass/fail line."""
import pytest

from ccdlmp.acceptance import CRITERIA, Suite

KNOWN_FAILURES = {
    "7b": "corrected-mode sensitivities omit the voltage and loss feedback of the branch-flow "
          "equations; see the decisions ledger",
}


@pytest.fixture(scope="module")
def suite():
    return Suite()


@pytest.mark.parametrize("key", [
    pytest.param(k, marks=pytest.mark.xfail(strict=True, reason=KNOWN_FAILURES[k])) if k in KNOWN_FAILURES else k
    for k in CRITERIA
])
def test_criterion(suite, capsys, key):
    res = CRITERIA[key](suite)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.detail
