"""End-to-end acceptance criteria at their stated tolerances (full profile).

Each criterion prints one ``[PASS]``/``[FAIL]`` line; the collected lines are
repeated in the terminal summary.  Two criteria are known not to hold for
the reference model at the stated sizes and are marked as strict expected
failures: if they ever start passing, the suite reports it.
"""
import pytest

from fastscramble import checks

from conftest import ACCEPTANCE_LINES

KNOWN_FAILURES = {
    "5": "the fitted early growth rate at N=100 sits about 11% below 2g^2/3: the 4w/3N "
         "saturation term already bends <w> over inside the <w> <= N/10 fit window",
    "9a": "with the truncated coefficients the continuum density leaks into the absorbing "
          "w=0 end, so the continuum mean lags the chain by about 9% around g^2 t = 12",
}


def _param(key):
    marks = [pytest.mark.slow]
    if key in KNOWN_FAILURES:
        marks.append(pytest.mark.xfail(strict=True, reason=KNOWN_FAILURES[key]))
    return pytest.param(key, marks=marks, id=f"criterion-{key}")


@pytest.mark.parametrize("key", [_param(c.key) for c in checks.CHECKS])
def test_criterion(key):
    result = checks.run_check(key, profile="full")
    line = f"{result.line()}  ({result.seconds:.1f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert result.passed, result.summary
