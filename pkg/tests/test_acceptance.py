"""Acceptance criteria, one test per check in :mod:`hcral.verify`.

Each test prints a single PASS/FAIL/INFO line (visible with ``-s``). INFO
checks report measurements without a pass bar.
"""

import pytest

from hcral.verify import CHECKS


@pytest.mark.parametrize("name", list(CHECKS))
def test_criterion(name):
    res = CHECKS[name]()
    print(res.line())
    assert res.passed is not False, res.line()
