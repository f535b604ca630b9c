"""Acceptance criteria 1-10, each at its stated tolerance.

Every criterion prints one [PASS]/[FAIL] line; the lines are repeated in
the terminal summary. Run alone with ``pytest tests/test_acceptance.py -s``.
"""
import os

import numpy as np
import pytest

from flockstab import analysis as an
from flockstab import checks

WORKERS = max(1, min(4, os.cpu_count() or 1))
LINES = {}


@pytest.mark.parametrize("k", sorted(checks.CRITERIA))
def test_criterion(k):
    fn = checks.CRITERIA[k]
    r = fn(workers=WORKERS) if fn in (checks.check_decay, checks.check_stability) else fn()
    line = f"criterion {k:2d} {r.line()} ({r.seconds:.1f}s)"
    LINES[k] = line
    print(line)
    assert r.passed, r.summary


@pytest.mark.slow
@pytest.mark.parametrize("n", [4])
def test_decay_rates_at_long_horizon(n):
    # supplementary: the same fits a decade-and-a-half later, where the
    # affine law for 1/a_M^2 predicts local slopes close to the asymptotic ones.
    # heading is not checked here: the coarse stride aliases the oscillation of m
    if not os.environ.get("FLOCKSTAB_LONG"):
        pytest.skip("set FLOCKSTAB_LONG=1 for the 1e6 horizon run (a few minutes)")
    rep, traj = an.decay_run(n, 0, amplitude=0.05, t_end=1e6, window=(1e5, 1e6), stride=20.0)
    k, b, _ = an.inverse_square_fit(traj, (1e4, 1e6))
    t0 = np.sqrt(1e5 * 1e6)
    assert abs(rep.a_M.slope - (-0.5 * t0 / (t0 + b / k))) < 0.02
    assert -0.55 <= rep.a_M.slope <= -0.45
    assert -1.15 <= rep.gap.slope <= -0.85
