"""Acceptance criteria A1-A9, one test each.

Every test records a PASS/FAIL line (printed in the terminal summary by
conftest.py).  Run this file directly for the table alone:

    python3 tests/test_acceptance.py
"""

from __future__ import annotations

import pytest

from snakelab import verify
from snakelab.estimators import default_threads

RESULTS: dict[str, verify.CriterionResult] = {}
SEED = verify.DEFAULT_SEED


@pytest.fixture(scope="module")
def range_sample():
    # one (max, min) sample serves both A5 and A6
    return verify._RangeSample(SEED, default_threads(), verify.A5_TARGET_N, verify.A5_TREES)


def _record(key, fn):
    res = verify._timed(key, fn)
    RESULTS[key] = res
    print(res.line)
    assert res.passed, res.line


def test_a1_closed_form_solution():
    _record("A1", verify.check_a1)


def test_a2_psi_prime_identity():
    _record("A2", verify.check_a2)


def test_a3_inversion_round_trip_and_boundary():
    _record("A3", verify.check_a3)


def test_a4_expansion_and_lambda_independence():
    _record("A4", verify.check_a4)


def test_a5_fourth_range_moment(range_sample):
    _record("A5", lambda: verify.check_a5(range_sample))


def test_a6_min_ratio_and_first_moment(range_sample):
    _record("A6", lambda: verify.check_a6(range_sample))


def test_a7_occupation_near_minimum():
    _record("A7", lambda: verify.check_a7(SEED, default_threads()))


def test_a8_increase_points_vanish():
    _record("A8", lambda: verify.check_a8(SEED, default_threads()))


def test_a9_sampler_and_distance_oracles():
    _record("A9", lambda: verify.check_a9(SEED))


if __name__ == "__main__":
    print(verify.format_table(verify.run_verify(seed=SEED, threads=default_threads())))
