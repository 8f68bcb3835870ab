"""Release-gate suite: runs every criterion at its stated tolerance and
prints one pass/fail line per criterion (run with -s to see all lines).

The known-red check is criterion 5's small-hole coefficient-sum threshold;
the measured value is printed alongside the verdict.
"""

import pytest

from sdevt.acceptance import AcceptanceSuite


@pytest.fixture(scope="module")
def suite():
    return AcceptanceSuite()


def _check(result):
    print(result.line())
    assert result.passed, result.line()


def test_criterion_01_survival_law(suite):
    _check(suite.criterion_1())


def test_criterion_02_step_independence(suite):
    _check(suite.criterion_2())


def test_criterion_03_poisson_counts(suite):
    _check(suite.criterion_3())


def test_criterion_04_eigenvalue_expansion(suite):
    _check(suite.criterion_4())


def test_criterion_05_return_rate_coefficients(suite):
    _check(suite.criterion_5())


def test_criterion_06_operator_vs_monte_carlo(suite):
    _check(suite.criterion_6())


def test_criterion_07_moment_bound(suite):
    _check(suite.criterion_7())


def test_criterion_08_invariant_density(suite):
    _check(suite.criterion_8())


def test_criterion_09_norm_contraction_fits(suite):
    _check(suite.criterion_9())


def test_criterion_10_twisted_expansion(suite):
    _check(suite.criterion_10())


def test_criterion_11_time_refinement(suite):
    _check(suite.criterion_11())


def test_criterion_12_block_sequences(suite):
    _check(suite.criterion_12())


def test_criterion_13_exact_properties(suite):
    _check(suite.criterion_13())
