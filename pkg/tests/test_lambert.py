import math

import numpy as np
import pytest
from scipy.special import lambertw as scipy_lambertw

from dsdsim.dsd_lambert import (
    LambertDomainError,
    WBranch,
    lambert_w,
    lambert_wm1_neg_exp,
)

BRANCH_POINT = -1 / math.e

PRINCIPAL_GRID = np.concatenate(
    [
        BRANCH_POINT + np.logspace(-14, math.log10(1 / math.e), 500),
        np.logspace(-10, 3, 500),
    ]
)
MINUS_ONE_GRID = np.concatenate(
    [
        BRANCH_POINT + np.logspace(-14, -1, 500),
        -np.logspace(-300, -1, 500),
    ]
)


def _residual_ok(w, x):
    return abs(w * math.exp(w) - x) <= 1e-12 * max(abs(x), 1e-30)


@pytest.mark.parametrize(
    "branch, grid, lo, hi",
    [
        (WBranch.PRINCIPAL, PRINCIPAL_GRID, -1.0, np.inf),
        (WBranch.MINUS_ONE, MINUS_ONE_GRID, -np.inf, -1.0),
    ],
)
def test_residual_on_grid(branch, grid, lo, hi):
    for x in grid:
        x = float(x)
        w = lambert_w(branch, x)
        assert lo <= w <= hi, f"W_{branch.value}({x}) = {w} left its branch"
        assert _residual_ok(w, x), f"W_{branch.value}({x}) = {w}"


def test_known_values():
    assert lambert_w(WBranch.PRINCIPAL, 0.0) == 0.0
    assert lambert_w(WBranch.PRINCIPAL, 1.0) == pytest.approx(
        0.5671432904097838, rel=1e-14
    )
    assert lambert_w(WBranch.PRINCIPAL, math.e) == pytest.approx(1.0, rel=1e-14)
    assert lambert_w(WBranch.MINUS_ONE, -2 * math.exp(-2)) == pytest.approx(
        -2.0, rel=1e-13
    )

    # both branches meet -ln(2)/2
    x = -math.log(2) / 2
    assert lambert_w(WBranch.PRINCIPAL, x) == pytest.approx(-math.log(2), rel=1e-13)
    assert lambert_w(WBranch.MINUS_ONE, x) == pytest.approx(
        -2 * math.log(2), rel=1e-13
    )


def test_branch_point():
    assert lambert_w(WBranch.PRINCIPAL, BRANCH_POINT) == -1.0
    assert lambert_w(WBranch.MINUS_ONE, BRANCH_POINT) == -1.0
    assert lambert_wm1_neg_exp(-1.0) == -1.0


def test_branch_accepts_int():
    assert lambert_w(-1, -0.2) == lambert_w(WBranch.MINUS_ONE, -0.2)
    assert lambert_w(0, 0.2) == lambert_w(WBranch.PRINCIPAL, 0.2)


@pytest.mark.parametrize("branch", [WBranch.PRINCIPAL, WBranch.MINUS_ONE])
def test_matches_scipy(branch):
    if branch is WBranch.PRINCIPAL:
        grid = np.concatenate(
            [BRANCH_POINT + np.logspace(-6, -0.5, 30), np.logspace(-8, 3, 30)]
        )
    else:
        grid = np.concatenate(
            [BRANCH_POINT + np.logspace(-6, -1, 30), -np.logspace(-200, -1, 30)]
        )
    expected = scipy_lambertw(grid, k=branch.value).real
    actual = np.array([lambert_w(branch, float(x)) for x in grid])
    np.testing.assert_allclose(actual, expected, rtol=1e-10)


def test_log_domain_matches_direct():
    for u in np.linspace(-700, -1.001, 200):
        u = float(u)
        direct = lambert_w(WBranch.MINUS_ONE, -math.exp(u))
        assert lambert_wm1_neg_exp(u) == pytest.approx(direct, rel=1e-9)


@pytest.mark.parametrize("u", [-1.0 - 1e-12, -1.5, -30.0, -1000.0, -1e6])
def test_log_domain_residual(u):
    # exp(u) underflows for the last two, only the log form is usable there
    w = lambert_wm1_neg_exp(u)
    assert w <= -1.0
    assert abs(math.log(-w) + w - u) <= 1e-12 * max(1.0, abs(u))


def test_domain_errors():
    with pytest.raises(LambertDomainError):
        lambert_w(WBranch.PRINCIPAL, -0.5)
    with pytest.raises(LambertDomainError):
        lambert_w(WBranch.MINUS_ONE, 0.0)
    with pytest.raises(LambertDomainError):
        lambert_w(WBranch.MINUS_ONE, 0.1)
    with pytest.raises(LambertDomainError):
        lambert_w(WBranch.PRINCIPAL, math.inf)
    with pytest.raises(LambertDomainError):
        lambert_w(WBranch.PRINCIPAL, math.nan)
    with pytest.raises(LambertDomainError):
        lambert_wm1_neg_exp(-0.5)
    with pytest.raises(LambertDomainError):
        lambert_wm1_neg_exp(math.nan)
    with pytest.raises(ValueError):
        lambert_w(2, 0.5)


def test_worked_examples():
    assert lambert_w(WBranch.MINUS_ONE, -0.003708) == pytest.approx(-7.629, abs=1e-3)
    assert lambert_wm1_neg_exp(-23.11) == pytest.approx(-26.38, abs=0.01)


def test_minus_one_branch_decreasing():
    grid = np.sort(MINUS_ONE_GRID)
    values = np.array([lambert_w(WBranch.MINUS_ONE, float(x)) for x in grid])
    # x increases toward 0, W_-1 falls toward -inf
    assert np.all(np.diff(values) < 0)
