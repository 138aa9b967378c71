"""
Real branches of the Lambert W function.

`lambert_w` solves w * exp(w) = x on the principal branch (w >= -1) or the
-1 branch (w <= -1). `lambert_wm1_neg_exp` evaluates W_{-1}(-exp(u)) directly
from u, so arguments whose exp(u) underflows double precision stay usable;
the optimal draft length planner always goes through it.

Both use series initial guesses near the branch point -1/e, asymptotic
guesses elsewhere, and Halley's method to convergence. See
R.M. Corless, G.H. Gonnet, D.E.G. Hare, D.J. Jeffrey, and D.E. Knuth,
"On the Lambert W Function", Adv. Comput. Math. 5 (1996), for the series.
"""

from __future__ import annotations

import enum
import logging
import math
import sys

logger = logging.getLogger(__name__)

MAX_ITER = 100
STEP_TOL = 1e-14
EPS = sys.float_info.epsilon
# |1 + e*x| below this is treated as the branch point itself
BRANCH_POINT_TOL = 4 * EPS


class LambertDomainError(ValueError):
    """Raised when the argument lies outside the requested branch's domain."""


class LambertConvergenceError(RuntimeError):
    """Raised when Halley's method does not converge within MAX_ITER steps."""


class WBranch(enum.Enum):
    PRINCIPAL = 0
    MINUS_ONE = -1


def _branch_series(p: float, branch: WBranch) -> float:
    # w = -1 + p - p^2/3 + 11/72 p^3 - ..., p -> -p on the -1 branch
    if branch is WBranch.MINUS_ONE:
        p = -p
    return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3


def _initial_guess(x: float, p2: float, branch: WBranch) -> float:
    if p2 < 0.5:
        return _branch_series(math.sqrt(p2), branch)
    if branch is WBranch.MINUS_ONE:
        l1 = math.log(-x)
        l2 = math.log(-l1)
        return l1 - l2 + l2 / l1
    if x < 3.0:
        return math.log1p(x)
    l1 = math.log(x)
    return l1 - math.log(l1)


def lambert_w(branch: WBranch, x: float) -> float:
    """Evaluate W(x) on a real branch.

    Parameters
    ----------
    branch : WBranch
        PRINCIPAL (domain [-1/e, inf)) or MINUS_ONE (domain [-1/e, 0)).
    x : float
        Argument.

    Returns
    -------
    float
        w with w * exp(w) = x; w >= -1 on the principal branch, w <= -1 on
        the -1 branch.

    Raises
    ------
    LambertDomainError
        If x is outside the branch domain or not finite.
    LambertConvergenceError
        If Halley's method fails to converge.
    """
    branch = WBranch(branch)
    if not math.isfinite(x):
        raise LambertDomainError(f"Argument must be finite, got {x}")
    p2 = 2.0 * (1.0 + math.e * x)
    if p2 < -BRANCH_POINT_TOL:
        raise LambertDomainError(f"Argument {x} is below the branch point -1/e")
    if branch is WBranch.MINUS_ONE and x >= 0:
        raise LambertDomainError(f"W_-1 is only real on [-1/e, 0), got {x}")
    if p2 <= BRANCH_POINT_TOL:
        return -1.0
    if x == 0:
        return 0.0

    w = _initial_guess(x, p2, branch)
    for i in range(MAX_ITER):
        ew = math.exp(w)
        f = w * ew - x
        if abs(f) <= 2 * EPS * abs(x):
            return w
        wp1 = w + 1.0
        if wp1 == 0.0:
            return w
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w_new = w - dw
        # Halley can step across the branch point; halve back toward -1
        if branch is WBranch.PRINCIPAL and w_new < -1.0:
            w_new = 0.5 * (w - 1.0)
        elif branch is WBranch.MINUS_ONE and w_new > -1.0:
            w_new = 0.5 * (w - 1.0)
        w = w_new
        if abs(dw) <= STEP_TOL * (1.0 + abs(w)):
            logger.debug(f"W_{branch.value}({x}) converged in {i + 1} iterations")
            return w
    raise LambertConvergenceError(
        f"W_{branch.value}({x}) did not converge in {MAX_ITER} iterations"
    )


def lambert_wm1_neg_exp(u: float) -> float:
    """Evaluate W_{-1}(-exp(u)) in the log domain.

    Solves ln(-w) + w = u for w <= -1, which is the defining equation
    w * exp(w) = -exp(u) after taking logarithms. Valid for u <= -1.

    Parameters
    ----------
    u : float
        Log-magnitude of the argument.

    Returns
    -------
    float
        w <= -1 with |ln(-w) + w - u| <= 1e-12.
    """
    if not math.isfinite(u):
        raise LambertDomainError(f"u must be finite, got {u}")
    if u > -1.0:
        raise LambertDomainError(f"W_-1(-exp(u)) needs u <= -1, got {u}")
    # 2 * (1 + e * x) with x = -exp(u)
    p2 = -2.0 * math.expm1(u + 1.0)
    if p2 <= BRANCH_POINT_TOL:
        return -1.0

    if p2 < 0.5:
        w = _branch_series(math.sqrt(p2), WBranch.MINUS_ONE)
    else:
        w = u - math.log(-u)
        # w <- u - ln(-w) contracts for |w| > 1
        for _ in range(3):
            w = u - math.log(-w)

    g_tol = 2 * EPS * max(1.0, abs(u))
    for i in range(MAX_ITER):
        g = math.log(-w) + w - u
        if abs(g) <= g_tol:
            return w
        g1 = (w + 1.0) / w
        if g1 == 0.0:
            return w
        g2 = -1.0 / (w * w)
        dw = 2.0 * g * g1 / (2.0 * g1 * g1 - g * g2)
        w_new = w - dw
        if w_new > -1.0:
            w_new = 0.5 * (w - 1.0)
        w = w_new
        if abs(dw) <= STEP_TOL * (1.0 + abs(w)):
            logger.debug(f"W_-1(-exp({u})) converged in {i + 1} iterations")
            return w
    raise LambertConvergenceError(
        f"W_-1(-exp({u})) did not converge in {MAX_ITER} iterations"
    )
