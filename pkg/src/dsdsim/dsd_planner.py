"""
Analytical draft-length planning for distributed speculative decoding.

With a constant per-position acceptance rate alpha and per-token relative
cost L = b + c, one draft-verify round yields (1 - alpha^(gamma+1)) /
(1 - alpha) tokens in (1 + gamma L) LLM steps. The speedup over the
standalone LLM is maximized at an integer next to the continuous optimum
gamma_0, which has a closed form through the -1 branch of Lambert W.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from dsdsim.dsd_lambert import LambertDomainError, lambert_wm1_neg_exp

logger = logging.getLogger(__name__)

DEFAULT_GAMMA_MAX = 200


class Mode(str, enum.Enum):
    DSD = "DSD"
    STANDALONE = "standalone"


@dataclass(frozen=True)
class PlannerInput:
    alpha: float
    b: float
    c: float

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not (self.b > 0 and math.isfinite(self.b)):
            raise ValueError(f"b must be a positive finite number, got {self.b}")
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"c must be a positive finite number, got {self.c}")

    @property
    def L(self) -> float:
        return self.b + self.c


@dataclass(frozen=True)
class Plan:
    """Outcome of mode selection.

    `gamma_star` and `s_star` are the best DSD configuration even when the
    standalone LLM is chosen; `gamma_zero` is the continuous optimum (NaN
    when L >= 1, where it is undefined).
    """

    mode: Mode
    gamma_star: int
    s_star: float
    gamma_zero: float
    alpha: float
    L: float


def _check_alpha(alpha: float):
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _check_gamma(gamma: int):
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")


def expected_tokens(alpha: float, gamma: int) -> float:
    """Expected tokens emitted per round, (1 - alpha^(gamma+1)) / (1 - alpha)."""
    _check_gamma(gamma)
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1:
        return float(gamma + 1)
    return (1.0 - alpha ** (gamma + 1)) / (1.0 - alpha)


def speedup(alpha: float, gamma: int, L: float) -> float:
    """Throughput of DSD relative to the standalone LLM.

    S(gamma) = (1 - alpha^(gamma+1)) / ((1 + gamma L) (1 - alpha))
    """
    _check_alpha(alpha)
    _check_gamma(gamma)
    if not L >= 0:
        raise ValueError(f"L must be >= 0, got {L}")
    return (1.0 - alpha ** (gamma + 1)) / ((1.0 + gamma * L) * (1.0 - alpha))


def speedup_curve(alpha: float, L: float, gamma_max: int) -> list[float]:
    """Speedup for gamma = 1..gamma_max."""
    return [speedup(alpha, g, L) for g in range(1, gamma_max + 1)]


def critical_point_residual(alpha: float, L: float, gamma: float) -> float:
    """Numerator of dS/dgamma, zero at the continuous optimum.

    -alpha^(gamma+1) ln(alpha) (1 + L gamma) - L (1 - alpha^(gamma+1))
    """
    a_pow = alpha ** (gamma + 1)
    return -a_pow * math.log(alpha) * (1.0 + L * gamma) - L * (1.0 - a_pow)


def gamma_zero(alpha: float, L: float) -> float:
    """Continuous maximizer of the speedup.

    gamma_0 = (W_{-1}(-alpha^(1/L - 1) / e) + 1) / ln(alpha) - 1/L, with the
    Lambert W argument handled as -exp(u), u = -1 + (1/L - 1) ln(alpha).

    Raises
    ------
    LambertDomainError
        If L >= 1 (no speedup region) or L <= 0.
    """
    _check_alpha(alpha)
    if not 0 < L < 1:
        raise LambertDomainError(f"gamma_0 needs 0 < L < 1, got L={L}")
    log_alpha = math.log(alpha)
    u = -1.0 + (1.0 / L - 1.0) * log_alpha
    w = lambert_wm1_neg_exp(u)
    return (w + 1.0) / log_alpha - 1.0 / L


def odld(alpha: float, b: float, c: float) -> tuple[int, float]:
    """Optimal draft length determination.

    Returns
    -------
    gamma_star : int
        1 when gamma_0 < 1, otherwise whichever of floor/ceil(gamma_0) gives
        the larger speedup (floor on ties).
    s_star : float
        Speedup at gamma_star.
    """
    inputs = PlannerInput(alpha, b, c)
    L = inputs.L
    g0 = gamma_zero(alpha, L)
    if g0 < 1:
        gamma_star = 1
    else:
        lo = math.floor(g0)
        hi = math.ceil(g0)
        gamma_star = hi if speedup(alpha, hi, L) > speedup(alpha, lo, L) else lo
    return gamma_star, speedup(alpha, gamma_star, L)


def as2(alpha: float, b: float, c: float) -> Plan:
    """Adaptive speculative selection: DSD with gamma_star, or the standalone LLM.

    L >= 1 always selects the standalone LLM. Otherwise the standalone LLM is
    chosen when the best achievable speedup is below 1.
    """
    inputs = PlannerInput(alpha, b, c)
    L = inputs.L
    if L >= 1:
        return Plan(
            mode=Mode.STANDALONE,
            gamma_star=1,
            s_star=speedup(alpha, 1, L),
            gamma_zero=math.nan,
            alpha=alpha,
            L=L,
        )
    gamma_star, s_star = odld(alpha, b, c)
    mode = Mode.STANDALONE if s_star < 1.0 else Mode.DSD
    return Plan(
        mode=mode,
        gamma_star=gamma_star,
        s_star=s_star,
        gamma_zero=gamma_zero(alpha, L),
        alpha=alpha,
        L=L,
    )


def plan_for_load(alpha: float, L: float) -> Plan:
    """`as2` for a total relative cost L, split evenly between b and c."""
    if not L > 0:
        raise ValueError(f"L must be > 0, got {L}")
    # Halving is exact, so b + c == L bit for bit
    return as2(alpha, 0.5 * L, 0.5 * L)


def brute_force_gamma(
    alpha: float, L: float, gamma_max: int = DEFAULT_GAMMA_MAX
) -> int:
    """Exhaustive argmax of the speedup over gamma = 1..gamma_max (smallest on ties)."""
    _check_gamma(gamma_max)
    best_gamma = 1
    best_s = speedup(alpha, 1, L)
    for g in range(2, gamma_max + 1):
        s = speedup(alpha, g, L)
        if s > best_s:
            best_gamma, best_s = g, s
    return best_gamma


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    L: float
    gamma_zero: float
    gamma_star: int
    s_star: float
    mode: Mode


@dataclass(frozen=True)
class CurvePoint:
    alpha: float
    L: float
    gamma: int
    s_inf: float


def cap_gamma(plan: Plan, gamma_max: Optional[int]) -> Plan:
    """Restrict `plan` to draft lengths up to `gamma_max` (None for no cap)."""
    if gamma_max is None or plan.gamma_star <= gamma_max:
        return plan
    # Speedup is unimodal in gamma, so the cap is the constrained optimum
    s_cap = speedup(plan.alpha, gamma_max, plan.L)
    return Plan(
        mode=Mode.STANDALONE if s_cap < 1.0 else Mode.DSD,
        gamma_star=gamma_max,
        s_star=s_cap,
        gamma_zero=plan.gamma_zero,
        alpha=plan.alpha,
        L=plan.L,
    )


def sweep_table(
    alphas: Sequence[float],
    Ls: Sequence[float],
    gamma_max: Optional[int] = None,
    with_curves: bool = False,
) -> tuple[list[SweepRow], list[CurvePoint]]:
    """Plan every (alpha, L) cell, optionally with per-gamma speedup curves.

    Parameters
    ----------
    alphas, Ls : Sequence[float]
        Grid axes; rows come out sorted by (alpha, L).
    gamma_max : int, optional
        Longest draft considered. Caps gamma_star and sets the curve length
        (DEFAULT_GAMMA_MAX for curves when not given).
    with_curves : bool
        Also return speedup for gamma = 1..gamma_max per cell.

    Returns
    -------
    rows : list[SweepRow]
    curves : list[CurvePoint]
        Empty unless `with_curves`.
    """
    rows = []
    curves = []
    for alpha in sorted(set(alphas)):
        for L in sorted(set(Ls)):
            plan = cap_gamma(plan_for_load(alpha, L), gamma_max)
            rows.append(
                SweepRow(alpha, L, plan.gamma_zero, plan.gamma_star, plan.s_star, plan.mode)
            )
            if with_curves:
                n_gamma = gamma_max or DEFAULT_GAMMA_MAX
                curves.extend(
                    CurvePoint(alpha, L, g, s)
                    for g, s in enumerate(speedup_curve(alpha, L, n_gamma), start=1)
                )
    logger.info(f"Planned {len(rows)} (alpha, L) cells")
    return rows, curves
