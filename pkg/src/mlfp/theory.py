"""Closed-form constants, cost recursion and budgets of the MLFP scheme.

All cost quantities are exact: integer unit costs give Python ints, other
unit costs give ``Fraction`` values, so ledger comparisons never round.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache


def _require_contraction(cwL: float, name: str = "cwL") -> None:
    if not (0.0 <= cwL < 1.0):
        raise ValueError(f"{name} must lie in [0, 1) for a contraction, got {cwL}")


def _decimal(x) -> Fraction:
    # read a float as the decimal it was typed as: 0.6 means 3/5, so a
    # threshold that is an integer in exact arithmetic stays one
    return x if isinstance(x, Fraction) else Fraction(repr(float(x)))


def min_M(cwL: float, action_count: int) -> int:
    """Least integer M with M > (1 + cwL(2|A|-1))^2 / (1 - cwL)^2."""
    _require_contraction(cwL)
    if action_count < 1:
        raise ValueError("action_count must be positive")
    c = _decimal(cwL)
    threshold = (1 + c * (2 * action_count - 1)) ** 2 / (1 - c) ** 2
    return math.floor(threshold) + 1


def simple_min_M(delta_sup: float, action_count: int) -> int:
    """Least integer M >= 4|A|^2 / (1 - delta)^2."""
    _require_contraction(delta_sup, "delta")
    d = _decimal(delta_sup)
    return math.ceil(Fraction(4 * action_count**2) / (1 - d) ** 2)


def alpha(cwL: float, action_count: int, M: int) -> float:
    if M < 1:
        raise ValueError("M must be >= 1")
    r = 1.0 / math.sqrt(M)
    inner = cwL * (1.0 + action_count * r) + r
    return 0.5 * (inner + math.sqrt(inner * inner + 4.0 * r * cwL * (action_count - 1)))


def gamma(kappa: float, cwL: float, action_count: int) -> float:
    """3/2 times the largest of the three bias/variance prefactors.

    ``cwL`` plays the role of lambda*L; the third term uses lambda*|A|*L,
    i.e. ``action_count * cwL``.
    """
    _require_contraction(cwL, "lambdaL")
    terms = (
        kappa / (1.0 - cwL),
        kappa * cwL / (1.0 - cwL) + kappa,
        action_count * kappa / (action_count * cwL + 1.0),
    )
    return 1.5 * max(terms)


def beta(alpha_value: float, M: int) -> float:
    if not (0.0 < alpha_value < 1.0):
        return math.inf
    return math.log(3 * M) / math.log(1.0 / alpha_value)


@dataclass(frozen=True)
class TheoryConstants:
    alpha: float
    beta: float
    gamma: float
    M: int
    action_count: int
    cwL: float
    kappa: float

    def __post_init__(self):
        if self.M >= min_M(self.cwL, self.action_count) and not self.alpha < 1.0:
            raise AssertionError(f"alpha={self.alpha} >= 1 although M={self.M} meets the M-condition")

    @classmethod
    def from_params(cls, cwL: float, action_count: int, M: int, kappa: float) -> "TheoryConstants":
        a = alpha(cwL, action_count, M)
        return cls(a, beta(a, M), gamma(kappa, cwL, action_count), M, action_count, cwL, kappa)

    def bound(self, n: int) -> float:
        """gamma * alpha^n, the RMSE bound after n levels."""
        return self.gamma * self.alpha**n


def n_for_eps(eps: float, constants: TheoryConstants, max_n: int = 100_000) -> int:
    """Least n >= 1 with gamma * alpha^n <= eps, by upward search."""
    if not constants.alpha < 1.0:
        raise ValueError("alpha must be < 1")
    if not eps > 0:
        raise ValueError("eps must be positive")
    for n in range(1, max_n + 1):
        if constants.gamma * constants.alpha**n <= eps:
            return n
    raise ValueError(f"no n <= {max_n} reaches eps={eps}")


@lru_cache(maxsize=None)
def _cost_table(n: int, M: int, unit) -> tuple:
    c = [0 * unit]
    for k in range(1, n + 1):
        total = 0 * unit
        for l in range(k):
            prev = c[l - 1] if l >= 1 else 0
            total += M ** (k - l) * (unit + c[l] + prev)
        c.append(total)
    return tuple(c)


def _exact(unit):
    if isinstance(unit, int) or (isinstance(unit, float) and unit.is_integer()):
        return int(unit)
    return Fraction(unit)


def cost_recursion(n: int, M: int, unit_cost=1):
    """C_0 = 0, C_n = sum_{l<n} M^{n-l} (R + C_l + 1{l>=1} C_{l-1}), exact."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return _cost_table(int(n), int(M), _exact(unit_cost))[n]


def cost_bound(n: int, M: int, unit_cost=1):
    return _exact(unit_cost) * (3 * M) ** n


def complexity_budget(eps: float, constants: TheoryConstants, unit_cost: float = 1.0) -> float:
    b = constants.beta
    return 3 * constants.M * unit_cost * max(1.0, constants.gamma) ** b * eps ** (-b)


def complexity_constant(constants: TheoryConstants) -> float:
    b = constants.beta
    return max(b, 3 * constants.M * max(1.0, constants.gamma) ** b)


def solution_bounds(c_f: float, c_w: float, L: float) -> tuple[float, float]:
    cwL = c_w * L
    _require_contraction(cwL, "c_w*L")
    return c_f / (1.0 - cwL), c_f * c_w / (1.0 - cwL)
