"""Closed-form quantities: the coupon-collector term, the message-counting
delay bound, and the delay/fan-in bound expressions used as overlays.

Asymptotic forms are evaluated with every hidden constant set to 1 and
logarithms taken base 2. They are meant for ratio and trend comparisons
across parameter sweeps, never for equality checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .core import InvalidParameter

EXACT = "exact"
ASYMPTOTIC = "asymptotic-form"


@dataclass(frozen=True)
class BoundReport:
    name: str
    params: dict
    value: float
    kind: str = ASYMPTOTIC
    note: str = "hidden constants set to 1"


def coupon_R(beta: int, t: int) -> float:
    """Expected draws from ``beta`` equally likely coupons until ``t`` distinct are seen.

    beta * sum(1/j for j in beta-t+1..beta). Each term beta/j is rounded
    on its own, so every term is at least 1 and the result at least t.
    """
    if not (isinstance(beta, int) and isinstance(t, int)) or not 1 <= t <= beta:
        raise InvalidParameter("t", "1 ≤ t ≤ beta")
    return math.fsum(beta / j for j in range(beta, beta - t, -1))


def coupon_R_exact(beta: int, t: int) -> Fraction:
    if not 1 <= t <= beta:
        raise InvalidParameter("t", "1 ≤ t ≤ beta")
    return beta * sum(Fraction(1, j) for j in range(beta - t + 1, beta + 1))


def counting_lower_bound(n: int, alpha: int, t: int, fan_out: int) -> int:
    """Smallest k with alpha * (1 + fan_out/t)^k >= n.

    At most alpha*(1+F/t)^k correct replicas can be active k rounds after
    introduction, since every new activation needs t copies and active
    replicas send at most F copies per round. Computed in exact rationals.
    """
    if alpha < 1 or alpha > n:
        raise InvalidParameter("alpha", "1 ≤ alpha ≤ n")
    if t < 1 or fan_out < 1:
        raise InvalidParameter("t/fan_out", "t ≥ 1 and fan_out ≥ 1")
    growth = Fraction(t + fan_out, t)
    reach = Fraction(alpha)
    k = 0
    while reach < n:
        reach *= growth
        k += 1
    return k


def random_delay_form(n: int, alpha: int, t: int, fan_out: int) -> BoundReport:
    r = coupon_R(alpha, t)
    value = (r / fan_out) * (n / alpha) ** (1 - 1 / (2 * r)) + math.log2(n) / fan_out
    note = "hidden constants set to 1"
    if not 2 < t <= n / 4:
        note += "; t outside (2, n/4]"
    return BoundReport("random_delay", dict(n=n, alpha=alpha, t=t, fan_out=fan_out), value, note=note)


def tree_delay_terms(n: int, alpha: int, t: int, fan_out: int, ell: int) -> tuple[float, float, float]:
    r = coupon_R(alpha, t)
    root_random = (r / fan_out) * ((ell + alpha) / alpha) ** (1 - 1 / t)
    root_tail = math.log2(ell + alpha) / fan_out
    down_tree = (t / fan_out) * math.log2(n / ell)
    return root_random, root_tail, down_tree


def tree_delay_form(n: int, alpha: int, t: int, fan_out: int, ell: int) -> BoundReport:
    terms = tree_delay_terms(n, alpha, t, fan_out, ell)
    note = "hidden constants set to 1"
    if not 4 * t <= ell <= n * fan_out / math.log2(n):
        note += "; ℓ outside [4t, n·F/log n]"
    return BoundReport(
        "tree_delay", dict(n=n, alpha=alpha, t=t, fan_out=fan_out, ell=ell), sum(terms), note=note
    )


def fanin_forms(n: int, t: int, fan_out: int, ell: int | None = None) -> list[BoundReport]:
    params = dict(n=n, t=t, fan_out=fan_out, ell=ell)
    log_n = math.log2(n)
    out = [BoundReport("random_fanin", params, fan_out + log_n)]
    if n > 2 and fan_out <= log_n / 4:
        refined = (fan_out + log_n) / (math.log2(log_n) - math.log2(fan_out))
        out.append(BoundReport("random_fanin_refined", params, refined))
    out.append(BoundReport("random_fanin_amortized", params, float(fan_out), note="(log n)-amortized"))
    if ell is not None:
        out.append(BoundReport("tree_fanin", params, n * fan_out / ell))
        out.append(
            BoundReport(
                "tree_root_expected", params, n * fan_out / (3 * ell),
                note="expected per-round load on a root replica",
            )
        )
    return out


def tradeoff_product(delay: float, fanin: float, n: int, t: int, alpha: int) -> float:
    """(delay * fan-in) / (t n / alpha); bounded below by a constant when t ≥ 2 log n."""
    if min(delay, fanin, n, t, alpha) <= 0:
        raise InvalidParameter("inputs", "all inputs positive")
    return delay * fanin / (t * n / alpha)


def tradeoff_applies(n: int, t: int) -> bool:
    return t >= 2 * math.log2(n)


def tree_tradeoff_form(n: int, alpha: int, t: int, fan_out: int, ell: int) -> float:
    """Delay form times fan-in form for ℓ-Tree, normalized by t n / alpha."""
    delay = tree_delay_form(n, alpha, t, fan_out, ell).value
    return tradeoff_product(delay, n * fan_out / ell, n, t, alpha)
