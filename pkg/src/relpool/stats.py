"""Pooled estimate, the X^2 homogeneity statistic, and the pooling test."""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass

from relpool.chi2 import chi_square_critical, chi_square_survival
from relpool.errors import InsufficientDataError

__all__ = [
    "AlphaPolicy",
    "CellSummary",
    "Decision",
    "TestOutcome",
    "alpha_for",
    "chi_square_critical",
    "chi_square_statistic",
    "chi_square_survival",
    "independence_test",
    "pooled_estimate",
]

DEFAULT_VALIDITY_THRESHOLD = 5.0


@dataclass(frozen=True)
class CellSummary:
    """Observation count and success count for one sibling cell."""

    n: int
    successes: int

    def __post_init__(self):
        if self.n < 0 or not 0 <= self.successes <= self.n:
            raise ValueError(f"invalid cell counts n={self.n}, successes={self.successes}")

    @classmethod
    def from_proportion(cls, n: int, p_hat: float) -> "CellSummary":
        """Build from ``(n, p_hat)``; ``p_hat * n`` is rounded to the nearest success count."""
        return cls(n, int(round(p_hat * n)))

    @property
    def p_hat(self) -> float | None:
        return self.successes / self.n if self.n else None


class Decision(str, enum.Enum):
    POOL = "pool"
    NO_POOL = "no_pool"
    INVALID = "invalid"


@dataclass(frozen=True)
class AlphaPolicy:
    """Significance level, either constant or shrinking as ``N ** -d``.

    Use :meth:`fixed` or :meth:`scheduled` rather than the raw constructor.
    """

    kind: str
    alpha: float | None = None
    d: float | None = None
    cap: float | None = None

    def __post_init__(self):
        if self.kind == "fixed":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError("fixed alpha must lie in (0, 1)")
        elif self.kind == "scheduled":
            if self.d is None or not self.d > 1.0:
                raise ValueError("schedule exponent d must exceed 1")
            if self.cap is None or not 0.0 < self.cap < 1.0:
                raise ValueError("alpha cap must lie in (0, 1)")
        else:
            raise ValueError(f"unknown alpha policy kind {self.kind!r}")

    @classmethod
    def fixed(cls, alpha: float = 0.05) -> "AlphaPolicy":
        return cls("fixed", alpha=alpha)

    @classmethod
    def scheduled(cls, d: float = 2.0, cap: float = 0.05) -> "AlphaPolicy":
        return cls("scheduled", d=d, cap=cap)

    def to_dict(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "alpha": self.alpha}
        return {"kind": "scheduled", "d": self.d, "cap": self.cap}

    @classmethod
    def from_dict(cls, doc: dict) -> "AlphaPolicy":
        kind = doc.get("kind")
        if kind == "fixed":
            return cls.fixed(float(doc["alpha"]))
        if kind == "scheduled":
            return cls.scheduled(float(doc["d"]), float(doc.get("cap", 0.05)))
        raise ValueError(f"unknown alpha policy kind {kind!r}")


def alpha_for(policy: AlphaPolicy, total_n: int) -> float:
    if total_n < 1:
        raise ValueError("total_n must be at least 1")
    if policy.kind == "fixed":
        return policy.alpha
    return min(policy.cap, float(total_n) ** (-policy.d))


@dataclass(frozen=True)
class TestOutcome:
    """Result of one homogeneity test across sibling cells.

    ``statistic`` is None for INVALID outcomes.  ``validity`` holds one flag
    per input cell; empty cells are flagged True since they take no part.
    """

    __test__ = False  # keep pytest from collecting this class

    decision: Decision
    statistic: float | None
    dof: int
    critical: float
    alpha_used: float
    validity: tuple[bool, ...]
    pooled: float

    @property
    def p_value(self) -> float | None:
        if self.statistic is None or self.dof < 1:
            return None
        return chi_square_survival(self.statistic, self.dof)

    def to_dict(self) -> dict:
        return {
            "decision": self.decision.value,
            "statistic": self.statistic,
            "dof": self.dof,
            "critical": self.critical if math.isfinite(self.critical) else None,
            "alpha": self.alpha_used,
            "validity": list(self.validity),
            "pooled": self.pooled,
        }


def _nonempty(cells: Sequence[CellSummary]) -> list[CellSummary]:
    return [c for c in cells if c.n > 0]


def pooled_estimate(cells: Sequence[CellSummary]) -> float:
    """Count-weighted mean of the cell proportions (total successes / total count)."""
    n = sum(c.n for c in cells)
    if n == 0:
        raise InsufficientDataError("pooled estimate needs at least one nonempty cell")
    return sum(c.successes for c in cells) / n


def chi_square_statistic(cells: Sequence[CellSummary]) -> float:
    """X^2 = sum_i (p_i - p)^2 N_i / (p (1 - p)) over nonempty cells.

    Returns exactly 0.0 when the pooled proportion is 0 or 1.
    """
    live = _nonempty(cells)
    if len(live) < 2:
        raise InsufficientDataError("X^2 needs at least two nonempty cells")
    p = pooled_estimate(live)
    if p == 0.0 or p == 1.0:
        return 0.0
    num = math.fsum((c.successes / c.n - p) ** 2 * c.n for c in live)
    return num / (p * (1.0 - p))


def independence_test(
    cells: Sequence[CellSummary],
    policy: AlphaPolicy,
    threshold: float = DEFAULT_VALIDITY_THRESHOLD,
) -> TestOutcome:
    """Test the hypothesis that every nonempty cell shares one success probability.

    Outcome is POOL when ``X^2 < c_alpha``, NO_POOL otherwise, and INVALID when
    some nonempty cell has an expected success or failure count (under the
    pooled proportion) below ``threshold``.  A pooled proportion of 0 or 1
    pools outright: every cell proportion then equals it.
    """
    live = _nonempty(cells)
    if len(live) < 2:
        raise InsufficientDataError("independence test needs at least two nonempty cells")
    total_n = sum(c.n for c in live)
    total_s = sum(c.successes for c in live)
    p = total_s / total_n
    dof = len(live) - 1
    alpha = alpha_for(policy, total_n)
    critical = chi_square_critical(alpha, dof)
    # exact integer form of n_i * p >= t and n_i * (1 - p) >= t
    validity = tuple(
        c.n == 0
        or (
            c.n * total_s >= threshold * total_n
            and c.n * (total_n - total_s) >= threshold * total_n
        )
        for c in cells
    )
    if total_s == 0 or total_s == total_n:
        return TestOutcome(Decision.POOL, 0.0, dof, critical, alpha, validity, p)
    if not all(validity):
        return TestOutcome(Decision.INVALID, None, dof, critical, alpha, validity, p)
    x2 = chi_square_statistic(live)
    decision = Decision.POOL if x2 < critical else Decision.NO_POOL
    return TestOutcome(decision, x2, dof, critical, alpha, validity, p)
