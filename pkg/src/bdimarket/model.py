"""Domain types and the numeric core of the negotiation engine.

Everything here is a pure function over immutable values: per-issue
linear utilities, the relative cost delta between rounds, the cooperation
threshold (per issue and weighted aggregate) and the three-way stance
classification against an agent's initial threshold.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    MissingIssue,
    NegativeWeight,
    UnnormalizedWeights,
    WeightSumViolation,
    ZeroCost,
)

WEIGHT_TOLERANCE = 1e-9
STANCE_TOLERANCE = 1e-9
# Comparisons between two utilities computed along different float paths.
UTILITY_EPSILON = 1e-12

MARKETPLACE_ID = "marketplace"


class Side(str, Enum):
    BUYER = "buyer"
    SELLER = "seller"

    @property
    def opposite(self) -> Side:
        return Side.SELLER if self is Side.BUYER else Side.BUYER


class Stance(str, Enum):
    HEADSTRONG = "headstrong"
    LINEAR = "linear"
    CONCEDER = "conceder"


@dataclass(frozen=True)
class IssueSpec:
    """One negotiable issue as seen by one agent.

    ``ideal_cost`` is where the agent's utility for the issue is 1 and
    ``reservation_cost`` where it is 0. A buyer has ``ideal < reservation``,
    a seller the reverse. ``t_min``/``t_max`` bound, in rounds, when the
    agent is willing to close on this issue.
    """

    issue_id: str
    weight: float
    ideal_cost: float
    reservation_cost: float
    t_min: int = 0
    t_max: int = 10
    name: str = ""

    def __post_init__(self) -> None:
        if self.ideal_cost < 0 or self.reservation_cost < 0:
            raise ValueError(f"issue {self.issue_id}: costs must be >= 0")
        if self.ideal_cost == self.reservation_cost:
            raise ValueError(f"issue {self.issue_id}: ideal and reservation cost coincide")
        if self.t_max <= 0 or self.t_min < 0 or self.t_min > self.t_max:
            raise ValueError(f"issue {self.issue_id}: need 0 <= t_min <= t_max, t_max > 0")

    @property
    def side(self) -> Side:
        return Side.BUYER if self.ideal_cost < self.reservation_cost else Side.SELLER

    @property
    def span(self) -> float:
        return self.reservation_cost - self.ideal_cost

    def score(self, cost: float) -> float:
        """Linear per-issue utility, clamped to the [reservation, ideal] band."""
        u = (self.reservation_cost - cost) / self.span
        return 0.0 if u < 0.0 else 1.0 if u > 1.0 else u

    def acceptable(self, cost: float) -> bool:
        """True when ``cost`` is no worse than the reservation cost."""
        if self.ideal_cost < self.reservation_cost:
            return cost <= self.reservation_cost + UTILITY_EPSILON
        return cost >= self.reservation_cost - UTILITY_EPSILON

    def cost_at(self, alpha: float) -> float:
        return self.ideal_cost + alpha * self.span


@dataclass(frozen=True)
class Offer:
    session_id: str
    round: int
    sender: str
    costs: Mapping[str, float]
    sent_at: int = 0

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ValueError("offer round is 1-based")
        object.__setattr__(self, "costs", dict(self.costs))

    def total_cost(self) -> float:
        return math.fsum(self.costs.values())


@dataclass(frozen=True)
class Accept:
    session_id: str
    sender: str
    sent_at: int = 0


@dataclass(frozen=True)
class Terminate:
    session_id: str
    sender: str
    sent_at: int = 0
    reason: str = ""


Message = Offer | Accept | Terminate


def validate_weights(issues: Sequence[IssueSpec] | Sequence[float]) -> None:
    """Raise unless all weights are in [0, 1] and sum to 1 within 1e-9."""
    if not issues:
        raise ValueError("at least one issue is required")
    weights = [i.weight if isinstance(i, IssueSpec) else float(i) for i in issues]
    for w in weights:
        if w < 0:
            raise NegativeWeight(f"negative weight {w!r}")
    if any(w > 1 for w in weights):
        raise WeightSumViolation(math.fsum(weights))
    total = math.fsum(weights)
    if abs(total - 1.0) > WEIGHT_TOLERANCE:
        raise WeightSumViolation(total)


def _costs_of(offer: Offer | Mapping[str, float]) -> Mapping[str, float]:
    return offer.costs if isinstance(offer, Offer) else offer


def utility(
    offer: Offer | Mapping[str, float],
    issues: Sequence[IssueSpec],
    side: Side | None = None,
) -> float:
    """Weighted additive utility of ``offer`` for the owner of ``issues``.

    Raises:
        MissingIssue: the offer does not price one of the issues.
        UnnormalizedWeights: the issue weights do not sum to 1.
    """
    costs = _costs_of(offer)
    total_weight = 0.0
    u = 0.0
    for issue in issues:
        if side is not None and issue.side is not side:
            raise ValueError(f"issue {issue.issue_id} is oriented for a {issue.side.value}")
        try:
            cost = costs[issue.issue_id]
        except KeyError:
            raise MissingIssue(issue.issue_id) from None
        total_weight += issue.weight
        u += issue.weight * issue.score(cost)
    if abs(total_weight - 1.0) > WEIGHT_TOLERANCE:
        raise UnnormalizedWeights(f"weights sum to {total_weight!r}")
    return min(1.0, max(0.0, u))


def acceptable(offer: Offer | Mapping[str, float], issues: Iterable[IssueSpec]) -> bool:
    costs = _costs_of(offer)
    return all(issue.acceptable(costs[issue.issue_id]) for issue in issues)


def cost_delta(cost_history: Sequence[float], n: int) -> float:
    """Relative change of the n-th cost (1-based) against its predecessor.

    Uses the current cost as denominator. Fewer than three rounds of
    history yields 0.
    """
    if n < 1 or n > len(cost_history):
        raise IndexError(f"round {n} outside history of length {len(cost_history)}")
    if n < 3:
        return 0.0
    current = cost_history[n - 1]
    if current == 0:
        raise ZeroCost(f"cost at round {n} is zero")
    return (current - cost_history[n - 2]) / current


@dataclass(frozen=True)
class ThresholdInputs:
    """Per-issue factors of the cooperation threshold."""

    cost_delta: float
    urgency: float
    time_remaining: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.urgency <= 1.0:
            raise ValueError(f"urgency {self.urgency!r} outside [0, 1]")
        if not 0.0 <= self.time_remaining <= 1.0:
            raise ValueError(f"time_remaining {self.time_remaining!r} outside [0, 1]")


@dataclass(frozen=True)
class CooperationThreshold:
    per_issue: Mapping[str, float] = field(default_factory=dict)
    aggregate: float = 0.0


def cooperation_threshold(
    inputs: Mapping[str, ThresholdInputs],
    weights: Mapping[str, float],
) -> CooperationThreshold:
    """lambda_i = clamp(|delta_i|) * urgency_i * time_i, aggregate = sum W_i lambda_i."""
    if set(inputs) != set(weights):
        raise MissingIssue(sorted(set(inputs) ^ set(weights)))
    per_issue: dict[str, float] = {}
    for issue_id in sorted(inputs):
        x = inputs[issue_id]
        c = min(1.0, abs(x.cost_delta))
        per_issue[issue_id] = c * x.urgency * x.time_remaining
    aggregate = math.fsum(weights[i] * per_issue[i] for i in per_issue)
    return CooperationThreshold(per_issue, min(1.0, max(0.0, aggregate)))


def classify_stance(lambda_i: float, lambda_phi: float) -> Stance:
    diff = lambda_i - lambda_phi
    if abs(diff) <= STANCE_TOLERANCE:
        return Stance.LINEAR
    return Stance.HEADSTRONG if diff < 0 else Stance.CONCEDER
