"""Concession tactics.

The concession curve is the polynomial family

    alpha(t) = k + (1 - k) * (min(t, T) / T) ** (1 / beta)

where ``beta`` comes from the stance: a headstrong agent (beta < 1) holds
out until late, a conceder (beta > 1) gives ground early. The curve is
evaluated against the earlier of the time deadline and the resource
deadline. Opponents are classified from the shape of the utility they
concede to us, and an agent adapts its own stance to that class.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace

from .errors import DeadlinePassed
from .model import (
    UTILITY_EPSILON,
    Accept,
    IssueSpec,
    Offer,
    Side,
    Stance,
    Terminate,
    acceptable,
    utility,
)

DEFAULT_STANCE_BETA: Mapping[Stance, float] = {
    Stance.HEADSTRONG: 0.3,
    Stance.LINEAR: 1.0,
    Stance.CONCEDER: 3.0,
}
EPSILON_HEADSTRONG = 0.01
CURVATURE_TOLERANCE = 0.2


@dataclass(frozen=True)
class TacticParams:
    k: float = 0.0
    beta: float = 1.0
    stance_beta_map: Mapping[Stance, float] = field(
        default_factory=lambda: dict(DEFAULT_STANCE_BETA)
    )

    def __post_init__(self) -> None:
        if not 0.0 <= self.k < 1.0:
            raise ValueError(f"k={self.k!r} outside [0, 1)")
        if self.beta <= 0:
            raise ValueError(f"beta={self.beta!r} must be positive")
        if set(self.stance_beta_map) != set(Stance):
            raise ValueError("stance_beta_map must cover every stance")
        if any(b <= 0 for b in self.stance_beta_map.values()):
            raise ValueError("stance betas must be positive")

    def for_stance(self, stance: Stance) -> TacticParams:
        return replace(self, beta=self.stance_beta_map[stance])


def concession_alpha(t: float, t_max: float, params: TacticParams) -> float:
    """Fraction of the ideal-to-reservation span conceded at time ``t``."""
    if t < 0 or t_max <= 0:
        raise ValueError("need t >= 0 and t_max > 0")
    x = min(t, t_max) / t_max
    return params.k + (1.0 - params.k) * x ** (1.0 / params.beta)


@dataclass(frozen=True)
class ResourceState:
    available: float
    trigger_threshold: float
    capacity: float
    r_max: float = 1.0

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if not 0 <= self.available <= self.capacity:
            raise ValueError("available must lie in [0, capacity]")
        if not 0 < self.r_max <= 1:
            raise ValueError("r_max must lie in (0, 1]")


def effective_deadline(
    t_max: int,
    resources: ResourceState | Iterable[ResourceState] | None = None,
) -> int:
    """The earlier of the time deadline and the resource deadline, in rounds.

    Never less than one round.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if resources is None:
        return t_max
    if isinstance(resources, ResourceState):
        resources = (resources,)
    r_max = min((r.r_max for r in resources), default=1.0)
    # guard against 0.7 * 10 == 7.000000000000001
    by_resource = math.ceil(r_max * t_max - 1e-9)
    return max(1, min(t_max, by_resource))


def propose(
    issues: Sequence[IssueSpec],
    side: Side,
    round: int,
    deadline: int,
    params: TacticParams,
    stance: Stance,
) -> dict[str, float]:
    """Costs of the offer on the concession curve at ``round``."""
    if round > deadline:
        raise DeadlinePassed(f"round {round} beyond deadline {deadline}")
    alpha = concession_alpha(round, deadline, params.for_stance(stance))
    costs = {}
    for issue in issues:
        if issue.side is not side:
            raise ValueError(f"issue {issue.issue_id} is oriented for a {issue.side.value}")
        costs[issue.issue_id] = issue.cost_at(alpha)
    return costs


def accepts(
    incoming: Offer | Mapping[str, float],
    planned: Mapping[str, float] | None,
    issues: Sequence[IssueSpec],
    floor: float = 0.0,
) -> bool:
    """Acceptance rule: the incoming offer is within our reservation bounds
    and worth at least our own next planned offer (or ``floor`` when we
    have no offer left to make)."""
    if not acceptable(incoming, issues):
        return False
    target = utility(planned, issues) if planned is not None else floor
    return utility(incoming, issues) >= target - UTILITY_EPSILON


@dataclass
class OpponentModel:
    """Accumulates the opponent's offers and the utility each gives us."""

    observed_offers: list[Offer] = field(default_factory=list)
    utilities: list[float] = field(default_factory=list)
    estimated_class: Stance = Stance.LINEAR
    concession_rate: float = 0.0

    def observe(
        self,
        offer: Offer,
        issues: Sequence[IssueSpec],
        epsilon_h: float = EPSILON_HEADSTRONG,
        curvature_tolerance: float = CURVATURE_TOLERANCE,
    ) -> Stance:
        self.observed_offers.append(offer)
        self.utilities.append(utility(offer, issues))
        self.estimated_class = classify_opponent(
            self, issues, epsilon_h=epsilon_h, curvature_tolerance=curvature_tolerance
        )
        return self.estimated_class


def _gains(values: Sequence[float]) -> list[float]:
    return [b - a for a, b in zip(values, values[1:])]


def concession_curvature(values: Sequence[float]) -> float:
    """Normalized change of the concession rate between the early and the
    late half of a series, in [-1, 1]. Positive means accelerating."""
    gains = _gains(values)
    half = len(gains) // 2
    if half == 0:
        return 0.0
    early = math.fsum(gains[:half]) / half
    late = math.fsum(gains[-half:]) / half
    denom = abs(early) + abs(late)
    if denom <= UTILITY_EPSILON:
        return 0.0
    return (late - early) / denom


def classify_opponent(
    model: OpponentModel,
    issues: Sequence[IssueSpec],
    epsilon_h: float = EPSILON_HEADSTRONG,
    curvature_tolerance: float = CURVATURE_TOLERANCE,
) -> Stance:
    """Classify the opponent from the utility its offers give us.

    A mean gain below ``epsilon_h`` per round is headstrong. Otherwise
    the sign of the curvature decides: accelerating concessions are
    headstrong (Boulware), decelerating ones conceder, and a flat rate
    linear. Fewer than three observations are reported as linear.
    """
    if len(model.utilities) != len(model.observed_offers):
        model.utilities = [utility(o, issues) for o in model.observed_offers]
    values = model.utilities
    if len(values) < 2:
        model.concession_rate = 0.0
        return Stance.LINEAR
    gains = _gains(values)
    model.concession_rate = math.fsum(gains) / len(gains)
    if len(values) < 3:
        return Stance.LINEAR
    if model.concession_rate < epsilon_h:
        return Stance.HEADSTRONG
    kappa = concession_curvature(values)
    if kappa > curvature_tolerance:
        return Stance.HEADSTRONG
    if kappa < -curvature_tolerance:
        return Stance.CONCEDER
    return Stance.LINEAR


_RESPONSE = {
    Stance.LINEAR: Stance.LINEAR,
    Stance.CONCEDER: Stance.HEADSTRONG,
    Stance.HEADSTRONG: Stance.CONCEDER,
}


def adapt_stance(self_stance: Stance, opponent: Stance) -> Stance:
    """Match a linear opponent, hold out against a conceder, concede to a
    headstrong one."""
    return _RESPONSE[opponent]


@dataclass
class ConcessionNegotiator:
    """A plain time-dependent negotiator with a fixed stance.

    Used as a responder for the negotiation engine in isolation (tests,
    fuzzing, replay oracles). ``horizon`` is the number of offers the
    negotiator may make in a session; the curve reaches the reservation
    at offer index ``horizon - 1``.
    """

    agent_id: str
    issues: Sequence[IssueSpec]
    side: Side
    params: TacticParams = field(default_factory=TacticParams)
    stance: Stance = Stance.LINEAR
    horizon: int = 10

    def _offers_made(self, session) -> int:
        return sum(1 for o in session.history if o.sender == self.agent_id)

    def planned(self, t: int) -> dict[str, float] | None:
        if t >= self.horizon:
            return None
        deadline = max(1, self.horizon - 1)
        return propose(self.issues, self.side, min(t, deadline), deadline, self.params, self.stance)

    def opening(self, session, now: int = 0) -> Offer:
        return Offer(session.session_id, len(session.history) + 1, self.agent_id,
                     self.planned(0), now)

    def respond(self, session, offer: Offer, now: int = 0) -> Offer | Accept | Terminate:
        t = self._offers_made(session)
        plan = self.planned(t)
        if accepts(offer, plan, self.issues):
            return Accept(session.session_id, self.agent_id, now)
        if plan is None:
            return Terminate(session.session_id, self.agent_id, now, "deadline")
        return Offer(session.session_id, len(session.history) + 1, self.agent_id, plan, now)
