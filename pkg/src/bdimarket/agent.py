"""BDI cloud agents.

An agent keeps a Beliefset (negotiation state, opponent models, peer
reports, resource readings), a DesireSet fixed at creation, a Plan Library
and an Agenda of the negotiation spaces it takes part in. ``decide`` is
the per-tick deliberation step: absorb peer reports, update beliefs,
recompute the cooperation threshold and stance, classify the opponent,
select a plan and answer every pending offer.

Buyers are driven by a Resource Monitor over their service's utilization.
Sellers derive urgency from idle inventory: the more unsold capacity not
already under negotiation, the keener they are to close.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

from .coordination import ClearingHouse, CooperateNotice, RoundReport, share_and_absorb, urgency_weighted_score
from .errors import NoApplicablePlan, ZeroCost
from .marketplace import MatchAgent, Rfq, restrict_issues
from .model import (
    Accept,
    IssueSpec,
    Message,
    Offer,
    Side,
    Stance,
    Terminate,
    ThresholdInputs,
    classify_stance,
    cooperation_threshold,
    cost_delta,
    utility,
    validate_weights,
)
from .tactics import (
    CURVATURE_TOLERANCE,
    EPSILON_HEADSTRONG,
    OpponentModel,
    ResourceState,
    TacticParams,
    accepts,
    adapt_stance,
    concession_alpha,
    effective_deadline,
)


# ---------------------------------------------------------------------------
# Desires, beliefs, goals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesireSet:
    """Initial desire set: per-issue weights, cost ranges and time bounds,
    the initial cooperation threshold and the cost-utility floor."""

    issues: tuple[IssueSpec, ...]
    lambda_phi: float = 0.01
    cost_utility_threshold: float = 0.0
    triggers: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "issues", tuple(self.issues))
        validate_weights(self.issues)
        if not 0.0 <= self.lambda_phi <= 1.0:
            raise ValueError("lambda_phi outside [0, 1]")
        if not 0.0 <= self.cost_utility_threshold <= 1.0:
            raise ValueError("cost_utility_threshold outside [0, 1]")

    @property
    def t_max(self) -> int:
        return min(i.t_max for i in self.issues)

    @property
    def t_min(self) -> int:
        return max(i.t_min for i in self.issues)

    def trigger(self, issue_id: str) -> float:
        return self.triggers.get(issue_id, 0.8)


@dataclass(frozen=True)
class NegotiationBelief:
    session_id: str
    round: int
    sender: str
    costs: Mapping[str, float]
    utility: float
    tick: int


@dataclass
class Beliefset:
    own: dict[tuple[str, int], NegotiationBelief] = field(default_factory=dict)
    opponents: dict[str, OpponentModel] = field(default_factory=dict)
    peers: dict[tuple[str, str, int], RoundReport] = field(default_factory=dict)
    readings: dict[str, float] = field(default_factory=dict)
    urgency: dict[str, float] = field(default_factory=dict)

    def size(self) -> int:
        return len(self.own) + len(self.peers) + len(self.readings)


@dataclass(frozen=True)
class OfferObserved:
    offer: Offer
    utility: float
    received: bool
    tick: int = 0


@dataclass(frozen=True)
class ReportAbsorbed:
    report: RoundReport


@dataclass(frozen=True)
class ResourceReading:
    values: Mapping[str, float]
    urgency: Mapping[str, float]


BeliefEvent = OfferObserved | ReportAbsorbed | ResourceReading


def update_beliefs(
    beliefs: Beliefset,
    event: BeliefEvent,
    issues: Sequence[IssueSpec] = (),
    epsilon_h: float = EPSILON_HEADSTRONG,
    curvature_tolerance: float = CURVATURE_TOLERANCE,
) -> Beliefset:
    """Keyed upsert of one event. A received offer seen for the first time
    also refits the opponent model of its session."""
    if isinstance(event, OfferObserved):
        o = event.offer
        key = (o.session_id, o.round)
        fresh = key not in beliefs.own
        beliefs.own[key] = NegotiationBelief(o.session_id, o.round, o.sender, dict(o.costs),
                                             event.utility, event.tick)
        if event.received and fresh:
            model = beliefs.opponents.setdefault(o.session_id, OpponentModel())
            model.observe(o, issues, epsilon_h, curvature_tolerance)
    elif isinstance(event, ReportAbsorbed):
        beliefs.peers[event.report.key] = event.report
    else:
        beliefs.readings.update(event.values)
        beliefs.urgency.update(event.urgency)
    return beliefs


def monitor_resources(
    readings: Mapping[str, float],
    desires: DesireSet,
    has_active_agenda: bool = False,
) -> tuple[dict[str, float], bool]:
    """Urgency per issue from utilization readings, and whether to send an RFQ.

    urgency = clamp((utilization - trigger) / (1 - trigger), 0, 1)
    """
    urgency = {}
    for issue in desires.issues:
        u = readings[issue.issue_id]
        trig = desires.trigger(issue.issue_id)
        if trig >= 1.0:
            mu = 0.0
        else:
            mu = min(1.0, max(0.0, (u - trig) / (1.0 - trig)))
        urgency[issue.issue_id] = mu
    return urgency, (not has_active_agenda and any(mu > 0 for mu in urgency.values()))


@dataclass(frozen=True)
class SessionOutlook:
    curve_utility: float
    best_achievable: float


@dataclass(frozen=True)
class Goal:
    target_utility: float
    terminate: bool


def derive_goals(outlooks: Mapping[str, SessionOutlook], desires: DesireSet) -> dict[str, Goal]:
    floor = desires.cost_utility_threshold
    return {
        sid: Goal(max(floor, o.curve_utility), o.best_achievable < floor)
        for sid, o in outlooks.items()
    }


# ---------------------------------------------------------------------------
# Plan Library
# ---------------------------------------------------------------------------

class UrgencyBand(str, Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


def urgency_band(mu: float) -> UrgencyBand:
    if mu < 1.0 / 3.0:
        return UrgencyBand.LOW
    if mu > 2.0 / 3.0:
        return UrgencyBand.HIGH
    return UrgencyBand.MID


# Urgent agents stretch every stance's beta, conceding a little earlier.
BAND_BETA_SCALE = {UrgencyBand.LOW: 1.0, UrgencyBand.MID: 1.0, UrgencyBand.HIGH: 1.25}


@dataclass(frozen=True)
class Plan:
    plan_id: str
    stance: Stance
    opponent: Stance
    band: UrgencyBand
    apply_stance: Stance
    params: TacticParams


PlanLibrary = Mapping[tuple[Stance, Stance, UrgencyBand], Plan]


def build_plan_library(params: TacticParams) -> dict[tuple[Stance, Stance, UrgencyBand], Plan]:
    library = {}
    for band in UrgencyBand:
        scale = BAND_BETA_SCALE[band]
        betas = {s: b * scale for s, b in params.stance_beta_map.items()}
        for stance in Stance:
            tactic = TacticParams(params.k, betas[stance], betas)
            for opponent in Stance:
                library[(stance, opponent, band)] = Plan(
                    f"{stance.value}/{opponent.value}/{band.value}",
                    stance, opponent, band, stance, tactic,
                )
    return library


def select_plan(library: PlanLibrary, stance: Stance, opponent_class: Stance, band: UrgencyBand) -> Plan:
    try:
        return library[(stance, opponent_class, band)]
    except KeyError:
        raise NoApplicablePlan((stance, opponent_class, band)) from None


# ---------------------------------------------------------------------------
# Messages into and out of an agent
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Commenced:
    session_id: str
    product_id: str
    counterpart: str
    rfq_id: str
    ttl: int
    started_at: int
    issue_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class NoMatchNotice:
    rfq_id: str


@dataclass(frozen=True)
class Coordination:
    group_id: str
    leader: str
    defer: bool


@dataclass(frozen=True)
class Resume:
    product_id: str


@dataclass(frozen=True)
class PostReport:
    mailbox_id: str
    report: RoundReport


@dataclass(frozen=True)
class LeaveAlliance:
    group_id: str
    agent_id: str
    reason: str


@dataclass(frozen=True)
class SubmitRfq:
    rfq: Rfq


Action = Offer | Accept | Terminate | PostReport | LeaveAlliance | SubmitRfq


@dataclass
class AgendaEntry:
    session_id: str
    product_id: str
    role: Side
    status: str


@dataclass
class SessionContext:
    session_id: str
    product_id: str
    counterpart: str
    rfq_id: str
    issues: tuple[IssueSpec, ...]
    desires: DesireSet
    horizon: int
    history_len: int = 0
    offers_made: int = 0
    alpha: float = 0.0
    last_costs: dict[str, float] | None = None
    best_received: Offer | None = None
    opponent_costs: dict[str, list[float]] = field(default_factory=dict)
    closed: bool = False


@dataclass
class Membership:
    group_id: str
    mailbox_id: str
    leader: bool = False


@dataclass
class Listing:
    ad_id: str
    product_id: str
    desires: DesireSet
    capacity: int
    idle_trigger: float = 0.25
    sold: int = 0


class BDIAgent:
    """State and deliberation shared by buyer and seller agents."""

    side: Side

    def __init__(
        self,
        agent_id: str,
        params: TacticParams | None = None,
        enterprise_id: str | None = None,
        fixed_stance: Stance | None = None,
        resource_deadline_factor: float = 0.5,
        epsilon_h: float = EPSILON_HEADSTRONG,
        curvature_tolerance: float = CURVATURE_TOLERANCE,
    ) -> None:
        if not 0.0 <= resource_deadline_factor < 1.0:
            raise ValueError("resource_deadline_factor outside [0, 1)")
        self.agent_id = agent_id
        self.enterprise_id = enterprise_id
        self.params = params or TacticParams()
        self.fixed_stance = fixed_stance
        self.resource_deadline_factor = resource_deadline_factor
        self.epsilon_h = epsilon_h
        self.curvature_tolerance = curvature_tolerance
        self.plan_library = build_plan_library(self.params)
        self.beliefs = Beliefset()
        self.agenda: dict[str, AgendaEntry] = {}
        self.sessions: dict[str, SessionContext] = {}
        self.alliance: Membership | None = None

    # -- hooks --------------------------------------------------------------

    def desires_for(self, product_id: str) -> DesireSet:
        raise NotImplementedError

    def urgency_for(self, product_id: str) -> dict[str, float]:
        raise NotImplementedError

    def _resource_states(self, ctx: SessionContext) -> list[ResourceState]:
        raise NotImplementedError

    # -- negotiation --------------------------------------------------------

    def open_session(self, note: Commenced, own_issues: Sequence[IssueSpec]) -> SessionContext:
        desires = self.desires_for(note.product_id)
        ids = note.issue_ids or [i.issue_id for i in own_issues]
        issues = restrict_issues(own_issues, ids)
        horizon = max(1, min(desires.t_max, note.ttl))
        ctx = SessionContext(note.session_id, note.product_id, note.counterpart, note.rfq_id,
                             issues, desires, horizon, alpha=self.params.k)
        self.sessions[note.session_id] = ctx
        self.agenda[note.session_id] = AgendaEntry(note.session_id, note.product_id, self.side, "open")
        return ctx

    def _deadline(self, ctx: SessionContext) -> int:
        return effective_deadline(max(1, ctx.horizon - 1), self._resource_states(ctx))

    def cooperating(self, clearing_house: ClearingHouse | None) -> bool:
        if self.alliance is None or clearing_house is None:
            return False
        mailbox = clearing_house.get(self.alliance.mailbox_id)
        return mailbox is not None and not mailbox.closed and self.agent_id in mailbox.active

    def cooperation_lambda(self, ctx: SessionContext) -> float:
        urgency = self.urgency_for(ctx.product_id)
        deadline = self._deadline(ctx)
        remaining = 1.0 - min(ctx.offers_made, deadline) / deadline
        inputs = {}
        for issue in ctx.issues:
            history = ctx.opponent_costs.get(issue.issue_id, [])
            try:
                delta = cost_delta(history, len(history)) if history else 0.0
            except ZeroCost:
                delta = 0.0
            inputs[issue.issue_id] = ThresholdInputs(delta, urgency.get(issue.issue_id, 0.0), remaining)
        weights = {i.issue_id: i.weight for i in ctx.issues}
        return cooperation_threshold(inputs, weights).aggregate

    def current_stance(self, ctx: SessionContext, cooperating: bool) -> Stance:
        if self.fixed_stance is not None:
            return self.fixed_stance
        base = classify_stance(self.cooperation_lambda(ctx), ctx.desires.lambda_phi)
        model = self.beliefs.opponents.get(ctx.session_id)
        if cooperating or model is None or len(model.utilities) < 3:
            return base
        return adapt_stance(base, model.estimated_class)

    def _best_achievable(self, ctx: SessionContext) -> float:
        model = self.beliefs.opponents.get(ctx.session_id)
        if model is None or len(model.utilities) < 3:
            return 1.0
        remaining = max(0, ctx.horizon - len(model.utilities))
        projected = model.utilities[-1] + model.concession_rate * remaining
        return min(1.0, max(max(model.utilities), projected))

    def plan_next(self, ctx: SessionContext, cooperating: bool, hold: bool) -> tuple[float | None, Goal]:
        """Concession level of the next own offer (None when out of offers)
        and the session goal behind it."""
        t = ctx.offers_made
        urgency = self.urgency_for(ctx.product_id)
        stance = self.current_stance(ctx, cooperating)
        model = self.beliefs.opponents.get(ctx.session_id)
        opponent = model.estimated_class if model is not None else Stance.LINEAR
        band = urgency_band(math.fsum(i.weight * urgency.get(i.issue_id, 0.0) for i in ctx.issues))
        plan = select_plan(self.plan_library, stance, opponent, band)
        deadline = self._deadline(ctx)
        curve = concession_alpha(min(t, deadline), deadline, plan.params.for_stance(plan.apply_stance))
        goal = derive_goals({ctx.session_id: SessionOutlook(1.0 - curve, self._best_achievable(ctx))},
                            ctx.desires)[ctx.session_id]
        if t >= ctx.horizon:
            return None, goal
        if hold and ctx.last_costs is not None:
            return ctx.alpha, goal
        alpha = max(ctx.alpha, min(curve, 1.0 - goal.target_utility))
        return alpha, goal

    def _costs(self, ctx: SessionContext, alpha: float) -> dict[str, float]:
        return {i.issue_id: i.cost_at(alpha) for i in ctx.issues}

    def _make_offer(self, ctx: SessionContext, alpha: float, tick: int,
                    clearing_house: ClearingHouse | None, goal: Goal) -> list[Action]:
        costs = self._costs(ctx, alpha)
        ctx.history_len += 1
        offer = Offer(ctx.session_id, ctx.history_len, self.agent_id, costs, tick)
        ctx.offers_made += 1
        ctx.alpha = alpha
        ctx.last_costs = costs
        own_u = utility(costs, ctx.issues)
        update_beliefs(self.beliefs, OfferObserved(offer, own_u, False, tick))
        actions: list[Action] = [offer]
        if self.cooperating(clearing_house):
            urgency = self.urgency_for(ctx.product_id)
            score = None
            if ctx.best_received is not None:
                score = urgency_weighted_score(ctx.issues, urgency, ctx.best_received.costs)
            report = RoundReport(self.agent_id, ctx.session_id, offer.round, offer, own_u,
                                 goal.target_utility, score, tick)
            actions.append(PostReport(self.alliance.mailbox_id, report))
        return actions

    def _close(self, ctx: SessionContext, status: str) -> None:
        ctx.closed = True
        entry = self.agenda.get(ctx.session_id)
        if entry is not None:
            entry.status = status

    def respond(self, ctx: SessionContext, offer: Offer, tick: int,
                clearing_house: ClearingHouse | None) -> list[Action]:
        ctx.history_len = offer.round
        u = utility(offer, ctx.issues)
        update_beliefs(self.beliefs, OfferObserved(offer, u, True, tick), ctx.issues,
                       self.epsilon_h, self.curvature_tolerance)
        for issue_id, cost in offer.costs.items():
            ctx.opponent_costs.setdefault(issue_id, []).append(cost)
        if ctx.best_received is None or u > utility(ctx.best_received, ctx.issues):
            ctx.best_received = offer
        cooperating = self.cooperating(clearing_house)
        hold = cooperating and not self.alliance.leader
        alpha, goal = self.plan_next(ctx, cooperating, hold)
        planned = self._costs(ctx, alpha) if alpha is not None else None
        if ctx.offers_made >= ctx.desires.t_min and accepts(
            offer, planned, ctx.issues, ctx.desires.cost_utility_threshold
        ):
            return [Accept(ctx.session_id, self.agent_id, tick)]
        if alpha is None or goal.terminate:
            self._close(ctx, "terminated")
            return [Terminate(ctx.session_id, self.agent_id, tick,
                              "deadline" if alpha is None else "goal")]
        return self._make_offer(ctx, alpha, tick, clearing_house, goal)

    def handle_close(self, msg: Accept | Terminate) -> SessionContext | None:
        ctx = self.sessions.get(msg.session_id)
        if ctx is None or ctx.closed:
            return None
        self._close(ctx, "agreed" if isinstance(msg, Accept) else "terminated")
        return ctx

    def decide(self, inbox: Sequence[object], tick: int,
               clearing_house: ClearingHouse | None = None) -> list[Action]:
        raise NotImplementedError

    def _absorb(self, clearing_house: ClearingHouse | None, tick: int) -> None:
        if not self.cooperating(clearing_house):
            return
        mailbox = clearing_house[self.alliance.mailbox_id]
        share_and_absorb(self.beliefs.peers, mailbox, self.agent_id, tick)

    def _sync_alliance(self, clearing_house: ClearingHouse | None) -> None:
        if self.alliance is not None and not self.cooperating(clearing_house):
            self._drop_alliance()

    def _drop_alliance(self) -> None:
        self.alliance = None
        self.beliefs.peers.clear()


class BuyerAgent(BDIAgent):
    """Agent attached to one enterprise service, buying one product."""

    side = Side.BUYER

    def __init__(
        self,
        agent_id: str,
        product_id: str,
        desires: DesireSet,
        enterprise_id: str | None = None,
        min_reputation: float = 0.0,
        ttl: int = 10,
        target_seller: str | None = None,
        max_attempts: int = 3,
        **kwargs,
    ) -> None:
        super().__init__(agent_id, enterprise_id=enterprise_id, **kwargs)
        self.product_id = product_id
        self.desires = desires
        self.min_reputation = min_reputation
        self.ttl = ttl
        self.target_seller = target_seller
        self.max_attempts = max_attempts
        self.attempts = 0
        self.satisfied = False
        self.deferred = False
        self.pending_rfq: str | None = None
        self._rfq_counter = 0
        self._pending_openings: list[str] = []

    def desires_for(self, product_id: str) -> DesireSet:
        return self.desires

    def urgency_for(self, product_id: str) -> dict[str, float]:
        return self.beliefs.urgency

    def _resource_states(self, ctx: SessionContext) -> list[ResourceState]:
        states = []
        for issue in ctx.issues:
            mu = self.beliefs.urgency.get(issue.issue_id, 0.0)
            util = min(1.0, max(0.0, self.beliefs.readings.get(issue.issue_id, 0.0)))
            states.append(ResourceState(1.0 - util, ctx.desires.trigger(issue.issue_id), 1.0,
                                        1.0 - self.resource_deadline_factor * mu))
        return states

    def observe_resources(self, readings: Mapping[str, float]) -> bool:
        urgency, _ = monitor_resources(readings, self.desires)
        update_beliefs(self.beliefs, ResourceReading(dict(readings), urgency))
        return any(mu > 0 for mu in urgency.values())

    def has_active_agenda(self) -> bool:
        return (self.pending_rfq is not None or self.deferred
                or any(not c.closed for c in self.sessions.values()))

    def make_rfq(self, tick: int) -> Rfq:
        self._rfq_counter += 1
        rfq = Rfq(
            rfq_id=f"{self.agent_id}/rfq{self._rfq_counter}",
            agent_id=self.agent_id,
            enterprise_id=self.enterprise_id,
            product_id=self.product_id,
            issues=self.desires.issues,
            min_reputation=self.min_reputation,
            cost_utility_threshold=self.desires.cost_utility_threshold,
            ttl=self.ttl,
            side=Side.BUYER,
            target_seller=self.target_seller,
            submitted_at=tick,
        )
        self.pending_rfq = rfq.rfq_id
        self.agenda[rfq.rfq_id] = AgendaEntry(rfq.rfq_id, self.product_id, Side.BUYER, "rfq")
        return rfq

    def wants_rfq(self) -> bool:
        if self.satisfied or self.has_active_agenda() or self.attempts >= self.max_attempts:
            return False
        return any(mu > 0 for mu in self.beliefs.urgency.values())

    def _retire_rfq(self, rfq_id: str) -> None:
        self.agenda.pop(rfq_id, None)
        if self.pending_rfq == rfq_id:
            self.pending_rfq = None

    def decide(self, inbox: Sequence[object], tick: int,
               clearing_house: ClearingHouse | None = None) -> list[Action]:
        actions: list[Action] = []
        offers: list[Offer] = []
        defer_group = None
        for msg in inbox:
            if isinstance(msg, Commenced):
                self._retire_rfq(msg.rfq_id)
                self.open_session(msg, self.desires.issues)
                self._pending_openings.append(msg.session_id)
            elif isinstance(msg, MatchAgent):
                entry = self.agenda.get(msg.rfq_id)
                if entry is not None:
                    entry.status = "matched"
            elif isinstance(msg, NoMatchNotice):
                self._retire_rfq(msg.rfq_id)
                self.attempts += 1
            elif isinstance(msg, (Accept, Terminate)):
                ctx = self.handle_close(msg)
                if ctx is not None:
                    self._after_close(ctx, isinstance(msg, Accept), actions)
            elif isinstance(msg, Offer):
                offers.append(msg)
            elif isinstance(msg, CooperateNotice):
                self.alliance = Membership(msg.group_id, msg.mailbox_id)
            elif isinstance(msg, Coordination):
                if self.alliance is not None and self.alliance.group_id == msg.group_id:
                    self.alliance.leader = msg.leader == self.agent_id
                    if msg.defer:
                        defer_group = msg.group_id
            elif isinstance(msg, Resume):
                self.deferred = False

        self._sync_alliance(clearing_house)
        self._absorb(clearing_house, tick)

        if defer_group is not None and self.alliance is not None:
            for ctx in self.sessions.values():
                if not ctx.closed:
                    self._close(ctx, "deferred")
                    actions.append(Terminate(ctx.session_id, self.agent_id, tick, "deferred"))
            self.deferred = True
            actions.append(LeaveAlliance(defer_group, self.agent_id, "deferred"))
            self._drop_alliance()
            offers = []
            self._pending_openings.clear()

        for offer in offers:
            ctx = self.sessions.get(offer.session_id)
            if ctx is None or ctx.closed:
                continue
            out = self.respond(ctx, offer, tick, clearing_house)
            actions.extend(out)
            if isinstance(out[0], Accept):
                self._close(ctx, "agreed")
                self._after_close(ctx, True, actions)
            elif isinstance(out[0], Terminate):
                self._after_close(ctx, False, actions)

        for session_id in self._pending_openings:
            ctx = self.sessions[session_id]
            if ctx.closed or ctx.offers_made:
                continue
            cooperating = self.cooperating(clearing_house)
            alpha, goal = self.plan_next(ctx, cooperating, hold=False)
            actions.extend(self._make_offer(ctx, alpha, tick, clearing_house, goal))
        self._pending_openings.clear()

        if self.wants_rfq():
            actions.append(SubmitRfq(self.make_rfq(tick)))
        return actions

    def _after_close(self, ctx: SessionContext, agreed: bool, actions: list[Action]) -> None:
        if agreed:
            self.satisfied = True
        elif self.agenda[ctx.session_id].status != "deferred":
            self.attempts += 1
        if self.alliance is not None:
            actions.append(LeaveAlliance(self.alliance.group_id, self.agent_id,
                                         "agreed" if agreed else "closed"))
            self._drop_alliance()


class SellerAgent(BDIAgent):
    """Agent selling one or more listed products from finite capacity."""

    side = Side.SELLER

    def __init__(self, agent_id: str, listings: Sequence[Listing], **kwargs) -> None:
        super().__init__(agent_id, **kwargs)
        self.listings = {l.product_id: l for l in listings}

    def desires_for(self, product_id: str) -> DesireSet:
        return self.listings[product_id].desires

    def open_demand(self, product_id: str) -> int:
        return sum(1 for c in self.sessions.values() if not c.closed and c.product_id == product_id)

    def idle_fraction(self, product_id: str) -> float:
        listing = self.listings[product_id]
        committed = listing.sold + self.open_demand(product_id)
        return max(0.0, 1.0 - committed / listing.capacity)

    def urgency_for(self, product_id: str) -> dict[str, float]:
        listing = self.listings[product_id]
        idle = self.idle_fraction(product_id)
        trig = listing.idle_trigger
        mu = 0.0 if trig >= 1.0 else min(1.0, max(0.0, (idle - trig) / (1.0 - trig)))
        return {i.issue_id: mu for i in listing.desires.issues}

    def _resource_states(self, ctx: SessionContext) -> list[ResourceState]:
        listing = self.listings[ctx.product_id]
        mu = next(iter(self.urgency_for(ctx.product_id).values()))
        available = min(listing.capacity, max(0, listing.capacity - listing.sold))
        return [ResourceState(available, listing.idle_trigger, listing.capacity,
                              1.0 - self.resource_deadline_factor * mu)]

    def sold_out(self, product_id: str, session_id: str | None = None) -> bool:
        """True when no unit is left for ``session_id``: units sold plus
        live offers in other open sessions (any of which the buyer may
        still accept) already cover the capacity."""
        listing = self.listings[product_id]
        committed = sum(1 for c in self.sessions.values()
                        if not c.closed and c.product_id == product_id
                        and c.session_id != session_id and c.offers_made > 0)
        return listing.sold + committed >= listing.capacity

    def decide(self, inbox: Sequence[object], tick: int,
               clearing_house: ClearingHouse | None = None) -> list[Action]:
        actions: list[Action] = []
        offers: list[Offer] = []
        for msg in inbox:
            if isinstance(msg, Commenced):
                self.open_session(msg, self.listings[msg.product_id].desires.issues)
            elif isinstance(msg, (Accept, Terminate)):
                ctx = self.handle_close(msg)
                if ctx is not None and isinstance(msg, Accept):
                    self.listings[ctx.product_id].sold += 1
            elif isinstance(msg, Offer):
                offers.append(msg)
        for offer in offers:
            ctx = self.sessions.get(offer.session_id)
            if ctx is None or ctx.closed:
                continue
            if self.sold_out(ctx.product_id, ctx.session_id):
                self._close(ctx, "terminated")
                actions.append(Terminate(ctx.session_id, self.agent_id, tick, "sold_out"))
                continue
            out = self.respond(ctx, offer, tick, None)
            actions.extend(out)
            if isinstance(out[0], Accept):
                self._close(ctx, "agreed")
                self.listings[ctx.product_id].sold += 1
        return actions


def issues_for_session(agent: BDIAgent, product_id: str, issue_ids: Sequence[str]) -> tuple[IssueSpec, ...]:
    return restrict_issues(agent.desires_for(product_id).issues, issue_ids)


Inbound = Message | Commenced | MatchAgent | NoMatchNotice | CooperateNotice | Coordination | Resume
