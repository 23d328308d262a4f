"""Marketplace services: advertisement repository, RFQ matchmaking, the
negotiation protocol state machine, the transaction statistics store and
the behavior watchdog that derives reputation and behavior indices."""

from __future__ import annotations

import bisect
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Protocol

from .errors import (
    DuplicateAdId,
    DuplicateRecord,
    MissingIssue,
    NoMatch,
    OutOfTurn,
    PartyUnavailable,
    SessionClosed,
    SessionConflict,
    SessionStillOpen,
    UnknownAgent,
)
from .model import (
    MARKETPLACE_ID,
    Accept,
    IssueSpec,
    Message,
    Offer,
    Side,
    Terminate,
    utility,
)

SIMULATION_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)
BEHAVIOR_FLOOR = 1e-6
PRIOR_REPUTATION = 0.5


def tick_to_utc(tick: int) -> str:
    """Wall-clock stamp derived from a simulation tick (one second per tick)."""
    return (SIMULATION_EPOCH + timedelta(seconds=tick)).isoformat().replace("+00:00", "Z")


def restrict_issues(issues: Sequence[IssueSpec], issue_ids: Iterable[str]) -> tuple[IssueSpec, ...]:
    """The subset of ``issues`` named by ``issue_ids`` with weights renormalized."""
    wanted = set(issue_ids)
    chosen = [i for i in issues if i.issue_id in wanted]
    missing = wanted - {i.issue_id for i in chosen}
    if missing:
        raise MissingIssue(sorted(missing))
    total = math.fsum(i.weight for i in chosen)
    if len(chosen) == len(issues) or total <= 0:
        return tuple(chosen)
    return tuple(
        IssueSpec(i.issue_id, i.weight / total, i.ideal_cost, i.reservation_cost,
                  i.t_min, i.t_max, i.name)
        for i in chosen
    )


# ---------------------------------------------------------------------------
# Advertisement Repository
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Advertisement:
    ad_id: str
    agent_id: str
    product_id: str
    side: Side
    issues: tuple[IssueSpec, ...]
    posted_at: int = 0
    capacity: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "issues", tuple(self.issues))

    @property
    def issue_ids(self) -> frozenset[str]:
        return frozenset(i.issue_id for i in self.issues)


class AdvertisementRepository:
    """In-memory store of advertisements, indexed by (product, side) and
    kept in (posted_at, ad_id) order."""

    def __init__(self) -> None:
        self._ads: dict[str, Advertisement] = {}
        self._agents: set[str] = set()
        self._index: dict[tuple[str, Side], list[tuple[int, str]]] = {}

    def register_agent(self, agent_id: str) -> None:
        self._agents.add(agent_id)

    def publish(self, ad: Advertisement) -> str:
        if ad.agent_id not in self._agents:
            raise UnknownAgent(ad.agent_id)
        if not ad.issues:
            raise ValueError(f"advertisement {ad.ad_id} has no issues")
        existing = self._ads.get(ad.ad_id)
        if existing is not None:
            if existing == ad:
                return ad.ad_id
            raise DuplicateAdId(ad.ad_id)
        self._ads[ad.ad_id] = ad
        bisect.insort(self._index.setdefault((ad.product_id, ad.side), []), (ad.posted_at, ad.ad_id))
        return ad.ad_id

    def withdraw(self, ad_id: str) -> None:
        ad = self._ads.pop(ad_id)
        self._index[(ad.product_id, ad.side)].remove((ad.posted_at, ad.ad_id))

    def get(self, ad_id: str) -> Advertisement:
        return self._ads[ad_id]

    def __contains__(self, ad_id: str) -> bool:
        return ad_id in self._ads

    def __len__(self) -> int:
        return len(self._ads)

    def __iter__(self):
        return iter(sorted(self._ads.values(), key=lambda a: (a.posted_at, a.ad_id)))

    def query_advertisements(
        self,
        product_id: str,
        side: Side | None = None,
        issues: Iterable[str] = (),
    ) -> list[Advertisement]:
        wanted = frozenset(issues)
        sides = (side,) if side is not None else (Side.BUYER, Side.SELLER)
        keys = []
        for s in sides:
            keys.extend(self._index.get((product_id, s), ()))
        keys.sort()
        out = []
        for _, ad_id in keys:
            ad = self._ads[ad_id]
            if wanted <= ad.issue_ids:
                out.append(ad)
        return out

    query = query_advertisements


# ---------------------------------------------------------------------------
# Alliance Engine (matchmaking)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rfq:
    rfq_id: str
    agent_id: str
    enterprise_id: str | None
    product_id: str
    issues: tuple[IssueSpec, ...]
    min_reputation: float = 0.0
    cost_utility_threshold: float = 0.0
    ttl: int = 10
    side: Side = Side.BUYER
    target_seller: str | None = None
    submitted_at: int = 0
    # filled in by the Alliance Engine once a counterparty is found
    seller_id: str | None = None
    ad_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "issues", tuple(self.issues))
        if self.ttl <= 0:
            raise ValueError("ttl must be positive")
        if not 0.0 <= self.min_reputation <= 1.0:
            raise ValueError("min_reputation outside [0, 1]")
        if not 0.0 <= self.cost_utility_threshold <= 1.0:
            raise ValueError("cost_utility_threshold outside [0, 1]")

    @property
    def issue_ids(self) -> frozenset[str]:
        return frozenset(i.issue_id for i in self.issues)


@dataclass(frozen=True)
class MatchAgent:
    """The ``matchAgent`` notification sent to both parties."""

    rfq_id: str
    buyer_id: str
    seller_id: str
    ad_id: str
    product_id: str
    reputation: float


def match_key(ad: Advertisement, reputation: float) -> tuple:
    return (-reputation, ad.posted_at, ad.ad_id)


def match_agents(
    rfq: Rfq,
    repo: AdvertisementRepository,
    profiles: Mapping[str, AgentProfile],
) -> MatchAgent:
    """Pick the best counterparty advertisement for ``rfq``.

    Eligible ads are for the same product on the opposite side, cover every
    requested issue, and belong to an agent whose reputation reaches
    ``rfq.min_reputation``. Ties break on highest reputation, then earliest
    posting, then smallest ad id.

    Raises:
        NoMatch: nothing qualifies.
    """
    best = None
    best_key = None
    for ad in repo.query_advertisements(rfq.product_id, rfq.side.opposite, rfq.issue_ids):
        if ad.agent_id == rfq.agent_id:
            continue
        if rfq.target_seller is not None and ad.agent_id != rfq.target_seller:
            continue
        profile = profiles.get(ad.agent_id)
        rep = profile.reputation if profile is not None else PRIOR_REPUTATION
        if rep < rfq.min_reputation:
            continue
        key = match_key(ad, rep)
        if best_key is None or key < best_key:
            best, best_key = ad, key
    if best is None:
        raise NoMatch(rfq.rfq_id)
    if rfq.side is Side.BUYER:
        buyer, seller = rfq.agent_id, best.agent_id
    else:
        buyer, seller = best.agent_id, rfq.agent_id
    return MatchAgent(rfq.rfq_id, buyer, seller, best.ad_id, rfq.product_id, -best_key[0])


# ---------------------------------------------------------------------------
# Negotiation Engine
# ---------------------------------------------------------------------------

class SessionState(str, Enum):
    OPEN = "open"
    AGREED = "agreed"
    TERMINATED = "terminated"


@dataclass
class NegotiationSession:
    session_id: str
    buyer_id: str
    seller_id: str
    product_id: str
    buyer_issues: tuple[IssueSpec, ...]
    seller_issues: tuple[IssueSpec, ...]
    ttl: int
    started_at: int = 0
    history: list[Offer] = field(default_factory=list)
    state: SessionState = SessionState.OPEN
    outcome_costs: dict[str, float] | None = None
    outcome_utilities: dict[str, float] | None = None
    closed_at: int | None = None
    closed_by: str | None = None
    close_reason: str = ""

    @property
    def issue_ids(self) -> tuple[str, ...]:
        return tuple(sorted(i.issue_id for i in self.buyer_issues))

    @property
    def participants(self) -> tuple[str, str]:
        return (self.buyer_id, self.seller_id)

    @property
    def started_utc(self) -> str:
        return tick_to_utc(self.started_at)

    @property
    def next_sender(self) -> str:
        return self.buyer_id if len(self.history) % 2 == 0 else self.seller_id

    @property
    def rounds_used(self) -> int:
        return (len(self.history) + 1) // 2

    @property
    def deadline_tick(self) -> int:
        # opening offer lands one tick after commencement, one ply per tick
        return self.started_at + 2 * self.ttl + 1

    @property
    def is_open(self) -> bool:
        return self.state is SessionState.OPEN

    def counterpart(self, agent_id: str) -> str:
        return self.seller_id if agent_id == self.buyer_id else self.buyer_id

    def issues_for(self, agent_id: str) -> tuple[IssueSpec, ...]:
        return self.buyer_issues if agent_id == self.buyer_id else self.seller_issues

    def _close(self, state: SessionState, now: int, by: str, reason: str) -> None:
        self.state = state
        self.closed_at = now
        self.closed_by = by
        self.close_reason = reason

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "buyer_id": self.buyer_id,
            "seller_id": self.seller_id,
            "product_id": self.product_id,
            "issues": list(self.issue_ids),
            "ttl": self.ttl,
            "started_at": self.started_at,
            "started_utc": self.started_utc,
            "state": self.state.value,
            "history": [offer_to_dict(o) for o in self.history],
            "outcome_costs": self.outcome_costs,
            "outcome_utilities": self.outcome_utilities,
            "closed_at": self.closed_at,
            "closed_by": self.closed_by,
            "close_reason": self.close_reason,
        }


def offer_to_dict(offer: Offer) -> dict:
    return {
        "session_id": offer.session_id,
        "round": offer.round,
        "sender": offer.sender,
        "costs": dict(sorted(offer.costs.items())),
        "sent_at": offer.sent_at,
    }


class Responder(Protocol):
    def respond(self, session: NegotiationSession, offer: Offer, now: int) -> Message: ...


def step_negotiation(
    session: NegotiationSession,
    incoming: Message,
    now: int,
    responder: Responder | None = None,
) -> tuple[NegotiationSession, Message | None]:
    """Apply one protocol message to ``session``.

    Offers alternate buyer, seller, buyer, ... starting with the buyer;
    ``Offer.round`` is the 1-based position in the history and the
    negotiation round is ``(position + 1) // 2``. An offer that would open
    round ``ttl + 1``, or any message arriving after the session deadline,
    terminates the session and a marketplace ``Terminate`` is returned.
    Otherwise, for an offer, ``responder`` (the receiving party) is asked
    for its reply, which the caller feeds back in as the next message.

    Raises:
        SessionClosed: the session is no longer open.
        OutOfTurn: the sender is not a participant or it is not its turn.
        MissingIssue: the offer does not price exactly the session issues.
    """
    if session.state is not SessionState.OPEN:
        raise SessionClosed(session.session_id)
    sender = incoming.sender
    if sender not in session.participants and not (
        isinstance(incoming, Terminate) and sender == MARKETPLACE_ID
    ):
        raise OutOfTurn(f"{sender} is not a participant of {session.session_id}")

    if isinstance(incoming, Terminate):
        session._close(SessionState.TERMINATED, now, sender, incoming.reason or "terminated")
        return session, None

    if now > session.deadline_tick:
        session._close(SessionState.TERMINATED, now, MARKETPLACE_ID, "deadline")
        return session, Terminate(session.session_id, MARKETPLACE_ID, now, "deadline")

    if sender != session.next_sender:
        raise OutOfTurn(f"{sender} sent out of turn in {session.session_id}")

    if isinstance(incoming, Accept):
        if not session.history:
            raise OutOfTurn("nothing to accept")
        final = dict(session.history[-1].costs)
        session.outcome_costs = final
        session.outcome_utilities = {
            Side.BUYER.value: utility(final, session.buyer_issues),
            Side.SELLER.value: utility(final, session.seller_issues),
        }
        session._close(SessionState.AGREED, now, sender, "accepted")
        return session, None

    if incoming.session_id != session.session_id:
        raise OutOfTurn("offer addressed to another session")
    if incoming.round != len(session.history) + 1:
        raise OutOfTurn(f"expected offer #{len(session.history) + 1}, got #{incoming.round}")
    if set(incoming.costs) != set(session.issue_ids):
        raise MissingIssue(sorted(set(incoming.costs) ^ set(session.issue_ids)))
    if (incoming.round + 1) // 2 > session.ttl:
        session._close(SessionState.TERMINATED, now, MARKETPLACE_ID, "ttl")
        return session, Terminate(session.session_id, MARKETPLACE_ID, now, "ttl")
    session.history.append(incoming)
    if responder is None:
        return session, None
    return session, responder.respond(session, incoming, now)


class NegotiationEngine:
    """Owns every negotiation session; at most one open session per
    (buyer, seller, product)."""

    def __init__(self) -> None:
        self.sessions: dict[str, NegotiationSession] = {}
        self._agents: set[str] = set()
        self._active: dict[tuple[str, str, str], str] = {}
        self._counter = 0

    def register_agent(self, agent_id: str) -> None:
        self._agents.add(agent_id)

    def commence_negotiation(
        self,
        buyer_id: str,
        seller_id: str,
        product_id: str,
        buyer_issues: Sequence[IssueSpec],
        seller_issues: Sequence[IssueSpec],
        ttl: int,
        now: int,
    ) -> NegotiationSession:
        for party in (buyer_id, seller_id):
            if party not in self._agents:
                raise PartyUnavailable(party)
        if ttl <= 0:
            raise ValueError("ttl must be positive")
        key = (buyer_id, seller_id, product_id)
        if key in self._active:
            raise SessionConflict(f"{key} already negotiating in {self._active[key]}")
        issue_ids = [i.issue_id for i in buyer_issues]
        self._counter += 1
        session = NegotiationSession(
            session_id=f"s{self._counter:05d}",
            buyer_id=buyer_id,
            seller_id=seller_id,
            product_id=product_id,
            buyer_issues=tuple(buyer_issues),
            seller_issues=restrict_issues(seller_issues, issue_ids),
            ttl=ttl,
            started_at=now,
        )
        self.sessions[session.session_id] = session
        self._active[key] = session.session_id
        return session

    def step(
        self,
        session_id: str,
        incoming: Message,
        now: int,
        responder: Responder | None = None,
    ) -> tuple[NegotiationSession, Message | None]:
        session = self.sessions[session_id]
        try:
            return step_negotiation(session, incoming, now, responder)
        finally:
            if not session.is_open:
                self._active.pop((session.buyer_id, session.seller_id, session.product_id), None)

    def open_sessions(self) -> list[NegotiationSession]:
        return [s for s in self.sessions.values() if s.is_open]


# ---------------------------------------------------------------------------
# Statistics store and Behavior Watchdog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransactionRecord:
    session_id: str
    product_id: str
    buyer_id: str
    seller_id: str
    outcome: str
    rounds_used: int
    offers: int
    started_at: int
    closed_at: int
    closed_by: str
    reason: str
    costs: dict[str, float] | None
    utilities: dict[str, float] | None
    concessions: dict[str, float]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> TransactionRecord:
        return cls(**data)


def _concession(session: NegotiationSession, agent_id: str) -> float:
    own = [o for o in session.history if o.sender == agent_id]
    if len(own) < 2:
        return 0.0
    issues = session.issues_for(agent_id)
    return max(0.0, utility(own[0], issues) - utility(own[-1], issues))


class StatisticsStore:
    """Append-only log of closed sessions."""

    def __init__(self) -> None:
        self._records: list[TransactionRecord] = []
        self._ids: set[str] = set()

    @property
    def records(self) -> tuple[TransactionRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def append(self, record: TransactionRecord) -> TransactionRecord:
        if record.session_id in self._ids:
            raise DuplicateRecord(record.session_id)
        self._ids.add(record.session_id)
        self._records.append(record)
        return record

    def record_transaction(self, session: NegotiationSession) -> TransactionRecord:
        if session.is_open:
            raise SessionStillOpen(session.session_id)
        if session.session_id in self._ids:
            raise DuplicateRecord(session.session_id)
        record = TransactionRecord(
            session_id=session.session_id,
            product_id=session.product_id,
            buyer_id=session.buyer_id,
            seller_id=session.seller_id,
            outcome=session.state.value,
            rounds_used=session.rounds_used,
            offers=len(session.history),
            started_at=session.started_at,
            closed_at=session.closed_at,
            closed_by=session.closed_by,
            reason=session.close_reason,
            costs=dict(sorted(session.outcome_costs.items())) if session.outcome_costs else None,
            utilities=dict(session.outcome_utilities) if session.outcome_utilities else None,
            concessions={
                session.buyer_id: _concession(session, session.buyer_id),
                session.seller_id: _concession(session, session.seller_id),
            },
        )
        return self.append(record)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"
            for r in self._records
        )

    @classmethod
    def from_jsonl(cls, text: str) -> StatisticsStore:
        store = cls()
        for line in text.splitlines():
            if line.strip():
                store.append(TransactionRecord.from_dict(json.loads(line)))
        return store


def record_transaction(store: StatisticsStore, session: NegotiationSession) -> TransactionRecord:
    return store.record_transaction(session)


@dataclass
class AgentProfile:
    agent_id: str
    enterprise_id: str | None = None
    negotiations_completed: int = 0
    agreements_reached: int = 0
    total_concession: float = 0.0

    def __post_init__(self) -> None:
        if self.negotiations_completed < 0 or self.agreements_reached < 0 or self.total_concession < 0:
            raise ValueError("profile counters must be non-negative")
        if self.agreements_reached > self.negotiations_completed:
            raise ValueError("more agreements than negotiations")

    @property
    def reputation(self) -> float:
        return reputation_index(self)

    @property
    def behavior_index(self) -> float:
        return behavior_index(self)

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "enterprise_id": self.enterprise_id,
            "negotiations_completed": self.negotiations_completed,
            "agreements_reached": self.agreements_reached,
            "total_concession": self.total_concession,
            "reputation": self.reputation,
            "behavior_index": self.behavior_index,
        }


def reputation_index(profile: AgentProfile) -> float:
    """Laplace-smoothed agreement rate."""
    return (profile.agreements_reached + 1) / (profile.negotiations_completed + 2)


def behavior_index(profile: AgentProfile) -> float:
    """Mean utility conceded per completed negotiation, floored above zero."""
    return max(BEHAVIOR_FLOOR, profile.total_concession / max(1, profile.negotiations_completed))


class BehaviorWatchdog:
    """Keeps one profile per agent, updated from closed-session records."""

    def __init__(self) -> None:
        self.profiles: dict[str, AgentProfile] = {}

    def ensure(self, agent_id: str, enterprise_id: str | None = None, **counters) -> AgentProfile:
        profile = self.profiles.get(agent_id)
        if profile is None:
            profile = self.profiles[agent_id] = AgentProfile(agent_id, enterprise_id, **counters)
        return profile

    def observe(self, record: TransactionRecord) -> None:
        for agent_id in (record.buyer_id, record.seller_id):
            p = self.ensure(agent_id)
            p.negotiations_completed += 1
            if record.outcome == SessionState.AGREED.value:
                p.agreements_reached += 1
            p.total_concession += record.concessions.get(agent_id, 0.0)
