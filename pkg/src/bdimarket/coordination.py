"""Enterprise-side coordination of self-competing agents.

The Alliance Sentry watches matched RFQs. When two or more agents of one
enterprise end up negotiating the same product with the same seller it
registers an alliance, opens a mailbox in the Clearing House and sends
each member a cooperate notice. Members post a round report after every
offer; each coordination step lets only the best-placed member raise its
bid and asks the worst-placed one to step aside until the alliance is
down to a single agent.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, MutableMapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

from .errors import AlreadyCooperating, MailboxClosed, NotMember, NotParticipant
from .marketplace import Rfq
from .model import IssueSpec, Offer


class Mode(str, Enum):
    BLOCKING = "blocking"
    NON_BLOCKING = "non_blocking"


@dataclass(frozen=True)
class RoundReport:
    """What a member shares after each of its offers.

    ``score`` is the urgency-weighted utility of the best offer the member
    has received so far, or None before it has received any.
    """

    sender: str
    session_id: str
    round: int
    offer: Offer
    utility: float
    expectations: float
    score: float | None = None
    sent_at: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.utility <= 1.0:
            raise ValueError(f"report utility {self.utility!r} outside [0, 1]")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.sender, self.session_id, self.round)


@dataclass(frozen=True)
class CooperateNotice:
    agent_id: str
    product_id: str
    advertisement_id: str
    mailbox_id: str
    group_id: str = ""

    def __post_init__(self) -> None:
        if not all((self.agent_id, self.product_id, self.advertisement_id, self.mailbox_id)):
            raise ValueError("cooperate notice needs all four identifiers")


@dataclass
class SendTicket:
    report: RoundReport
    mode: Mode
    sent_at: int
    waiting_on: set[str] = field(default_factory=set)
    completed_at: int | None = None
    aborted: bool = False

    @property
    def done(self) -> bool:
        return self.completed_at is not None


@dataclass
class ReceiveTicket:
    agent_id: str
    requested_at: int
    report: RoundReport | None = None
    completed_at: int | None = None

    @property
    def done(self) -> bool:
        return self.completed_at is not None


class Mailbox:
    """FIFO queue shared by a fixed set of participants.

    Every participant reads through its own cursor, so each message is
    seen at most once per reader; a reader never receives its own
    messages. A blocking send completes once every other active
    participant has read the message; a blocking receive on an empty
    queue completes when the next message arrives or the mailbox closes.
    """

    def __init__(self, mailbox_id: str, participants: Iterable[str]) -> None:
        self.mailbox_id = mailbox_id
        self.participants: set[str] = set(participants)
        self.active: set[str] = set(self.participants)
        self.queue: list[RoundReport] = []
        self.cursors: dict[str, int] = {p: 0 for p in self.participants}
        self.closed = False
        self._tickets: list[SendTicket] = []
        self._waiters: dict[str, ReceiveTicket] = {}

    def admit(self, agent_id: str) -> None:
        if self.closed:
            raise MailboxClosed(self.mailbox_id)
        self.participants.add(agent_id)
        self.active.add(agent_id)
        # a latecomer starts at the head so it learns the round history
        self.cursors.setdefault(agent_id, 0)

    def _check(self, agent_id: str) -> None:
        if self.closed:
            raise MailboxClosed(self.mailbox_id)
        if agent_id not in self.active:
            raise NotParticipant(f"{agent_id} is not a participant of {self.mailbox_id}")

    def _mark_read(self, index: int, reader: str, now: int) -> None:
        ticket = self._tickets[index]
        ticket.waiting_on.discard(reader)
        if not ticket.waiting_on and ticket.completed_at is None:
            ticket.completed_at = now

    def _next_unread(self, agent_id: str) -> int | None:
        i = self.cursors[agent_id]
        while i < len(self.queue) and self.queue[i].sender == agent_id:
            i += 1
        self.cursors[agent_id] = i
        return i if i < len(self.queue) else None

    def send(self, report: RoundReport, mode: Mode = Mode.NON_BLOCKING, now: int = 0) -> SendTicket:
        self._check(report.sender)
        index = len(self.queue)
        self.queue.append(report)
        ticket = SendTicket(report, mode, now, set(self.active) - {report.sender})
        self._tickets.append(ticket)
        if mode is Mode.NON_BLOCKING:
            ticket.completed_at = now
        for reader in sorted(self._waiters):
            if self._next_unread(reader) == index:
                waiter = self._waiters.pop(reader)
                self.cursors[reader] = index + 1
                waiter.report, waiter.completed_at = report, now
                self._mark_read(index, reader, now)
        if not ticket.waiting_on and ticket.completed_at is None:
            ticket.completed_at = now
        return ticket

    def receive(
        self, agent_id: str, mode: Mode = Mode.NON_BLOCKING, now: int = 0
    ) -> RoundReport | ReceiveTicket | None:
        """Oldest unread message for ``agent_id``.

        Non-blocking returns the report or None. Blocking always returns a
        ReceiveTicket, already completed when a message was available.
        """
        if agent_id not in self.participants:
            raise NotParticipant(f"{agent_id} is not a participant of {self.mailbox_id}")
        self._check(agent_id)
        index = self._next_unread(agent_id)
        report = None
        if index is not None:
            report = self.queue[index]
            self.cursors[agent_id] = index + 1
            self._mark_read(index, agent_id, now)
        if mode is Mode.NON_BLOCKING:
            return report
        ticket = ReceiveTicket(agent_id, now)
        if report is not None:
            ticket.report, ticket.completed_at = report, now
        else:
            self._waiters[agent_id] = ticket
        return ticket

    def unread(self, agent_id: str) -> int:
        i = self.cursors.get(agent_id, 0)
        return sum(1 for r in self.queue[i:] if r.sender != agent_id)

    def latest(self, agent_id: str) -> RoundReport | None:
        for report in reversed(self.queue):
            if report.sender == agent_id:
                return report
        return None

    def deactivate(self, agent_id: str, now: int = 0) -> None:
        self.active.discard(agent_id)
        self._waiters.pop(agent_id, None)
        for ticket in self._tickets:
            if agent_id in ticket.waiting_on:
                ticket.waiting_on.discard(agent_id)
                if not ticket.waiting_on and ticket.completed_at is None:
                    ticket.completed_at = now

    def close(self, now: int = 0) -> None:
        self.closed = True
        for waiter in self._waiters.values():
            waiter.completed_at = now
        self._waiters.clear()
        for ticket in self._tickets:
            if ticket.completed_at is None:
                ticket.completed_at = now
                ticket.aborted = True


def mailbox_send(mailbox: Mailbox, report: RoundReport, mode: Mode = Mode.NON_BLOCKING,
                 now: int = 0) -> SendTicket:
    return mailbox.send(report, mode, now)


def mailbox_receive(mailbox: Mailbox, agent_id: str, mode: Mode = Mode.NON_BLOCKING,
                    now: int = 0):
    return mailbox.receive(agent_id, mode, now)


class ClearingHouse:
    """Pool of mailboxes keyed by id."""

    def __init__(self) -> None:
        self.mailboxes: dict[str, Mailbox] = {}

    def create_mailbox(self, participants: Iterable[str]) -> Mailbox:
        mailbox = Mailbox(f"mbx{len(self.mailboxes) + 1:04d}", participants)
        self.mailboxes[mailbox.mailbox_id] = mailbox
        return mailbox

    def __getitem__(self, mailbox_id: str) -> Mailbox:
        return self.mailboxes[mailbox_id]

    def get(self, mailbox_id: str | None) -> Mailbox | None:
        return self.mailboxes.get(mailbox_id) if mailbox_id else None


def share_and_absorb(
    peer_beliefs: MutableMapping[tuple[str, str, int], RoundReport],
    mailbox: Mailbox,
    agent_id: str,
    now: int = 0,
) -> list[RoundReport]:
    """Drain every unread report into ``peer_beliefs`` (keyed upsert)."""
    absorbed = []
    while True:
        report = mailbox.receive(agent_id, Mode.NON_BLOCKING, now)
        if report is None:
            return absorbed
        peer_beliefs[report.key] = report
        absorbed.append(report)


# ---------------------------------------------------------------------------
# Alliance Sentry and Registry
# ---------------------------------------------------------------------------

@dataclass
class AllianceGroup:
    group_id: str
    enterprise_id: str
    members: list[str]
    opposing_agent_id: str
    product_id: str
    issue_ids: frozenset[str] = frozenset()
    rfq_ids: list[str] = field(default_factory=list)
    advertisement_ids: dict[str, str] = field(default_factory=dict)
    mailbox_id: str | None = None
    active_members: list[str] = field(default_factory=list)
    departures: list[tuple[str, str, int]] = field(default_factory=list)
    dissolved: bool = False

    def __post_init__(self) -> None:
        if len(set(self.members)) < 2:
            raise ValueError("an alliance needs at least two members")
        if not self.active_members:
            self.active_members = list(self.members)

    @property
    def key(self) -> tuple:
        return (self.enterprise_id, self.product_id, self.opposing_agent_id, self.issue_ids)


def competition_key(rfq: Rfq, enterprise_id: str | None = None) -> tuple | None:
    enterprise = enterprise_id or rfq.enterprise_id
    seller = rfq.seller_id or rfq.target_seller
    if enterprise is None or seller is None:
        return None
    return (enterprise, rfq.product_id, seller, rfq.issue_ids)


def detect_self_competition(
    rfq_stream: Iterable[Rfq],
    enterprise_of: Mapping[str, str] | None = None,
) -> list[AllianceGroup]:
    """Group RFQs with identical (enterprise, product, opposing seller,
    issue set); every group with two or more distinct agents is returned,
    in order of its first RFQ."""
    buckets: dict[tuple, list[Rfq]] = {}
    for rfq in rfq_stream:
        enterprise = (enterprise_of or {}).get(rfq.agent_id, rfq.enterprise_id)
        key = competition_key(rfq, enterprise)
        if key is None:
            continue
        bucket = buckets.setdefault(key, [])
        if all(r.agent_id != rfq.agent_id for r in bucket):
            bucket.append(rfq)
    groups = []
    for key, rfqs in buckets.items():
        if len(rfqs) < 2:
            continue
        groups.append(AllianceGroup(
            group_id=f"grp{len(groups) + 1:04d}",
            enterprise_id=key[0],
            members=[r.agent_id for r in rfqs],
            opposing_agent_id=key[2],
            product_id=key[1],
            issue_ids=key[3],
            rfq_ids=[r.rfq_id for r in rfqs],
            advertisement_ids={r.agent_id: r.ad_id or "" for r in rfqs},
        ))
    return groups


def issue_cooperate(group: AllianceGroup, clearing_house: ClearingHouse) -> list[CooperateNotice]:
    """Open the group's mailbox and address one notice to each member."""
    if group.mailbox_id is not None:
        raise AlreadyCooperating(group.group_id)
    mailbox = clearing_house.create_mailbox(group.active_members)
    group.mailbox_id = mailbox.mailbox_id
    return [
        CooperateNotice(m, group.product_id, group.advertisement_ids.get(m) or group.product_id,
                        mailbox.mailbox_id, group.group_id)
        for m in group.active_members
    ]


def leave_alliance(
    group: AllianceGroup,
    agent_id: str,
    reason: str,
    clearing_house: ClearingHouse | None = None,
    now: int = 0,
) -> AllianceGroup:
    """Remove ``agent_id`` from the active members. With one member left
    the alliance dissolves and its mailbox closes."""
    if agent_id not in group.active_members:
        raise NotMember(f"{agent_id} is not an active member of {group.group_id}")
    group.active_members.remove(agent_id)
    group.departures.append((agent_id, reason, now))
    mailbox = clearing_house.get(group.mailbox_id) if clearing_house else None
    if mailbox is not None:
        mailbox.deactivate(agent_id, now)
    if len(group.active_members) <= 1:
        group.dissolved = True
        if mailbox is not None:
            mailbox.close(now)
    return group


def urgency_weighted_score(
    issues: Sequence[IssueSpec],
    urgency: Mapping[str, float],
    costs: Mapping[str, float],
) -> float:
    """sum_i W_i * mu_i * u_i for the offer ``costs``."""
    return math.fsum(i.weight * urgency.get(i.issue_id, 0.0) * i.score(costs[i.issue_id])
                     for i in issues)


def select_deferring_member(scores: Mapping[str, float]) -> str:
    """The member that steps aside: lowest score, ties to the smallest id."""
    return min(scores, key=lambda a: (scores[a], a))


def select_leader(scores: Mapping[str, float]) -> str:
    return max(scores, key=lambda a: (scores[a], a))


@dataclass(frozen=True)
class CoordinationDecision:
    group_id: str
    leader: str
    deferring: str | None


def coordination_step(group: AllianceGroup, mailbox: Mailbox) -> CoordinationDecision | None:
    """Pick the leader (only it may raise its bid this tick) and, once every
    active member has reported a received offer, the member that defers."""
    if group.dissolved or len(group.active_members) < 2:
        return None
    latest = {m: mailbox.latest(m) for m in group.active_members}
    ranking = {m: (r.score if r is not None and r.score is not None else -1.0)
               for m, r in latest.items()}
    leader = select_leader(ranking)
    ready = all(r is not None and r.score is not None for r in latest.values())
    deferring = select_deferring_member(ranking) if ready else None
    return CoordinationDecision(group.group_id, leader, deferring)


class AllianceSentry:
    """Stateful watchdog over the stream of matched RFQs of every enterprise."""

    def __init__(self, clearing_house: ClearingHouse) -> None:
        self.clearing_house = clearing_house
        self.registry: dict[str, AllianceGroup] = {}
        self._active_rfqs: dict[str, Rfq] = {}
        self._grouped: dict[str, str] = {}

    def _new_group_id(self) -> str:
        return f"grp{len(self.registry) + 1:04d}"

    def observe(self, rfq: Rfq) -> tuple[AllianceGroup | None, list[CooperateNotice]]:
        """Track a matched RFQ; returns the alliance it joined (if any) and
        the cooperate notices to deliver."""
        self._active_rfqs[rfq.rfq_id] = rfq
        key = competition_key(rfq)
        if key is None:
            return None, []
        for group in self.registry.values():
            if not group.dissolved and group.key == key and rfq.agent_id not in group.active_members:
                mailbox = self.clearing_house[group.mailbox_id]
                mailbox.admit(rfq.agent_id)
                group.members.append(rfq.agent_id)
                group.active_members.append(rfq.agent_id)
                group.rfq_ids.append(rfq.rfq_id)
                group.advertisement_ids[rfq.agent_id] = rfq.ad_id or ""
                self._grouped[rfq.rfq_id] = group.group_id
                return group, [CooperateNotice(rfq.agent_id, rfq.product_id, rfq.ad_id or rfq.product_id,
                                               group.mailbox_id, group.group_id)]
        candidates = [r for r in self._active_rfqs.values() if r.rfq_id not in self._grouped]
        found = [g for g in detect_self_competition(candidates) if g.key == key]
        if not found:
            return None, []
        group = found[0]
        group.group_id = self._new_group_id()
        self.registry[group.group_id] = group
        for rfq_id in group.rfq_ids:
            self._grouped[rfq_id] = group.group_id
        return group, issue_cooperate(group, self.clearing_house)

    def rfq_closed(self, rfq_id: str) -> None:
        self._active_rfqs.pop(rfq_id, None)

    def group_of(self, agent_id: str) -> AllianceGroup | None:
        for group in self.registry.values():
            if not group.dissolved and agent_id in group.active_members:
                return group
        return None

    def active_groups(self) -> list[AllianceGroup]:
        return [g for g in self.registry.values() if not g.dissolved]
