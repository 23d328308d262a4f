"""Deterministic discrete-tick market simulation.

Each tick runs the same phases in the same order:

1. buyers read their utilization traces;
2. messages sent on earlier ticks are delivered, ordered by
   (delivery tick, sender id, sequence number);
3. the Alliance Engine matches queued RFQs, the Alliance Sentry groups
   self-competing buyers, and negotiations are commenced;
4. every live alliance gets a coordination decision;
5. agents deliberate in id order and their actions are applied to the
   Negotiation Engine, the mailboxes and the RFQ queue;
6. sessions past their deadline are closed by the marketplace;
7. closed sessions are recorded, profiles updated and deferred buyers
   resumed once their alliance has no open business left.

Messages sent on tick t arrive on tick t + 1, so a negotiation moves one
ply per tick. Nothing depends on wall-clock time or hash ordering, so a
run is a pure function of the scenario and the seed.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

from .agent import (
    BuyerAgent,
    Commenced,
    Coordination,
    DesireSet,
    LeaveAlliance,
    Listing,
    NoMatchNotice,
    PostReport,
    Resume,
    SellerAgent,
    SubmitRfq,
)
from .coordination import AllianceSentry, ClearingHouse, coordination_step, leave_alliance
from .errors import (
    MailboxClosed,
    MarketError,
    NoMatch,
    NotMember,
    NotParticipant,
    PartyUnavailable,
    ScenarioNotSelfCompeting,
    SessionConflict,
    ValidationError,
)
from .marketplace import (
    Advertisement,
    AdvertisementRepository,
    BehaviorWatchdog,
    NegotiationEngine,
    NegotiationSession,
    Rfq,
    SessionState,
    StatisticsStore,
    match_agents,
    offer_to_dict,
)
from .model import MARKETPLACE_ID, Accept, IssueSpec, Offer, Side, Terminate, validate_weights
from .scenario import Scenario, render_traces

SENTRY_ID = "sentry"
EVENT_KINDS = frozenset({
    "rfq", "matchAgent", "commenceNegotiation", "offer", "accept", "terminateNegotiation",
    "cooperate", "roundReport", "leaveAlliance", "record",
})


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def issue_to_dict(issue: IssueSpec) -> dict:
    return {
        "issue_id": issue.issue_id,
        "weight": issue.weight,
        "ideal_cost": issue.ideal_cost,
        "reservation_cost": issue.reservation_cost,
        "t_min": issue.t_min,
        "t_max": issue.t_max,
    }


def issue_from_dict(data) -> IssueSpec:
    return IssueSpec(data["issue_id"], float(data["weight"]), float(data["ideal_cost"]),
                     float(data["reservation_cost"]), int(data.get("t_min", 0)),
                     int(data.get("t_max", 10)))


def transcript_to_jsonl(events: Iterable[dict]) -> str:
    return "".join(_dumps(e) + "\n" for e in events)


@dataclass
class RunResult:
    transcript: list[dict]
    metrics: dict
    statistics: StatisticsStore
    profiles: dict[str, dict] = field(default_factory=dict)

    def transcript_jsonl(self) -> str:
        return transcript_to_jsonl(self.transcript)


class Simulation:
    """One market: repository, engines, agents and the tick scheduler."""

    def __init__(self, scenario: Scenario, seed: int | None = None, coordination: bool = True) -> None:
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.coordination = coordination
        self.tick = 0
        self.traces = render_traces(scenario, self.seed)
        self.repo = AdvertisementRepository()
        self.engine = NegotiationEngine()
        self.store = StatisticsStore()
        self.watchdog = BehaviorWatchdog()
        self.clearing_house = ClearingHouse()
        self.sentry = AllianceSentry(self.clearing_house) if coordination else None
        self.transcript: list[dict] = []
        self.dropped: list[dict] = []
        self._queue: list[tuple] = []
        self._seq = itertools.count()
        self._pending_rfqs: list[Rfq] = []
        self._rfqs: dict[str, Rfq] = {}
        self._session_rfq: dict[str, str] = {}
        self._closed: list[str] = []
        self._deferred: dict[str, str] = {}
        self._rfq_counter = 0
        self.finished = False

        self.buyers: dict[str, BuyerAgent] = {}
        self.sellers: dict[str, SellerAgent] = {}
        for spec in scenario.buyers:
            p = spec.params
            self.buyers[spec.agent_id] = BuyerAgent(
                spec.agent_id,
                spec.product_id,
                DesireSet(spec.issues, p.lambda_phi, spec.cost_utility_threshold, dict(spec.triggers)),
                enterprise_id=spec.enterprise_id,
                min_reputation=spec.min_reputation,
                ttl=spec.ttl or scenario.ttl,
                target_seller=spec.target_seller,
                max_attempts=spec.max_attempts,
                params=p.tactic(),
                fixed_stance=p.fixed_stance,
                resource_deadline_factor=p.resource_deadline_factor,
                epsilon_h=p.epsilon_h,
                curvature_tolerance=p.curvature_tolerance,
            )
        for spec in scenario.sellers:
            p = spec.params
            listings = [
                Listing(l.ad_id, l.product_id, DesireSet(l.issues, p.lambda_phi), l.capacity, l.idle_trigger)
                for l in spec.listings
            ]
            self.sellers[spec.seller_id] = SellerAgent(
                spec.seller_id, listings,
                enterprise_id=spec.enterprise_id,
                params=p.tactic(),
                fixed_stance=p.fixed_stance,
                resource_deadline_factor=p.resource_deadline_factor,
                epsilon_h=p.epsilon_h,
                curvature_tolerance=p.curvature_tolerance,
            )
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            self.repo.register_agent(agent_id)
            self.engine.register_agent(agent_id)
            self.watchdog.ensure(agent_id, agent.enterprise_id)
        for spec in scenario.sellers:
            for l in spec.listings:
                self.repo.publish(Advertisement(l.ad_id, spec.seller_id, l.product_id, Side.SELLER,
                                                l.issues, l.posted_at, l.capacity))

    @property
    def agents(self) -> dict:
        return {**self.buyers, **self.sellers}

    # -- plumbing -------------------------------------------------------------

    def _log(self, kind: str, sender: str, receiver: str | None, payload: dict) -> None:
        assert kind in EVENT_KINDS
        self.transcript.append({"tick": self.tick, "kind": kind, "sender": sender,
                                "receiver": receiver, "payload": payload})

    def _send(self, sender: str, receiver: str, message, delay: int = 1) -> None:
        heapq.heappush(self._queue, (self.tick + delay, sender, next(self._seq), receiver, message))

    def _deliver(self) -> dict[str, list]:
        inbox: dict[str, list] = {}
        while self._queue and self._queue[0][0] <= self.tick:
            _, _, _, receiver, message = heapq.heappop(self._queue)
            inbox.setdefault(receiver, []).append(message)
        return inbox

    def _drop(self, kind: str, sender: str, payload: dict, error: Exception) -> None:
        self.dropped.append({"tick": self.tick, "kind": kind, "sender": sender,
                             "error": type(error).__name__, "payload": payload})

    # -- external commands (also used by the gateway) ---------------------------

    def publish_advertisement(self, ad_id: str, agent_id: str, product_id: str,
                              issues: Sequence[IssueSpec], capacity: int = 1,
                              posted_at: int | None = None, idle_trigger: float = 0.25) -> Advertisement:
        seller = self.sellers.get(agent_id)
        if seller is None:
            from .errors import UnknownAgent
            raise UnknownAgent(agent_id)
        issues = tuple(issues)
        validate_weights(issues)
        if any(i.side is not Side.SELLER for i in issues):
            raise ValidationError("advertised issues must be seller-oriented")
        ad = Advertisement(ad_id, agent_id, product_id, Side.SELLER, issues,
                           self.tick if posted_at is None else posted_at, capacity)
        self.repo.publish(ad)
        if product_id not in seller.listings:
            lam = next((l.desires.lambda_phi for l in seller.listings.values()), 0.01)
            seller.listings[product_id] = Listing(ad_id, product_id, DesireSet(issues, lam),
                                                  capacity, idle_trigger)
        return ad

    def submit_rfq(self, agent_id: str, target_seller: str | None = None,
                   ttl: int | None = None, min_reputation: float | None = None) -> Rfq:
        buyer = self.buyers.get(agent_id)
        if buyer is None:
            from .errors import UnknownAgent
            raise UnknownAgent(agent_id)
        if target_seller is not None and target_seller not in self.sellers:
            raise ValidationError(f"target_seller {target_seller!r} does not exist")
        if ttl is not None and (not isinstance(ttl, int) or ttl <= 0):
            raise ValidationError(f"ttl must be a positive integer, got {ttl!r}")
        if min_reputation is not None and not 0.0 <= min_reputation <= 1.0:
            raise ValidationError(f"min_reputation {min_reputation!r} outside [0, 1]")
        changes = {k: v for k, v in (("target_seller", target_seller), ("ttl", ttl),
                                      ("min_reputation", min_reputation)) if v is not None}
        rfq = replace(buyer.make_rfq(self.tick), **changes)
        self._queue_rfq(rfq)
        return rfq

    def _queue_rfq(self, rfq: Rfq) -> None:
        self._rfqs[rfq.rfq_id] = rfq
        self._pending_rfqs.append(rfq)
        self._log("rfq", rfq.agent_id, MARKETPLACE_ID, {
            "rfq_id": rfq.rfq_id,
            "enterprise_id": rfq.enterprise_id,
            "product_id": rfq.product_id,
            "issue_ids": sorted(rfq.issue_ids),
            "ttl": rfq.ttl,
            "min_reputation": rfq.min_reputation,
            "cost_utility_threshold": rfq.cost_utility_threshold,
            "target_seller": rfq.target_seller,
        })

    # -- phases ---------------------------------------------------------------

    def _read_resources(self) -> None:
        for agent_id in sorted(self.buyers):
            series = self.traces[agent_id]
            t = min(self.tick, self.scenario.max_ticks)
            self.buyers[agent_id].observe_resources({i: v[t] for i, v in series.items()})

    def _match(self, inbox: dict[str, list]) -> None:
        pending, self._pending_rfqs = self._pending_rfqs, []
        for rfq in pending:
            try:
                match = match_agents(rfq, self.repo, self.watchdog.profiles)
            except NoMatch as exc:
                self._no_match(rfq, exc)
                continue
            rfq = replace(rfq, seller_id=match.seller_id, ad_id=match.ad_id)
            self._rfqs[rfq.rfq_id] = rfq
            seller = self.sellers[match.seller_id]
            try:
                session = self.engine.commence_negotiation(
                    match.buyer_id, match.seller_id, match.product_id, rfq.issues,
                    seller.desires_for(match.product_id).issues, rfq.ttl, self.tick,
                )
            except (PartyUnavailable, SessionConflict) as exc:
                self._no_match(rfq, exc)
                continue
            self._log("matchAgent", MARKETPLACE_ID, match.buyer_id, {
                "rfq_id": rfq.rfq_id, "matched": True, "buyer_id": match.buyer_id,
                "seller_id": match.seller_id, "ad_id": match.ad_id, "reputation": match.reputation,
            })
            if self.sentry is not None:
                group, notices = self.sentry.observe(rfq)
                if notices:
                    self._log("cooperate", SENTRY_ID, None, {
                        "group_id": group.group_id, "enterprise_id": group.enterprise_id,
                        "product_id": group.product_id, "seller_id": group.opposing_agent_id,
                        "mailbox_id": group.mailbox_id,
                        "members": [n.agent_id for n in notices],
                    })
                    for notice in notices:
                        inbox.setdefault(notice.agent_id, []).append(notice)
            self._session_rfq[session.session_id] = rfq.rfq_id
            self._log("commenceNegotiation", MARKETPLACE_ID, None, {
                "session_id": session.session_id,
                "rfq_id": rfq.rfq_id,
                "buyer_id": session.buyer_id,
                "seller_id": session.seller_id,
                "product_id": session.product_id,
                "ttl": session.ttl,
                "started_utc": session.started_utc,
                "deadline_tick": session.deadline_tick,
                "buyer_issues": [issue_to_dict(i) for i in session.buyer_issues],
                "seller_issues": [issue_to_dict(i) for i in session.seller_issues],
            })
            note = Commenced(session.session_id, session.product_id, session.seller_id, rfq.rfq_id,
                             session.ttl, self.tick, session.issue_ids)
            self._send(MARKETPLACE_ID, session.buyer_id, note, delay=0)
            self._send(MARKETPLACE_ID, session.seller_id,
                       replace(note, counterpart=session.buyer_id), delay=0)
        # commence notices go out on the same tick
        for receiver, msgs in self._deliver().items():
            inbox.setdefault(receiver, []).extend(msgs)

    def _no_match(self, rfq: Rfq, exc: Exception) -> None:
        self._log("matchAgent", MARKETPLACE_ID, rfq.agent_id, {
            "rfq_id": rfq.rfq_id, "matched": False, "reason": type(exc).__name__,
        })
        self._send(MARKETPLACE_ID, rfq.agent_id, NoMatchNotice(rfq.rfq_id))

    def _coordinate(self, inbox: dict[str, list]) -> None:
        if self.sentry is None:
            return
        for group in self.sentry.active_groups():
            mailbox = self.clearing_house.get(group.mailbox_id)
            if mailbox is None or mailbox.closed:
                continue
            decision = coordination_step(group, mailbox)
            if decision is None:
                continue
            for member in group.active_members:
                inbox.setdefault(member, []).append(
                    Coordination(group.group_id, decision.leader, decision.deferring == member))

    def _apply_protocol(self, agent_id: str, msg) -> None:
        kind = {Offer: "offer", Accept: "accept", Terminate: "terminateNegotiation"}[type(msg)]
        payload = offer_to_dict(msg) if isinstance(msg, Offer) else {
            "session_id": msg.session_id, **({"reason": msg.reason} if isinstance(msg, Terminate) else {})}
        session = self.engine.sessions.get(msg.session_id)
        if session is None:
            self._drop(kind, agent_id, payload, KeyError(msg.session_id))
            return
        try:
            session, reply = self.engine.step(msg.session_id, msg, self.tick)
        except MarketError as exc:
            self._drop(kind, agent_id, payload, exc)
            return
        counterpart = session.counterpart(agent_id)
        self._log(kind, agent_id, counterpart, payload)
        if not session.is_open:
            self._closed.append(session.session_id)
        if reply is not None:
            # the marketplace closed the session (ttl or deadline)
            self._log("terminateNegotiation", MARKETPLACE_ID, None,
                      {"session_id": session.session_id, "reason": reply.reason})
            for party in session.participants:
                self._send(MARKETPLACE_ID, party, reply)
        else:
            self._send(agent_id, counterpart, msg)

    def _apply(self, agent_id: str, action) -> None:
        if isinstance(action, (Offer, Accept, Terminate)):
            self._apply_protocol(agent_id, action)
        elif isinstance(action, PostReport):
            report = action.report
            payload = {"session_id": report.session_id, "round": report.round,
                       "utility": report.utility, "expectations": report.expectations,
                       "score": report.score, "mailbox_id": action.mailbox_id}
            try:
                self.clearing_house[action.mailbox_id].send(report, now=self.tick)
            except (KeyError, MailboxClosed, NotParticipant) as exc:
                self._drop("roundReport", agent_id, payload, exc)
                return
            self._log("roundReport", agent_id, action.mailbox_id, payload)
        elif isinstance(action, LeaveAlliance):
            group = self.sentry.registry.get(action.group_id) if self.sentry else None
            payload = {"group_id": action.group_id, "reason": action.reason}
            if group is None:
                self._drop("leaveAlliance", agent_id, payload, KeyError(action.group_id))
                return
            try:
                leave_alliance(group, agent_id, action.reason, self.clearing_house, self.tick)
            except NotMember as exc:
                self._drop("leaveAlliance", agent_id, payload, exc)
                return
            self._log("leaveAlliance", agent_id, SENTRY_ID, payload)
            if action.reason == "deferred":
                self._deferred[agent_id] = group.group_id
        elif isinstance(action, SubmitRfq):
            self._queue_rfq(action.rfq)

    def _record_closed(self) -> None:
        closed, self._closed = self._closed, []
        for session_id in closed:
            session = self.engine.sessions[session_id]
            record = self.store.record_transaction(session)
            self.watchdog.observe(record)
            self._log("record", MARKETPLACE_ID, None, record.to_dict())
            if self.sentry is not None:
                self.sentry.rfq_closed(self._session_rfq.get(session_id, ""))

    def _expire(self, reason: str, force: bool = False) -> None:
        for session in self.engine.open_sessions():
            if force or self.tick > session.deadline_tick:
                msg = Terminate(session.session_id, MARKETPLACE_ID, self.tick, reason)
                self.engine.step(session.session_id, msg, self.tick)
                self._closed.append(session.session_id)
                self._log("terminateNegotiation", MARKETPLACE_ID, None,
                          {"session_id": session.session_id, "reason": reason})
                for party in session.participants:
                    self._send(MARKETPLACE_ID, party, msg)

    def _resume_deferred(self) -> None:
        for agent_id in sorted(self._deferred):
            group = self.sentry.registry[self._deferred[agent_id]]
            others = [m for m in group.members if m != agent_id and m not in self._deferred]
            busy = any(
                s.is_open and s.buyer_id in others and s.product_id == group.product_id
                for s in self.engine.sessions.values()
            ) or any(r.agent_id in others and r.product_id == group.product_id for r in self._pending_rfqs)
            if not busy:
                del self._deferred[agent_id]
                self._send(SENTRY_ID, agent_id, Resume(group.product_id))

    # -- stepping -------------------------------------------------------------

    def step(self) -> list[dict]:
        """Advance one tick; returns the transcript events it produced."""
        if self.finished:
            return []
        start = len(self.transcript)
        self._read_resources()
        inbox = self._deliver()
        self._match(inbox)
        self._coordinate(inbox)
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            actions = agent.decide(inbox.get(agent_id, []), self.tick, self.clearing_house)
            for action in actions:
                self._apply(agent_id, action)
        self._expire("deadline")
        self._record_closed()
        if self.sentry is not None:
            self._resume_deferred()
        self.tick += 1
        if self.tick >= self.scenario.max_ticks:
            self._finish()
        return self.transcript[start:]

    def _finish(self) -> None:
        self._expire("max_ticks", force=True)
        self._record_closed()
        self.finished = True

    def quiescent(self) -> bool:
        if self._queue or self._pending_rfqs or self._deferred or self.engine.open_sessions():
            return False
        for agent_id, buyer in self.buyers.items():
            if buyer.satisfied or buyer.attempts >= buyer.max_attempts:
                continue
            if buyer.pending_rfq is not None or buyer.deferred:
                return False
            if self._may_trigger(agent_id, self.tick):
                return False
        return True

    def _may_trigger(self, agent_id: str, from_tick: int) -> bool:
        buyer = self.buyers[agent_id]
        for issue_id, series in self.traces[agent_id].items():
            trig = buyer.desires.trigger(issue_id)
            if any(v > trig for v in series[from_tick:]):
                return True
        return False

    def run(self) -> RunResult:
        while not self.finished and not self.quiescent():
            self.step()
        return self.result()

    # -- views ----------------------------------------------------------------

    def result(self) -> RunResult:
        return RunResult(list(self.transcript), self.metrics(), self.store,
                         {a: p.to_dict() for a, p in sorted(self.watchdog.profiles.items())})

    def metrics(self) -> dict:
        return compute_metrics(self.store.records, self.scenario, self.tick, len(self.dropped))

    def session_view(self, session_id: str) -> dict:
        return self.engine.sessions[session_id].to_dict()

    def profile_view(self, agent_id: str) -> dict:
        if agent_id not in self.watchdog.profiles:
            from .errors import UnknownAgent
            raise UnknownAgent(agent_id)
        return self.watchdog.profiles[agent_id].to_dict()

    def ads_view(self, product_id: str | None = None, side: Side | None = None) -> list[dict]:
        ads = sorted(self.repo, key=lambda a: (a.posted_at, a.ad_id)) if product_id is None else \
            self.repo.query_advertisements(product_id, side)
        return [advertisement_to_dict(a) for a in ads if side is None or a.side is side]

    def snapshot(self) -> dict:
        return {
            "tick": self.tick,
            "finished": self.finished,
            "ads": self.ads_view(),
            "sessions": [self.engine.sessions[s].to_dict() for s in sorted(self.engine.sessions)],
            "profiles": {a: p.to_dict() for a, p in sorted(self.watchdog.profiles.items())},
            "metrics": self.metrics(),
        }


def advertisement_to_dict(ad: Advertisement) -> dict:
    return {
        "ad_id": ad.ad_id,
        "agent_id": ad.agent_id,
        "product_id": ad.product_id,
        "side": ad.side.value,
        "posted_at": ad.posted_at,
        "capacity": ad.capacity,
        "issues": [issue_to_dict(i) for i in ad.issues],
    }


def compute_metrics(records, scenario: Scenario | None = None, ticks: int = 0, dropped: int = 0,
                    enterprise_of: dict[str, str] | None = None) -> dict:
    if enterprise_of is None:
        enterprise_of = {b.agent_id: b.enterprise_id for b in scenario.buyers} if scenario else {}
    spend: dict[str, float] = {e: 0.0 for e in (scenario.enterprises if scenario else {})}
    agreements = terminations = 0
    rounds = []
    reasons: dict[str, int] = {}
    for r in records:
        if r.outcome == SessionState.AGREED.value:
            agreements += 1
            rounds.append(r.rounds_used)
            ent = enterprise_of.get(r.buyer_id, r.buyer_id)
            spend[ent] = spend.get(ent, 0.0) + math.fsum(r.costs.values())
        else:
            terminations += 1
            reasons[r.reason] = reasons.get(r.reason, 0) + 1
    return {
        "ticks": ticks,
        "sessions": len(records),
        "agreements": agreements,
        "terminations": terminations,
        "termination_reasons": dict(sorted(reasons.items())),
        "mean_rounds_to_agreement": (math.fsum(rounds) / len(rounds)) if rounds else 0.0,
        "enterprise_spend": dict(sorted(spend.items())),
        "total_spend": math.fsum(spend.values()),
        "dropped_messages": dropped,
    }


def run(scenario: Scenario, seed: int | None = None, coordination: bool = True) -> RunResult:
    """Execute ``scenario`` to quiescence or ``max_ticks``."""
    return Simulation(scenario, seed, coordination).run()


# ---------------------------------------------------------------------------
# paired coordination experiment
# ---------------------------------------------------------------------------

def self_competing_enterprises(scenario: Scenario) -> list[str]:
    """Enterprises with two or more buyers that can end up at one seller
    for one product."""
    listed: dict[str, set[str]] = {}
    for s in scenario.sellers:
        for l in s.listings:
            listed.setdefault(l.product_id, set()).add(s.seller_id)
    out = []
    for ent, members in sorted(scenario.enterprises.items()):
        specs = [b for b in scenario.buyers if b.agent_id in members]
        for product in sorted({b.product_id for b in specs}):
            sellers = listed.get(product, set())
            reach = [({b.target_seller} if b.target_seller else sellers) & sellers
                     for b in specs if b.product_id == product]
            shared = any(len([r for r in reach if s in r]) >= 2 for s in sorted(sellers))
            if shared:
                out.append(ent)
                break
    return out


@dataclass
class PairedTrial:
    seed: int
    spend_coordinated: float
    spend_uncoordinated: float
    agreements_coordinated: int
    agreements_uncoordinated: int

    @property
    def outcome(self) -> str:
        a, b = self.spend_coordinated, self.spend_uncoordinated
        if math.isclose(a, b, rel_tol=0.0, abs_tol=1e-9):
            return "tie"
        return "win" if a < b else "loss"


@dataclass
class Comparison:
    enterprises: list[str]
    trials: list[PairedTrial]

    def count(self, outcome: str) -> int:
        return sum(1 for t in self.trials if t.outcome == outcome)

    @property
    def wins(self) -> int:
        return self.count("win")

    @property
    def ties(self) -> int:
        return self.count("tie")

    @property
    def losses(self) -> int:
        return self.count("loss")

    def to_dict(self) -> dict:
        return {
            "enterprises": self.enterprises,
            "wins": self.wins,
            "ties": self.ties,
            "losses": self.losses,
            "trials": [
                {"seed": t.seed, "spend_coordinated": t.spend_coordinated,
                 "spend_uncoordinated": t.spend_uncoordinated,
                 "agreements_coordinated": t.agreements_coordinated,
                 "agreements_uncoordinated": t.agreements_uncoordinated, "outcome": t.outcome}
                for t in self.trials
            ],
        }


def compare_coordination(scenario: Scenario, trials: int, seeds: Sequence[int] | None = None) -> Comparison:
    """Run every trial seed with the Alliance Sentry on and off and pair
    the self-competing enterprises' total spend.

    Raises:
        ScenarioNotSelfCompeting: no enterprise has two buyers that can
            meet at one seller.
    """
    enterprises = self_competing_enterprises(scenario)
    if not enterprises:
        raise ScenarioNotSelfCompeting(scenario.name or "scenario")
    if seeds is None:
        seeds = [scenario.seed + i for i in range(trials)]
    out = []
    for seed in seeds:
        on = run(scenario, seed, coordination=True)
        off = run(scenario, seed, coordination=False)
        spend_on = math.fsum(on.metrics["enterprise_spend"].get(e, 0.0) for e in enterprises)
        spend_off = math.fsum(off.metrics["enterprise_spend"].get(e, 0.0) for e in enterprises)
        out.append(PairedTrial(seed, spend_on, spend_off, on.metrics["agreements"], off.metrics["agreements"]))
    return Comparison(enterprises, out)


# ---------------------------------------------------------------------------
# persistence and replay
# ---------------------------------------------------------------------------

def emit(result: RunResult, out_dir: str | Path) -> dict[str, Path]:
    """Write events.jsonl, metrics.json, statistics.jsonl and profiles.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "events": out / "events.jsonl",
        "metrics": out / "metrics.json",
        "statistics": out / "statistics.jsonl",
        "profiles": out / "profiles.json",
    }
    paths["events"].write_text(result.transcript_jsonl(), encoding="utf-8")
    paths["metrics"].write_text(json.dumps(result.metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    paths["statistics"].write_text(result.statistics.to_jsonl(), encoding="utf-8")
    paths["profiles"].write_text(json.dumps(result.profiles, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return paths


def read_transcript(path: str | Path) -> list[dict]:
    events = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError as exc:
            from .errors import ParseError
            raise ParseError(exc.msg, line=n) from None
    return events


def enterprises_from_transcript(transcript: Iterable[dict]) -> dict[str, str]:
    return {e["sender"]: e["payload"]["enterprise_id"] for e in transcript
            if e["kind"] == "rfq" and e["payload"].get("enterprise_id")}


def replay_statistics(transcript: Iterable[dict]) -> StatisticsStore:
    """Rebuild the statistics store from protocol events alone, by
    re-running every session through the Negotiation Engine."""
    from .marketplace import step_negotiation

    sessions: dict[str, NegotiationSession] = {}
    store = StatisticsStore()
    for event in transcript:
        kind, p, tick = event["kind"], event["payload"], event["tick"]
        if kind == "commenceNegotiation":
            sessions[p["session_id"]] = NegotiationSession(
                session_id=p["session_id"], buyer_id=p["buyer_id"], seller_id=p["seller_id"],
                product_id=p["product_id"],
                buyer_issues=tuple(issue_from_dict(i) for i in p["buyer_issues"]),
                seller_issues=tuple(issue_from_dict(i) for i in p["seller_issues"]),
                ttl=p["ttl"], started_at=tick,
            )
            continue
        if kind not in ("offer", "accept", "terminateNegotiation"):
            continue
        session = sessions[p["session_id"]]
        if not session.is_open:
            continue
        if kind == "offer":
            msg = Offer(p["session_id"], p["round"], event["sender"], p["costs"], tick)
        elif kind == "accept":
            msg = Accept(p["session_id"], event["sender"], tick)
        else:
            msg = Terminate(p["session_id"], event["sender"], tick, p.get("reason", ""))
        step_negotiation(session, msg, tick)
        if not session.is_open:
            store.record_transaction(session)
    return store


def aggregate_profiles(records) -> dict[str, dict]:
    watchdog = BehaviorWatchdog()
    for r in records:
        watchdog.observe(r)
    return {a: p.to_dict() for a, p in sorted(watchdog.profiles.items())}
