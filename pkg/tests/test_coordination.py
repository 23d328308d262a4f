import random

import pytest
from hypothesis import given, settings, strategies as st

from bdimarket.coordination import (
    AllianceGroup,
    AllianceSentry,
    ClearingHouse,
    CooperateNotice,
    Mailbox,
    Mode,
    ReceiveTicket,
    RoundReport,
    coordination_step,
    detect_self_competition,
    issue_cooperate,
    leave_alliance,
    select_deferring_member,
    select_leader,
    share_and_absorb,
    urgency_weighted_score,
)
from bdimarket.errors import AlreadyCooperating, MailboxClosed, NotMember, NotParticipant
from bdimarket.marketplace import Rfq
from bdimarket.model import IssueSpec, Offer

from oracles import MailboxOracle

ISSUES = (IssueSpec("cpu", 1.0, 10, 20),)


def rfq(rfq_id, agent, enterprise="acme", seller="s1", product="vm", issues=ISSUES):
    return Rfq(rfq_id, agent, enterprise, product, issues, seller_id=seller, ad_id=f"ad-{seller}")


def report(sender, n=1, utility=0.5, score=None, session="x"):
    return RoundReport(sender, session, n, Offer(session, n, sender, {"cpu": 12.0}), utility, 0.0, score)


class TestDetect:
    def test_two_same_enterprise(self):
        groups = detect_self_competition([rfq("r1", "a"), rfq("r2", "b")])
        assert len(groups) == 1 and groups[0].members == ["a", "b"]
        assert groups[0].opposing_agent_id == "s1"

    def test_different_enterprises(self):
        assert detect_self_competition([rfq("r1", "a"), rfq("r2", "b", enterprise="other")]) == []

    def test_different_sellers(self):
        assert detect_self_competition([rfq("r1", "a"), rfq("r2", "b", seller="s2")]) == []

    def test_different_issue_sets(self):
        two = (IssueSpec("cpu", 0.5, 10, 20), IssueSpec("mem", 0.5, 1, 2))
        assert detect_self_competition([rfq("r1", "a"), rfq("r2", "b", issues=two)]) == []

    def test_same_agent_twice(self):
        assert detect_self_competition([rfq("r1", "a"), rfq("r2", "a")]) == []

    def test_enterprise_override(self):
        groups = detect_self_competition([rfq("r1", "a", "x"), rfq("r2", "b", "y")], {"a": "z", "b": "z"})
        assert groups[0].enterprise_id == "z"

    def test_unmatched_rfq_ignored(self):
        loose = Rfq("r3", "c", "acme", "vm", ISSUES)
        assert detect_self_competition([loose]) == []

    def test_group_needs_two(self):
        with pytest.raises(ValueError):
            AllianceGroup("g", "e", ["a"], "s", "vm")


class TestCooperate:
    def group(self, n):
        return detect_self_competition([rfq(f"r{i}", f"a{i}") for i in range(n)])[0]

    def test_two_notices(self):
        house = ClearingHouse()
        notices = issue_cooperate(self.group(2), house)
        assert len(notices) == 2 and len({n.mailbox_id for n in notices}) == 1
        assert notices[0].mailbox_id in house.mailboxes

    def test_three_notices(self):
        assert [n.agent_id for n in issue_cooperate(self.group(3), ClearingHouse())] == ["a0", "a1", "a2"]

    def test_twice_rejected(self):
        g, house = self.group(2), ClearingHouse()
        issue_cooperate(g, house)
        with pytest.raises(AlreadyCooperating):
            issue_cooperate(g, house)

    def test_notice_requires_ids(self):
        with pytest.raises(ValueError):
            CooperateNotice("a", "vm", "", "m")


class TestMailbox:
    def test_fifo_and_no_self_delivery(self):
        box = Mailbox("m", ["a", "b"])
        box.send(report("a", 1))
        box.send(report("b", 1))
        box.send(report("a", 2))
        assert [box.receive("b").round, box.receive("b").round] == [1, 2]
        assert box.receive("b") is None
        assert box.receive("a").sender == "b"

    def test_each_message_once_per_reader(self):
        box = Mailbox("m", ["a", "b", "c"])
        box.send(report("a"))
        assert box.receive("b") is not None and box.receive("b") is None
        assert box.receive("c") is not None

    def test_non_participant(self):
        box = Mailbox("m", ["a", "b"])
        with pytest.raises(NotParticipant):
            box.send(report("z"))
        with pytest.raises(NotParticipant):
            box.receive("z")

    def test_closed(self):
        box = Mailbox("m", ["a", "b"])
        box.close()
        with pytest.raises(MailboxClosed):
            box.send(report("a"))
        with pytest.raises(MailboxClosed):
            box.receive("a")

    def test_blocking_send_waits_for_all_readers(self):
        box = Mailbox("m", ["a", "b", "c"])
        ticket = box.send(report("a"), Mode.BLOCKING, now=1)
        assert not ticket.done
        box.receive("b", now=2)
        assert not ticket.done
        box.receive("c", now=3)
        assert ticket.completed_at == 3

    def test_blocking_send_released_by_departure(self):
        box = Mailbox("m", ["a", "b"])
        ticket = box.send(report("a"), Mode.BLOCKING, now=1)
        box.deactivate("b", now=4)
        assert ticket.completed_at == 4 and not ticket.aborted

    def test_blocking_send_aborted_on_close(self):
        box = Mailbox("m", ["a", "b"])
        ticket = box.send(report("a"), Mode.BLOCKING)
        box.close(now=2)
        assert ticket.aborted and ticket.done

    def test_non_blocking_send_completes_at_once(self):
        assert Mailbox("m", ["a", "b"]).send(report("a"), now=5).completed_at == 5

    def test_blocking_receive_waits_for_next(self):
        box = Mailbox("m", ["a", "b"])
        ticket = box.receive("b", Mode.BLOCKING, now=1)
        assert isinstance(ticket, ReceiveTicket) and not ticket.done
        box.send(report("a"), now=3)
        assert ticket.completed_at == 3 and ticket.report.sender == "a"
        assert box.receive("b") is None

    def test_blocking_receive_released_by_close(self):
        box = Mailbox("m", ["a", "b"])
        ticket = box.receive("b", Mode.BLOCKING)
        box.close(now=7)
        assert ticket.completed_at == 7 and ticket.report is None

    def test_latecomer_reads_history(self):
        box = Mailbox("m", ["a", "b"])
        box.send(report("a"))
        box.admit("c")
        assert box.receive("c").sender == "a"

    def test_unread_and_latest(self):
        box = Mailbox("m", ["a", "b"])
        box.send(report("a", 1))
        box.send(report("a", 2))
        assert box.unread("b") == 2 and box.latest("a").round == 2 and box.latest("b") is None

    def test_report_utility_range(self):
        with pytest.raises(ValueError):
            report("a", utility=1.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mailbox_interleavings_match_oracle(seed):
    rng = random.Random(seed)
    people = [f"p{i}" for i in range(rng.randint(2, 5))]
    box, oracle = Mailbox("m", people), MailboxOracle(people)
    tickets = []
    for step in range(rng.randint(1, 40)):
        who = rng.choice(people)
        if rng.random() < 0.5:
            r = report(who, step + 1)
            tickets.append((oracle.send(who, r), who, box.send(r, Mode.BLOCKING, step)))
        else:
            assert box.receive(who, now=step) is oracle.receive(who)
        for index, sender, ticket in tickets:
            assert ticket.done == oracle.read_by_all(index, sender)


class TestShareAndAbsorb:
    def test_upsert(self):
        box = Mailbox("m", ["a", "b"])
        beliefs = {}
        box.send(report("a", 1, 0.2))
        box.send(report("a", 1, 0.3))
        box.send(report("a", 2, 0.4))
        out = share_and_absorb(beliefs, box, "b")
        assert len(out) == 3 and len(beliefs) == 2
        assert beliefs[("a", "x", 1)].utility == 0.3

    def test_empty(self):
        assert share_and_absorb({}, Mailbox("m", ["a", "b"]), "a") == []


class TestLeave:
    def setup_method(self):
        self.house = ClearingHouse()
        self.group = detect_self_competition([rfq("r1", "a"), rfq("r2", "b"), rfq("r3", "c")])[0]
        issue_cooperate(self.group, self.house)

    def test_leave_keeps_alliance(self):
        leave_alliance(self.group, "a", "deferred", self.house, 3)
        assert self.group.active_members == ["b", "c"] and not self.group.dissolved
        assert self.group.departures == [("a", "deferred", 3)]

    def test_last_pair_dissolves(self):
        leave_alliance(self.group, "a", "deferred", self.house)
        leave_alliance(self.group, "b", "agreed", self.house)
        assert self.group.dissolved and self.house[self.group.mailbox_id].closed

    def test_not_member(self):
        with pytest.raises(NotMember):
            leave_alliance(self.group, "z", "x", self.house)

    def test_leaver_stops_receiving(self):
        leave_alliance(self.group, "a", "deferred", self.house)
        with pytest.raises(NotParticipant):
            self.house[self.group.mailbox_id].send(report("a"))


class TestSelection:
    def test_lower_score_defers(self):
        assert select_deferring_member({"A": 0.2, "B": 0.6}) == "A"
        assert select_leader({"A": 0.2, "B": 0.6}) == "B"

    def test_ties_by_id(self):
        assert select_deferring_member({"b": 0.4, "a": 0.4}) == "a"
        assert select_leader({"b": 0.4, "a": 0.4}) == "b"

    def test_score(self):
        issues = (IssueSpec("cpu", 0.5, 10, 20), IssueSpec("mem", 0.5, 1, 3))
        assert urgency_weighted_score(issues, {"cpu": 0.8, "mem": 0.4}, {"cpu": 15, "mem": 1}) == pytest.approx(0.4)

    def test_step_waits_for_every_score(self):
        house = ClearingHouse()
        group = detect_self_competition([rfq("r1", "A"), rfq("r2", "B")])[0]
        issue_cooperate(group, house)
        box = house[group.mailbox_id]
        box.send(report("A", score=0.2))
        first = coordination_step(group, box)
        assert first.deferring is None and first.leader == "A"
        box.send(report("B", score=0.6))
        second = coordination_step(group, box)
        assert (second.leader, second.deferring) == ("B", "A")

    def test_step_after_dissolve(self):
        house = ClearingHouse()
        group = detect_self_competition([rfq("r1", "A"), rfq("r2", "B")])[0]
        issue_cooperate(group, house)
        leave_alliance(group, "A", "deferred", house)
        assert coordination_step(group, house[group.mailbox_id]) is None


class TestSentry:
    def test_forms_on_second_match(self):
        sentry = AllianceSentry(ClearingHouse())
        assert sentry.observe(rfq("r1", "a")) == (None, [])
        group, notices = sentry.observe(rfq("r2", "b"))
        assert group.group_id == "grp0001" and [n.agent_id for n in notices] == ["a", "b"]
        assert sentry.group_of("a") is group

    def test_third_member_joins(self):
        sentry = AllianceSentry(ClearingHouse())
        sentry.observe(rfq("r1", "a"))
        group, _ = sentry.observe(rfq("r2", "b"))
        again, notices = sentry.observe(rfq("r3", "c"))
        assert again is group and [n.agent_id for n in notices] == ["c"]
        assert group.active_members == ["a", "b", "c"]

    def test_closed_rfq_not_grouped(self):
        sentry = AllianceSentry(ClearingHouse())
        sentry.observe(rfq("r1", "a"))
        sentry.rfq_closed("r1")
        assert sentry.observe(rfq("r2", "b")) == (None, [])

    def test_other_enterprise_ignored(self):
        sentry = AllianceSentry(ClearingHouse())
        sentry.observe(rfq("r1", "a"))
        assert sentry.observe(rfq("r2", "b", enterprise="globex")) == (None, [])
        assert sentry.active_groups() == []
