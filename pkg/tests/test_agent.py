import pytest
from hypothesis import given, settings, strategies as st

from bdimarket.agent import (
    Beliefset,
    BuyerAgent,
    Commenced,
    Coordination,
    DesireSet,
    LeaveAlliance,
    Listing,
    NoMatchNotice,
    OfferObserved,
    PostReport,
    ReportAbsorbed,
    ResourceReading,
    Resume,
    SellerAgent,
    SessionOutlook,
    SubmitRfq,
    UrgencyBand,
    build_plan_library,
    derive_goals,
    monitor_resources,
    select_plan,
    update_beliefs,
    urgency_band,
)
from bdimarket.coordination import ClearingHouse, CooperateNotice, RoundReport
from bdimarket.errors import NoApplicablePlan
from bdimarket.model import Accept, IssueSpec, Offer, Stance, Terminate
from bdimarket.tactics import TacticParams

BUY = (IssueSpec("cpu", 1.0, 10, 20),)
SELL = (IssueSpec("cpu", 1.0, 20, 10),)


def desires(issues=BUY, **kw):
    return DesireSet(issues, triggers={"cpu": 0.8}, **kw)


def buyer(**kw):
    kw.setdefault("resource_deadline_factor", 0.0)
    kw.setdefault("fixed_stance", Stance.LINEAR)
    return BuyerAgent("b1", "vm", desires(), enterprise_id="acme", **kw)


def commenced(session="s00001", ttl=5, rfq="b1/rfq1", counterpart="s1"):
    return Commenced(session, "vm", counterpart, rfq, ttl, 0)


class TestMonitorResources:
    def test_urgency_and_trigger(self):
        urgency, fire = monitor_resources({"cpu": 0.9}, desires())
        assert urgency["cpu"] == pytest.approx(0.5) and fire

    def test_below_trigger(self):
        urgency, fire = monitor_resources({"cpu": 0.5}, desires())
        assert urgency["cpu"] == 0 and not fire

    def test_active_agenda_suppresses(self):
        assert not monitor_resources({"cpu": 0.95}, desires(), has_active_agenda=True)[1]

    def test_clamped(self):
        assert monitor_resources({"cpu": 1.0}, desires())[0]["cpu"] == 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 0.99))
def test_urgency_bounded(reading, trigger):
    mu = monitor_resources({"cpu": reading}, DesireSet(BUY, triggers={"cpu": trigger}))[0]["cpu"]
    assert 0 <= mu <= 1
    assert (mu > 0) == (reading > trigger)


class TestBeliefs:
    def test_offer_upsert(self):
        b = Beliefset()
        o = Offer("s", 2, "x", {"cpu": 15.0})
        update_beliefs(b, OfferObserved(o, 0.5, True), BUY)
        update_beliefs(b, OfferObserved(o, 0.5, True), BUY)
        assert b.size() == 1 and len(b.opponents["s"].observed_offers) == 1

    def test_own_offer_not_modelled(self):
        b = Beliefset()
        update_beliefs(b, OfferObserved(Offer("s", 1, "me", {"cpu": 12.0}), 0.8, False))
        assert "s" not in b.opponents

    def test_report_upsert(self):
        b = Beliefset()
        r = RoundReport("peer", "s", 1, Offer("s", 1, "peer", {"cpu": 1.0}), 0.2, 0.0)
        update_beliefs(b, ReportAbsorbed(r))
        update_beliefs(b, ReportAbsorbed(r))
        assert len(b.peers) == 1

    def test_reading(self):
        b = update_beliefs(Beliefset(), ResourceReading({"cpu": 0.9}, {"cpu": 0.5}))
        assert b.readings == {"cpu": 0.9} and b.urgency == {"cpu": 0.5}


class TestGoals:
    def test_curve_above_floor(self):
        g = derive_goals({"s": SessionOutlook(0.7, 0.9)}, desires(cost_utility_threshold=0.2))["s"]
        assert g.target_utility == 0.7 and not g.terminate

    def test_floor_wins(self):
        g = derive_goals({"s": SessionOutlook(0.1, 0.9)}, desires(cost_utility_threshold=0.2))["s"]
        assert g.target_utility == 0.2

    def test_unreachable_floor_terminates(self):
        assert derive_goals({"s": SessionOutlook(0.5, 0.1)}, desires(cost_utility_threshold=0.2))["s"].terminate


class TestPlans:
    def test_library_covers_every_context(self):
        lib = build_plan_library(TacticParams())
        assert len(lib) == 27
        for key, plan in lib.items():
            assert (plan.stance, plan.opponent, plan.band) == key

    def test_band_scale(self):
        lib = build_plan_library(TacticParams())
        assert select_plan(lib, Stance.CONCEDER, Stance.LINEAR, UrgencyBand.HIGH).params.beta == pytest.approx(3.75)
        assert select_plan(lib, Stance.CONCEDER, Stance.LINEAR, UrgencyBand.LOW).params.beta == pytest.approx(3.0)

    def test_missing(self):
        with pytest.raises(NoApplicablePlan):
            select_plan({}, Stance.LINEAR, Stance.LINEAR, UrgencyBand.LOW)

    def test_bands(self):
        assert [urgency_band(x) for x in (0.0, 0.5, 0.9)] == [UrgencyBand.LOW, UrgencyBand.MID, UrgencyBand.HIGH]


class TestBuyer:
    def test_no_rfq_without_urgency(self):
        b = buyer()
        b.observe_resources({"cpu": 0.5})
        assert b.decide([], 0) == []

    def test_rfq_on_urgency(self):
        b = buyer()
        b.observe_resources({"cpu": 0.9})
        (action,) = b.decide([], 0)
        assert isinstance(action, SubmitRfq) and action.rfq.rfq_id == "b1/rfq1"
        assert b.decide([], 1) == []

    def test_no_match_retries_until_attempts_exhausted(self):
        b = buyer(max_attempts=2)
        b.observe_resources({"cpu": 0.9})
        b.decide([], 0)
        assert isinstance(b.decide([NoMatchNotice("b1/rfq1")], 1)[0], SubmitRfq)
        assert b.decide([NoMatchNotice("b1/rfq2")], 2) == []

    def test_opening_at_ideal(self):
        b = buyer()
        b.observe_resources({"cpu": 0.9})
        b.decide([], 0)
        (offer,) = b.decide([commenced()], 1)
        assert isinstance(offer, Offer) and offer.round == 1 and offer.costs == {"cpu": 10.0}

    def test_accepts_better_offer(self):
        b = buyer()
        b.observe_resources({"cpu": 0.9})
        b.decide([], 0)
        b.decide([commenced()], 1)
        out = b.decide([Offer("s00001", 2, "s1", {"cpu": 10.5})], 2)
        assert isinstance(out[0], Accept) and b.satisfied

    def test_counter_offer_concedes(self):
        b = buyer()
        b.observe_resources({"cpu": 0.9})
        b.decide([], 0)
        b.decide([commenced()], 1)
        (offer,) = b.decide([Offer("s00001", 2, "s1", {"cpu": 20.0})], 2)
        assert offer.round == 3 and offer.costs["cpu"] == pytest.approx(12.5)

    def test_terminate_outside_reservation_when_out_of_offers(self):
        b = buyer()
        b.observe_resources({"cpu": 0.9})
        b.decide([], 0)
        b.decide([commenced(ttl=1)], 1)
        out = b.decide([Offer("s00001", 2, "s1", {"cpu": 25.0})], 2)
        assert isinstance(out[0], Terminate) and out[0].reason == "deadline"

    def test_one_report_per_offer_while_cooperating(self):
        house = ClearingHouse()
        box = house.create_mailbox(["b1", "b2"])
        b = buyer()
        b.observe_resources({"cpu": 0.9})
        b.decide([], 0)
        out = b.decide([commenced(), CooperateNotice("b1", "vm", "ad", box.mailbox_id, "grp0001")], 1, house)
        assert [type(a) for a in out] == [Offer, PostReport]
        assert out[1].report.offer == out[0] and out[1].report.score is None
        out = b.decide([Offer("s00001", 2, "s1", {"cpu": 20.0})], 2, house)
        assert [type(a) for a in out] == [Offer, PostReport]
        assert out[1].report.score == pytest.approx(0.0)

    def test_non_leader_holds_bid(self):
        house = ClearingHouse()
        box = house.create_mailbox(["b1", "b2"])
        b = buyer()
        b.observe_resources({"cpu": 0.9})
        b.decide([], 0)
        b.decide([commenced(), CooperateNotice("b1", "vm", "ad", box.mailbox_id, "grp0001")], 1, house)
        out = b.decide([Coordination("grp0001", "b2", False), Offer("s00001", 2, "s1", {"cpu": 20.0})], 2, house)
        assert out[0].costs == {"cpu": 10.0}

    def test_deferral_then_resume(self):
        house = ClearingHouse()
        box = house.create_mailbox(["b1", "b2"])
        b = buyer()
        b.observe_resources({"cpu": 0.9})
        b.decide([], 0)
        b.decide([commenced(), CooperateNotice("b1", "vm", "ad", box.mailbox_id, "grp0001")], 1, house)
        out = b.decide([Coordination("grp0001", "b2", True)], 2, house)
        assert [type(a) for a in out] == [Terminate, LeaveAlliance]
        assert out[0].reason == "deferred" and b.deferred and b.alliance is None
        assert b.attempts == 0 and b.decide([], 3, house) == []
        assert isinstance(b.decide([Resume("vm")], 4, house)[0], SubmitRfq)

    def test_deterministic(self):
        def script():
            b = buyer(fixed_stance=None, resource_deadline_factor=0.5)
            b.observe_resources({"cpu": 0.95})
            out = [b.decide([], 0), b.decide([commenced(ttl=8)], 1)]
            for n, cost in enumerate([20, 19.5, 19, 17], start=1):
                out.append(b.decide([Offer("s00001", 2 * n, "s1", {"cpu": cost})], 1 + n))
            return out
        assert script() == script()


class TestSeller:
    def seller(self, capacity=2, sold=0):
        listing = Listing("ad1", "vm", DesireSet(SELL), capacity, 0.25, sold)
        return SellerAgent("s1", [listing], fixed_stance=Stance.LINEAR, resource_deadline_factor=0.0)

    def test_idle_urgency(self):
        s = self.seller(capacity=4, sold=1)
        assert s.idle_fraction("vm") == 0.75
        assert s.urgency_for("vm")["cpu"] == pytest.approx(2 / 3)

    def test_counter_and_accept(self):
        s = self.seller()
        s.decide([Commenced("x", "vm", "b1", "r", 5, 0)], 1)
        (counter,) = s.decide([Offer("x", 1, "b1", {"cpu": 10.0})], 1)
        assert counter.costs == {"cpu": 20.0} and counter.round == 2
        out = s.decide([Offer("x", 3, "b1", {"cpu": 19.9})], 2)
        assert isinstance(out[0], Accept) and s.listings["vm"].sold == 1

    def test_sold_out(self):
        s = self.seller(capacity=1, sold=1)
        s.decide([Commenced("x", "vm", "b1", "r", 5, 0)], 1)
        (out,) = s.decide([Offer("x", 1, "b1", {"cpu": 10.0})], 1)
        assert isinstance(out, Terminate) and out.reason == "sold_out"

    def test_counts_accept_from_buyer(self):
        s = self.seller()
        s.decide([Commenced("x", "vm", "b1", "r", 5, 0)], 1)
        s.decide([Accept("x", "b1")], 2)
        assert s.listings["vm"].sold == 1


def test_invalid_deadline_factor():
    with pytest.raises(ValueError):
        buyer(resource_deadline_factor=1.0)
