import pytest
from hypothesis import given, settings, strategies as st

from bdimarket.errors import DeadlinePassed
from bdimarket.marketplace import NegotiationEngine
from bdimarket.model import Accept, IssueSpec, Offer, Side, Stance, Terminate
from bdimarket.tactics import (
    ConcessionNegotiator,
    OpponentModel,
    ResourceState,
    TacticParams,
    accepts,
    adapt_stance,
    classify_opponent,
    concession_alpha,
    concession_curvature,
    effective_deadline,
    propose,
)

from oracles import alpha_oracle, crossing_oracle

BUYER = [IssueSpec("cpu", 1.0, 10, 20)]
SELLER = [IssueSpec("cpu", 1.0, 20, 10)]


class TestConcessionAlpha:
    def test_start_is_k(self):
        for beta in (0.3, 1.0, 3.0):
            assert concession_alpha(0, 10, TacticParams(k=0.1, beta=beta)) == 0.1

    def test_deadline_is_one(self):
        for k in (0.0, 0.4, 0.9):
            for beta in (0.3, 1.0, 3.0):
                assert concession_alpha(10, 10, TacticParams(k=k, beta=beta)) == pytest.approx(1.0, abs=1e-15)

    def test_square_root_example(self):
        assert concession_alpha(2.5, 10, TacticParams(beta=2.0)) == pytest.approx(0.5, abs=1e-12)

    def test_beyond_deadline_saturates(self):
        assert concession_alpha(15, 10, TacticParams()) == 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            concession_alpha(-1, 10, TacticParams())
        with pytest.raises(ValueError):
            TacticParams(k=1.0)
        with pytest.raises(ValueError):
            TacticParams(beta=0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 0.99), st.floats(0.05, 10), st.integers(1, 40))
def test_alpha_monotone_bounded_and_oracle(k, beta, t_max):
    params = TacticParams(k=k, beta=beta)
    prev = -1.0
    for t in range(t_max + 1):
        a = concession_alpha(t, t_max, params)
        assert k - 1e-12 <= a <= 1 + 1e-12
        assert a >= prev - 1e-12
        assert a == pytest.approx(alpha_oracle(t, t_max, k, beta), abs=1e-9)
        x = t / t_max
        if k == 0 and beta > 1:
            assert a >= x - 1e-12
        if k == 0 and beta < 1:
            assert a <= x + 1e-12
        prev = a


class TestEffectiveDeadline:
    def test_slack(self):
        assert effective_deadline(10, ResourceState(5, 1, 10, r_max=1.0)) == 10

    def test_half(self):
        assert effective_deadline(10, ResourceState(5, 1, 10, r_max=0.5)) == 5

    def test_floor_of_one(self):
        assert effective_deadline(1, ResourceState(5, 1, 10, r_max=0.01)) == 1

    def test_float_guard(self):
        assert effective_deadline(10, ResourceState(5, 1, 10, r_max=0.7)) == 7

    def test_tightest_resource_wins(self):
        rs = [ResourceState(1, 0, 1, r_max=0.9), ResourceState(1, 0, 1, r_max=0.3)]
        assert effective_deadline(10, rs) == 3

    def test_no_resources(self):
        assert effective_deadline(8) == 8

    def test_invalid_state(self):
        with pytest.raises(ValueError):
            ResourceState(11, 1, 10)
        with pytest.raises(ValueError):
            ResourceState(1, 1, 10, r_max=0)


class TestPropose:
    def test_opening_at_ideal(self):
        assert propose(BUYER, Side.BUYER, 0, 10, TacticParams(), Stance.LINEAR) == {"cpu": 10}

    def test_final_at_reservation(self):
        for stance in Stance:
            assert propose(SELLER, Side.SELLER, 10, 10, TacticParams(), stance) == {"cpu": pytest.approx(10)}

    def test_linear_midpoint(self):
        assert propose(BUYER, Side.BUYER, 5, 10, TacticParams(), Stance.LINEAR)["cpu"] == pytest.approx(15)

    def test_past_deadline(self):
        with pytest.raises(DeadlinePassed):
            propose(BUYER, Side.BUYER, 11, 10, TacticParams(), Stance.LINEAR)

    def test_wrong_orientation(self):
        with pytest.raises(ValueError):
            propose(BUYER, Side.SELLER, 1, 10, TacticParams(), Stance.LINEAR)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(list(Stance)), st.integers(1, 30), st.floats(0, 0.5))
def test_propose_sequences_monotone(stance, deadline, k):
    params = TacticParams(k=k)
    buy = [propose(BUYER, Side.BUYER, r, deadline, params, stance)["cpu"] for r in range(deadline + 1)]
    sell = [propose(SELLER, Side.SELLER, r, deadline, params, stance)["cpu"] for r in range(deadline + 1)]
    assert all(a <= b + 1e-12 for a, b in zip(buy, buy[1:]))
    assert all(a >= b - 1e-12 for a, b in zip(sell, sell[1:]))
    assert buy[-1] == pytest.approx(20) and sell[-1] == pytest.approx(10)


def stream(stance, rounds, issues=SELLER, side=Side.SELLER, k=0.0):
    """Offers as a seller would send them, for the buyer to classify."""
    return [Offer("s", 2 * r + 2, "x", propose(issues, side, r, rounds - 1, TacticParams(k=k), stance))
            for r in range(rounds)]


def classify(offers, issues=BUYER):
    model = OpponentModel()
    for o in offers:
        model.observe(o, issues)
    return model


class TestClassifyOpponent:
    def test_constant_offers_headstrong(self):
        offers = [Offer("s", n, "x", {"cpu": 20}) for n in range(1, 5)]
        assert classify(offers).estimated_class is Stance.HEADSTRONG

    def test_conceder_round_trip(self):
        assert classify(stream(Stance.CONCEDER, 8)).estimated_class is Stance.CONCEDER

    def test_linear_round_trip(self):
        assert classify(stream(Stance.LINEAR, 8)).estimated_class is Stance.LINEAR

    def test_headstrong_round_trip(self):
        assert classify(stream(Stance.HEADSTRONG, 8)).estimated_class is Stance.HEADSTRONG

    def test_too_few_observations_linear(self):
        assert classify(stream(Stance.CONCEDER, 8)[:2]).estimated_class is Stance.LINEAR

    def test_concession_rate_is_mean_gain(self):
        model = classify(stream(Stance.LINEAR, 5))
        assert model.concession_rate == pytest.approx(0.25)

    def test_refits_when_utilities_missing(self):
        model = OpponentModel(observed_offers=stream(Stance.CONCEDER, 8))
        assert classify_opponent(model, BUYER) is Stance.CONCEDER

    def test_curvature_sign(self):
        assert concession_curvature([0, 0.1, 0.2, 0.3]) == pytest.approx(0)
        assert concession_curvature([0, 0.01, 0.05, 0.5]) > 0
        assert concession_curvature([0, 0.5, 0.6, 0.62]) < 0
        assert concession_curvature([0.3, 0.3]) == 0


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(list(Stance)), st.integers(6, 30))
def test_round_trip_property(stance, rounds):
    assert classify(stream(stance, rounds)).estimated_class is stance


class TestAdaptStance:
    @pytest.mark.parametrize("own", list(Stance))
    def test_map(self, own):
        assert adapt_stance(own, Stance.LINEAR) is Stance.LINEAR
        assert adapt_stance(own, Stance.CONCEDER) is Stance.HEADSTRONG
        assert adapt_stance(own, Stance.HEADSTRONG) is Stance.CONCEDER


class TestAccepts:
    def test_dominant_offer(self):
        assert accepts({"cpu": 10}, {"cpu": 11}, BUYER)

    def test_worse_than_plan(self):
        assert not accepts({"cpu": 12}, {"cpu": 11}, BUYER)

    def test_outside_reservation(self):
        assert not accepts({"cpu": 21}, None, BUYER)

    def test_floor_without_plan(self):
        assert accepts({"cpu": 19}, None, BUYER, floor=0.05)
        assert not accepts({"cpu": 19}, None, BUYER, floor=0.2)


def drive(ttl, buyer_bounds=(10, 20), seller_bounds=(20, 10)):
    buyer_issues = [IssueSpec("cpu", 1.0, *buyer_bounds)]
    seller_issues = [IssueSpec("cpu", 1.0, *seller_bounds)]
    engine = NegotiationEngine()
    for a in ("b", "s"):
        engine.register_agent(a)
    session = engine.commence_negotiation("b", "s", "p", buyer_issues, seller_issues, ttl, 0)
    parties = {
        "b": ConcessionNegotiator("b", buyer_issues, Side.BUYER, horizon=ttl),
        "s": ConcessionNegotiator("s", seller_issues, Side.SELLER, horizon=ttl),
    }
    msg, now = parties["b"].opening(session), 0
    while session.is_open:
        sender = msg.sender
        responder = parties[session.counterpart(sender)]
        session, reply = engine.step(session.session_id, msg, now, responder)
        if reply is None:
            break
        msg, now = reply, now + 1
        if reply.sender == "marketplace":
            break
    return session


@pytest.mark.parametrize("ttl", [2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20])
def test_symmetric_linear_crossing_matches_replay_oracle(ttl):
    session = drive(ttl)
    expected = crossing_oracle(10, 20, 20, 10, ttl)
    assert expected is not None
    ply, cost, side = expected
    assert session.state.value == "agreed"
    assert session.closed_by == ("b" if side == "buyer" else "s")
    assert len(session.history) == ply - 1
    assert session.outcome_costs["cpu"] == pytest.approx(float(cost), abs=1e-9)


def test_crossing_ttl_ten_worked_value():
    session = drive(10)
    assert session.outcome_costs["cpu"] == pytest.approx(20 - 40 / 9, abs=1e-9)
    assert len(session.history) == 10


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 20), st.floats(5, 15), st.floats(1, 10), st.floats(-5, 5), st.floats(1, 10))
def test_asymmetric_crossing_matches_oracle(ttl, b_ideal, b_span, s_offset, s_span):
    b = (b_ideal, b_ideal + b_span)
    s_resv = b_ideal + s_offset + 0.01
    s = (s_resv + s_span, s_resv)
    if s[1] < 0:
        return
    session = drive(ttl, b, s)
    expected = crossing_oracle(*b, *s, ttl)
    if expected is None:
        assert session.state.value == "terminated"
    else:
        ply, cost, _ = expected
        assert session.state.value == "agreed"
        assert len(session.history) == ply - 1
        assert session.outcome_costs["cpu"] == pytest.approx(float(cost), abs=1e-7)


def test_negotiator_terminates_when_out_of_offers():
    n = ConcessionNegotiator("b", BUYER, Side.BUYER, horizon=1)
    engine = NegotiationEngine()
    for a in ("b", "s"):
        engine.register_agent(a)
    session = engine.commence_negotiation("b", "s", "p", BUYER, SELLER, 5, 0)
    session.history.append(n.opening(session))
    reply = n.respond(session, Offer(session.session_id, 2, "s", {"cpu": 21}))
    assert isinstance(reply, Terminate)
    # at the reservation with nothing left to offer, taking the deal beats walking away
    assert isinstance(n.respond(session, Offer(session.session_id, 2, "s", {"cpu": 20})), Accept)
    assert isinstance(n.respond(session, Offer(session.session_id, 2, "s", {"cpu": 10})), Accept)
