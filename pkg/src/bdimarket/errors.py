"""Exception hierarchy shared by every layer of the engine."""

from __future__ import annotations


class MarketError(Exception):
    """Base class for all engine errors."""


# -- core model ---------------------------------------------------------------

class WeightSumViolation(MarketError, ValueError):
    def __init__(self, total: float) -> None:
        super().__init__(f"issue weights sum to {total!r}, expected 1")
        self.total = total


class NegativeWeight(MarketError, ValueError):
    pass


class MissingIssue(MarketError, KeyError):
    pass


class UnnormalizedWeights(MarketError, ValueError):
    pass


class ZeroCost(MarketError, ZeroDivisionError):
    pass


# -- tactics --------------------------------------------------------------------

class DeadlinePassed(MarketError):
    pass


# -- marketplace ----------------------------------------------------------------

class UnknownAgent(MarketError, LookupError):
    pass


class DuplicateAdId(MarketError):
    pass


class NoMatch(MarketError):
    """No counterparty satisfies the RFQ right now; the caller may retry later."""


class PartyUnavailable(MarketError):
    pass


class SessionConflict(MarketError):
    """A second concurrent session for the same (buyer, seller, product)."""


class OutOfTurn(MarketError):
    pass


class SessionClosed(MarketError):
    pass


class SessionStillOpen(MarketError):
    pass


class DuplicateRecord(MarketError):
    pass


# -- coordination ---------------------------------------------------------------

class AlreadyCooperating(MarketError):
    pass


class NotParticipant(MarketError):
    pass


class MailboxClosed(MarketError):
    pass


class NotMember(MarketError):
    pass


# -- agent ------------------------------------------------------------------------

class NoApplicablePlan(MarketError, LookupError):
    pass


# -- harness ----------------------------------------------------------------------

class ParseError(MarketError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None) -> None:
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ValidationError(MarketError, ValueError):
    pass


class ScenarioNotSelfCompeting(MarketError):
    pass
