"""Exception hierarchy shared across the middleware.

Bus faults carry a stable machine-readable code so they can travel the wire
as values ({code, message}) and be re-raised on the far side unchanged.
"""

from __future__ import annotations


class HicdError(Exception):
    """Base class for every error raised by this package."""


# --- event heap ---------------------------------------------------------

class InvalidEvent(HicdError):
    pass


class ClockRegression(HicdError):
    pass


class UnknownSubscription(HicdError):
    pass


# --- task engine --------------------------------------------------------

class ParseError(HicdError):
    """Task-model text rejected; carries the 1-based source line."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class WellFormednessError(ParseError):
    pass


class UnknownState(HicdError):
    pass


class EventNotAllowed(HicdError):
    pass


# --- profile store ------------------------------------------------------

class UnknownUser(HicdError):
    pass


class AliasChain(HicdError):
    pass


class ProfileFormatError(HicdError):
    pass


# --- interaction core ---------------------------------------------------

class UnknownSession(HicdError):
    pass


class UnknownTaskModel(HicdError):
    pass


class DuplicateBip(HicdError):
    pass


class UnknownApp(HicdError):
    pass


# --- interaction container ----------------------------------------------

class MalformedPayload(HicdError):
    pass


class UnboundAction(HicdError):
    pass


class JoinKeyMissing(HicdError):
    pass


# --- flight ops ---------------------------------------------------------

class RightDenied(HicdError):
    pass


class UnknownFlight(HicdError):
    pass


class BadFilter(HicdError):
    pass


class BadPatch(HicdError):
    pass


class UnknownTemplate(HicdError):
    pass


# --- service bus ---------------------------------------------------------

class BusFault(HicdError):
    """A structured fault: the bus never crashes, it returns these as values.

    `code` is stable across the wire; `message` is free text.
    """

    code = "fault"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.message = message

    def to_payload(self) -> dict:
        return {"code": self.code, "message": self.message}


class NotFound(BusFault):
    code = "not_found"


class DuplicateName(BusFault):
    code = "duplicate_name"


class UnknownMethod(BusFault):
    code = "unknown_method"


class BadParams(BusFault):
    code = "bad_params"


class TransportError(BusFault):
    code = "transport_error"


class ApplicationFault(BusFault):
    code = "application_fault"


class UnknownRegistration(BusFault):
    code = "unknown_registration"


_FAULT_BY_CODE = {
    cls.code: cls
    for cls in (NotFound, DuplicateName, UnknownMethod, BadParams,
                TransportError, ApplicationFault, UnknownRegistration)
}


def fault_from_payload(payload: dict) -> BusFault:
    """Rebuild the typed fault a wire peer sent as {code, message}."""
    code = payload.get("code", "fault")
    message = payload.get("message", "")
    cls = _FAULT_BY_CODE.get(code)
    if cls is None:
        return BusFault(message, code=code)
    return cls(message)
