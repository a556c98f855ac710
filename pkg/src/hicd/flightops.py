"""Flight-operations business application ("COFOSServ").

A stand-in for the real collaborative flight-ops system: an in-memory
flight table that changes often, message templates with {placeholder}
slots, and the bip handlers the task models dispatch to.  The application
code stays outside the middleware; only the bips are declared to it.

Message completion rule: attempting to send a templated message succeeds
(positive branch, message_sent) once every placeholder is bound by the
accumulated draft plus the call's params, otherwise it lands on the
negative branch with an incomplete_message naming what is missing.
"""

from __future__ import annotations

import json
import string
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BadFilter, BadPatch, RightDenied, UnknownFlight, UnknownTemplate, UnknownUser,
)
from .interaction_core import BipOutcome, InteractionCore
from .profile_store import ProfileStore
from .service_bus import MethodDescriptor, ServiceDescriptor

BIP_PREFIX = "hic.im.business.cofos.bip.common."

FLIGHT_STATUSES = ("scheduled", "boarding", "departed", "delayed", "cancelled")
ALERT_STATUSES = ("delayed", "cancelled")

_MUTABLE_FIELDS = ("airline", "scheduled_time", "estimated_time", "gate", "status")

BOARD_COLUMNS = [
    ["flight_id", "flight", 100, 8],
    ["status", "status", 90, 10],
    ["scheduled_time", "sched", 80, 6],
    ["estimated_time", "estim", 70, 6],
    ["gate", "gate", 60, 5],
    ["airline", "airline", 50, 8],
]


@dataclass
class Flight:
    flight_id: str
    airline: str
    scheduled_time: str
    estimated_time: str
    gate: str
    status: str
    alert: bool = False

    def __post_init__(self):
        if self.status not in FLIGHT_STATUSES:
            raise BadPatch(f"bad status {self.status!r}")
        self.alert = self.status in ALERT_STATUSES

    def to_row(self) -> dict:
        return {"flight_id": self.flight_id, "airline": self.airline,
                "scheduled_time": self.scheduled_time,
                "estimated_time": self.estimated_time, "gate": self.gate,
                "status": self.status, "alert": self.alert}


@dataclass(frozen=True)
class MessageTemplate:
    template_id: str
    scope: str  # "general" | "specific"
    body: str

    def placeholders(self) -> set[str]:
        names = [f for _, f, _, _ in string.Formatter().parse(self.body)
                 if f is not None]
        return set(names)


class FlightStore:
    """Rights-checked flight table; every accepted update notifies."""

    def __init__(self, profiles: ProfileStore, on_update=None):
        self.profiles = profiles
        self.on_update = on_update  # callable(flight row dict)
        self._lock = threading.RLock()
        self._flights: dict[str, Flight] = {}

    def load(self, path: str | Path) -> int:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        with self._lock:
            for rec in doc["flights"]:
                flight = Flight(
                    flight_id=rec["flight_id"], airline=rec["airline"],
                    scheduled_time=rec["scheduled_time"],
                    estimated_time=rec["estimated_time"],
                    gate=rec["gate"], status=rec["status"])
                self._flights[flight.flight_id] = flight
            return len(self._flights)

    def query_flights(self, flt: dict | None = None) -> list[dict]:
        flt = flt or {}
        known = set(_MUTABLE_FIELDS) | {"flight_id", "alert"}
        bad = set(flt) - known
        if bad:
            raise BadFilter(f"unknown filter field(s): {sorted(bad)}")
        with self._lock:
            rows = [f.to_row() for f in self._flights.values()]
        return [row for row in rows
                if all(row[k] == v for k, v in flt.items())]

    def update_flight(self, actor: str, flight_id: str, patch: dict) -> dict:
        """Apply a patch if the actor's class may update flights; returns the
        updated row.  The alert flag is always derived from status."""
        if not self.profiles.check_right(actor, "flight.update"):
            raise RightDenied(f"{actor} may not update flights")
        bad = set(patch) - set(_MUTABLE_FIELDS)
        if bad:
            raise BadPatch(f"unknown field(s): {sorted(bad)}")
        with self._lock:
            flight = self._flights.get(flight_id)
            if flight is None:
                raise UnknownFlight(flight_id)
            if "status" in patch and patch["status"] not in FLIGHT_STATUSES:
                raise BadPatch(f"bad status {patch['status']!r}")
            for key, value in patch.items():
                setattr(flight, key, value)
            flight.alert = flight.status in ALERT_STATUSES
            row = flight.to_row()
        if self.on_update is not None:
            self.on_update(row)
        return row

    def snapshot(self) -> list[dict]:
        with self._lock:
            return [f.to_row() for f in self._flights.values()]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"flights": [
                {k: v for k, v in row.items() if k != "alert"}
                for row in self.snapshot()]}, indent=2),
            encoding="utf-8")


class TemplateStore:
    def __init__(self):
        self._templates: dict[str, MessageTemplate] = {}

    def load(self, path: str | Path) -> int:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        for rec in doc["templates"]:
            tpl = MessageTemplate(template_id=rec["template_id"],
                                  scope=rec["scope"], body=rec["body"])
            self._templates[tpl.template_id] = tpl
        return len(self._templates)

    def get(self, template_id: str) -> MessageTemplate:
        tpl = self._templates.get(template_id)
        if tpl is None:
            raise UnknownTemplate(template_id)
        return tpl

    def by_scope(self, scope: str) -> list[MessageTemplate]:
        return sorted((t for t in self._templates.values() if t.scope == scope),
                      key=lambda t: t.template_id)


def board_payload(rows: list[dict], title: str = "flight board") -> dict:
    """The flight table as an abstract display payload; delayed and
    cancelled flights are alert rows."""
    rows = sorted(rows, key=lambda r: r["flight_id"])
    return {
        "title": title,
        "columns": [list(c) for c in BOARD_COLUMNS],
        "rows": [{k: v for k, v in row.items() if k != "alert"} for row in rows],
        "alert_rows": [i for i, row in enumerate(rows) if row.get("alert")],
    }


@dataclass
class _Draft:
    scope: str
    template_id: str | None = None
    bound: dict = field(default_factory=dict)


class FlightOps:
    """The demo application: store, templates, bips, and the bus service."""

    SERVICE_NAME = "COFOSServ"

    def __init__(self, profiles: ProfileStore, core: InteractionCore,
                 flights_path: str | Path, templates_path: str | Path):
        self.profiles = profiles
        self.core = core
        self.store = FlightStore(profiles, on_update=self._broadcast_update)
        self.store.load(flights_path)
        self.templates = TemplateStore()
        self.templates.load(templates_path)
        self._lock = threading.RLock()
        self._drafts: dict[str, _Draft] = {}
        self._messages: list[str] = []

    # -- wiring ---------------------------------------------------------------

    def register_bips(self) -> None:
        for name, handler in self.bip_handlers().items():
            self.core.register_bip(BIP_PREFIX + name, handler)

    def bip_handlers(self) -> dict:
        return {
            "Connect": self.bip_connect,
            "Disconnect": self.bip_disconnect,
            "BrowseGeneralTemplates": self.bip_browse_general,
            "WriteGeneralMsg": self.bip_write_general,
            "BrowseSpecificTemplates": self.bip_browse_specific,
            "SelectSpecificTemplate": self.bip_select_specific,
            "CancelSpecificMsg": self.bip_cancel,
            "ReadMessage": self.bip_read_message,
            "UpdateFlight": self.bip_update_flight,
        }

    def descriptor(self, lease: float = 30.0) -> ServiceDescriptor:
        return ServiceDescriptor(
            name=self.SERVICE_NAME,
            methods=(MethodDescriptor(
                "AppRequest",
                param_schema=(("op", "str"), ("args", "map"))),),
            lease=lease,
        )

    def bus_handler(self, method: str, params: dict) -> dict:
        if method != "AppRequest":
            raise ValueError(f"unhandled method {method!r}")
        op = params["op"]
        args = dict(params["args"])
        if op == "query_flights":
            return {"flights": self.store.query_flights(args.get("filter"))}
        if op == "update_flight":
            row = self.store.update_flight(args["actor"], args["flight_id"],
                                           dict(args["patch"]))
            return {"ok": True, "flight": row}
        if op == "board":
            return {"payload": board_payload(self.store.snapshot())}
        if op == "list_templates":
            scope = args.get("scope")
            templates = (self.templates.by_scope(scope) if scope else
                         sorted(self.templates._templates.values(),
                                key=lambda t: t.template_id))
            return {"templates": [
                {"template_id": t.template_id, "scope": t.scope, "body": t.body}
                for t in templates]}
        raise ValueError(f"unknown op {op!r}")

    def _broadcast_update(self, row: dict) -> None:
        self.core.business_request(self.SERVICE_NAME, {
            "data_class": "flight",
            "payload": board_payload([row], title=f"flight update {row['flight_id']}"),
        })

    # -- bip handlers ----------------------------------------------------------

    def bip_connect(self, params: dict) -> BipOutcome:
        try:
            self.profiles.get_user(params["actor_id"])
        except UnknownUser:
            return BipOutcome("negative")
        return BipOutcome("positive")

    def bip_disconnect(self, params: dict) -> BipOutcome:
        with self._lock:
            self._drafts.pop(params["session_id"], None)
        return BipOutcome("positive")

    def bip_browse_general(self, params: dict) -> BipOutcome:
        return self._browse("general")

    def bip_browse_specific(self, params: dict) -> BipOutcome:
        return self._browse("specific")

    def _browse(self, scope: str) -> BipOutcome:
        ids = [t.template_id for t in self.templates.by_scope(scope)]
        if not ids:
            return BipOutcome("negative")
        return BipOutcome("positive", {"template_list": ",".join(ids)})

    def bip_write_general(self, params: dict) -> BipOutcome:
        return self._attempt_send(params, "general")

    def bip_select_specific(self, params: dict) -> BipOutcome:
        return self._attempt_send(params, "specific")

    def _attempt_send(self, params: dict, scope: str) -> BipOutcome:
        session_id = params["session_id"]
        with self._lock:
            draft = self._drafts.get(session_id)
            if "message_template" in params:
                draft = _Draft(scope=scope, template_id=params["message_template"])
                self._drafts[session_id] = draft
            if draft is None or draft.template_id is None:
                raise UnknownTemplate("no template selected")
            if "param_name" in params:
                draft.bound[str(params["param_name"])] = str(params.get("param_value", ""))
            template = self.templates.get(draft.template_id)
            if template.scope != scope:
                raise UnknownTemplate(
                    f"{template.template_id} is a {template.scope} template")
            bound = dict(draft.bound)
            for key, value in params.items():
                if key in template.placeholders():
                    bound[key] = str(value)
            missing = sorted(template.placeholders() - set(bound))
            if missing:
                return BipOutcome("negative", {
                    "incomplete_message": "missing: " + ",".join(missing)})
            body = template.body.format(**bound)
            self._messages.append(body)
            self._drafts.pop(session_id, None)
            return BipOutcome("positive", {"message_sent": body})

    def bip_cancel(self, params: dict) -> BipOutcome:
        with self._lock:
            self._drafts.pop(params["session_id"], None)
        return BipOutcome("positive")

    def bip_read_message(self, params: dict) -> BipOutcome:
        with self._lock:
            if not self._messages:
                return BipOutcome("negative")
            return BipOutcome("positive", {"message_body": self._messages[-1]})

    def bip_update_flight(self, params: dict) -> BipOutcome:
        try:
            row = self.store.update_flight(
                params["actor_id"], str(params.get("flight_id", "")),
                {str(params.get("field", "")): str(params.get("value", ""))})
        except UnknownFlight as exc:
            return BipOutcome("negative", {"update_error": f"unknown flight: {exc}"})
        return BipOutcome("positive", {"updated_flight": row["flight_id"]})

    def draft_of(self, session_id: str) -> _Draft | None:
        with self._lock:
            return self._drafts.get(session_id)

    def messages(self) -> list[str]:
        with self._lock:
            return list(self._messages)
