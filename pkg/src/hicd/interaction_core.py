"""IMServ, the middleware kernel: sessions, the bip registry, and the
interaction loop.

Every behavior, whether a person or an application emitted it, arrives as
ActionData and runs the same loop: find the session, check the event
against the actor's class task model, check the class rights on the
event's bip method, execute the bip, transition the session, and notify
the session's container.  The loop's rejection order is part of the
contract (an independent replay must reproduce it):

    1. event not allowed in the current state   -> "event_not_allowed"
    2. class rights lack the event's bip method -> "right_denied"
    3. no handler bound for the bip             -> "bip_unbound"
    4. handler raised, returned a malformed
       outcome, or out_params escape the branch
       schema                                   -> "bip_fault" / "bad_out_params"

A rejection never moves the session, but it is recorded in the history and
notified exactly like an acceptance, so a console that takes over the
session sees everything that happened.

Notifications travel two ways: one targeted event on the heap (the
authoritative record) and a best-effort DisplayRequest push to the
container service when it is registered on the bus.

Concurrency: requests on distinct sessions run concurrently; requests on
one session serialize in arrival order.  Bip handlers may be called from
any thread.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable

from .errors import (
    BusFault, DuplicateBip, NotFound, UnknownApp, UnknownSession,
    UnknownTaskModel, UnknownUser,
)
from .event_heap import Event, EventHeap
from .profile_store import ProfileStore
from .service_bus import MethodDescriptor, ServiceBus, ServiceDescriptor
from .task_engine import TaskModel, transition

log = logging.getLogger(__name__)

NOTIFICATION_EVENT_TYPE = "imserv.notification"

BipHandler = Callable[[dict], "BipOutcome"]


@dataclass(frozen=True)
class ActionData:
    """One behavior: the middleware does not care whether actor_id names a
    person or an application."""

    actor_id: str
    session_id: str
    event_id: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BipOutcome:
    branch: str  # "positive" | "negative"
    out_params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Notification:
    session_id: str
    event_id: str
    status: str            # "accepted" | "rejected"
    outcome: str | None    # branch when accepted
    reason: str | None     # rejection reason code
    out_params: dict
    new_state: str

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "event_id": self.event_id,
                "status": self.status, "outcome": self.outcome,
                "reason": self.reason, "out_params": dict(self.out_params),
                "new_state": self.new_state}


@dataclass
class Session:
    session_id: str
    actor_id: str
    app_id: str
    current_state: str
    container_id: str
    history: list[dict] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    def snapshot(self) -> dict:
        with self.lock:
            return {"session_id": self.session_id, "actor_id": self.actor_id,
                    "app_id": self.app_id, "current_state": self.current_state,
                    "container_id": self.container_id,
                    "history": [dict(h) for h in self.history]}


class InteractionCore:
    def __init__(self, heap: EventHeap, bus: ServiceBus,
                 models: dict[str, TaskModel], profiles: ProfileStore,
                 containers: dict | None = None,
                 notification_ttl: float = 300.0):
        self.heap = heap
        self.bus = bus
        self.models = models
        self.profiles = profiles
        self.containers = containers if containers is not None else {}
        self.notification_ttl = notification_ttl
        self._bips: dict[str, BipHandler] = {}
        self._sessions: dict[str, Session] = {}
        self._lock = threading.RLock()
        self._next_session = 1

    # -- bip registry -------------------------------------------------------

    def register_bip(self, method_id: str, handler: BipHandler) -> None:
        with self._lock:
            if method_id in self._bips:
                raise DuplicateBip(method_id)
            self._bips[method_id] = handler

    def bips(self) -> list[str]:
        with self._lock:
            return sorted(self._bips)

    # -- sessions -----------------------------------------------------------

    def open_session(self, actor_id: str, app_id: str, container_id: str,
                     capability=None) -> Session:
        profile = self.profiles.get_user(actor_id)  # UnknownUser
        cls = self.profiles.class_of(actor_id)
        model = self.models.get(cls.task_model_id)
        if model is None:
            raise UnknownTaskModel(cls.task_model_id)
        with self._lock:
            session_id = f"sess-{self._next_session:04d}"
            self._next_session += 1
            session = Session(session_id=session_id, actor_id=profile.user_id,
                              app_id=app_id, current_state=model.starting_state,
                              container_id=container_id)
            self._sessions[session_id] = session
        self._attach(container_id, session_id, capability, actor_id)
        return session

    def session(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise UnknownSession(session_id)
            return session

    def sessions(self) -> list[Session]:
        with self._lock:
            return [self._sessions[k] for k in sorted(self._sessions)]

    def resume_session(self, session_id: str, new_container_id: str,
                       new_capability) -> Session:
        """Rebind a live session to another console: state and history stay,
        the container binding and terminal capability change."""
        session = self.session(session_id)
        with session.lock:
            old_container = session.container_id
            if old_container != new_container_id:
                container = self.containers.get(old_container)
                if container is not None:
                    container.detach_session(session_id)
            session.container_id = new_container_id
            self._attach(new_container_id, session_id, new_capability,
                         session.actor_id)
        return session

    def _attach(self, container_id, session_id, capability, actor_id):
        container = self.containers.get(container_id)
        if container is not None:
            container.attach_session(session_id, capability or "pc", actor_id)

    # -- the interaction loop -------------------------------------------------

    def interaction_request(self, action: ActionData) -> Notification:
        session = self.session(action.session_id)
        with session.lock:
            cls = self.profiles.class_of(session.actor_id)
            model = self.models.get(cls.task_model_id)
            if model is None:
                raise UnknownTaskModel(cls.task_model_id)
            state = model.states[session.current_state]
            spec = state.events.get(action.event_id)
            if spec is None:
                return self._reject(session, action, "event_not_allowed")
            bip = spec.call.bip_method
            if bip not in cls.rights:
                return self._reject(session, action, "right_denied")
            handler = self._bips.get(bip)
            if handler is None:
                return self._reject(session, action, "bip_unbound")
            params = dict(action.params)
            params["session_id"] = session.session_id
            params["actor_id"] = session.actor_id
            try:
                outcome = handler(params)
            except Exception as exc:
                log.debug("bip %s raised: %s", bip, exc)
                return self._reject(session, action, "bip_fault")
            if (not isinstance(outcome, BipOutcome)
                    or outcome.branch not in ("positive", "negative")):
                return self._reject(session, action, "bip_fault")
            next_state, out_schema = transition(
                model, session.current_state, action.event_id, outcome.branch)
            if not set(outcome.out_params) <= {pid for pid, _ in out_schema}:
                return self._reject(session, action, "bad_out_params")
            session.current_state = next_state
            session.history.append({
                "event_id": action.event_id, "outcome": outcome.branch,
                "out_params": dict(outcome.out_params), "ts": self.heap.now,
            })
            notification = Notification(
                session_id=session.session_id, event_id=action.event_id,
                status="accepted", outcome=outcome.branch, reason=None,
                out_params=dict(outcome.out_params), new_state=next_state)
            self._notify(session, notification)
            return notification

    def _reject(self, session: Session, action: ActionData,
                reason: str) -> Notification:
        session.history.append({
            "event_id": action.event_id, "outcome": "rejected",
            "out_params": {}, "ts": self.heap.now, "reason": reason,
        })
        notification = Notification(
            session_id=session.session_id, event_id=action.event_id,
            status="rejected", outcome=None, reason=reason, out_params={},
            new_state=session.current_state)
        self._notify(session, notification)
        return notification

    def _notify(self, session: Session, notification: Notification) -> None:
        self.heap.post(Event(
            event_type=NOTIFICATION_EVENT_TYPE,
            fields={
                "session_id": notification.session_id,
                "event_id": notification.event_id,
                "status": notification.status,
                "outcome": notification.outcome or "",
                "reason": notification.reason or "",
                "new_state": notification.new_state,
                "out_params": json.dumps(notification.out_params, sort_keys=True),
            },
            source="IMServ",
            targets=frozenset({session.container_id}),
            ttl=self.notification_ttl,
        ))
        payload = _notification_payload(notification)
        try:
            self.bus.invoke(session.container_id, "DisplayRequest",
                            {"session_id": session.session_id, "payload": payload},
                            caller="IMServ")
        except NotFound:
            pass  # container not on the bus (bare-kernel tests)
        except BusFault as fault:
            log.warning("notification push to %s failed: %s",
                        session.container_id, fault)

    # -- application-side entry ----------------------------------------------

    def business_request(self, app_id: str, info: dict) -> int:
        """Adapt and push application info to every open session whose actor
        may read the info's data class; returns the delivery count."""
        try:
            self.bus.lookup(app_id)
        except NotFound:
            raise UnknownApp(app_id)
        data_class = str(info.get("data_class", ""))
        payload = info.get("payload")
        permission = f"{data_class}.read"
        delivered = 0
        for session in self.sessions():
            try:
                if not self.profiles.check_right(session.actor_id, permission):
                    continue
            except UnknownUser:
                continue
            try:
                self.bus.invoke(session.container_id, "DisplayRequest",
                                {"session_id": session.session_id,
                                 "payload": payload},
                                caller=app_id)
                delivered += 1
            except BusFault as fault:
                log.warning("business push to %s failed: %s",
                            session.container_id, fault)
        return delivered

    # -- bus service face ------------------------------------------------------

    def descriptor(self, lease: float = 30.0) -> ServiceDescriptor:
        return ServiceDescriptor(
            name="IMServ",
            methods=(
                MethodDescriptor("InteractionRequest", param_schema=(
                    ("session_id", "str"), ("actor_id", "str"),
                    ("event_id", "str"), ("params", "map"))),
                MethodDescriptor("BusinessRequest", param_schema=(
                    ("app_id", "str"), ("info", "map"))),
                MethodDescriptor("OpenSession", param_schema=(
                    ("actor_id", "str"), ("app_id", "str"),
                    ("container_id", "str"), ("capability", "str"))),
                MethodDescriptor("ResumeSession", param_schema=(
                    ("session_id", "str"), ("container_id", "str"),
                    ("capability", "str"))),
                MethodDescriptor("AllowedEvents", param_schema=(
                    ("session_id", "str"),)),
            ),
            lease=lease,
        )

    def bus_handler(self, method: str, params: dict) -> dict:
        if method == "InteractionRequest":
            action = ActionData(actor_id=params["actor_id"],
                                session_id=params["session_id"],
                                event_id=params["event_id"],
                                params=dict(params["params"]))
            return self.interaction_request(action).to_dict()
        if method == "BusinessRequest":
            return {"delivered": self.business_request(params["app_id"],
                                                       dict(params["info"]))}
        if method == "OpenSession":
            session = self.open_session(params["actor_id"], params["app_id"],
                                        params["container_id"],
                                        params["capability"] or None)
            return {"session_id": session.session_id,
                    "state": session.current_state}
        if method == "ResumeSession":
            session = self.resume_session(params["session_id"],
                                          params["container_id"],
                                          params["capability"] or None)
            with session.lock:
                return {"session_id": session.session_id,
                        "state": session.current_state,
                        "history_length": len(session.history)}
        if method == "AllowedEvents":
            session = self.session(params["session_id"])
            cls = self.profiles.class_of(session.actor_id)
            model = self.models[cls.task_model_id]
            with session.lock:
                state = model.states[session.current_state]
                return {
                    "state": session.current_state,
                    "events": sorted(state.events),
                    "event_params": {
                        eid: [[pid, ptype] for pid, ptype in spec.in_params]
                        for eid, spec in sorted(state.events.items())
                    },
                }
        raise ValueError(f"unhandled method {method!r}")


def _notification_payload(notification: Notification) -> dict:
    rows = [
        {"field": "status", "value": notification.status},
        {"field": "outcome", "value": notification.outcome or ""},
        {"field": "reason", "value": notification.reason or ""},
        {"field": "event", "value": notification.event_id},
        {"field": "state", "value": notification.new_state},
    ]
    rows.extend({"field": k, "value": str(v)}
                for k, v in sorted(notification.out_params.items()))
    return {
        "title": f"notification {notification.session_id}",
        "columns": [["field", "field", 2, 12], ["value", "value", 1, 40]],
        "rows": rows,
        "alert_rows": [0] if notification.status == "rejected" else [],
    }
