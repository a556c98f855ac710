"""Service declaration, naming, lifecycle, and invocation.

Services register a descriptor (unique name, method schemas, lease) and a
handler; anyone can look them up by name and invoke a declared method.
Leases expire registrations atomically: an expired service is simply not
there anymore, and its name is free again.

Faults are values, not crashes: every failure mode surfaces as a BusFault
subclass with a stable code, which the wire layer serializes as
{code, message} and peers re-raise.  A handler exception never takes the
bus down; it becomes an ApplicationFault for that one call.

The call trace is append-only, one entry per invoke in global invocation
order, successful or not.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from .errors import (
    ApplicationFault, BadParams, BusFault, DuplicateName, NotFound,
    UnknownMethod, UnknownRegistration,
)

Handler = Callable[[str, dict], dict]  # (method, params) -> result map
Param = tuple[str, str]


@dataclass(frozen=True)
class MethodDescriptor:
    name: str
    param_schema: tuple[Param, ...] = ()
    result_schema: tuple[Param, ...] = ()

    def __post_init__(self):
        ids = [pid for pid, _ in self.param_schema]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate param ids in method {self.name!r}")


@dataclass(frozen=True)
class ServiceDescriptor:
    name: str
    methods: tuple[MethodDescriptor, ...] = ()
    endpoint: str = "inprocess"
    lease: float = 30.0

    def method(self, name: str) -> MethodDescriptor | None:
        for m in self.methods:
            if m.name == name:
                return m
        return None


@dataclass
class TraceEntry:
    index: int
    caller: str
    service: str
    method: str
    status: str  # "ok" | "fault:<code>" | "pending"

    def to_dict(self) -> dict:
        return {"index": self.index, "caller": self.caller,
                "service": self.service, "method": self.method,
                "status": self.status}


@dataclass
class _Registration:
    reg_id: str
    descriptor: ServiceDescriptor
    handler: Handler
    expires_at: float


class ServiceBus:
    def __init__(self, clock: Callable[[], float] = time.monotonic):
        self._clock = clock
        self._lock = threading.RLock()
        self._by_name: dict[str, _Registration] = {}
        self._by_reg: dict[str, _Registration] = {}
        self._next_reg = 1
        self._trace_lock = threading.Lock()
        self._trace: list[TraceEntry] = []

    def register(self, descriptor: ServiceDescriptor, handler: Handler) -> str:
        with self._lock:
            self._sweep()
            if descriptor.name in self._by_name:
                raise DuplicateName(descriptor.name)
            reg_id = f"reg-{self._next_reg}"
            self._next_reg += 1
            reg = _Registration(reg_id, descriptor, handler,
                                self._clock() + descriptor.lease)
            self._by_name[descriptor.name] = reg
            self._by_reg[reg_id] = reg
            return reg_id

    def lookup(self, name: str) -> ServiceDescriptor:
        return self._live_registration(name).descriptor

    def list_services(self) -> list[str]:
        with self._lock:
            self._sweep()
            return sorted(self._by_name)

    def renew_lease(self, reg_id: str) -> float:
        with self._lock:
            self._sweep()
            reg = self._by_reg.get(reg_id)
            if reg is None:
                raise UnknownRegistration(reg_id)
            reg.expires_at = self._clock() + reg.descriptor.lease
            return reg.expires_at

    def unregister(self, reg_id: str) -> None:
        with self._lock:
            reg = self._by_reg.pop(reg_id, None)
            if reg is None:
                raise UnknownRegistration(reg_id)
            self._by_name.pop(reg.descriptor.name, None)

    def invoke(self, service: str, method: str, params: dict,
               caller: str = "anonymous") -> dict:
        """Synchronous call.  Raises a BusFault subclass on any failure;
        the handler runs outside the registry lock."""
        entry = self._trace_begin(caller, service, method)
        try:
            reg = self._live_registration(service)
            mdesc = reg.descriptor.method(method)
            if mdesc is None:
                raise UnknownMethod(f"{service}.{method}")
            self._check_params(service, method, mdesc, params)
            try:
                result = reg.handler(method, params)
            except BusFault:
                raise
            except Exception as exc:
                raise ApplicationFault(f"{type(exc).__name__}: {exc}")
            if not isinstance(result, dict):
                raise ApplicationFault(
                    f"handler for {service}.{method} returned {type(result).__name__}, "
                    "expected a result map")
            entry.status = "ok"
            return result
        except BusFault as fault:
            entry.status = f"fault:{fault.code}"
            raise

    def call_trace(self) -> list[TraceEntry]:
        with self._trace_lock:
            return [TraceEntry(**e.to_dict()) for e in self._trace]

    # -- internals --------------------------------------------------------

    def _trace_begin(self, caller, service, method) -> TraceEntry:
        with self._trace_lock:
            entry = TraceEntry(len(self._trace), caller, service, method, "pending")
            self._trace.append(entry)
            return entry

    def _live_registration(self, name: str) -> _Registration:
        with self._lock:
            self._sweep()
            reg = self._by_name.get(name)
            if reg is None:
                raise NotFound(name)
            return reg

    def _sweep(self) -> None:
        now = self._clock()
        dead = [name for name, reg in self._by_name.items()
                if reg.expires_at <= now]
        for name in dead:
            reg = self._by_name.pop(name)
            self._by_reg.pop(reg.reg_id, None)

    @staticmethod
    def _check_params(service, method, mdesc: MethodDescriptor, params: dict) -> None:
        if not isinstance(params, dict):
            raise BadParams(f"{service}.{method}: params must be a map")
        declared = {pid for pid, _ in mdesc.param_schema}
        missing = declared - set(params)
        extra = set(params) - declared
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"missing {sorted(missing)}")
            if extra:
                parts.append(f"unexpected {sorted(extra)}")
            raise BadParams(f"{service}.{method}: " + ", ".join(parts))
