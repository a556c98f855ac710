"""ICServ, the user-side interaction container.

Three jobs: serve DisplayRequest by adapting an abstract tabular payload to
the attached terminal's capability and the user's personal names; encode
raw terminal actions (text commands, clicks, gestures) into middleware
requests through a declarative binding table; and aggregate several source
snapshots into one displayable payload that exists nowhere else.

Adaptation is deterministic: columns are the highest-priority prefix that
fits, rows are clipped, cells are truncated with an ellipsis, alert rows
are marked (markup when the terminal is rich, a "!" prefix otherwise).
Rendering is a pure function of (payload, capability, aliases); the
per-session attachment map is the only mutable state and is lock-guarded.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import JoinKeyMissing, MalformedPayload, UnboundAction, UnknownSession
from .profile_store import ProfileStore
from .service_bus import MethodDescriptor, ServiceDescriptor

ELLIPSIS = "…"


@dataclass(frozen=True)
class TerminalCapability:
    kind: str
    max_columns: int
    max_rows: int
    max_cell_width: int
    rich: bool

    @classmethod
    def from_dict(cls, d: dict) -> "TerminalCapability":
        return cls(kind=d["kind"], max_columns=int(d["max_columns"]),
                   max_rows=int(d["max_rows"]),
                   max_cell_width=int(d["max_cell_width"]),
                   rich=bool(d["rich"]))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "max_columns": self.max_columns,
                "max_rows": self.max_rows, "max_cell_width": self.max_cell_width,
                "rich": self.rich}


# columns/rows follow the pc >= pda >= phone convention; cell widths and
# rich flags are local defaults, overridable per daemon config
PRESETS: dict[str, TerminalCapability] = {
    "pc": TerminalCapability("pc", 12, 40, 32, True),
    "pda": TerminalCapability("pda", 6, 24, 16, False),
    "phone": TerminalCapability("phone", 3, 12, 8, False),
}


@dataclass(frozen=True)
class Column:
    id: str
    label: str
    priority: int
    width: int


@dataclass
class DisplayPayload:
    title: str
    columns: list[Column]
    rows: list[dict]
    alert_rows: set[int] = field(default_factory=set)

    @classmethod
    def from_dict(cls, d: dict) -> "DisplayPayload":
        if not isinstance(d, dict):
            raise MalformedPayload("payload must be a map")
        try:
            columns = [Column(c[0], c[1], int(c[2]), int(c[3]))
                       if isinstance(c, (list, tuple))
                       else Column(c["id"], c["label"], int(c["priority"]),
                                   int(c["width"]))
                       for c in d["columns"]]
            rows = [dict(r) for r in d["rows"]]
            payload = cls(title=str(d.get("title", "")), columns=columns,
                          rows=rows, alert_rows=set(d.get("alert_rows", [])))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise MalformedPayload(f"bad payload shape: {exc}")
        payload.check()
        return payload

    def check(self) -> None:
        ids = [c.id for c in self.columns]
        if len(ids) != len(set(ids)):
            raise MalformedPayload("duplicate column ids")
        priorities = [c.priority for c in self.columns]
        if len(priorities) != len(set(priorities)):
            raise MalformedPayload("column priorities must be unique")
        known = set(ids)
        for i, row in enumerate(self.rows):
            extra = set(row) - known
            if extra:
                raise MalformedPayload(f"row {i} has keys outside columns: {sorted(extra)}")
        for idx in self.alert_rows:
            if not isinstance(idx, int) or not 0 <= idx < len(self.rows):
                raise MalformedPayload(f"alert row index {idx!r} out of range")

    def to_dict(self) -> dict:
        return {"title": self.title,
                "columns": [[c.id, c.label, c.priority, c.width]
                            for c in self.columns],
                "rows": [dict(r) for r in self.rows],
                "alert_rows": sorted(self.alert_rows)}


@dataclass
class RenderedView:
    title: str
    columns: list[str]       # chosen column ids, priority order
    lines: list[str]         # header line then one line per row
    alert_lines: list[int]   # indices into lines
    rich: bool

    def to_dict(self) -> dict:
        return {"title": self.title, "columns": list(self.columns),
                "lines": list(self.lines), "alert_lines": list(self.alert_lines),
                "rich": self.rich}


def choose_columns(payload: DisplayPayload,
                   capability: TerminalCapability) -> list[Column]:
    """Highest-priority prefix that fits the terminal, in priority order."""
    ranked = sorted(payload.columns, key=lambda c: -c.priority)
    return ranked[:capability.max_columns]


def truncate_cell(text: str, width: int) -> str:
    if len(text) <= width:
        return text
    if width <= 1:
        return ELLIPSIS
    return text[:width - 1] + ELLIPSIS


def render(payload: DisplayPayload, capability: TerminalCapability,
           personal_names: dict[str, str] | None = None) -> RenderedView:
    """Pure adaptation: same inputs, same output, no session state."""
    personal_names = personal_names or {}
    columns = choose_columns(payload, capability)
    rows = payload.rows[:capability.max_rows]
    widths = [max(1, min(c.width, capability.max_cell_width)) for c in columns]

    def cell(row: dict, col: Column, width: int) -> str:
        raw = row.get(col.id, "")
        text = "" if raw is None else str(raw)
        text = personal_names.get(text, text)
        return truncate_cell(text, min(width, capability.max_cell_width))

    lines = [" | ".join(truncate_cell(c.label, w).ljust(w)
                        for c, w in zip(columns, widths)).rstrip()]
    alert_lines: list[int] = []
    for i, row in enumerate(rows):
        body = " | ".join(cell(row, c, w).ljust(w)
                          for c, w in zip(columns, widths)).rstrip()
        if i in payload.alert_rows:
            alert_lines.append(len(lines))
            if not capability.rich:
                body = "!" + body
        lines.append(body)
    return RenderedView(title=payload.title, columns=[c.id for c in columns],
                        lines=lines, alert_lines=alert_lines,
                        rich=capability.rich)


@dataclass(frozen=True)
class Binding:
    kind: str       # text | click | gesture
    match: str      # text verb, widget name, or gesture name
    event: str      # task-model event id
    params: tuple[str, ...] = ()


class BindingTable:
    """Bijective raw-action <-> task-event mapping.

    Text commands split on whitespace: the verb selects the binding and the
    remaining tokens bind positionally, the last declared param absorbing
    any surplus tokens.  Clicks and gestures match on their payload name
    and carry params explicitly.
    """

    def __init__(self, bindings: list[Binding]):
        self.by_raw = {(b.kind, b.match): b for b in bindings}
        self.by_event = {b.event: b for b in bindings}
        if len(self.by_raw) != len(bindings) or len(self.by_event) != len(bindings):
            raise ValueError("binding table must be bijective")
        self.bindings = list(bindings)

    @classmethod
    def from_file(cls, path: str | Path) -> "BindingTable":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_list(doc["bindings"])

    @classmethod
    def from_list(cls, entries: list[dict]) -> "BindingTable":
        return cls([Binding(kind=e["kind"], match=e["match"], event=e["event"],
                            params=tuple(e.get("params", [])))
                    for e in entries])

    def encode(self, raw: dict) -> tuple[str, dict]:
        """raw terminal event -> (task event id, params)."""
        kind = raw.get("kind")
        payload = raw.get("payload", "")
        if kind == "text":
            tokens = str(payload).split()
            if not tokens:
                raise UnboundAction("empty text command")
            binding = self.by_raw.get(("text", tokens[0]))
            if binding is None:
                raise UnboundAction(f"no binding for text command {tokens[0]!r}")
            args = tokens[1:]
            if len(args) < len(binding.params):
                raise UnboundAction(
                    f"{tokens[0]!r} needs {len(binding.params)} argument(s)")
            params = {}
            for i, pid in enumerate(binding.params):
                if i == len(binding.params) - 1:
                    params[pid] = " ".join(args[i:])
                else:
                    params[pid] = args[i]
            return binding.event, params
        if kind in ("click", "gesture"):
            binding = self.by_raw.get((kind, str(payload)))
            if binding is None:
                raise UnboundAction(f"no binding for {kind} {payload!r}")
            given = raw.get("params", {})
            return binding.event, {pid: given.get(pid, "") for pid in binding.params}
        raise UnboundAction(f"unknown raw action kind {kind!r}")

    def decode(self, event: str, params: dict) -> dict:
        """Inverse of encode, for round-trip checks and UI affordances."""
        binding = self.by_event.get(event)
        if binding is None:
            raise UnboundAction(f"no binding for event {event!r}")
        if binding.kind == "text":
            parts = [binding.match] + [str(params.get(pid, "")) for pid in binding.params]
            return {"kind": "text", "payload": " ".join(parts).rstrip()}
        raw = {"kind": binding.kind, "payload": binding.match}
        if binding.params:
            raw["params"] = {pid: params.get(pid, "") for pid in binding.params}
        return raw


def aggregate(sources: list[list[dict]], rule: dict) -> DisplayPayload:
    """Key-join several source snapshots into one payload.

    rule: {"key", "title", "columns": [[id,label,priority,width],...],
    "alert_field"?}.  Inner join on equal key values across all sources,
    rows sorted by key; missing join keys raise JoinKeyMissing.  Rows are
    projected onto the declared columns.
    """
    key = rule["key"]
    columns = [Column(*c) if isinstance(c, (list, tuple)) else
               Column(c["id"], c["label"], c["priority"], c["width"])
               for c in rule["columns"]]
    for si, source in enumerate(sources):
        for ri, row in enumerate(source):
            if key not in row:
                raise JoinKeyMissing(f"source {si} row {ri} lacks join key {key!r}")
    joined: list[dict]
    if not sources:
        joined = []
    else:
        joined = [dict(r) for r in sources[0]]
        for source in sources[1:]:
            joined = [dict(left, **right)
                      for left in joined for right in source
                      if left[key] == right[key]]
        joined.sort(key=lambda row: str(row[key]))
    alert_field = rule.get("alert_field")
    alert_rows = {i for i, row in enumerate(joined)
                  if alert_field and row.get(alert_field)}
    ids = {c.id for c in columns}
    projected = [{k: v for k, v in row.items() if k in ids} for row in joined]
    payload = DisplayPayload(title=rule.get("title", ""), columns=columns,
                             rows=projected, alert_rows=alert_rows)
    payload.check()
    return payload


@dataclass
class _Attachment:
    capability: TerminalCapability
    actor_id: str


class InteractionContainer:
    """One container service instance; sessions attach with a capability."""

    def __init__(self, name: str, profiles: ProfileStore,
                 bindings: BindingTable | None = None,
                 capabilities: dict[str, TerminalCapability] | None = None,
                 bus=None):
        self.name = name
        self.profiles = profiles
        self.bindings = bindings
        self.capabilities = dict(capabilities or PRESETS)
        self.bus = bus
        self._lock = threading.Lock()
        self._attached: dict[str, _Attachment] = {}

    def resolve_capability(self, capability) -> TerminalCapability:
        if isinstance(capability, TerminalCapability):
            return capability
        if isinstance(capability, str):
            if capability not in self.capabilities:
                raise MalformedPayload(f"unknown capability preset {capability!r}")
            return self.capabilities[capability]
        if isinstance(capability, dict):
            return TerminalCapability.from_dict(capability)
        raise MalformedPayload(f"bad capability {capability!r}")

    def attach_session(self, session_id: str, capability, actor_id: str) -> None:
        cap = self.resolve_capability(capability)
        with self._lock:
            self._attached[session_id] = _Attachment(cap, actor_id)

    def detach_session(self, session_id: str) -> None:
        with self._lock:
            self._attached.pop(session_id, None)

    def attachment(self, session_id: str) -> _Attachment:
        with self._lock:
            att = self._attached.get(session_id)
            if att is None:
                raise UnknownSession(session_id)
            return att

    def display_request(self, session_id: str, payload) -> RenderedView:
        """Adapt and render a payload for the attached session's terminal."""
        att = self.attachment(session_id)
        if not isinstance(payload, DisplayPayload):
            payload = DisplayPayload.from_dict(payload)
        else:
            payload.check()
        return render(payload, att.capability,
                      self.profiles.personalize_map(att.actor_id))

    def capture_action(self, session_id: str, raw: dict) -> dict:
        """Encode a raw terminal event and forward it to the middleware
        kernel; returns the resulting notification."""
        att = self.attachment(session_id)
        if self.bindings is None:
            raise UnboundAction("no binding table configured")
        event_id, params = self.bindings.encode(raw)
        if self.bus is None:
            raise UnboundAction("container is not wired to a bus")
        return self.bus.invoke(
            "IMServ", "InteractionRequest",
            {"session_id": session_id, "actor_id": att.actor_id,
             "event_id": event_id, "params": params},
            caller=self.name)

    # -- bus service face ---------------------------------------------------

    def descriptor(self, lease: float = 30.0) -> ServiceDescriptor:
        return ServiceDescriptor(
            name=self.name,
            methods=(MethodDescriptor(
                "DisplayRequest",
                param_schema=(("session_id", "str"), ("payload", "map")),
                result_schema=(("view", "map"),)),),
            lease=lease,
        )

    def bus_handler(self, method: str, params: dict) -> dict:
        if method == "DisplayRequest":
            view = self.display_request(params["session_id"], params["payload"])
            return {"view": view.to_dict()}
        raise ValueError(f"unhandled method {method!r}")
