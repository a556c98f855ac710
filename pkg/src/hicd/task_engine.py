"""Task-model state machines: parse, validate, query, transition.

A task model is a flat state graph, one per user class.  Each state lists
the events an actor may emit there; an event binds in-params to one bip
method (an opaque dotted id the middleware dispatches on) and branches to a
positive or negative next state, each branch with its own out-param schema.

The XML dialect is fixed: task_model, starting_state, state, events, event,
in_param, interaction_call, method, next_states, positive, negative,
out_param, next_state.  Anything else is a ParseError.  `type` attributes
are opaque strings; the engine never interprets them.

Parsed models are immutable and safe to share across threads; every
operation here is a pure read.
"""

from __future__ import annotations

import xml.parsers.expat
from dataclasses import dataclass, field
from xml.sax.saxutils import quoteattr

from .errors import EventNotAllowed, ParseError, UnknownState, WellFormednessError

Param = tuple[str, str]  # (id, opaque semantic type)


@dataclass(frozen=True)
class Branch:
    out_params: tuple[Param, ...]
    next_state: str


@dataclass(frozen=True)
class InteractionCall:
    id: str
    bip_method: str
    positive: Branch
    negative: Branch


@dataclass(frozen=True)
class EventSpec:
    id: str
    in_params: tuple[Param, ...]
    call: InteractionCall


@dataclass(frozen=True)
class State:
    id: str
    events: dict[str, EventSpec] = field(default_factory=dict)


@dataclass(frozen=True)
class TaskModel:
    model_id: str
    starting_state: str
    states: dict[str, State] = field(default_factory=dict)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    location: str


# element -> allowed child elements
_VOCABULARY = {
    "task_model": {"starting_state", "state"},
    "starting_state": set(),
    "state": {"events"},
    "events": {"event"},
    "event": {"in_param", "interaction_call"},
    "in_param": set(),
    "interaction_call": {"method", "next_states"},
    "method": set(),
    "next_states": {"positive", "negative"},
    "positive": {"out_param", "next_state"},
    "negative": {"out_param", "next_state"},
    "out_param": set(),
    "next_state": set(),
}


class _Node:
    __slots__ = ("tag", "attrs", "children", "line")

    def __init__(self, tag, attrs, line):
        self.tag = tag
        self.attrs = attrs
        self.children = []
        self.line = line


class _TreeReader:
    """expat callbacks that build a vocabulary-checked element tree."""

    def __init__(self, parser):
        self.parser = parser
        self.root: _Node | None = None
        self.stack: list[_Node] = []

    def start(self, tag, attrs):
        line = self.parser.CurrentLineNumber
        if self.root is None and not self.stack:
            if tag != "task_model":
                raise ParseError(line, f"root element must be task_model, got {tag!r}")
        else:
            parent = self.stack[-1]
            allowed = _VOCABULARY[parent.tag]
            if tag not in _VOCABULARY:
                raise ParseError(line, f"unknown element {tag!r}")
            if tag not in allowed:
                raise ParseError(line, f"element {tag!r} not allowed inside {parent.tag!r}")
        node = _Node(tag, attrs, line)
        if self.stack:
            self.stack[-1].children.append(node)
        else:
            self.root = node
        self.stack.append(node)

    def end(self, tag):
        self.stack.pop()

    def chars(self, data):
        if data.strip():
            raise ParseError(self.parser.CurrentLineNumber,
                             f"unexpected text content {data.strip()[:30]!r}")


def _require(node: _Node, attr: str) -> str:
    value = node.attrs.get(attr)
    if value is None:
        raise ParseError(node.line, f"{node.tag} missing required {attr!r} attribute")
    return value


def _params(nodes: list[_Node]) -> tuple[Param, ...]:
    return tuple((_require(n, "id"), _require(n, "type")) for n in nodes)


def _build_branch(node: _Node) -> Branch:
    outs = [c for c in node.children if c.tag == "out_param"]
    nexts = [c for c in node.children if c.tag == "next_state"]
    if len(nexts) != 1:
        raise ParseError(node.line, f"{node.tag} needs exactly one next_state")
    return Branch(out_params=_params(outs), next_state=_require(nexts[0], "id"))


def _build_call(node: _Node) -> InteractionCall:
    methods = [c for c in node.children if c.tag == "method"]
    nexts = [c for c in node.children if c.tag == "next_states"]
    if len(methods) != 1:
        raise ParseError(node.line, "interaction_call needs exactly one method")
    if len(nexts) != 1:
        raise ParseError(node.line, "interaction_call needs exactly one next_states")
    branches = {c.tag: c for c in nexts[0].children}
    if set(branches) != {"positive", "negative"} or len(nexts[0].children) != 2:
        raise ParseError(nexts[0].line,
                         "next_states needs exactly one positive and one negative branch")
    return InteractionCall(
        id=_require(node, "id"),
        bip_method=_require(methods[0], "id"),
        positive=_build_branch(branches["positive"]),
        negative=_build_branch(branches["negative"]),
    )


def _build_event(node: _Node) -> EventSpec:
    calls = [c for c in node.children if c.tag == "interaction_call"]
    if len(calls) != 1:
        raise ParseError(node.line, "event needs exactly one interaction_call")
    return EventSpec(
        id=_require(node, "id"),
        in_params=_params([c for c in node.children if c.tag == "in_param"]),
        call=_build_call(calls[0]),
    )


def _build_state(node: _Node) -> State:
    events: dict[str, EventSpec] = {}
    event_nodes = [e for c in node.children if c.tag == "events" for e in c.children]
    for child in event_nodes:
        spec = _build_event(child)
        if spec.id in events:
            raise ParseError(child.line, f"duplicate event id {spec.id!r} in state")
        events[spec.id] = spec
    return State(id=_require(node, "id"), events=events)


def parse_task_model(xml_text: str | bytes, model_id: str | None = None) -> TaskModel:
    """Parse a task-model document.

    Accepts UTF-8 and the ISO-8859-1 declaration used by legacy files (byte
    input honors the declared encoding).  Raises WellFormednessError for
    broken XML and ParseError (with line) for vocabulary or structure
    violations.  `model_id` overrides the optional id attribute.
    """
    parser = xml.parsers.expat.ParserCreate()
    reader = _TreeReader(parser)
    parser.StartElementHandler = reader.start
    parser.EndElementHandler = reader.end
    parser.CharacterDataHandler = reader.chars
    try:
        if isinstance(xml_text, bytes):
            parser.Parse(xml_text, True)
        else:
            parser.Parse(xml_text.encode("utf-8"), True)
    except xml.parsers.expat.ExpatError as exc:
        raise WellFormednessError(exc.lineno, xml.parsers.expat.errors.messages[exc.code])

    root = reader.root
    if root is None:
        raise WellFormednessError(1, "empty document")
    starts = [c for c in root.children if c.tag == "starting_state"]
    if len(starts) != 1:
        raise ParseError(root.line, "task_model needs exactly one starting_state")
    states: dict[str, State] = {}
    for node in root.children:
        if node.tag != "state":
            continue
        state = _build_state(node)
        if state.id in states:
            raise ParseError(node.line, f"duplicate state id {state.id!r}")
        states[state.id] = state
    if model_id is None:
        model_id = root.attrs.get("id", "")
    return TaskModel(model_id=model_id,
                     starting_state=_require(starts[0], "id"),
                     states=states)


def serialize(model: TaskModel) -> str:
    """Emit the model back out in the same dialect, one element per line.

    parse(serialize(parse(x))) == parse(x) for any valid input.
    """
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    id_attr = f" id={quoteattr(model.model_id)}" if model.model_id else ""
    out.append(f"<task_model{id_attr}>")
    out.append(f"  <starting_state id={quoteattr(model.starting_state)} />")
    for state in model.states.values():
        out.append(f"  <state id={quoteattr(state.id)}>")
        out.append("    <events>")
        for spec in state.events.values():
            out.append(f"      <event id={quoteattr(spec.id)}>")
            for pid, ptype in spec.in_params:
                out.append(f"        <in_param id={quoteattr(pid)} type={quoteattr(ptype)} />")
            call = spec.call
            out.append(f"        <interaction_call id={quoteattr(call.id)}>")
            out.append(f"          <method id={quoteattr(call.bip_method)} />")
            out.append("          <next_states>")
            for tag, branch in (("positive", call.positive), ("negative", call.negative)):
                out.append(f"            <{tag}>")
                for pid, ptype in branch.out_params:
                    out.append(f"              <out_param id={quoteattr(pid)} "
                               f"type={quoteattr(ptype)} />")
                out.append(f"              <next_state id={quoteattr(branch.next_state)} />")
                out.append(f"            </{tag}>")
            out.append("          </next_states>")
            out.append("        </interaction_call>")
            out.append("      </event>")
        out.append("    </events>")
        out.append("  </state>")
    out.append("</task_model>")
    return "\n".join(out) + "\n"


def validate(model: TaskModel) -> list[Diagnostic]:
    """Referential diagnostics: errors for dangling next_state references,
    a starting_state that is not a state, or an empty bip method; warnings
    for states unreachable from the start over both branches."""
    diags: list[Diagnostic] = []
    if model.starting_state not in model.states:
        diags.append(Diagnostic("error", "missing_starting_state",
                                f"starting_state {model.starting_state!r}"))
    for state in model.states.values():
        for spec in state.events.values():
            where = f"state {state.id!r} event {spec.id!r}"
            if not spec.call.bip_method:
                diags.append(Diagnostic("error", "empty_bip_method", where))
            for tag, branch in (("positive", spec.call.positive),
                                ("negative", spec.call.negative)):
                if branch.next_state not in model.states:
                    diags.append(Diagnostic("error", "dangling_next_state",
                                            f"{where} {tag} -> {branch.next_state!r}"))
    reachable = _reachable(model)
    for state_id in model.states:
        if state_id not in reachable:
            diags.append(Diagnostic("warning", "unreachable_state", f"state {state_id!r}"))
    return diags


def _reachable(model: TaskModel) -> set[str]:
    seen: set[str] = set()
    work = [model.starting_state]
    while work:
        here = work.pop()
        if here in seen or here not in model.states:
            continue
        seen.add(here)
        for spec in model.states[here].events.values():
            work.append(spec.call.positive.next_state)
            work.append(spec.call.negative.next_state)
    return seen


def allowed_events(model: TaskModel, state_id: str) -> set[str]:
    """The event ids an actor may emit in `state_id`."""
    if state_id not in model.states:
        raise UnknownState(state_id)
    return set(model.states[state_id].events)


def transition(model: TaskModel, state_id: str, event_id: str,
               outcome: str) -> tuple[str, tuple[Param, ...]]:
    """Follow one branch: (next state id, that branch's out-param schema).

    `outcome` is "positive" or "negative".  Pure function, no hidden state.
    """
    if state_id not in model.states:
        raise UnknownState(state_id)
    spec = model.states[state_id].events.get(event_id)
    if spec is None:
        raise EventNotAllowed(f"{event_id!r} not allowed in state {state_id!r}")
    if outcome not in ("positive", "negative"):
        raise ValueError(f"outcome must be positive or negative, got {outcome!r}")
    branch = spec.call.positive if outcome == "positive" else spec.call.negative
    return branch.next_state, branch.out_params


__all__ = [
    "Branch", "Diagnostic", "EventSpec", "InteractionCall", "State", "TaskModel",
    "allowed_events", "parse_task_model", "serialize", "transition", "validate",
]
