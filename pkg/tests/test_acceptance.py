"""Acceptance gate: one test per criterion, each at its stated budget.

A summary line per criterion is printed in the pytest terminal summary
(see conftest.pytest_terminal_summary).
"""

from __future__ import annotations

import json
import random
from collections import Counter
from contextlib import contextmanager
from pathlib import Path
from time import perf_counter
from types import SimpleNamespace

import pytest

from hicd.daemon import build_stack, default_config_path, load_config
from hicd.event_heap import EventHeap
from hicd.flightops import BIP_PREFIX
from hicd.interaction_container import (
    PRESETS, DisplayPayload, InteractionContainer, choose_columns, render,
)
from hicd.interaction_core import ActionData, BipOutcome, InteractionCore
from hicd.profile_store import ProfileStore
from hicd.service_bus import ServiceBus
from hicd.task_engine import (
    allowed_events, parse_task_model, serialize, transition, validate,
)

from heapcheck import random_ops, run_equivalence
from refmodels import FsmOracle

FIXTURES = Path(__file__).parent.parent / "src" / "hicd" / "fixtures"

RESULTS: list[str] = []


@contextmanager
def criterion(n: int, desc: str, budget: float | None = None):
    t0 = perf_counter()
    try:
        yield
        elapsed = perf_counter() - t0
        if budget is not None and elapsed >= budget:
            raise AssertionError(
                f"runtime {elapsed:.2f}s exceeds the {budget:g}s budget")
    except BaseException:
        RESULTS.append(f"criterion {n}: FAIL - {desc}")
        raise
    line = f"criterion {n}: PASS in {elapsed:.2f}s"
    if budget is not None:
        line += f" (budget {budget:g}s)"
    RESULTS.append(f"{line} - {desc}")


def fresh_stack():
    return build_stack(load_config(default_config_path()))


# -- criterion 1 -----------------------------------------------------------------


def test_criterion_1_task_model_fidelity():
    with criterion(1, "airline task-model fragment and both branches", budget=1.0):
        model = parse_task_model(FIXTURES.joinpath("airline.task.xml").read_bytes())
        assert model.starting_state == "disconnected"
        spec = model.states["browsing_specific_templates1"].events[
            "select_specific_template"]
        assert spec.in_params == (("message_template", "business.cofos.data.Template"),)
        assert spec.call.bip_method == (
            "hic.im.business.cofos.bip.common.SelectSpecificTemplate")
        assert spec.call.positive.out_params == (("message_sent", "java.lang.String"),)
        assert spec.call.positive.next_state == "connected"
        assert spec.call.negative.out_params == (
            ("incomplete_message", "java.lang.String"),)
        assert spec.call.negative.next_state == "writing_specific_msg1"
        assert allowed_events(model, "browsing_specific_templates1") == {
            "cancel_specific_msg", "select_specific_template"}
        assert transition(model, "browsing_specific_templates1",
                          "select_specific_template", "positive") == (
            "connected", (("message_sent", "java.lang.String"),))
        assert transition(model, "browsing_specific_templates1",
                          "select_specific_template", "negative") == (
            "writing_specific_msg1", (("incomplete_message", "java.lang.String"),))


# -- criterion 2 -----------------------------------------------------------------


def scripted_stack():
    """The real wiring (heap, bus, kernel, container, fixture models and
    profiles) with scripted bip handlers instead of the demo app, so an
    independent replay can predict every outcome."""
    config = load_config(default_config_path())
    heap = EventHeap()
    bus = ServiceBus()
    profiles = ProfileStore()
    profiles.load_profiles(config["profiles"])
    models = {mid: parse_task_model(Path(p).read_bytes(), model_id=mid)
              for mid, p in config["task_models"].items()}
    container = InteractionContainer("ICServ", profiles, bus=bus)
    core = InteractionCore(heap, bus, models, profiles,
                           containers={"ICServ": container})
    bus.register(core.descriptor(lease=1e9), core.bus_handler)
    bus.register(container.descriptor(lease=1e9), container.bus_handler)

    def scripted(params):
        tag = params["scripted"]
        if tag == "fault":
            raise RuntimeError("scripted fault")
        return BipOutcome(tag)

    bip_ids = {spec.call.bip_method
               for model in models.values()
               for state in model.states.values()
               for spec in state.events.values()}
    unbound = {BIP_PREFIX + "UpdateFlight"}  # left unbound on purpose
    for bid in sorted(bip_ids - unbound):
        core.register_bip(bid, scripted)
    return SimpleNamespace(heap=heap, bus=bus, profiles=profiles, models=models,
                           core=core, container=container,
                           bound=bip_ids - unbound)


def test_criterion_2_oracle_replay():
    with criterion(2, "100 sessions x 200 steps equal the pure replay",
                   budget=10.0):
        stack = scripted_stack()
        rng = random.Random(20240601)
        actors = ["alice", "airline-bot", "henri"]
        for s in range(100):
            actor = actors[s % len(actors)]
            cls = stack.profiles.class_of(actor)
            model = stack.models[cls.task_model_id]
            opened = stack.bus.invoke("IMServ", "OpenSession", {
                "actor_id": actor, "app_id": "app", "container_id": "ICServ",
                "capability": "pc"}, caller="harness")
            session_id = opened["session_id"]
            oracle = FsmOracle(model, set(cls.rights), stack.bound, session_id)
            live_trace = []
            for _ in range(200):
                options = sorted(model.states[oracle.state].events)
                if options and rng.random() < 0.85:
                    event = rng.choice(options)
                else:
                    event = "bogus_event"
                tag = rng.choices(["positive", "negative", "fault"],
                                  weights=[0.6, 0.3, 0.1])[0]
                oracle.step(event, tag)
                note = stack.bus.invoke("IMServ", "InteractionRequest", {
                    "session_id": session_id, "actor_id": actor,
                    "event_id": event, "params": {"scripted": tag}},
                    caller="harness")
                live_trace.append(note)
            live = json.dumps(live_trace, sort_keys=True).encode()
            want = json.dumps(oracle.trace, sort_keys=True).encode()
            assert live == want, f"trace diverged for session {session_id}"
            assert stack.core.session(session_id).current_state == oracle.state


# -- criterion 3 -----------------------------------------------------------------


def test_criterion_3_event_heap_model_check():
    with criterion(3, "10000 heap ops match the list-scan model", budget=5.0):
        rng = random.Random(77_000)
        stats = run_equivalence(random_ops(rng, 10_000))
        assert stats["post"] >= 3000
        assert stats["consume"] >= 2000
        assert stats["expire"] >= 200


# -- criterion 4 -----------------------------------------------------------------


def generated_model_xml(n_states: int = 16, events_per_state: int = 3) -> str:
    from hicd.task_engine import Branch, EventSpec, InteractionCall, State, TaskModel

    states = {}
    ids = [f"state_{i:03d}" for i in range(n_states)]
    for i, sid in enumerate(ids):
        events = {}
        for j in range(events_per_state):
            eid = f"event_{j}"
            events[eid] = EventSpec(
                id=eid,
                in_params=(("request_payload", "app.data.Payload"),),
                call=InteractionCall(
                    id=f"{sid}_{eid}_call",
                    bip_method=f"app.bip.Operation{j}",
                    positive=Branch((("result_token", "java.lang.String"),),
                                    ids[(i + 1) % n_states]),
                    negative=Branch((("error_token", "java.lang.String"),),
                                    ids[0]),
                ))
        states[sid] = State(id=sid, events=events)
    return serialize(TaskModel(model_id="generated",
                               starting_state=ids[0], states=states))


def test_criterion_4_scale_check():
    with criterion(4, "generated model >= 624 lines / >= 20000 chars", budget=1.0):
        xml = generated_model_xml()
        lines = xml.count("\n")
        assert lines >= 624, f"only {lines} lines"
        assert len(xml) >= 20_000, f"only {len(xml)} chars"
        model = parse_task_model(xml)
        diagnostics = validate(model)
        assert [d for d in diagnostics if d.severity == "error"] == []
        assert [d for d in diagnostics if d.severity == "warning"] == []


# -- criterion 5 -----------------------------------------------------------------


def test_criterion_5_read_only_actor_denied():
    with criterion(5, "handling actor's flight update denied, store intact"):
        stack = fresh_stack()
        session = stack.core.open_session("henri", "COFOSServ", "ICServ", "pda")
        stack.core.interaction_request(ActionData(
            "henri", session.session_id, "connect"))
        store_before = stack.app.store.snapshot()
        state_before = session.current_state
        note = stack.core.interaction_request(ActionData(
            "henri", session.session_id, "update_flight",
            {"flight_id": "AF208", "field": "gate", "value": "Z9"}))
        assert note.status == "rejected"
        assert note.reason == "right_denied"
        assert stack.app.store.snapshot() == store_before
        assert session.current_state == state_before
        rejections = [
            e for e in stack.heap.journal()
            if e["event_type"] == "imserv.notification"
            and e["fields"]["session_id"] == session.session_id
            and e["fields"]["status"] == "rejected"]
        assert len(rejections) == 1


# -- criterion 6 -----------------------------------------------------------------


def test_criterion_6_actor_interchangeability():
    with criterion(6, "user actor and application actor leave identical traces"):
        script = [
            ("connect", {}),
            ("browse_specific_templates", {}),
            ("select_specific_template", {"message_template": "S-GATE"}),
            ("set_param", {"param_name": "flight", "param_value": "AF123"}),
            ("cancel_specific_msg", {}),
            ("update_flight", {"flight_id": "AF208", "field": "gate",
                               "value": "B9"}),
            ("no_such_event", {}),
            ("disconnect", {}),
        ]
        observed = {}
        for actor in ("alice", "airline-bot"):  # person vs application actor
            stack = fresh_stack()
            session = stack.core.open_session(actor, "COFOSServ", "ICServ", "pc")
            notes = []
            for event, params in script:
                note = stack.core.interaction_request(ActionData(
                    actor, session.session_id, event, dict(params))).to_dict()
                note.pop("session_id")
                notes.append(note)
            heap_notes = []
            for entry in stack.heap.journal():
                if entry["event_type"] != "imserv.notification":
                    continue
                fields = dict(entry["fields"])
                fields.pop("session_id")
                heap_notes.append(fields)
            history = [(h["event_id"], h["outcome"], h["out_params"])
                       for h in session.history]
            observed[actor] = (session.current_state, history, notes, heap_notes)
        assert observed["alice"] == observed["airline-bot"]


# -- criterion 7 -----------------------------------------------------------------


def test_criterion_7_failover_to_phone():
    with criterion(7, "resume keeps state+history and narrows renders"):
        stack = fresh_stack()
        session = stack.core.open_session("alice", "COFOSServ", "ICServ", "pc")
        for event, params in [
            ("connect", {}),
            ("browse_specific_templates", {}),
            ("select_specific_template", {"message_template": "S-GATE"}),
        ]:
            stack.core.interaction_request(ActionData(
                "alice", session.session_id, event, params))
        state_before = session.current_state
        history_before = [dict(h) for h in session.history]

        resumed = stack.core.resume_session(session.session_id, "ICServ", "phone")
        assert resumed.current_state == state_before
        assert resumed.history == history_before

        board = stack.bus.invoke("COFOSServ", "AppRequest",
                                 {"op": "board", "args": {}}, caller="harness")
        view = stack.container.display_request(session.session_id,
                                               board["payload"])
        assert len(view.columns) <= 3
        payload = DisplayPayload.from_dict(board["payload"])
        by_id = {c.id: c for c in payload.columns}
        shown = {by_id[cid].priority for cid in view.columns}
        hidden = {c.priority for c in payload.columns if c.id not in view.columns}
        assert all(h < min(shown) for h in hidden)  # priority prefix


# -- criterion 8 -----------------------------------------------------------------


def random_payload(rng):
    n_cols = rng.randint(1, 14)
    n_rows = rng.randint(0, 50)
    priorities = rng.sample(range(200), n_cols)
    columns = [[f"c{i}", f"label{i}", priorities[i], rng.randint(1, 40)]
               for i in range(n_cols)]
    rows = [{f"c{i}": rng.choice(["short", "a-much-longer-cell-value" * 2,
                                  rng.randint(0, 10_000), True])
             for i in range(n_cols) if rng.random() < 0.9}
            for _ in range(n_rows)]
    alerts = [i for i in range(n_rows) if rng.random() < 0.2]
    return DisplayPayload.from_dict({"title": "t", "columns": columns,
                                     "rows": rows, "alert_rows": alerts})


def test_criterion_8_adaptation_invariants():
    with criterion(8, "500 payloads x 3 presets: prefix, width, monotonic"):
        rng = random.Random(88)
        for _ in range(500):
            payload = random_payload(rng)
            cells = {}
            for kind in ("pc", "pda", "phone"):
                cap = PRESETS[kind]
                chosen = choose_columns(payload, cap)
                # priority-prefix property
                shown = {c.priority for c in chosen}
                hidden = {c.priority for c in payload.columns
                          if c.id not in {x.id for x in chosen}}
                assert all(h < min(shown) for h in hidden) or not shown
                # cell width bound on the rendered text
                view = render(payload, cap)
                for line_no, line in enumerate(view.lines):
                    body = line
                    if not cap.rich and line_no in view.alert_lines:
                        assert body.startswith("!")
                        body = body[1:]
                    for cell in body.split(" | "):
                        assert len(cell.rstrip()) <= cap.max_cell_width
                # pre-truncation cell multiset for monotonicity
                rows = payload.rows[:cap.max_rows]
                cells[kind] = Counter(
                    (i, c.id, str(row.get(c.id, "")))
                    for i, row in enumerate(rows) for c in chosen)
            assert not cells["phone"] - cells["pc"]


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
