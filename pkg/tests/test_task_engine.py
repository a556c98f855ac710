"""Task engine: fixture fidelity, dialect strictness, validate/transition
contracts, and property checks against brute-force oracles."""

import random
from pathlib import Path

import pytest

from hicd.errors import EventNotAllowed, ParseError, UnknownState, WellFormednessError
from hicd.task_engine import (
    allowed_events, parse_task_model, serialize, transition, validate,
)

from modelgen import branch_table, random_model
from refmodels import bfs_reachable

FIXTURES = Path(__file__).parent.parent / "src" / "hicd" / "fixtures"

SELECT_BIP = "hic.im.business.cofos.bip.common.SelectSpecificTemplate"


@pytest.fixture(scope="module")
def airline():
    return parse_task_model(FIXTURES.joinpath("airline.task.xml").read_bytes())


@pytest.fixture(scope="module")
def handling():
    return parse_task_model(FIXTURES.joinpath("handling.task.xml").read_bytes())


class TestAirlineFixture:
    def test_starting_state(self, airline):
        assert airline.starting_state == "disconnected"

    def test_seven_states(self, airline):
        assert set(airline.states) == {
            "disconnected", "connected", "browsing_general_templates1",
            "writing_general_msg1", "browsing_specific_templates1",
            "writing_specific_msg1", "reading_message1",
        }

    def test_browsing_specific_events(self, airline):
        assert allowed_events(airline, "browsing_specific_templates1") == {
            "cancel_specific_msg", "select_specific_template",
        }

    def test_select_specific_template_spec(self, airline):
        spec = airline.states["browsing_specific_templates1"].events[
            "select_specific_template"]
        assert spec.in_params == (("message_template", "business.cofos.data.Template"),)
        assert spec.call.bip_method == SELECT_BIP
        assert spec.call.positive.out_params == (("message_sent", "java.lang.String"),)
        assert spec.call.positive.next_state == "connected"
        assert spec.call.negative.out_params == (("incomplete_message", "java.lang.String"),)
        assert spec.call.negative.next_state == "writing_specific_msg1"

    def test_transition_both_branches(self, airline):
        assert transition(airline, "browsing_specific_templates1",
                          "select_specific_template", "positive") == (
            "connected", (("message_sent", "java.lang.String"),))
        assert transition(airline, "browsing_specific_templates1",
                          "select_specific_template", "negative") == (
            "writing_specific_msg1", (("incomplete_message", "java.lang.String"),))

    def test_validates_clean(self, airline):
        assert [d for d in validate(airline) if d.severity == "error"] == []
        assert [d for d in validate(airline) if d.severity == "warning"] == []

    def test_event_not_allowed_in_start(self, airline):
        with pytest.raises(EventNotAllowed):
            transition(airline, "disconnected", "select_specific_template", "positive")


def test_handling_fixture_validates(handling):
    assert validate(handling) == []
    assert handling.starting_state == "disconnected"
    assert "update_flight" in allowed_events(handling, "connected")


MINIMAL = """<?xml version="1.0"?>
<task_model>
  <starting_state id="only" />
  <state id="only"><events></events></state>
</task_model>
"""


def test_minimal_model_empty_events():
    model = parse_task_model(MINIMAL)
    assert allowed_events(model, "only") == set()
    assert validate(model) == []


def test_state_without_events_element():
    model = parse_task_model(
        '<task_model><starting_state id="a" /><state id="a" /></task_model>')
    assert allowed_events(model, "a") == set()


def _event_xml(eid, nxt="only"):
    return f"""<event id="{eid}">
      <interaction_call id="{eid}_c"><method id="m.X" />
        <next_states>
          <positive><next_state id="{nxt}" /></positive>
          <negative><next_state id="{nxt}" /></negative>
        </next_states>
      </interaction_call>
    </event>"""


def test_duplicate_event_id_rejected():
    text = f"""<task_model><starting_state id="only" />
    <state id="only"><events>{_event_xml("dup")}{_event_xml("dup")}</events></state>
    </task_model>"""
    with pytest.raises(ParseError) as err:
        parse_task_model(text)
    assert "duplicate event" in str(err.value)


def test_unknown_element_rejected_with_line():
    text = '<task_model>\n<starting_state id="a" />\n<bogus />\n</task_model>'
    with pytest.raises(ParseError) as err:
        parse_task_model(text)
    assert err.value.line == 3


def test_known_element_in_wrong_place_rejected():
    text = '<task_model><starting_state id="a" /><state id="a"><method id="x" /></state></task_model>'
    with pytest.raises(ParseError):
        parse_task_model(text)


def test_text_content_rejected():
    text = '<task_model><starting_state id="a" />oops</task_model>'
    with pytest.raises(ParseError):
        parse_task_model(text)


def test_broken_xml_is_wellformedness_error():
    with pytest.raises(WellFormednessError):
        parse_task_model("<task_model><starting_state id='a'>")


def test_missing_branch_rejected():
    text = """<task_model><starting_state id="a" />
    <state id="a"><events><event id="e">
      <interaction_call id="c"><method id="m" />
        <next_states><positive><next_state id="a" /></positive></next_states>
      </interaction_call>
    </event></events></state></task_model>"""
    with pytest.raises(ParseError):
        parse_task_model(text)


def test_iso_8859_1_bytes_accepted():
    raw = ('<?xml version="1.0" encoding="ISO-8859-1"?>\n'
           '<!-- gestionnaire: t\xe2che -->\n'
           '<task_model><starting_state id="a" /><state id="a" /></task_model>'
           ).encode("iso-8859-1")
    model = parse_task_model(raw)
    assert model.starting_state == "a"


def test_model_id_attribute_and_override():
    text = '<task_model id="xyz"><starting_state id="a" /><state id="a" /></task_model>'
    assert parse_task_model(text).model_id == "xyz"
    assert parse_task_model(text, model_id="other").model_id == "other"


def test_validate_dangling_reference():
    text = f"""<task_model><starting_state id="only" />
    <state id="only"><events>{_event_xml("e", nxt="ghost")}</events></state>
    </task_model>"""
    diags = validate(parse_task_model(text))
    assert [d.code for d in diags if d.severity == "error"] == [
        "dangling_next_state", "dangling_next_state"]


def test_validate_missing_starting_state():
    model = parse_task_model(
        '<task_model><starting_state id="ghost" /><state id="a" /></task_model>')
    codes = [d.code for d in validate(model) if d.severity == "error"]
    assert "missing_starting_state" in codes


def test_validate_empty_bip_method():
    text = """<task_model><starting_state id="a" />
    <state id="a"><events><event id="e">
      <interaction_call id="c"><method id="" />
        <next_states>
          <positive><next_state id="a" /></positive>
          <negative><next_state id="a" /></negative>
        </next_states>
      </interaction_call>
    </event></events></state></task_model>"""
    codes = [d.code for d in validate(parse_task_model(text)) if d.severity == "error"]
    assert codes == ["empty_bip_method"]


def test_unreachable_state_warning():
    text = f"""<task_model><starting_state id="a" />
    <state id="a"><events>{_event_xml("e", nxt="a")}</events></state>
    <state id="island" />
    </task_model>"""
    diags = validate(parse_task_model(text))
    assert [(d.severity, d.code) for d in diags] == [("warning", "unreachable_state")]
    assert "island" in diags[0].location


def test_unknown_state_queries():
    model = parse_task_model(MINIMAL)
    with pytest.raises(UnknownState):
        allowed_events(model, "nope")
    with pytest.raises(UnknownState):
        transition(model, "nope", "e", "positive")


def test_transition_rejects_bad_outcome(airline):
    with pytest.raises(ValueError):
        transition(airline, "disconnected", "connect", "maybe")


def test_roundtrip_fixpoint_on_fixtures(airline, handling):
    for model in (airline, handling):
        again = parse_task_model(serialize(model))
        assert again == model
        assert parse_task_model(serialize(again)) == again


def test_roundtrip_fixpoint_on_random_models():
    rng = random.Random(7)
    for _ in range(50):
        model = random_model(rng, rng.randint(1, 12))
        assert parse_task_model(serialize(model)) == model


def test_reachability_matches_bfs_oracle_500_graphs():
    rng = random.Random(42)
    for _ in range(500):
        model = random_model(rng, rng.randint(1, 15))
        diags = validate(model)
        flagged = {d.location.split("'")[1] for d in diags
                   if d.code == "unreachable_state"}
        reachable = bfs_reachable(branch_table(model), model.starting_state)
        assert flagged == set(model.states) - reachable


def test_random_walk_never_hits_unknown_state():
    rng = random.Random(99)
    for _ in range(60):
        model = random_model(rng, rng.randint(1, 10))
        if any(d.severity == "error" for d in validate(model)):
            continue  # generator made no dangling refs, but stay safe
        state = model.starting_state
        for _ in range(200):
            events = sorted(allowed_events(model, state))
            if not events:
                break
            state, _ = transition(model, state, rng.choice(events),
                                  rng.choice(["positive", "negative"]))
