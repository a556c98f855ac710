"""Random task-model generator used by property tests and the scale check."""

from __future__ import annotations

from hicd.task_engine import Branch, EventSpec, InteractionCall, State, TaskModel


def random_model(rng, n_states: int, max_events: int = 3,
                 dangling: bool = False) -> TaskModel:
    """A syntactically valid model with random branch targets.

    With dangling=True some branches point at a state id that does not
    exist (for validate() tests).
    """
    state_ids = [f"s{i}" for i in range(n_states)]
    states = {}
    for sid in state_ids:
        events = {}
        for j in range(rng.randint(0, max_events)):
            eid = f"e{j}"

            def target():
                if dangling and rng.random() < 0.1:
                    return "nowhere"
                return rng.choice(state_ids)

            call = InteractionCall(
                id=f"{eid}_call",
                bip_method=f"app.bip.Op{rng.randint(0, 5)}",
                positive=Branch(
                    out_params=tuple((f"out{k}", "java.lang.String")
                                     for k in range(rng.randint(0, 2))),
                    next_state=target(),
                ),
                negative=Branch(out_params=(), next_state=target()),
            )
            events[eid] = EventSpec(
                id=eid,
                in_params=tuple((f"in{k}", "java.lang.String")
                                for k in range(rng.randint(0, 2))),
                call=call,
            )
        states[sid] = State(id=sid, events=events)
    return TaskModel(model_id="generated",
                     starting_state=rng.choice(state_ids),
                     states=states)


def branch_table(model: TaskModel) -> dict:
    """Reshape a model for the BFS oracle: state -> {event -> (pos, neg)}."""
    return {
        sid: {eid: (spec.call.positive.next_state, spec.call.negative.next_state)
              for eid, spec in state.events.items()}
        for sid, state in model.states.items()
    }
