"""Scripted scenario runner: JSON lines, one step per line.

Steps:
    {"op": "open",   "actor": a, "as": name, "capability": "pc"}
    {"op": "action", "session": name, "event": e, "params": {...}}
    {"op": "resume", "session": name, "capability": "phone"}
    {"op": "expect", "session": name, ...}   any of: state, status,
                                             outcome, reason
    {"op": "business", "data_class": c, "payload": {...}}

Expectations check the session's mirrored state (from the last step's
response) and the last action's notification.  The runner drives the
middleware through the bus, so every step lands in the call trace.
Exit codes: 0 all expectations hold, 1 a step failed (named on stderr),
2 unreadable script.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from .daemon import Stack
from .errors import BusFault, HicdError


class ScenarioError(HicdError):
    pass


def load_steps(path: str | Path) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}")
    steps = []
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            step = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"line {i}: bad JSON: {exc}")
        if not isinstance(step, dict) or "op" not in step:
            raise ScenarioError(f"line {i}: step must be an object with an op")
        step["_line"] = i
        steps.append(step)
    return steps


class ScenarioRunner:
    def __init__(self, stack: Stack, seed: int = 0, log=print):
        self.stack = stack
        self.rng = random.Random(seed)
        self.log = log
        self.sessions: dict[str, str] = {}      # script name -> session id
        self.states: dict[str, str] = {}        # script name -> mirrored state
        self.last_notification: dict[str, dict] = {}

    def run(self, steps: list[dict]) -> int:
        for n, step in enumerate(steps, start=1):
            try:
                failure = self._step(step)
            except (BusFault, HicdError, KeyError) as exc:
                self.log(f"step {n} (line {step['_line']}): error: {exc}")
                return 1
            if failure:
                self.log(f"step {n} (line {step['_line']}): {failure}")
                return 1
        self.log(f"scenario ok: {len(steps)} step(s)")
        return 0

    def _invoke(self, method: str, params: dict) -> dict:
        return self.stack.bus.invoke("IMServ", method, params, caller="scenario")

    def _step(self, step: dict) -> str | None:
        op = step["op"]
        if op == "open":
            name = step.get("as", step["actor"])
            result = self._invoke("OpenSession", {
                "actor_id": step["actor"],
                "app_id": step.get("app", "COFOSServ"),
                "container_id": step.get("container", "ICServ"),
                "capability": step.get("capability", "pc"),
            })
            self.sessions[name] = result["session_id"]
            self.states[name] = result["state"]
            return None
        if op == "action":
            name = step["session"]
            notification = self._invoke("InteractionRequest", {
                "session_id": self.sessions[name],
                "actor_id": step.get("actor", ""),
                "event_id": step["event"],
                "params": step.get("params", {}),
            })
            self.states[name] = notification["new_state"]
            self.last_notification[name] = notification
            return None
        if op == "resume":
            name = step["session"]
            result = self._invoke("ResumeSession", {
                "session_id": self.sessions[name],
                "container_id": step.get("container", "ICServ"),
                "capability": step.get("capability", "pc"),
            })
            self.states[name] = result["state"]
            return None
        if op == "business":
            self._invoke("BusinessRequest", {
                "app_id": step.get("app", "COFOSServ"),
                "info": {"data_class": step["data_class"],
                         "payload": step.get("payload")},
            })
            return None
        if op == "expect":
            return self._check(step)
        raise ScenarioError(f"unknown op {op!r}")

    def _check(self, step: dict) -> str | None:
        name = step["session"]
        if name not in self.sessions:
            return f"no session named {name!r}"
        if "state" in step and self.states.get(name) != step["state"]:
            return (f"expected state {step['state']!r}, "
                    f"got {self.states.get(name)!r}")
        notification = self.last_notification.get(name, {})
        for key in ("status", "outcome", "reason"):
            if key in step and notification.get(key) != step[key]:
                return (f"expected {key} {step[key]!r}, "
                        f"got {notification.get(key)!r}")
        return None


def run_scenario(stack: Stack, path: str | Path, seed: int = 0,
                 log=print) -> int:
    steps = load_steps(path)
    return ScenarioRunner(stack, seed=seed, log=log).run(steps)
