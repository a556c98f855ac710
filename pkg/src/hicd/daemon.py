"""Daemon assembly: configuration, the in-process middleware stack, and the
serving loop with lease renewal and event expiry.

The stack builds from one JSON config naming the fixture files (paths
resolve relative to the config file) and the capability presets.  Sessions
live in memory only: stopping and restarting a daemon restores exactly the
fixture state.
"""

from __future__ import annotations

import importlib.resources
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import HicdError
from .event_heap import EventHeap
from .flightops import FlightOps
from .interaction_container import (
    BindingTable, InteractionContainer, TerminalCapability,
)
from .interaction_core import InteractionCore
from .profile_store import ProfileStore
from .service_bus import ServiceBus
from .task_engine import parse_task_model, validate
from .wire import WireServer

log = logging.getLogger(__name__)


class ConfigError(HicdError):
    pass


def default_config_path() -> Path:
    return Path(str(importlib.resources.files("hicd") / "fixtures" / "config.json"))


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}")
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    for key in ("profiles", "task_models", "flights", "templates", "bindings"):
        if key not in config:
            raise ConfigError(f"config is missing {key!r}")
    base = path.parent

    def resolve(p):
        return str((base / p) if not Path(p).is_absolute() else Path(p))

    config["profiles"] = resolve(config["profiles"])
    config["flights"] = resolve(config["flights"])
    config["templates"] = resolve(config["templates"])
    config["bindings"] = resolve(config["bindings"])
    config["task_models"] = {cls: resolve(p)
                             for cls, p in dict(config["task_models"]).items()}
    if config.get("ui_dir"):
        config["ui_dir"] = resolve(config["ui_dir"])
    return config


@dataclass
class Stack:
    """The wired middleware, ready to serve in-process or over TCP."""

    config: dict
    heap: EventHeap
    bus: ServiceBus
    profiles: ProfileStore
    models: dict
    container: InteractionContainer
    core: InteractionCore
    app: FlightOps
    registrations: list


def build_stack(config: dict) -> Stack:
    heap = EventHeap()
    bus = ServiceBus()
    lease = float(config.get("lease_seconds", 30))

    profiles = ProfileStore()
    try:
        profiles.load_profiles(config["profiles"])
    except HicdError as exc:
        raise ConfigError(f"profiles: {exc}")

    models = {}
    for model_id, path in config["task_models"].items():
        try:
            model = parse_task_model(Path(path).read_bytes(), model_id=model_id)
        except OSError as exc:
            raise ConfigError(f"task model {path}: {exc}")
        except HicdError as exc:
            raise ConfigError(f"task model {path}: {exc}")
        errors = [d for d in validate(model) if d.severity == "error"]
        if errors:
            raise ConfigError(f"task model {path}: {errors[0].code} at {errors[0].location}")
        models[model_id] = model
    for snapshot_class in profiles.snapshot()["classes"]:
        if snapshot_class["task_model_id"] not in models:
            raise ConfigError(
                f"class {snapshot_class['class_id']!r} needs task model "
                f"{snapshot_class['task_model_id']!r}, which is not configured")

    capabilities = {name: TerminalCapability.from_dict(d)
                    for name, d in config.get("capabilities", {}).items()}
    try:
        bindings = BindingTable.from_file(config["bindings"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"bindings: {exc}")

    container = InteractionContainer("ICServ", profiles, bindings=bindings,
                                     capabilities=capabilities or None, bus=bus)
    core = InteractionCore(heap, bus, models, profiles,
                           containers={container.name: container})
    try:
        app = FlightOps(profiles, core, config["flights"], config["templates"])
    except (OSError, KeyError, HicdError) as exc:
        raise ConfigError(f"application fixtures: {exc}")
    app.register_bips()

    registrations = [
        bus.register(core.descriptor(lease), core.bus_handler),
        bus.register(container.descriptor(lease), container.bus_handler),
        bus.register(app.descriptor(lease), app.bus_handler),
    ]
    return Stack(config=config, heap=heap, bus=bus, profiles=profiles,
                 models=models, container=container, core=core, app=app,
                 registrations=registrations)


class Daemon:
    """Owns a stack plus the TCP listener and the maintenance loop that maps
    the heap's logical clock onto wall time and renews service leases."""

    def __init__(self, config: dict):
        self.stack = build_stack(config)
        self.server: WireServer | None = None
        self._stop = threading.Event()
        self._maintenance: threading.Thread | None = None
        self._t0 = time.monotonic()

    def start(self, port: int | None = None, host: str | None = None) -> int:
        config = self.stack.config
        self.server = WireServer(
            self.stack.bus, self.stack.heap,
            host=host or config.get("host", "127.0.0.1"),
            port=config.get("port", 7340) if port is None else port,
            ui_dir=config.get("ui_dir"))
        self.server.serve_background()
        self._maintenance = threading.Thread(target=self._maintain, daemon=True,
                                             name="daemon-maintenance")
        self._maintenance.start()
        return self.server.port

    def _maintain(self):
        lease = float(self.stack.config.get("lease_seconds", 30))
        interval = max(0.2, lease / 3)
        while not self._stop.wait(interval):
            for reg_id in self.stack.registrations:
                try:
                    self.stack.bus.renew_lease(reg_id)
                except HicdError:
                    pass
            self.stack.heap.expire(time.monotonic() - self._t0)

    def stop(self):
        self._stop.set()
        if self.server is not None:
            self.server.shutdown()
            self.server.server_close()
        if self._maintenance is not None:
            self._maintenance.join(timeout=2)
