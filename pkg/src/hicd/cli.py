"""hicd command line: serve, run-scenario, trace.

Exit codes: 0 success, 1 scenario assertion failed, 2 configuration
problem, 3 cannot bind the port.
"""

from __future__ import annotations

import argparse
import errno
import logging
import random
import signal
import sys
import threading
import time

from .daemon import ConfigError, Daemon, default_config_path, load_config
from .errors import HicdError, TransportError
from .scenario import ScenarioError, run_scenario
from .wire import WireClient

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_BIND = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hicd",
        description="Interaction middleware daemon and tooling")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="boot the middleware and listen")
    serve.add_argument("--config", default=None, help="config file (JSON)")
    serve.add_argument("--port", type=int, default=None,
                       help="override the config port")
    serve.add_argument("--seed", type=int, default=0, help="seed randomness")

    run = sub.add_parser("run-scenario", help="execute a scripted scenario")
    run.add_argument("scenario", help="scenario file (JSON lines)")
    run.add_argument("--config", default=None, help="config file (JSON)")
    run.add_argument("--seed", type=int, default=0, help="seed randomness")

    trace = sub.add_parser("trace", help="print a running daemon's traces")
    trace.add_argument("--host", default="127.0.0.1")
    trace.add_argument("--port", type=int, default=7340)
    trace.add_argument("--follow", action="store_true",
                       help="keep polling for new entries")
    return parser


def _load_config(path: str | None) -> dict:
    return load_config(path if path is not None else default_config_path())


def cmd_serve(args) -> int:
    random.seed(args.seed)
    try:
        config = _load_config(args.config)
        daemon = Daemon(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        port = daemon.start(port=args.port)
    except OSError as exc:
        if exc.errno in (errno.EADDRINUSE, errno.EACCES):
            print(f"cannot bind port: {exc}", file=sys.stderr)
            return EXIT_BIND
        raise
    services = ", ".join(daemon.stack.bus.list_services())
    print(f"listening on {daemon.server.server_address[0]}:{port}", flush=True)
    print(f"services: {services}", flush=True)

    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    try:
        while not stop.wait(0.5):
            pass
    finally:
        daemon.stop()
    print("stopped", flush=True)
    return EXIT_OK


def cmd_run_scenario(args) -> int:
    random.seed(args.seed)
    try:
        config = _load_config(args.config)
        daemon = Daemon(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run_scenario(daemon.stack, args.scenario, seed=args.seed)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def format_trace(entries: list[dict], events: list[dict],
                 calls_from: int = 0, events_from: int = 0) -> list[str]:
    lines = []
    if calls_from == 0:
        lines.append("== service calls ==")
    for e in entries[calls_from:]:
        lines.append(f"[{e['index']}] {e['caller']} -> "
                     f"{e['service']}.{e['method']} {e['status']}")
    if events_from == 0:
        lines.append("== heap events ==")
    for ev in events[events_from:]:
        targets = ",".join(ev.get("targets", [])) or "*"
        fields = ev.get("fields", {})
        summary = " ".join(f"{k}={fields[k]}" for k in sorted(fields))
        lines.append(f"seq={ev['seq']} t={ev['posted_at']:.1f} "
                     f"{ev['event_type']} {ev['source']} -> {targets} {summary}")
    return lines


def cmd_trace(args) -> int:
    try:
        client = WireClient(args.host, args.port)
    except OSError as exc:
        print(f"cannot reach daemon at {args.host}:{args.port}: {exc}",
              file=sys.stderr)
        return EXIT_CONFIG
    calls_seen = 0
    events_seen = 0
    try:
        while True:
            entries = client.call("_bus", "CallTrace")["entries"]
            events = client.call("_bus", "Journal")["events"]
            for line in format_trace(entries, events, calls_seen, events_seen):
                print(line)
            calls_seen = len(entries)
            events_seen = len(events)
            if not args.follow:
                return EXIT_OK
            time.sleep(0.5)
    except (KeyboardInterrupt, TransportError):
        return EXIT_OK
    finally:
        client.close()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "serve":
            return cmd_serve(args)
        if args.command == "run-scenario":
            return cmd_run_scenario(args)
        if args.command == "trace":
            return cmd_trace(args)
    except HicdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
