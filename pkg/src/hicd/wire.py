"""Single-port transport: newline-delimited JSON, WebSocket, and static UI.

Protocol (UTF-8, one JSON message per line, lines capped at 1 MiB):

    request   {"v": 1, "id": <any>, "service": s, "method": m, "params": {...}}
    response  {"v": 1, "id": <same>, "status": "ok" | "fault", "payload": ...}
    push      {"v": 1, "id": null, "status": "event", "payload": {...}}

Requests on one connection may pipeline; responses come back as they
complete, correlated by id.  Fault payloads are {code, message}.

The reserved target "_bus" is handled by the transport itself (it is not a
registered service): ListServices, CallTrace, Journal, Subscribe,
Unsubscribe.  Subscribe attaches a heap subscription to this connection
and delivers matching events as push messages.

The same listener sniffs HTTP: GET/HEAD requests serve the browser
terminal under /ui and upgrade /ws connections to WebSocket, where each
text frame carries exactly one protocol message.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from pathlib import Path

from . import websocket as ws
from .errors import BusFault, TransportError, fault_from_payload
from .event_heap import EventHeap, EventTemplate
from .service_bus import ServiceBus

log = logging.getLogger(__name__)

MAX_LINE = 1 << 20

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


def encode_message(msg: dict) -> bytes:
    return json.dumps(msg, sort_keys=True, separators=(",", ":")).encode("utf-8")


class Dispatcher:
    """Shared request handling for line and WebSocket peers."""

    def __init__(self, bus: ServiceBus, heap: EventHeap):
        self.bus = bus
        self.heap = heap

    def handle(self, msg: dict, peer: str, conn: "_Connection") -> dict:
        msg_id = msg.get("id") if isinstance(msg, dict) else None
        if not isinstance(msg, dict):
            return self._fault(None, TransportError("message must be an object"))
        if msg.get("v", 1) != 1:
            return self._fault(msg_id, TransportError(f"unsupported version {msg.get('v')!r}"))
        service = msg.get("service")
        method = msg.get("method")
        params = msg.get("params", {})
        if not isinstance(service, str) or not isinstance(method, str):
            return self._fault(msg_id, TransportError("service and method must be strings"))
        if not isinstance(params, dict):
            return self._fault(msg_id, TransportError("params must be a map"))
        try:
            if service == "_bus":
                payload = self._builtin(method, params, conn)
            else:
                payload = self.bus.invoke(service, method, params, caller=peer)
            return {"v": 1, "id": msg_id, "status": "ok", "payload": payload}
        except BusFault as fault:
            return self._fault(msg_id, fault)

    @staticmethod
    def _fault(msg_id, fault: BusFault) -> dict:
        return {"v": 1, "id": msg_id, "status": "fault", "payload": fault.to_payload()}

    def _builtin(self, method: str, params: dict, conn: "_Connection") -> dict:
        if method == "ListServices":
            return {"services": self.bus.list_services()}
        if method == "CallTrace":
            return {"entries": [e.to_dict() for e in self.bus.call_trace()]}
        if method == "Journal":
            return {"events": self.heap.journal()}
        if method == "Subscribe":
            component = params.get("component")
            if not isinstance(component, str) or not component:
                raise TransportError("Subscribe needs a component id")
            template = EventTemplate(
                event_type=params.get("event_type"),
                field_constraints=params.get("fields", {}),
            )
            return {"subscription_id": conn.attach_subscription(component, template)}
        if method == "Unsubscribe":
            conn.detach_subscription(params.get("subscription_id", ""))
            return {}
        raise TransportError(f"unknown _bus method {method!r}")


class _Connection:
    """Per-connection state: serialized writes and live heap subscriptions."""

    def __init__(self, heap: EventHeap, send_message):
        self.heap = heap
        self.send_message = send_message  # takes a dict, thread-safe
        self.alive = True
        self._subs: dict[str, threading.Thread] = {}
        self._lock = threading.Lock()

    def attach_subscription(self, component: str, template: EventTemplate) -> str:
        sub_id, deliveries = self.heap.subscribe(component, template)

        def pump():
            while self.alive:
                try:
                    event = deliveries.get(timeout=0.25)
                except Exception:
                    continue
                self.send_message({"v": 1, "id": None, "status": "event",
                                   "payload": event.to_dict()})

        thread = threading.Thread(target=pump, daemon=True,
                                  name=f"wire-sub-{sub_id}")
        with self._lock:
            self._subs[sub_id] = thread
        thread.start()
        return sub_id

    def detach_subscription(self, sub_id: str) -> None:
        with self._lock:
            self._subs.pop(sub_id, None)
        try:
            self.heap.unsubscribe(sub_id)
        except Exception:
            pass

    def close(self) -> None:
        self.alive = False
        with self._lock:
            sub_ids = list(self._subs)
        for sub_id in sub_ids:
            self.detach_subscription(sub_id)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock: socket.socket = self.request
        try:
            first = sock.recv(1, socket.MSG_PEEK)
        except OSError:
            return
        if not first:
            return
        if first == b"{":
            self._handle_lines(sock)
        else:
            self._handle_http(sock)

    # -- JSON line peers ---------------------------------------------------

    def _handle_lines(self, sock: socket.socket):
        server: WireServer = self.server
        peer = f"wire:{self.client_address[0]}:{self.client_address[1]}"
        write_lock = threading.Lock()

        def send_message(msg: dict):
            data = encode_message(msg) + b"\n"
            with write_lock:
                try:
                    sock.sendall(data)
                except OSError:
                    conn.close()

        conn = _Connection(server.heap, send_message)
        buffer = b""
        try:
            while True:
                chunk = sock.recv(65536)
                if not chunk:
                    break
                buffer += chunk
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    if not line.strip():
                        continue
                    self._dispatch_line(server, line, peer, conn, send_message)
                if len(buffer) > MAX_LINE:
                    send_message(Dispatcher._fault(
                        None, TransportError("line exceeds 1 MiB")))
                    return
        except OSError:
            pass
        finally:
            conn.close()

    @staticmethod
    def _dispatch_line(server, line: bytes, peer, conn, send_message):
        if len(line) > MAX_LINE:
            send_message(Dispatcher._fault(None, TransportError("line exceeds 1 MiB")))
            return
        try:
            msg = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            send_message(Dispatcher._fault(None, TransportError(f"bad message: {exc}")))
            return

        def work():
            send_message(server.dispatcher.handle(msg, peer, conn))

        threading.Thread(target=work, daemon=True).start()

    # -- HTTP / WebSocket ---------------------------------------------------

    def _handle_http(self, sock: socket.socket):
        server: WireServer = self.server
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(8192)
            if not chunk:
                return
            data += chunk
            if len(data) > MAX_LINE:
                return
        head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
        lines = head.split("\r\n")
        try:
            verb, path, _ = lines[0].split(" ", 2)
        except ValueError:
            return
        headers = {}
        for line in lines[1:]:
            if ":" in line:
                k, v = line.split(":", 1)
                headers[k.strip().lower()] = v.strip()
        if path == "/ws" and headers.get("upgrade", "").lower() == "websocket":
            self._handle_websocket(sock, headers)
            return
        self._serve_static(sock, verb, path, server.ui_dir)

    def _handle_websocket(self, sock: socket.socket, headers: dict):
        server: WireServer = self.server
        key = headers.get("sec-websocket-key")
        if not key:
            sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            return
        sock.sendall(ws.handshake_response(key))
        peer = f"ws:{self.client_address[0]}:{self.client_address[1]}"
        write_lock = threading.Lock()

        def send_message(msg: dict):
            frame = ws.encode_frame(encode_message(msg))
            with write_lock:
                try:
                    sock.sendall(frame)
                except OSError:
                    conn.close()

        conn = _Connection(server.heap, send_message)

        def recv_exact(n: int):
            buf = b""
            while len(buf) < n:
                try:
                    chunk = sock.recv(n - len(buf))
                except OSError:
                    return None
                if not chunk:
                    return None
                buf += chunk
            return buf

        reader = ws.FrameReader(recv_exact)
        try:
            while True:
                frame = reader.next_frame()
                if frame is None:
                    break
                opcode, payload = frame
                if opcode == ws.OP_CLOSE:
                    with write_lock:
                        sock.sendall(ws.encode_close())
                    break
                if opcode == ws.OP_PING:
                    with write_lock:
                        sock.sendall(ws.encode_frame(payload, ws.OP_PONG))
                    continue
                if opcode != ws.OP_TEXT:
                    continue
                try:
                    msg = json.loads(payload.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    send_message(Dispatcher._fault(
                        None, TransportError(f"bad message: {exc}")))
                    continue
                threading.Thread(
                    target=lambda m=msg: send_message(
                        server.dispatcher.handle(m, peer, conn)),
                    daemon=True).start()
        finally:
            conn.close()

    @staticmethod
    def _serve_static(sock: socket.socket, verb: str, path: str, ui_dir):
        def respond(status: str, body: bytes = b"", ctype: str = "text/plain",
                    extra: str = ""):
            head = (f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
                    f"Content-Length: {len(body)}\r\n{extra}"
                    "Connection: close\r\n\r\n")
            try:
                sock.sendall(head.encode("latin-1") + (b"" if verb == "HEAD" else body))
            except OSError:
                pass

        if verb not in ("GET", "HEAD"):
            respond("405 Method Not Allowed")
            return
        path = path.split("?", 1)[0]
        if path == "/":
            respond("302 Found", extra="Location: /ui/\r\n")
            return
        if not path.startswith("/ui"):
            respond("404 Not Found", b"not found")
            return
        if ui_dir is None:
            respond("200 OK", b"<!doctype html><title>hicd</title>"
                    b"<p>No browser terminal assets are configured.</p>",
                    "text/html; charset=utf-8")
            return
        rel = path[len("/ui"):].lstrip("/") or "index.html"
        target = (Path(ui_dir) / rel).resolve()
        root = Path(ui_dir).resolve()
        if root not in target.parents and target != root:
            respond("404 Not Found", b"not found")
            return
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            respond("404 Not Found", b"not found")
            return
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        respond("200 OK", target.read_bytes(), ctype)


class WireServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, bus: ServiceBus, heap: EventHeap,
                 host: str = "127.0.0.1", port: int = 7340,
                 ui_dir: str | None = None):
        self.dispatcher = Dispatcher(bus, heap)
        self.heap = heap
        self.ui_dir = ui_dir
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True,
                                  name="wire-server")
        thread.start()
        return thread


class WireClient:
    """Line-protocol client with pipelining and push delivery.

    call() blocks for the correlated response; pushes (status "event") go
    to on_event, when given, or are dropped.
    """

    def __init__(self, host: str, port: int, timeout: float = 10.0,
                 on_event=None):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.timeout = timeout
        self.on_event = on_event
        self._next_id = 1
        self._lock = threading.Lock()
        self._pending: dict[int, dict | None] = {}
        self._wakeups: dict[int, threading.Event] = {}
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def call(self, service: str, method: str, params: dict | None = None) -> dict:
        with self._lock:
            msg_id = self._next_id
            self._next_id += 1
            self._pending[msg_id] = None
            self._wakeups[msg_id] = threading.Event()
        request = {"v": 1, "id": msg_id, "service": service, "method": method,
                   "params": params or {}}
        self.sock.sendall(encode_message(request) + b"\n")
        if not self._wakeups[msg_id].wait(self.timeout):
            raise TransportError(f"timeout waiting for response {msg_id}")
        with self._lock:
            response = self._pending.pop(msg_id)
            self._wakeups.pop(msg_id)
        if response is None:
            raise TransportError("connection closed")
        if response.get("status") == "fault":
            raise fault_from_payload(response.get("payload", {}))
        return response.get("payload", {})

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass

    def _read_loop(self):
        buffer = b""
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    break
                buffer += chunk
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    if not line.strip():
                        continue
                    self._deliver(json.loads(line.decode("utf-8")))
        except (OSError, json.JSONDecodeError):
            pass
        finally:
            with self._lock:
                for msg_id, wakeup in self._wakeups.items():
                    wakeup.set()

    def _deliver(self, msg: dict):
        if msg.get("status") == "event":
            if self.on_event is not None:
                self.on_event(msg.get("payload", {}))
            return
        msg_id = msg.get("id")
        with self._lock:
            if msg_id in self._pending:
                self._pending[msg_id] = msg
                self._wakeups[msg_id].set()
