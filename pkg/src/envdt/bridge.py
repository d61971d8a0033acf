"""Delivery of environment signals to a digital-twin endpoint.

Wire protocol, version 1.  Newline-delimited UTF-8 JSON over a stream
socket.  The sender writes one envelope per line and waits for one ack line
before sending the next::

    {"v":1,"runId":"pilly-uniform-0","seq":4,"machine":"BatterySM",
     "signal":"LowBattery","category":"Warning","instance":"Battery#1",
     "offsetMs":200.0,"payload":{"level":17}}
    {"runId":"pilly-uniform-0","seq":4}

Delivery is at-least-once.  A sender that loses its connection resends the
unacked envelope, so the receiver drops anything it has already seen for the
same ``(runId, seq)`` and acks it again.

The twin stub below only mirrors state.  Its reaction table is a stand-in for
a real twin and carries no normative weight.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Callable, Mapping, Protocol

from .engine import SignalEvent
from .model import SIGNAL_LIBRARY, Category

log = logging.getLogger(__name__)

WIRE_VERSION = 1


class EndpointUnavailable(Exception):
    pass


class ProtocolError(ValueError):
    pass


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class SignalEnvelope:
    run_id: str
    seq: int
    machine: str
    signal: str
    category: str
    instance: str | None
    offset_ms: float
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.seq < 1:
            raise ProtocolError(f"seq must be positive, got {self.seq}")
        if self.category not in {c.value for c in Category}:
            raise ProtocolError(f"unknown category {self.category!r}")
        expected = SIGNAL_LIBRARY.get(self.signal)
        if expected is not None and expected.value != self.category:
            raise ProtocolError(f"{self.signal} is {expected.value}, not {self.category}")

    @classmethod
    def from_event(cls, run_id: str, ev: SignalEvent) -> SignalEnvelope:
        return cls(
            run_id, ev.seq, ev.machine, ev.signal.name, ev.signal.category.value,
            ev.instance, ev.offset_ms, dict(ev.payload),
        )

    def to_json(self) -> str:
        return _dumps({
            "v": WIRE_VERSION,
            "runId": self.run_id,
            "seq": self.seq,
            "machine": self.machine,
            "signal": self.signal,
            "category": self.category,
            "instance": self.instance,
            "offsetMs": self.offset_ms,
            "payload": dict(self.payload),
        })

    @classmethod
    def from_json(cls, line: str) -> SignalEnvelope:
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"bad envelope: {exc}") from exc
        if d.get("v") != WIRE_VERSION:
            raise ProtocolError(f"unsupported envelope version {d.get('v')!r}")
        try:
            return cls(
                d["runId"], d["seq"], d["machine"], d["signal"], d["category"],
                d["instance"], d["offsetMs"], d.get("payload", {}),
            )
        except KeyError as exc:
            raise ProtocolError(f"envelope lacks {exc.args[0]!r}") from exc

    @property
    def key(self) -> tuple[str, int]:
        return (self.run_id, self.seq)


@dataclass(frozen=True)
class Ack:
    run_id: str
    seq: int

    def to_json(self) -> str:
        return _dumps({"runId": self.run_id, "seq": self.seq})

    @classmethod
    def from_json(cls, line: str) -> Ack:
        try:
            d = json.loads(line)
            return cls(d["runId"], d["seq"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ProtocolError(f"bad ack {line!r}") from exc


@dataclass(frozen=True)
class Receipt:
    run_id: str
    seq: int
    ack_seq: int
    attempts: int


# -- twin stub ----------------------------------------------------------------

DEGRADED_LABELS = MappingProxyType({
    "NoConnection": "disconnected",
    "NoPower": "unpowered",
    "DeadBattery": "unpowered",
    "VerifyFail": "verification-failed",
    "DeliveryFail": "delivery-failed",
    "DeviceError": "faulted",
    "SensorError": "sensor-fault",
})

MIRROR_RULES = MappingProxyType({
    "FullBattery": {"battery": 100, "batteryLow": False},
    "LowBattery": {"batteryLow": True},
    "ConnectionChanged": {"connected": True},
    "WeakConnection": {"connectionWeak": True},
    "CartridgeInserted": {"cartridgePresent": True},
    "CartridgeEmpty": {"cartridgeEmpty": True},
})


@dataclass(frozen=True)
class TwinStubState:
    label: str = "operational"
    mirror: Mapping[str, Any] = field(default_factory=dict)
    log: tuple[SignalEnvelope, ...] = ()


def twin_stub_apply(state: TwinStubState, env: SignalEnvelope) -> TwinStubState:
    """Fold one envelope into the stub state; never mutates ``state``."""
    log_ = state.log + (env,)
    if env.category == Category.ERROR.value:
        return replace(state, label=DEGRADED_LABELS.get(env.signal, "degraded"), log=log_)
    mirror = dict(state.mirror)
    mirror.update(MIRROR_RULES.get(env.signal, {}))
    if env.signal not in SIGNAL_LIBRARY:
        mirror["lastInteraction"] = env.signal
    for prop, value in env.payload.items():
        mirror[f"{env.instance}.{prop}"] = value
    return replace(state, mirror=mirror, log=log_)


class TwinStub:
    """Idempotent receiver holding one stub state per run."""

    def __init__(self) -> None:
        self.states: dict[str, TwinStubState] = {}
        self.duplicates = 0
        self._seen: set[tuple[str, int]] = set()
        self._lock = threading.Lock()

    def receive(self, env: SignalEnvelope) -> Ack:
        with self._lock:
            if env.key in self._seen:
                self.duplicates += 1
            else:
                self._seen.add(env.key)
                self.states[env.run_id] = twin_stub_apply(self.states.get(env.run_id, TwinStubState()), env)
        return Ack(env.run_id, env.seq)

    def state(self, run_id: str) -> TwinStubState:
        with self._lock:
            return self.states.get(run_id, TwinStubState())


# -- endpoints ----------------------------------------------------------------


class Endpoint(Protocol):
    def send(self, env: SignalEnvelope) -> Ack: ...

    def close(self) -> None: ...


class InProcessEndpoint:
    """Calls a stub directly.  ``fail_next`` and ``lose_acks`` inject faults:
    the first refuses delivery, the second delivers but drops the ack."""

    def __init__(self, stub: TwinStub | None = None):
        self.stub = stub if stub is not None else TwinStub()
        self.fail_next = 0
        self.lose_acks = 0
        self.down = False

    def send(self, env: SignalEnvelope) -> Ack:
        if self.down:
            raise EndpointUnavailable("in-process twin is down")
        if self.fail_next > 0:
            self.fail_next -= 1
            raise EndpointUnavailable("injected failure")
        ack = self.stub.receive(env)
        if self.lose_acks > 0:
            self.lose_acks -= 1
            raise EndpointUnavailable("injected ack loss")
        return ack

    def close(self) -> None:
        pass


class TcpEndpoint:
    def __init__(self, host: str, port: int, timeout: float = 2.0):
        self.host, self.port, self.timeout = host, port, timeout
        self._sock: socket.socket | None = None
        self._reader = None

    def _connect(self) -> None:
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise EndpointUnavailable(f"tcp://{self.host}:{self.port}: {exc}") from exc
        self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")

    def send(self, env: SignalEnvelope) -> Ack:
        if self._sock is None:
            self._connect()
        try:
            self._sock.sendall((env.to_json() + "\n").encode("utf-8"))
            line = self._reader.readline()
        except OSError as exc:
            self.close()
            raise EndpointUnavailable(str(exc)) from exc
        if not line:
            self.close()
            raise EndpointUnavailable("connection closed before ack")
        ack = Ack.from_json(line)
        if (ack.run_id, ack.seq) != env.key:
            self.close()
            raise ProtocolError(f"ack {ack} does not match {env.key}")
        return ack

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._reader.close()
                self._sock.close()
            except OSError:
                pass
        self._sock = self._reader = None


def open_endpoint(spec: str, stub: TwinStub | None = None) -> Endpoint:
    """``inproc`` or ``tcp://host:port``."""
    if spec == "inproc":
        return InProcessEndpoint(stub)
    if spec.startswith("tcp://"):
        host, sep, port = spec[len("tcp://"):].rpartition(":")
        if not sep or not port.isdigit():
            raise ValueError(f"bad endpoint {spec!r}, expected tcp://host:port")
        return TcpEndpoint(host or "127.0.0.1", int(port))
    raise ValueError(f"bad endpoint {spec!r}, expected inproc or tcp://host:port")


# -- dispatcher ---------------------------------------------------------------

_STOP = object()


class Dispatcher:
    """Ordered delivery of one run's events on a background thread.

    Usable directly as an engine sink.  Each envelope is retried with capped
    exponential backoff until acked; once a single envelope exhausts the retry
    budget the dispatcher stops and ``close`` raises EndpointUnavailable.
    """

    def __init__(
        self,
        endpoint: Endpoint,
        run_id: str,
        retries: int = 8,
        base_delay: float = 0.005,
        max_delay: float = 0.2,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.run_id = run_id
        self.retries = retries
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.sleep = sleep
        self.receipts: list[Receipt] = []
        self.error: EndpointUnavailable | None = None
        self.undelivered: list[SignalEnvelope] = []
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._work, name=f"envdt-dispatch-{run_id}", daemon=True)
        self._thread.start()

    def __call__(self, ev: SignalEvent) -> None:
        self.submit(SignalEnvelope.from_event(self.run_id, ev))

    def submit(self, env: SignalEnvelope) -> None:
        self._queue.put(env)

    def backoff(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * 2 ** (attempt - 1))

    def deliver(self, env: SignalEnvelope) -> Receipt:
        attempt = 0
        while True:
            attempt += 1
            try:
                ack = self.endpoint.send(env)
                return Receipt(env.run_id, env.seq, ack.seq, attempt)
            except EndpointUnavailable as exc:
                if attempt > self.retries:
                    raise EndpointUnavailable(
                        f"{env.run_id} seq {env.seq} undelivered after {attempt} attempts: {exc}"
                    ) from exc
                log.debug("retrying %s seq %d: %s", env.run_id, env.seq, exc)
                self.sleep(self.backoff(attempt))

    def _work(self) -> None:
        while True:
            item = self._queue.get()
            if item is _STOP:
                return
            if self.error is not None:
                self.undelivered.append(item)
                continue
            try:
                self.receipts.append(self.deliver(item))
            except EndpointUnavailable as exc:
                self.error = exc
                self.undelivered.append(item)

    def close(self, timeout: float | None = None) -> list[Receipt]:
        self._queue.put(_STOP)
        self._thread.join(timeout)
        if self._thread.is_alive():
            raise EndpointUnavailable(f"dispatcher for {self.run_id} did not drain in time")
        if self.error is not None:
            raise self.error
        return self.receipts


# -- tcp stub server ----------------------------------------------------------


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: _Server = self.server  # type: ignore[assignment]
        server.track(self.connection)
        try:
            for raw in self.rfile:
                line = raw.decode("utf-8").strip()
                if not line:
                    continue
                try:
                    env = SignalEnvelope.from_json(line)
                except ProtocolError as exc:
                    log.warning("dropping connection: %s", exc)
                    return
                ack = server.stub.receive(env)
                self.wfile.write((ack.to_json() + "\n").encode("utf-8"))
        except OSError:
            pass
        finally:
            server.untrack(self.connection)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], stub: TwinStub):
        self.stub = stub
        self.connections: set[socket.socket] = set()
        self._conn_lock = threading.Lock()
        super().__init__(address, _Handler)

    def track(self, conn: socket.socket) -> None:
        with self._conn_lock:
            self.connections.add(conn)

    def untrack(self, conn: socket.socket) -> None:
        with self._conn_lock:
            self.connections.discard(conn)

    def drop_connections(self) -> None:
        with self._conn_lock:
            conns = list(self.connections)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class TwinStubServer:
    """Serves a TwinStub over TCP.  ``stop`` then ``start`` keeps the stub's
    state and dedup memory, which is what a restarted twin would load."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, stub: TwinStub | None = None):
        self.host = host
        self.port = port
        self.stub = stub if stub is not None else TwinStub()
        self._server: _Server | None = None
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        return f"tcp://{self.host}:{self.port}"

    def start(self) -> TwinStubServer:
        self._server = _Server((self.host, self.port), self.stub)
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, name="envdt-twin-stub", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is None:
            return
        self._server.shutdown()
        self._server.drop_connections()
        self._server.server_close()
        self._thread.join()
        self._server = self._thread = None

    def restart(self) -> None:
        self.stop()
        self.start()

    def wait(self) -> None:
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> TwinStubServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
