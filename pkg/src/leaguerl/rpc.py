"""Request/reply RPC over TCP using the framed binary protocol.

Every connection is FIFO: a client sends one request and waits for the reply
carrying the same correlation id.  Servers run one thread per connection so a
handler may block (the learner uses this to hold back acknowledgements).
"""
from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time
from typing import Callable, Optional

from .proto import (MAX_FRAME_SIZE, ErrorCode, Kind, Message, ProtocolError, decode, encode,
                    read_frame)
from .proto.messages import KIND_OF, Error, OversizedFrame

log = logging.getLogger(__name__)


class RpcError(Exception):
    """Raised by handlers to send an Error reply; raised by clients on receipt."""

    def __init__(self, code: int, message: str = ""):
        super().__init__(f"{ErrorCode(code).name}: {message}" if code in ErrorCode._value2member_map_
                         else f"error {code}: {message}")
        self.code = int(code)
        self.message = message


class ServiceUnavailable(ConnectionError):
    pass


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 <= int(port) < 65536:
        raise ValueError(f"malformed endpoint {endpoint!r}, expected host:port")
    return host, int(port)


Handler = Callable[[object], object]


class _ConnHandler(socketserver.BaseRequestHandler):
    def setup(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.server.owner._track(self.request, True)

    def finish(self):
        self.server.owner._track(self.request, False)

    def handle(self):
        server: RpcServer = self.server.owner
        sock = self.request
        while not server.stopping:
            try:
                frame = read_frame(sock, server.max_frame_size)
            except OversizedFrame as exc:
                self._send(Message.of(Error(ErrorCode.OVERSIZED, str(exc))))
                return
            except (ProtocolError, OSError):
                return
            if frame is None or server.stopping:
                return
            try:
                msg = decode(frame, server.max_frame_size)
            except ProtocolError as exc:
                self._send(Message.of(Error(ErrorCode.PROTOCOL, str(exc))))
                continue
            reply = server.dispatch(msg)
            if not self._send(reply):
                return

    def _send(self, msg: Message) -> bool:
        try:
            self.request.sendall(encode(msg))
            return True
        except OSError:
            return False


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 256


class RpcServer:
    """Serve ``handlers[kind](payload) -> reply_payload`` on ``host:port``.

    Port 0 binds an ephemeral port; read it back from :attr:`endpoint`.
    """

    def __init__(self, endpoint: str, handlers: dict[Kind, Handler],
                 max_frame_size: int = MAX_FRAME_SIZE):
        host, port = parse_endpoint(endpoint)
        self.handlers = dict(handlers)
        self.max_frame_size = max_frame_size
        self.stopping = False
        self._server = _TCPServer((host, port), _ConnHandler)
        self._server.owner = self
        self._thread: Optional[threading.Thread] = None
        self._conns: set = set()
        self._conns_lock = threading.Lock()

    def _track(self, sock: socket.socket, alive: bool) -> None:
        with self._conns_lock:
            if alive:
                self._conns.add(sock)
            else:
                self._conns.discard(sock)

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def dispatch(self, msg: Message) -> Message:
        handler = self.handlers.get(msg.kind)
        try:
            if handler is None:
                raise RpcError(ErrorCode.BAD_REQUEST, f"{msg.kind.name} not served here")
            reply = handler(msg.payload)
        except RpcError as exc:
            reply = Error(exc.code, exc.message)
        except Exception as exc:  # a handler bug must not kill the connection
            log.exception("handler for %s failed", msg.kind.name)
            reply = Error(ErrorCode.INTERNAL, f"{type(exc).__name__}: {exc}")
        return Message(KIND_OF[type(reply)], msg.correlation_id, reply)

    def start(self) -> "RpcServer":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever(poll_interval=0.05)

    def stop(self) -> None:
        self.stopping = True
        self._server.shutdown()
        self._server.server_close()
        with self._conns_lock:
            conns, self._conns = list(self._conns), set()
        for sock in conns:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class RpcClient:
    """Blocking client with reconnect and bounded exponential backoff.

    ``retry_for`` caps how long one call keeps retrying a dead endpoint before
    raising :class:`ServiceUnavailable`.  Requests may be delivered twice when
    a connection drops after sending; services deduplicate where it matters.
    """

    def __init__(self, endpoint: str, retry_for: float = 30.0, timeout: Optional[float] = None,
                 backoff: tuple[float, float] = (0.02, 1.0)):
        self.endpoint = endpoint
        self.address = parse_endpoint(endpoint)
        self.retry_for = retry_for
        self.timeout = timeout
        self.backoff = backoff
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()
        self._next_id = 1

    def _connect(self) -> socket.socket:
        sock = socket.create_connection(self.address, timeout=5.0)
        sock.settimeout(self.timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def close(self) -> None:
        with self._lock:
            self._drop()

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def call(self, payload, retry_for: Optional[float] = None):
        """Send ``payload`` and return the reply payload; Error replies raise."""
        limit = self.retry_for if retry_for is None else retry_for
        with self._lock:
            corr = self._next_id
            self._next_id += 1
            frame = encode(Message.of(payload, corr))
            deadline = time.monotonic() + limit
            delay = self.backoff[0]
            while True:
                try:
                    if self._sock is None:
                        self._sock = self._connect()
                    self._sock.sendall(frame)
                    raw = read_frame(self._sock)
                    if raw is None:
                        raise ConnectionResetError("server closed connection")
                    reply = decode(raw)
                    break
                except (OSError, ProtocolError) as exc:
                    self._drop()
                    if time.monotonic() + delay > deadline:
                        raise ServiceUnavailable(f"{self.endpoint}: {exc}") from exc
                    time.sleep(delay)
                    delay = min(delay * 2, self.backoff[1])
        if reply.kind == Kind.ERROR:
            raise RpcError(reply.payload.code, reply.payload.message)
        if reply.correlation_id != corr:
            raise ProtocolError(f"reply correlation id {reply.correlation_id}, expected {corr}")
        return reply.payload

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
