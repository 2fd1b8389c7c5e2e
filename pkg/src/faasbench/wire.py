"""Minimal HTTP/1.1 plumbing with byte-exact capture of heads and bodies.

The standard library clients hide the raw header block, so requests are
framed here by hand and responses are parsed line by line. Servers are
``ThreadingHTTPServer`` subclasses handing bodies to plain callables.
"""

from __future__ import annotations

import errno
import json
import socket
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import urlsplit

MAX_HEADER_LINES = 512


class TransportFailure(OSError):
    pass


class ConnectFailure(TransportFailure):
    pass


class TimeoutFailure(TransportFailure):
    pass


class BindError(OSError):
    pass


@dataclass
class Exchange:
    """One request/response pair as it crossed the wire."""

    request_head: bytes
    request_body: bytes
    status: int
    response_head: bytes
    headers: list[tuple[str, str]]
    body: bytes

    def header(self, name: str) -> Optional[str]:
        name = name.lower()
        for k, v in self.headers:
            if k.lower() == name:
                return v
        return None


@dataclass
class Reply:
    status: int
    body: bytes
    headers: list[tuple[str, str]] = field(default_factory=list)
    content_type: str = "application/json"


def build_request(url: str, body: bytes, method: str = "POST") -> tuple[str, int, bytes]:
    parts = urlsplit(url)
    if parts.scheme != "http":
        raise ValueError(f"unsupported scheme in {url!r}")
    host = parts.hostname or ""
    port = parts.port or 80
    path = parts.path or "/"
    if parts.query:
        path += "?" + parts.query
    host_header = parts.netloc
    lines = [
        f"{method} {path} HTTP/1.1",
        f"Host: {host_header}",
        "User-Agent: faasbench",
        "Accept: application/json",
        "Content-Type: application/json",
        f"Content-Length: {len(body)}",
        "Connection: close",
    ]
    head = ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1")
    return host, port, head


class _Deadline:
    def __init__(self, sock: socket.socket, timeout_s: float):
        self.sock = sock
        self.end = time.monotonic() + timeout_s

    def arm(self) -> None:
        remaining = self.end - time.monotonic()
        if remaining <= 0:
            raise TimeoutFailure("deadline exceeded")
        self.sock.settimeout(remaining)


def _read_line(fh, deadline: _Deadline) -> bytes:
    deadline.arm()
    line = fh.readline()
    if not line:
        raise TransportFailure("connection closed mid-head")
    return line


def _read_exact(fh, n: int, deadline: _Deadline) -> bytes:
    chunks = []
    while n > 0:
        deadline.arm()
        chunk = fh.read(n)
        if not chunk:
            raise TransportFailure("connection closed mid-body")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def _read_chunked(fh, deadline: _Deadline) -> bytes:
    out = []
    while True:
        size_line = _read_line(fh, deadline)
        size = int(size_line.split(b";")[0].strip(), 16)
        if size == 0:
            while _read_line(fh, deadline) not in (b"\r\n", b"\n"):
                pass
            return b"".join(out)
        out.append(_read_exact(fh, size, deadline))
        _read_line(fh, deadline)


def _read_to_eof(fh, deadline: _Deadline) -> bytes:
    chunks = []
    while True:
        deadline.arm()
        chunk = fh.read(65536)
        if not chunk:
            return b"".join(chunks)
        chunks.append(chunk)


def post(url: str, body: bytes, timeout_s: float, method: str = "POST") -> Exchange:
    """Send one request and read the full response within ``timeout_s``.

    Raises ConnectFailure when no connection can be made, TimeoutFailure
    when the deadline passes, TransportFailure on a broken exchange.
    """
    host, port, head = build_request(url, body, method)
    try:
        sock = socket.create_connection((host, port), timeout=timeout_s)
    except socket.timeout:
        raise TimeoutFailure(f"connect to {host}:{port} timed out") from None
    except OSError as exc:
        raise ConnectFailure(f"connect to {host}:{port} failed: {exc}") from None
    deadline = _Deadline(sock, timeout_s)
    try:
        with sock, sock.makefile("rb") as fh:
            try:
                deadline.arm()
                sock.sendall(head + body)
                status_line = _read_line(fh, deadline)
                head_lines = [status_line]
                headers = []
                while True:
                    line = _read_line(fh, deadline)
                    head_lines.append(line)
                    if line in (b"\r\n", b"\n"):
                        break
                    if len(head_lines) > MAX_HEADER_LINES:
                        raise TransportFailure("too many header lines")
                    name, _, value = line.decode("latin-1").partition(":")
                    headers.append((name.strip(), value.strip()))
                parts = status_line.split(None, 2)
                if len(parts) < 2 or not parts[0].startswith(b"HTTP/"):
                    raise TransportFailure(f"bad status line {status_line[:80]!r}")
                status = int(parts[1])
                lookup = {k.lower(): v for k, v in headers}
                if "chunked" in lookup.get("transfer-encoding", "").lower():
                    resp_body = _read_chunked(fh, deadline)
                elif "content-length" in lookup:
                    resp_body = _read_exact(fh, int(lookup["content-length"]), deadline)
                else:
                    resp_body = _read_to_eof(fh, deadline)
            except socket.timeout:
                raise TimeoutFailure(f"no complete reply from {url} within {timeout_s:.3f}s") from None
            except (ConnectionError, ValueError) as exc:
                raise TransportFailure(f"exchange with {url} failed: {exc}") from None
    except OSError as exc:
        if isinstance(exc, TransportFailure):
            raise
        raise TransportFailure(str(exc)) from None
    return Exchange(head, body, status, b"".join(head_lines), headers, resp_body)


def header_value(text: str) -> str:
    """Make arbitrary text safe as a single header value, keeping UTF-8 bytes."""
    text = text.replace("\r", " ").replace("\n", " ")
    return text.encode("utf-8").decode("latin-1")


# ---- server side -----------------------------------------------------------

Handler = Callable[[str, bytes], Reply]


class _RequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "AppServer"

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass

    def _send(self, reply: Reply) -> None:
        self.send_response(reply.status)
        self.send_header("Content-Type", reply.content_type)
        self.send_header("Content-Length", str(len(reply.body)))
        for name, value in reply.headers:
            self.send_header(name, value)
        self.send_header("Connection", "close")
        self.end_headers()
        self.wfile.write(reply.body)
        self.close_connection = True

    def do_GET(self):
        self._send(Reply(200, b'{"ready":true}'))

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        try:
            reply = self.server.app(self.path, body)
        except Exception as exc:  # keep the server alive on handler bugs
            reply = Reply(500, json.dumps({self.server.error_field: f"internal error: {type(exc).__name__}"}).encode())
        try:
            self._send(reply)
        except (BrokenPipeError, ConnectionResetError):
            pass


class AppServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128
    allow_reuse_address = False

    def __init__(self, address: tuple[str, int], app: Handler, error_field: str = "proxy_error"):
        self.app = app
        self.error_field = error_field
        super().__init__(address, _RequestHandler)


class ServiceHandle:
    """A running server; ``shutdown()`` stops it and releases the port."""

    def __init__(self, server: AppServer, name: str):
        self.server = server
        self.name = name
        self._thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05},
                                        name=f"{name}-server", daemon=True)
        self._thread.start()

    @property
    def host(self) -> str:
        return self.server.server_address[0]

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def wait_ready(self, timeout_s: float = 2.0) -> None:
        end = time.monotonic() + timeout_s
        while True:
            try:
                with socket.create_connection((self.host, self.port), timeout=0.2):
                    return
            except OSError:
                if time.monotonic() > end:
                    raise TimeoutError(f"{self.name} not ready after {timeout_s}s")
                time.sleep(0.01)

    def shutdown(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def start_server(app: Handler, host: str = "127.0.0.1", port: int = 0, name: str = "server",
                 error_field: str = "proxy_error") -> ServiceHandle:
    try:
        server = AppServer((host, port), app, error_field)
    except OSError as exc:
        if exc.errno in (errno.EADDRINUSE, errno.EACCES, errno.EADDRNOTAVAIL):
            raise BindError(exc.errno, f"cannot bind {host}:{port}: {exc.strerror}") from None
        raise
    handle = ServiceHandle(server, name)
    handle.wait_ready()
    return handle
