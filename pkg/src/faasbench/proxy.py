"""The proxy function: forwards driver requests to a target and measures the hop.

The proxy stamps its own start/stop times, times the forward with a
monotonic clock, records m2 (request to target) and m3 (reply from target)
sizes, and merges those fields into the target's reply. Target fields are
passed through untouched.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Optional
from urllib.parse import urlsplit

from . import protocol as p
from .metrics import Stopwatch, measure_http_sizes
from .wire import (
    ConnectFailure,
    Exchange,
    Reply,
    ServiceHandle,
    TimeoutFailure,
    TransportFailure,
    post,
    start_server,
)

MALFORMED = "malformed request"
UNREACHABLE = "target unreachable"
GATEWAY_TIMEOUT = "gateway timeout"
BAD_TARGET_REPLY = "malformed target reply"
HOST_NOT_ALLOWED = "target host not allowed"

# enrichment fields carrying the sizes measured at the proxy
M2_HEADER, M2_BODY = "proxy_m2_header_b", "proxy_m2_body_b"
M3_HEADER, M3_BODY = "proxy_m3_header_b", "proxy_m3_body_b"


class HostNotAllowed(ValueError):
    pass


@dataclass(frozen=True)
class ProxyConfig:
    host: str = "127.0.0.1"
    port: int = 0
    forward_timeout_ms: int = 30_000
    # emulates the distance between the proxy's region and the target
    injected_latency_ms: int = 0
    allowed_target_hosts: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.forward_timeout_ms <= 0:
            raise ValueError("forward_timeout_ms must be positive")
        if self.injected_latency_ms < 0:
            raise ValueError("injected_latency_ms must be non-negative")


def forward(env: p.RequestEnvelope, target_uri: str, timeout_ms: int,
            allowed_hosts: Optional[tuple[str, ...]] = None) -> Exchange:
    """POST the re-encoded envelope to ``target_uri``.

    Raises HostNotAllowed, ConnectFailure or TimeoutFailure.
    """
    host = urlsplit(target_uri).hostname
    if allowed_hosts is not None and host not in allowed_hosts:
        raise HostNotAllowed(f"{host!r} is not in the allow-list")
    return post(target_uri, p.encode_request(env).encode("utf-8"), timeout_ms / 1000)


class Proxy:
    def __init__(self, config: ProxyConfig = ProxyConfig()):
        self.config = config

    def _error(self, status: int, uuid: Optional[str], detail: str, timing=None, sizes=None) -> Reply:
        fields = {}
        if timing is not None:
            fields.update(proxy_start_time=timing.epoch_start_ms, proxy_stop_time=timing.epoch_stop_ms,
                          proxy_run_time_hr=timing.hr)
        extra = dict(sizes or {})
        extra[p.PROXY_ERROR] = detail
        env = p.ResponseEnvelope(workload_uuid=uuid or "unknown", extra=extra, **fields)
        return Reply(status, p.encode_response(env).encode("utf-8"))

    def handle_invocation(self, body: bytes) -> Reply:
        try:
            env = p.decode_request(body)
        except p.ProtocolError as exc:
            return self._error(400, _uuid_hint(body), f"{MALFORMED}: {exc}")

        watch = Stopwatch().start()
        if self.config.injected_latency_ms:
            time.sleep(self.config.injected_latency_ms / 1000)
        try:
            exchange = forward(env, env.target_uri, self.config.forward_timeout_ms,
                               self.config.allowed_target_hosts)
        except HostNotAllowed:
            return self._error(403, env.workload_uuid, HOST_NOT_ALLOWED, watch.stop())
        except TimeoutFailure:
            return self._error(504, env.workload_uuid, GATEWAY_TIMEOUT, watch.stop())
        except (ConnectFailure, TransportFailure):
            return self._error(502, env.workload_uuid, UNREACHABLE, watch.stop())
        timing = watch.stop()

        m2 = measure_http_sizes(exchange.request_head, exchange.request_body, "m2")
        m3 = measure_http_sizes(exchange.response_head, exchange.body, "m3")
        sizes = {M2_HEADER: m2.header_bytes, M2_BODY: m2.body_bytes,
                 M3_HEADER: m3.header_bytes, M3_BODY: m3.body_bytes}
        try:
            reply = p.decode_response(exchange.body, p.Origin.TARGET)
        except p.ProtocolError as exc:
            return self._error(502, env.workload_uuid, f"{BAD_TARGET_REPLY}: {exc}", timing, sizes)

        # the echoed uuid comes from the target so a rewrite shows up as Invalid
        extra = {p.TARGET_UUID: reply.workload_uuid}
        extra.update(reply.extra)
        extra.update(sizes)
        merged = p.ResponseEnvelope(
            workload_uuid=reply.workload_uuid,
            target_start_time=reply.target_start_time,
            target_stop_time=reply.target_stop_time,
            target_run_time_hr=reply.target_run_time_hr,
            target_workload_result=reply.target_workload_result,
            proxy_start_time=timing.epoch_start_ms,
            proxy_stop_time=timing.epoch_stop_ms,
            proxy_run_time_hr=timing.hr,
            extra=extra,
        )
        return Reply(exchange.status, p.encode_response(merged).encode("utf-8"))

    def __call__(self, path: str, body: bytes) -> Reply:
        return self.handle_invocation(body)


def _uuid_hint(body: bytes) -> Optional[str]:
    try:
        obj = json.loads(body)
        value = obj.get(p.REQ_UUID) if isinstance(obj, dict) else None
    except (ValueError, UnicodeDecodeError):
        return None
    return value if isinstance(value, str) and value else None


def serve_proxy(config: ProxyConfig = ProxyConfig()) -> ServiceHandle:
    proxy = Proxy(config)
    handle = start_server(proxy, config.host, config.port, name="proxy", error_field=p.PROXY_ERROR)
    handle.app = proxy
    return handle
