"""Target functions and a small FaaS gateway emulator.

Functions take the raw request body and return a ``Reply``. The gateway
wraps a function with platform behaviour: cold starts after idle periods,
an execution time limit enforced by a watchdog, and optionally echoing the
workload into a response header.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import protocol as p
from .metrics import NS_PER_MS, Stopwatch
from .wire import Reply, ServiceHandle, header_value, start_server

SEPARATOR = " "
ECHO_HEADER = "X-Workload-Echo"
# how long past the limit the watchdog waits before aborting
WATCHDOG_SLACK_S = 0.02

# A function sees the request body and a cancellation event the gateway sets
# when it gives up on the invocation.
Function = Callable[[bytes, threading.Event], Reply]


def count_words(text: str) -> int:
    """Number of maximal runs of characters other than U+0020."""
    count = 0
    in_word = False
    for ch in text:
        if ch == SEPARATOR:
            in_word = False
        elif not in_word:
            in_word = True
            count += 1
    return count


def count_letters(text: str) -> int:
    return len(text) - text.count(SEPARATOR)


def _uuid_hint(body: bytes) -> str:
    try:
        obj = json.loads(body)
        value = obj.get(p.REQ_UUID) if isinstance(obj, dict) else None
    except (ValueError, UnicodeDecodeError):
        value = None
    return value if isinstance(value, str) and value else "unknown"


def _target_reply(uuid: str, timing, result: str, status: int = 200, **extra) -> Reply:
    env = p.ResponseEnvelope(
        workload_uuid=uuid,
        target_start_time=timing.epoch_start_ms,
        target_stop_time=timing.epoch_stop_ms,
        target_run_time_hr=timing.hr,
        target_workload_result=result,
        extra=extra,
    )
    return Reply(status, p.encode_response(env, p.Origin.TARGET).encode("utf-8"))


def handle_wordcount(body: bytes, cancel: Optional[threading.Event] = None) -> Reply:
    """Count letters (default) or words and letters (``faasbench_mode=full``)."""
    watch = Stopwatch().start()
    try:
        env = p.decode_request(body)
    except p.ProtocolError:
        return _target_reply(_uuid_hint(body), watch.stop(), "", 400,
                             **{p.TARGET_ERROR: "malformed request"})
    mode = env.extra.get(p.MODE_FIELD, "letters")
    text = env.workload_data
    if mode == "full":
        result = f"words={count_words(text)};letters={count_letters(text)}"
    elif mode == "letters":
        result = str(count_letters(text))
    else:
        return _target_reply(env.workload_uuid, watch.stop(), "", 400,
                             **{p.TARGET_ERROR: f"unknown mode {mode!r}"})
    return _target_reply(env.workload_uuid, watch.stop(), result)


def handle_sleep(body: bytes, cancel: Optional[threading.Event] = None) -> Reply:
    """Sleep ``faasbench_sleep_ms`` milliseconds, then report the figure."""
    watch = Stopwatch().start()
    try:
        env = p.decode_request(body)
    except p.ProtocolError:
        return _target_reply(_uuid_hint(body), watch.stop(), "", 400,
                             **{p.TARGET_ERROR: "malformed request"})
    raw = env.extra.get(p.SLEEP_FIELD)
    try:
        sleep_ms = int(raw)
    except (TypeError, ValueError):
        sleep_ms = -1
    if sleep_ms < 0 or isinstance(raw, bool):
        return _target_reply(env.workload_uuid, watch.stop(), "", 400,
                             **{p.TARGET_ERROR: "bad sleep parameter"})
    if sleep_ms:
        (cancel or threading.Event()).wait(sleep_ms / 1000)
    return _target_reply(env.workload_uuid, watch.stop(), str(sleep_ms))


@dataclass(frozen=True)
class GatewayConfig:
    execution_limit_ms: int = 30_000
    cold_start_delay_ms: int = 0
    warm_window_ms: int = 300_000
    header_echo: bool = False

    def __post_init__(self):
        if self.execution_limit_ms <= 0:
            raise ValueError("execution_limit_ms must be positive")
        if self.cold_start_delay_ms < 0 or self.warm_window_ms < 0:
            raise ValueError("cold start and warm window must be non-negative")


def _monotonic_ms() -> float:
    return time.monotonic_ns() / NS_PER_MS


@dataclass
class InstanceState:
    """Warmth of one emulated function instance.

    Times come from the monotonic clock so wall-clock jumps cannot warm or
    chill the instance.
    """

    last_invocation_ms: Optional[float] = None
    cold_starts: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def is_warm(self, now_ms: float, warm_window_ms: int) -> bool:
        if self.last_invocation_ms is None:
            return False
        return now_ms - self.last_invocation_ms <= warm_window_ms

    def touch(self, now_ms: float) -> None:
        with self.lock:
            if self.last_invocation_ms is None or now_ms > self.last_invocation_ms:
                self.last_invocation_ms = now_ms


def gateway_wrap(inner: Function, config: GatewayConfig, state: Optional[InstanceState] = None,
                 clock: Callable[[], float] = _monotonic_ms) -> Callable[[bytes], Reply]:
    state = state if state is not None else InstanceState()

    def provision() -> None:
        # arrivals during a cold start queue behind it, as they would for a
        # platform that is still launching the only instance
        with state.lock:
            if not state.is_warm(clock(), config.warm_window_ms):
                state.cold_starts += 1
                if config.cold_start_delay_ms:
                    time.sleep(config.cold_start_delay_ms / 1000)
                state.last_invocation_ms = clock()

    def wrapped(body: bytes) -> Reply:
        provision()
        cancel = threading.Event()
        outcome: dict = {}

        def run():
            try:
                outcome["reply"] = inner(body, cancel)
            except Exception as exc:
                outcome["error"] = exc

        watch = Stopwatch().start()
        worker = threading.Thread(target=run, name="function", daemon=True)
        worker.start()
        # the slack absorbs timer and scheduler jitter, so a run of exactly
        # the limit finishes; anything still running after it is an overrun
        worker.join(config.execution_limit_ms / 1000 + WATCHDOG_SLACK_S)
        timed_out = worker.is_alive()
        if timed_out:
            cancel.set()
            reply = _target_reply(_uuid_hint(body), watch.stop(), "", 504,
                                  **{p.GATEWAY_ERROR: "execution limit exceeded"})
        elif "error" in outcome:
            reply = _target_reply(_uuid_hint(body), watch.stop(), "", 500,
                                  **{p.TARGET_ERROR: f"function crashed: {outcome['error']!r}"})
        else:
            reply = outcome["reply"]
        state.touch(clock())
        if config.header_echo:
            reply.headers.append((ECHO_HEADER, header_value(_workload_hint(body))))
        return reply

    wrapped.state = state
    return wrapped


def _workload_hint(body: bytes) -> str:
    try:
        obj = json.loads(body)
        value = obj.get(p.REQ_DATA) if isinstance(obj, dict) else None
    except (ValueError, UnicodeDecodeError):
        value = None
    return value if isinstance(value, str) else ""


FUNCTIONS: dict[str, Function] = {
    "/func/word": handle_wordcount,
    "/func/sleep": handle_sleep,
}


@dataclass(frozen=True)
class TargetConfig:
    host: str = "127.0.0.1"
    port: int = 0
    gateway: GatewayConfig = GatewayConfig()


class TargetApp:
    """Routes paths to gateway-wrapped functions, one instance state per route."""

    def __init__(self, gateway: GatewayConfig, functions: Optional[dict[str, Function]] = None):
        self.gateway = gateway
        self.functions = dict(FUNCTIONS if functions is None else functions)
        self.routes = {path: gateway_wrap(fn, gateway) for path, fn in self.functions.items()}

    def state(self, path: str) -> InstanceState:
        return self.routes[path].state

    def __call__(self, path: str, body: bytes) -> Reply:
        route = self.routes.get(path.split("?", 1)[0])
        if route is None:
            return _target_reply(_uuid_hint(body), Stopwatch().start().stop(), "", 404,
                                 **{p.TARGET_ERROR: f"no function at {path}"})
        return route(body)


def serve_target(config: TargetConfig = TargetConfig(),
                 functions: Optional[dict[str, Function]] = None) -> ServiceHandle:
    app = TargetApp(config.gateway, functions)
    handle = start_server(app, config.host, config.port, name="target", error_field=p.TARGET_ERROR)
    handle.app = app
    return handle


class ConcurrencyProbe:
    """Wraps a function and records how many invocations overlap.

    ``hold_ms`` keeps each invocation open long enough for overlap to show.
    """

    def __init__(self, inner: Function = handle_wordcount, hold_ms: int = 20):
        self.inner = inner
        self.hold_ms = hold_ms
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0
        self.calls = 0

    def __call__(self, body: bytes, cancel: threading.Event) -> Reply:
        with self._lock:
            self.current += 1
            self.calls += 1
            self.peak = max(self.peak, self.current)
        try:
            time.sleep(self.hold_ms / 1000)
            return self.inner(body, cancel)
        finally:
            with self._lock:
                self.current -= 1
