"""The benchmark driver: plans a run, sends it through the proxy, records and reports."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union
from urllib.parse import urlsplit

from . import protocol as p
from .metrics import (
    InvocationRecord,
    RecordStore,
    RunSummary,
    SizeSample,
    Status,
    Stopwatch,
    TimingSample,
    classify,
    measure_http_sizes,
    read_csv,
    render_summary,
    summarize,
    write_csv,
    write_log,
)
from .proxy import M2_BODY, M2_HEADER, M3_BODY, M3_HEADER, ProxyConfig, serve_proxy
from .targets import GatewayConfig, TargetConfig, serve_target
from .wire import ServiceHandle, TransportFailure, post
from .workload import (
    BackoffSpec,
    BatchSpec,
    DispatchMode,
    PlannedInvocation,
    TimeoutSpec,
    WorkloadPlan,
    plan_backoff,
    plan_batch,
    plan_timeout_probe,
)

log = logging.getLogger(__name__)

SENTINEL_UUID = "00000000"
Operation = Union[BatchSpec, BackoffSpec, TimeoutSpec]


class ProxyUnreachable(ConnectionError):
    pass


@dataclass(frozen=True)
class RunConfig:
    operation: Operation
    proxy_uri: Optional[str] = None
    target_uri: Optional[str] = None
    output_dir: Path = Path("out")
    request_timeout_ms: int = 60_000
    # used only when the run starts its own proxy and target
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)

    def __post_init__(self):
        for uri in (self.proxy_uri, self.target_uri):
            if uri is not None:
                parts = urlsplit(uri)
                if not parts.scheme or not parts.netloc:
                    raise ValueError(f"{uri!r} is not an absolute URI")
        if self.request_timeout_ms <= 0:
            raise ValueError("request_timeout_ms must be positive")

    @property
    def self_contained(self) -> bool:
        return self.proxy_uri is None


def default_target_path(operation: Operation) -> str:
    return "/func/sleep" if isinstance(operation, TimeoutSpec) else "/func/word"


def build_plan(config: RunConfig) -> WorkloadPlan:
    op = config.operation
    if isinstance(op, BatchSpec):
        return plan_batch(op, config.target_uri, config.proxy_uri)
    if isinstance(op, BackoffSpec):
        return plan_backoff(op, config.target_uri, config.proxy_uri)
    if isinstance(op, TimeoutSpec):
        return plan_timeout_probe(op, config.target_uri, config.proxy_uri)
    raise TypeError(f"unknown operation {op!r}")


def invoke(proxy_uri: str, env: p.RequestEnvelope, timeout_s: float, words: int = 0) -> InvocationRecord:
    """Send one envelope through the proxy and build its record."""
    body = p.encode_request(env).encode("utf-8")
    watch = Stopwatch().start()
    try:
        exchange = post(proxy_uri, body, timeout_s)
    except TransportFailure as exc:
        client = watch.stop()
        status, detail = classify(env, None, str(exc) or type(exc).__name__)
        return InvocationRecord(env.workload_uuid, status, words, client_timing=client, error_detail=detail)
    client = watch.stop()

    sizes = {
        "m1": measure_http_sizes(exchange.request_head, exchange.request_body, "m1"),
        "m4": measure_http_sizes(exchange.response_head, exchange.body, "m4"),
    }
    try:
        resp = p.decode_response(exchange.body, p.Origin.PROXY)
    except p.ProtocolError as exc:
        return InvocationRecord(env.workload_uuid, Status.FUNCTION_ERROR, words, client_timing=client,
                                sizes=sizes, error_detail=f"undecodable proxy reply (HTTP {exchange.status}): {exc}")

    extra = resp.extra
    if M2_HEADER in extra:
        sizes["m2"] = SizeSample("m2", int(extra[M2_HEADER]), int(extra[M2_BODY]))
    if M3_HEADER in extra:
        sizes["m3"] = SizeSample("m3", int(extra[M3_HEADER]), int(extra[M3_BODY]))
    status, detail = classify(env, resp)
    proxy_t = target_t = None
    if resp.proxy_run_time_hr is not None:
        proxy_t = TimingSample(resp.proxy_start_time, resp.proxy_stop_time, resp.proxy_run_time_hr)
    if resp.target_run_time_hr is not None:
        target_t = TimingSample(resp.target_start_time, resp.target_stop_time, resp.target_run_time_hr)
    return InvocationRecord(
        uuid=env.workload_uuid,
        status=status,
        words=words,
        client_timing=client,
        proxy_timing=proxy_t,
        target_timing=target_t,
        sizes=sizes,
        result=resp.target_workload_result or "",
        error_detail=detail,
    )


def preflight(proxy_uri: str, plan: WorkloadPlan, timeout_s: float) -> None:
    """One throwaway invocation with the sentinel uuid; it also warms the target."""
    first = plan.invocations[0].envelope
    extra = dict(first.extra)
    if p.SLEEP_FIELD in extra:
        extra[p.SLEEP_FIELD] = "0"
    env = p.RequestEnvelope(SENTINEL_UUID, first.target_uri, "", extra)
    record = invoke(proxy_uri, env, timeout_s)
    if record.status is Status.TRANSPORT_ERROR:
        raise ProxyUnreachable(f"proxy at {proxy_uri} did not answer: {record.error_detail}")


def execute_plan(plan: WorkloadPlan, proxy_uri: str, timeout_s: float,
                 store: Optional[RecordStore] = None) -> list[InvocationRecord]:
    """Run every planned invocation and return the records in completion order.

    Invocations fire no earlier than their offset from the run start.
    Batches run one after another; within a batch, asynchronous dispatch
    keeps at most ``plan.max_in_flight`` requests open.
    """
    store = store if store is not None else RecordStore()
    t0 = time.monotonic()

    def fire(inv: PlannedInvocation) -> None:
        delay = t0 + inv.fire_offset_ms / 1000 - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        store.append(invoke(proxy_uri, inv.envelope, timeout_s, inv.words))

    if plan.dispatch_mode is DispatchMode.SYNC or plan.max_in_flight == 1:
        for inv in plan.invocations:
            fire(inv)
    else:
        with ThreadPoolExecutor(max_workers=plan.max_in_flight, thread_name_prefix="invoke") as pool:
            for batch in plan.batches:
                for future in [pool.submit(fire, inv) for inv in batch]:
                    future.result()
    return store.snapshot()


def run_benchmark(config: RunConfig) -> RunSummary:
    """Plan, execute, summarize and write ``run.csv`` / ``run.log``.

    With no proxy URI the run starts a local proxy and target for its own
    duration.
    """
    with ExitStack() as stack:
        if config.self_contained:
            config = _start_local(config, stack)
        if config.target_uri is None:
            raise ValueError("target_uri is required when proxy_uri is given")
        plan = build_plan(config)
        timeout_s = config.request_timeout_ms / 1000
        preflight(config.proxy_uri, plan, timeout_s)
        log.info("running %d invocations through %s", len(plan), config.proxy_uri)
        records = execute_plan(plan, config.proxy_uri, timeout_s)

    summary = summarize(records)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(records, out / "run.csv")
    meta = {"proxy": config.proxy_uri, "target": config.target_uri,
            "operation": type(config.operation).__name__, "planned": len(plan)}
    write_log(meta, records, out / "run.log")
    return summary


def _start_local(config: RunConfig, stack: ExitStack) -> RunConfig:
    target_uri = config.target_uri
    if target_uri is None:
        target = serve_target(TargetConfig(gateway=config.gateway))
        stack.callback(target.shutdown)
        target_uri = target.url + default_target_path(config.operation)
    proxy = serve_proxy(replace(config.proxy, host="127.0.0.1", port=0))
    stack.callback(proxy.shutdown)
    return replace(config, proxy_uri=proxy.url + "/", target_uri=target_uri)


def serve(role: str, config) -> ServiceHandle:
    """Start a proxy or target server; returns once it accepts connections."""
    if role == "proxy":
        return serve_proxy(config)
    if role == "target":
        return serve_target(config)
    raise ValueError(f"unknown role {role!r}")


def report(csv_path: str | Path) -> str:
    """Recompute the run summary from a CSV file alone and render it."""
    records = read_csv(csv_path)
    return render_summary(summarize(records), records)
