import json
import socket
import time

import pytest

from faasbench import protocol as p
from faasbench.metrics import Status, classify
from faasbench.proxy import M2_BODY, M3_BODY, HostNotAllowed, Proxy, ProxyConfig, forward
from faasbench.targets import GatewayConfig, handle_sleep, handle_wordcount
from faasbench.wire import Reply, TimeoutFailure, post
from faasbench.workload import synthesize_words

TIMING_FIELDS = {p.TARGET_START, p.TARGET_STOP, p.TARGET_HR_S, p.TARGET_HR_NS,
                 p.PROXY_START, p.PROXY_STOP, p.PROXY_HR_S, p.PROXY_HR_NS}


def envelope(target_uri, data="F a a S", uuid="112c338d", **extra):
    return p.RequestEnvelope(uuid, target_uri, data, extra)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class Recorder:
    def __init__(self, inner):
        self.inner = inner
        self.bodies = []

    def __call__(self, body, cancel):
        reply = self.inner(body, cancel)
        self.bodies.append(reply.body)
        return reply


def test_reference_request_passes_target_fields_through(start_target):
    rec = Recorder(handle_wordcount)
    target = start_target(functions={"/func/word": rec})
    proxy = Proxy(ProxyConfig())
    reply = proxy.handle_invocation(p.encode_request(envelope(target.url + "/func/word")).encode())
    assert reply.status == 200
    merged = json.loads(reply.body)
    from_target = json.loads(rec.bodies[-1])
    for name, value in from_target.items():
        assert merged[name] == value
    assert merged[p.PROXY_UUID] == "112c338d"
    assert merged[p.TARGET_RESULT] == "4"
    env = p.decode_response(reply.body)
    proxy_ns = env.proxy_run_time_hr[0] * 10**9 + env.proxy_run_time_hr[1]
    target_ns = env.target_run_time_hr[0] * 10**9 + env.target_run_time_hr[1]
    assert proxy_ns >= target_ns
    # proxy and target share a host clock
    assert abs(env.target_start_time - env.proxy_start_time) <= proxy_ns / 10**6 + 1
    assert env.proxy_start_time <= env.proxy_stop_time


def test_unreachable_target():
    proxy = Proxy(ProxyConfig(forward_timeout_ms=2000))
    req = envelope(f"http://127.0.0.1:{free_port()}/func/word")
    reply = proxy.handle_invocation(p.encode_request(req).encode())
    assert reply.status == 502
    env = p.decode_response(reply.body)
    assert env.workload_uuid == req.workload_uuid
    assert env.extra[p.PROXY_ERROR] == "target unreachable"
    assert classify(req, env)[0] is Status.FUNCTION_ERROR


def test_malformed_request():
    reply = Proxy().handle_invocation(b'{"faasbench_workload_uuid": "abc"}')
    assert reply.status == 400
    env = p.decode_response(reply.body)
    assert env.workload_uuid == "abc"
    assert env.extra[p.PROXY_ERROR].startswith("malformed request")


def test_forward_timeout(start_target):
    target = start_target()
    proxy = Proxy(ProxyConfig(forward_timeout_ms=300))
    req = envelope(target.url + "/func/sleep", "", faasbench_sleep_ms="2000")
    reply = proxy.handle_invocation(p.encode_request(req).encode())
    assert reply.status == 504
    env = p.decode_response(reply.body)
    assert env.extra[p.PROXY_ERROR] == "gateway timeout"
    assert classify(req, env)[0] is Status.GATEWAY_TIMEOUT


def test_forward_times_out_on_schedule(start_target):
    target = start_target()
    req = envelope(target.url + "/func/sleep", "", faasbench_sleep_ms="3000")
    t0 = time.monotonic()
    with pytest.raises(TimeoutFailure):
        forward(req, req.target_uri, 500)
    elapsed = (time.monotonic() - t0) * 1000
    assert 500 * 0.8 <= elapsed <= 500 * 1.2


def test_allow_list(start_target):
    target = start_target()
    req = envelope(target.url + "/func/word")
    assert forward(req, req.target_uri, 2000, ("127.0.0.1",)).status == 200
    with pytest.raises(HostNotAllowed):
        forward(envelope("http://evil:8080/func/word"), "http://evil:8080/func/word", 2000, ("faas",))
    reply = Proxy(ProxyConfig(allowed_target_hosts=("faas",))).handle_invocation(p.encode_request(req).encode())
    assert reply.status == 403


def test_m2_body_covers_payload(start_target):
    target = start_target()
    data = synthesize_words(10**4, 2)
    reply = Proxy().handle_invocation(p.encode_request(envelope(target.url + "/func/word", data)).encode())
    env = p.decode_response(reply.body)
    assert env.extra[M2_BODY] >= len(data.encode())


def test_gateway_timeout_passes_through(start_target):
    target = start_target(GatewayConfig(execution_limit_ms=200))
    req = envelope(target.url + "/func/sleep", "", faasbench_sleep_ms="400")
    reply = Proxy().handle_invocation(p.encode_request(req).encode())
    assert reply.status == 504
    env = p.decode_response(reply.body)
    assert env.extra[p.GATEWAY_ERROR] == "execution limit exceeded"
    assert classify(req, env)[0] is Status.GATEWAY_TIMEOUT


def test_undecodable_target_reply(start_target):
    target = start_target(functions={"/bad": lambda body, cancel: Reply(200, b"<html>")})
    reply = Proxy().handle_invocation(p.encode_request(envelope(target.url + "/bad")).encode())
    assert reply.status == 502
    assert "malformed target reply" in p.decode_response(reply.body).extra[p.PROXY_ERROR]


def test_identical_requests_differ_only_in_timing(start_target):
    target = start_target()
    body = p.encode_request(envelope(target.url + "/func/word")).encode()
    a, b = (json.loads(Proxy().handle_invocation(body).body) for _ in range(2))
    assert set(a) == set(b)
    assert {k for k in a if a[k] != b[k]} <= TIMING_FIELDS | {M3_BODY}
    # the target reply size moves only with the digit count of its timing values
    target_timing = [k for k in TIMING_FIELDS if k.startswith("target_")]
    digits = sum(len(str(a[k])) - len(str(b[k])) for k in target_timing)
    assert a[M3_BODY] - b[M3_BODY] == digits


def test_injected_latency(start_target):
    target = start_target()
    body = p.encode_request(envelope(target.url + "/func/word")).encode()
    env = p.decode_response(Proxy(ProxyConfig(injected_latency_ms=100)).handle_invocation(body).body)
    assert env.proxy_run_time_hr[1] >= 100 * 10**6 or env.proxy_run_time_hr[0] > 0


def test_proxy_server_round_trip(start_target, start_proxy):
    target = start_target(functions={"/func/sleep": handle_sleep})
    proxy = start_proxy()
    req = envelope(target.url + "/func/sleep", "", faasbench_sleep_ms="5")
    ex = post(proxy.url + "/", p.encode_request(req).encode(), 5)
    assert ex.status == 200
    assert p.decode_response(ex.body).target_workload_result == "5"


@pytest.mark.parametrize("kwargs", [dict(forward_timeout_ms=0), dict(injected_latency_ms=-1)])
def test_proxy_config_invariants(kwargs):
    with pytest.raises(ValueError):
        ProxyConfig(**kwargs)
