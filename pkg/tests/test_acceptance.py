"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Each test is wrapped by ``criterion`` which times it, checks the runtime
bound and appends a verdict to ``conftest.ACCEPTANCE_LINES``; the lines are
printed in the terminal summary and also echoed to stdout.
"""

import json
import math
import random
import statistics
import time
from contextlib import contextmanager

import pytest

import conftest
from conftest import uuid_rewriter
from faasbench import protocol as p
from faasbench.bench import RunConfig, run_benchmark
from faasbench.metrics import (
    POINTS,
    InvocationRecord,
    SizeSample,
    Status,
    TimingSample,
    read_csv,
    record_row,
    summarize,
    write_csv,
)
from faasbench.targets import ConcurrencyProbe, GatewayConfig, count_letters, count_words
from faasbench.workload import (
    BackoffSpec,
    BatchSpec,
    DispatchMode,
    TimeoutSpec,
    plan_backoff,
    plan_batch,
    plan_offsets_gaps,
)

pytestmark = pytest.mark.slow


@contextmanager
def criterion(number, name, limit_s):
    notes = []
    t0 = time.monotonic()
    try:
        yield notes
    except BaseException as exc:
        elapsed = time.monotonic() - t0
        line = f"ACCEPTANCE {number} {name}: FAIL ({type(exc).__name__}: {exc}; {elapsed:.2f}s)"
        conftest.ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    elapsed = time.monotonic() - t0
    ok = elapsed < limit_s
    detail = "; ".join(notes + [f"{elapsed:.2f}s < {limit_s}s" if ok else f"{elapsed:.2f}s exceeds {limit_s}s"])
    line = f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_protocol_fidelity(fixture_text):
    with criterion(1, "protocol fidelity", 1) as notes:
        req_text = fixture_text("request_example.json")
        resp_text = fixture_text("response_example.json")
        req = p.decode_request(req_text)
        assert (req.workload_uuid, req.target_uri, req.workload_data) == (
            "112c338d", "https://faas:8080/func/word", "F a a S")
        resp = p.decode_response(resp_text)
        assert resp.workload_uuid == "112c338d"
        assert resp.target_start_time == 1533675892375
        assert resp.target_stop_time == 1533675892401
        assert resp.target_run_time_hr == (0, 26250589)
        assert resp.target_workload_result == "4"
        assert set(json.loads(p.encode_request(req))) == set(json.loads(req_text))
        assert set(json.loads(p.encode_response(resp))) == set(json.loads(resp_text))
        assert p.decode_response(p.encode_response(resp)) == resp
        notes.append("request and response fixtures decode and re-encode to the listed field sets")


def test_2_end_to_end_example(word_stack, tmp_path):
    with criterion(2, "end-to-end example", 5) as notes:
        proxy_uri, target_uri = word_stack
        run_benchmark(RunConfig(BatchSpec(1, payload="F a a S"), proxy_uri, target_uri, tmp_path))
        records = read_csv(tmp_path / "run.csv")
        assert len(records) == 1
        r = records[0]
        assert r.status is Status.SUCCESS and r.result == "4"
        assert r.target_timing.ns <= r.proxy_timing.ns <= r.client_timing.ns
        notes.append(f"target {r.target_timing.ms:.3f} <= proxy {r.proxy_timing.ms:.3f} "
                     f"<= client {r.client_timing.ms:.3f} ms")


LADDER = (10, 100, 1000, 10000)


def ladder_m3(start_target, start_proxy, tmp_path, echo):
    target = start_target(GatewayConfig(header_echo=echo))
    proxy = start_proxy()
    out = tmp_path / ("echo" if echo else "plain")
    run_benchmark(RunConfig(BatchSpec(len(LADDER), ladder=LADDER), proxy.url + "/", target.url + "/func/word", out))
    records = read_csv(out / "run.csv")
    assert [r.words for r in records] == list(LADDER)
    assert all(r.status is Status.SUCCESS for r in records)
    return records


def test_3_header_growth_pattern(start_target, start_proxy, tmp_path):
    with criterion(3, "header growth pattern", 60) as notes:
        echo = ladder_m3(start_target, start_proxy, tmp_path, True)
        heads = [r.sizes["m3"].header_bytes for r in echo]
        bodies = [r.sizes["m3"].body_bytes for r in echo]
        plan = plan_batch(BatchSpec(len(LADDER), ladder=LADDER), "http://h/func/word")
        payload_bytes = [len(inv.envelope.workload_data.encode()) for inv in plan.invocations]
        assert all(b > a for a, b in zip(heads, heads[1:])), heads
        assert all(h >= n for h, n in zip(heads, payload_bytes)), (heads, payload_bytes)
        assert max(bodies) - min(bodies) <= 128, bodies

        plain = ladder_m3(start_target, start_proxy, tmp_path, False)
        plain_heads = [r.sizes["m3"].header_bytes for r in plain]
        assert max(plain_heads) - min(plain_heads) < 64, plain_heads
        notes.append(f"echo m3 headers {heads}, body spread {max(bodies) - min(bodies)}; "
                     f"plain header spread {max(plain_heads) - min(plain_heads)}")


def test_4_timeout_probe(start_target, start_proxy, tmp_path):
    with criterion(4, "timeout probe", 10) as notes:
        target = start_target(GatewayConfig(execution_limit_ms=1000))
        proxy = start_proxy()
        statuses, latency = [], None
        for sleep in (500, 1000, 1500):
            out = tmp_path / str(sleep)
            run_benchmark(RunConfig(TimeoutSpec(sleep, 1000), proxy.url + "/", target.url + "/func/sleep", out))
            (r,) = read_csv(out / "run.csv")
            statuses.append(r.status)
            if r.status is Status.GATEWAY_TIMEOUT:
                latency = r.client_timing.ms
        assert statuses == [Status.SUCCESS, Status.SUCCESS, Status.GATEWAY_TIMEOUT], statuses
        assert 1000 <= latency <= 1300, latency
        notes.append(f"{[s.value for s in statuses]}, timeout latency {latency:.1f} ms")


def test_5_cold_start_probe(start_target, start_proxy, tmp_path):
    with criterion(5, "cold-start probe", 15) as notes:
        target = start_target(GatewayConfig(cold_start_delay_ms=300, warm_window_ms=1000))
        proxy = start_proxy()
        spec = BackoffSpec(initial_wait_ms=100, multiplier=2, steps=5, words_per_request=10)
        gaps = plan_offsets_gaps(plan_backoff(spec, "http://h/func/word"))
        assert gaps == [100, 200, 400, 800, 1600]
        run_benchmark(RunConfig(spec, proxy.url + "/", target.url + "/func/word", tmp_path))
        records = read_csv(tmp_path / "run.csv")
        assert len(records) == 6 and all(r.status is Status.SUCCESS for r in records)
        latency = [r.client_timing.ms for r in records]
        # invocation 0 follows the preflight, which leaves the instance warm
        follows_long_gap = [False] + [g > 1000 for g in gaps]
        warm_median = statistics.median(ms for ms, cold in zip(latency, follows_long_gap) if not cold)
        slow = [ms >= warm_median + 250 for ms in latency]
        assert slow == follows_long_gap, (latency, warm_median)
        notes.append(f"latencies {[round(x, 1) for x in latency]} ms, warm median {warm_median:.1f} ms")


def test_6_concurrency_cap(start_target, start_proxy, tmp_path):
    with criterion(6, "concurrency cap", 30) as notes:
        probe = ConcurrencyProbe(hold_ms=20)
        target = start_target(functions={"/func/count": probe})
        proxy = start_proxy()
        spec = BatchSpec(100, batch_size=10, dispatch_mode=DispatchMode.ASYNC, max_in_flight=10)
        summary = run_benchmark(RunConfig(spec, proxy.url + "/", target.url + "/func/count", tmp_path))
        records = read_csv(tmp_path / "run.csv")
        assert probe.peak <= 10, probe.peak
        assert len(records) == 100
        assert len({r.uuid for r in records}) == 100
        assert summary.success_ratio == 1.0
        notes.append(f"peak {probe.peak}, {len(records)} records, ratio {summary.success_ratio}")


# ---- criterion 7 oracles -----------------------------------------------------

def brute_tokens(text):
    """Character-by-character tokenizer: a word starts wherever a non-space follows a space or the start."""
    words = letters = 0
    previous_space = True
    for ch in text:
        if ch == " ":
            previous_space = True
        else:
            letters += 1
            if previous_space:
                words += 1
            previous_space = False
    return words, letters


def sort_oracle(values):
    s = sorted(values)
    n = len(s)
    return {
        "min": s[0],
        "max": s[-1],
        "mean": statistics.fmean(s),
        "median": s[(n - 1) // 2],
        "p95": s[math.ceil(0.95 * n) - 1],
        "p99": s[math.ceil(0.99 * n) - 1],
        "stddev": statistics.pstdev(s),
    }


def random_record(rng, i):
    status = Status.SUCCESS if rng.random() < 0.8 else rng.choice(list(Status))
    base = 1_700_000_000_000 + i

    def sample(ns):
        return TimingSample(base, base + ns // 10**6, divmod(ns, 10**9))

    target_ns = rng.randrange(10**8)
    proxy_ns = target_ns + rng.randrange(10**7)
    client_ns = proxy_ns + rng.randrange(10**7)
    sizes = {pt: SizeSample(pt, rng.randrange(1000), rng.randrange(10**6)) for pt in POINTS if rng.random() < 0.95}
    return InvocationRecord(f"{rng.getrandbits(128):032x}", status, rng.randrange(10**6),
                            sample(client_ns), sample(proxy_ns), sample(target_ns), sizes,
                            rng.choice(["4", "", "a,b", 'q"uote', "line\nbreak"]),
                            None if status is Status.SUCCESS else "detail, with comma")


def test_7_oracle_equivalence(tmp_path):
    with criterion(7, "oracle equivalence", 30) as notes:
        rng = random.Random(7)
        alphabet = "ab é\t中 "
        for _ in range(10**4):
            text = "".join(rng.choice(alphabet) for _ in range(rng.randrange(60)))
            assert (count_words(text), count_letters(text)) == brute_tokens(text), repr(text)

        records = [random_record(rng, i) for i in range(10**4)]
        summary = summarize(records)
        ok = [r for r in records if r.status is Status.SUCCESS]
        assert summary.request_count == 10**4
        assert summary.success_count == len(ok)
        for layer in ("client", "proxy", "target"):
            expected = sort_oracle([r.timing(layer).ms for r in ok])
            got = summary.layers[layer]
            for key, value in expected.items():
                assert math.isclose(getattr(got, key), value, rel_tol=1e-9, abs_tol=1e-9), (layer, key)
        for pt in POINTS:
            assert summary.header_bytes[pt] == sum(r.sizes[pt].header_bytes for r in records if pt in r.sizes)

        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(records, first)
        back = read_csv(first)
        write_csv(back, second)
        assert first.read_bytes() == second.read_bytes()
        assert [record_row(r) for r in back] == [record_row(r) for r in records]
        assert summarize(back) == summary
        notes.append("10^4 strings, 10^4 records, CSV bytes identical after round trip")


def test_8_invalid_correlation(start_target, start_proxy, tmp_path):
    with criterion(8, "invalid correlation", 5) as notes:
        target = start_target(functions={"/func/word": uuid_rewriter})
        proxy = start_proxy()
        summary = run_benchmark(RunConfig(BatchSpec(3, batch_size=3), proxy.url + "/", target.url + "/func/word",
                                          tmp_path))
        records = read_csv(tmp_path / "run.csv")
        assert [r.status for r in records] == [Status.INVALID] * 3
        assert summary.request_count == 3 and summary.success_ratio == 0
        assert "run stop invocations=3" in (tmp_path / "run.log").read_text()
        notes.append(f"{len(records)} Invalid records, summary written")
