#!/usr/bin/env python3
"""Backoff probe against an emulated gateway with cold starts.

Fires invocations at growing idle gaps and marks which ones paid the cold
start penalty. With the defaults, only the gaps above the warm window
should come back slow.
"""

import argparse
import statistics
import tempfile
from pathlib import Path

from faasbench.bench import RunConfig, run_benchmark
from faasbench.metrics import read_csv
from faasbench.proxy import ProxyConfig, serve_proxy
from faasbench.targets import GatewayConfig, TargetConfig, serve_target
from faasbench.workload import BackoffSpec, plan_backoff, plan_offsets_gaps


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cold-start-ms", type=int, default=300)
    parser.add_argument("--warm-window-ms", type=int, default=1000)
    parser.add_argument("--initial-wait-ms", type=int, default=100)
    parser.add_argument("--multiplier", type=float, default=2)
    parser.add_argument("--steps", type=int, default=5)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    gateway = GatewayConfig(cold_start_delay_ms=args.cold_start_ms, warm_window_ms=args.warm_window_ms)
    spec = BackoffSpec(args.initial_wait_ms, args.multiplier, args.steps)
    out = args.out or Path(tempfile.mkdtemp(prefix="cold-start-"))

    target = serve_target(TargetConfig(gateway=gateway))
    proxy = serve_proxy(ProxyConfig(port=0))
    try:
        run_benchmark(RunConfig(spec, proxy.url + "/", target.url + "/func/word", out))
    finally:
        proxy.shutdown()
        target.shutdown()

    records = read_csv(out / "run.csv")
    gaps = [None] + plan_offsets_gaps(plan_backoff(spec, "http://unused/func/word"))
    latency = [r.client_timing.ms for r in records]
    warm = statistics.median(ms for ms, g in zip(latency, gaps) if g is None or g <= args.warm_window_ms)
    print(f"{'gap ms':>8} {'client ms':>10}  verdict")
    for gap, ms in zip(gaps, latency):
        verdict = "cold" if ms >= warm + 0.8 * args.cold_start_ms else "warm"
        print(f"{'-' if gap is None else gap:>8} {ms:10.2f}  {verdict}")
    print(f"warm median {warm:.2f} ms; CSV in {out}")


if __name__ == "__main__":
    main()
