#!/usr/bin/env python3
"""Sleep probes around an emulated execution limit.

Runs the sleeper function at a range of durations and reports the status
and client latency of each, so the effective limit can be read off.
"""

import argparse
import tempfile
from pathlib import Path

from faasbench.bench import RunConfig, run_benchmark
from faasbench.metrics import read_csv
from faasbench.proxy import ProxyConfig, serve_proxy
from faasbench.targets import GatewayConfig, TargetConfig, serve_target
from faasbench.workload import TimeoutSpec


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--limit-ms", type=int, default=1000)
    parser.add_argument("--sleeps", type=int, nargs="+", default=[500, 900, 1000, 1100, 1500])
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    root = args.out or Path(tempfile.mkdtemp(prefix="timeout-probe-"))
    target = serve_target(TargetConfig(gateway=GatewayConfig(execution_limit_ms=args.limit_ms)))
    proxy = serve_proxy(ProxyConfig(port=0))
    print(f"limit {args.limit_ms} ms")
    print(f"{'sleep ms':>9} {'expected':>9} {'status':>15} {'client ms':>10}")
    try:
        for sleep in args.sleeps:
            spec = TimeoutSpec(sleep, args.limit_ms)
            out = root / str(sleep)
            run_benchmark(RunConfig(spec, proxy.url + "/", target.url + "/func/sleep", out))
            (r,) = read_csv(out / "run.csv")
            expected = "Timeout" if spec.expects_timeout else "Success"
            print(f"{sleep:>9} {expected:>9} {r.status.value:>15} {r.client_timing.ms:10.2f}")
    finally:
        proxy.shutdown()
        target.shutdown()


if __name__ == "__main__":
    main()
