#!/usr/bin/env python3
"""Ladder run against a local target with and without header echo.

Prints the per-rung m1..m4 header/body sizes for both target modes, which
shows how a target that mirrors its input into a response header inflates
the response head while the body stays flat.
"""

import argparse
import tempfile
from pathlib import Path

from faasbench.bench import RunConfig, run_benchmark
from faasbench.metrics import POINTS, read_csv
from faasbench.proxy import ProxyConfig, serve_proxy
from faasbench.targets import GatewayConfig, TargetConfig, serve_target
from faasbench.workload import WORD_LADDER, BatchSpec


def ladder_run(echo: bool, ladder, seed: int, out: Path):
    target = serve_target(TargetConfig(gateway=GatewayConfig(header_echo=echo)))
    proxy = serve_proxy(ProxyConfig(port=0))
    try:
        spec = BatchSpec(len(ladder), ladder=tuple(ladder), seed=seed)
        run_benchmark(RunConfig(spec, proxy.url + "/", target.url + "/func/word", out))
    finally:
        proxy.shutdown()
        target.shutdown()
    return read_csv(out / "run.csv")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--max-words", type=int, default=10**5, help="largest ladder rung (default 10^5)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=None, help="keep run.csv files here")
    args = parser.parse_args()

    ladder = [n for n in WORD_LADDER if n <= args.max_words]
    root = args.out or Path(tempfile.mkdtemp(prefix="header-growth-"))
    for echo in (False, True):
        records = ladder_run(echo, ladder, args.seed, root / ("echo" if echo else "plain"))
        print(f"\nheader_echo={'on' if echo else 'off'}")
        print("words".rjust(8) + "".join(f"{pt + ' head':>12}{pt + ' body':>12}" for pt in POINTS) + "  client ms")
        for r in records:
            cells = "".join(f"{r.sizes[pt].header_bytes:>12}{r.sizes[pt].body_bytes:>12}" for pt in POINTS)
            print(f"{r.words:>8}{cells}  {r.client_timing.ms:9.2f}")
    print(f"\nCSV files under {root}")


if __name__ == "__main__":
    main()
