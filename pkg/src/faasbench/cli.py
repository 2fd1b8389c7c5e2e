"""Command line entry point: ``faasbench run|serve-proxy|serve-target|report``.

Run settings come from a flat ``key = value`` properties file; any flag
given on the command line overrides the file. Keys are the flag names
with dashes or underscores (``max-in-flight`` or ``max_in_flight``).

Exit codes: 0 success, 1 infrastructure failure, 2 user error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import signal
import sys
import threading
from pathlib import Path
from typing import Any, Optional

from .bench import ProxyUnreachable, RunConfig, report, run_benchmark
from .metrics import EmptyRun, SchemaError, render_summary
from .proxy import ProxyConfig, serve_proxy
from .targets import GatewayConfig, TargetConfig, serve_target
from .wire import BindError
from .workload import BackoffSpec, BatchSpec, DispatchMode, TimeoutLevel, TimeoutSpec

EXIT_OK, EXIT_INFRA, EXIT_USER = 0, 1, 2

# key -> converter; doubles as the list of accepted config keys
KEYS = {
    "operation": str,
    "proxy_uri": str,
    "target_uri": str,
    "out": str,
    "words": int,
    "data": str,
    "ladder": lambda v: tuple(int(x) for x in str(v).split(",") if x.strip()),
    "requests": int,
    "batch": int,
    "async": lambda v: v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on"),
    "max_in_flight": int,
    "seed": int,
    "mode": str,
    "sleep_ms": int,
    "limit_ms": int,
    "level": str,
    "cold_start_ms": int,
    "warm_window_ms": int,
    "header_echo": lambda v: v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on"),
    "initial_wait_ms": int,
    "multiplier": float,
    "steps": int,
    "request_timeout_ms": int,
    "forward_timeout_ms": int,
    "injected_latency_ms": int,
    "allow_host": lambda v: tuple(x.strip() for x in (v.split(",") if isinstance(v, str) else v) if x.strip()),
    "host": str,
    "port": int,
}


class ConfigError(ValueError):
    pass


def load_properties(path: str | Path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in parser["run"].items()}


def merge_settings(file_values: dict[str, Any], flag_values: dict[str, Any]) -> dict[str, Any]:
    merged = {}
    for source in (file_values, flag_values):
        for key, value in source.items():
            if value is None:
                continue
            if key not in KEYS:
                raise ConfigError(f"unknown setting {key!r}")
            try:
                merged[key] = KEYS[key](value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None
    return merged


def gateway_config(s: dict[str, Any]) -> GatewayConfig:
    defaults = GatewayConfig()
    return GatewayConfig(
        execution_limit_ms=s.get("limit_ms", defaults.execution_limit_ms),
        cold_start_delay_ms=s.get("cold_start_ms", defaults.cold_start_delay_ms),
        warm_window_ms=s.get("warm_window_ms", defaults.warm_window_ms),
        header_echo=s.get("header_echo", defaults.header_echo),
    )


def proxy_config(s: dict[str, Any], default_port: int = 0) -> ProxyConfig:
    defaults = ProxyConfig()
    return ProxyConfig(
        host=s.get("host", defaults.host),
        port=s.get("port", default_port),
        forward_timeout_ms=s.get("forward_timeout_ms", defaults.forward_timeout_ms),
        injected_latency_ms=s.get("injected_latency_ms", defaults.injected_latency_ms),
        allowed_target_hosts=s.get("allow_host") or None,
    )


def run_config(s: dict[str, Any]) -> RunConfig:
    op = s.get("operation", "timeout" if "sleep_ms" in s else "batch")
    seed = s.get("seed", 0)
    if op == "batch":
        ladder = s.get("ladder", ())
        requests = s.get("requests", len(ladder) or 1)
        dispatch = DispatchMode.ASYNC if s.get("async") else DispatchMode.SYNC
        operation = BatchSpec(
            total_requests=requests,
            batch_size=s.get("batch", requests),
            dispatch_mode=dispatch,
            max_in_flight=s.get("max_in_flight", 1),
            words_per_request=s.get("words", 10),
            seed=seed,
            ladder=ladder,
            mode=s.get("mode"),
            payload=s.get("data"),
        )
    elif op == "backoff":
        operation = BackoffSpec(
            initial_wait_ms=s.get("initial_wait_ms", 100),
            multiplier=s.get("multiplier", 2),
            steps=s.get("steps", 8),
            words_per_request=s.get("words", 10),
            seed=seed,
            mode=s.get("mode"),
        )
    elif op == "timeout":
        if "sleep_ms" not in s:
            raise ConfigError("timeout operation needs sleep_ms")
        operation = TimeoutSpec(
            requested_sleep_ms=s["sleep_ms"],
            expected_limit_ms=s.get("limit_ms", GatewayConfig().execution_limit_ms),
            level_under_test=TimeoutLevel(s.get("level", "gateway")),
            seed=seed,
        )
    else:
        raise ConfigError(f"unknown operation {op!r} (batch, backoff, timeout)")
    return RunConfig(
        operation=operation,
        proxy_uri=s.get("proxy_uri"),
        target_uri=s.get("target_uri"),
        output_dir=Path(s.get("out", "out")),
        request_timeout_ms=s.get("request_timeout_ms", 60_000),
        gateway=gateway_config(s),
        proxy=ProxyConfig(forward_timeout_ms=s.get("forward_timeout_ms", 30_000),
                          injected_latency_ms=s.get("injected_latency_ms", 0)),
    )


def _add_common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("settings (override the config file)")
    g.add_argument("--proxy-uri")
    g.add_argument("--target-uri")
    g.add_argument("--out")
    g.add_argument("--operation", choices=("batch", "backoff", "timeout"))
    g.add_argument("--words", type=int)
    g.add_argument("--data", help="literal payload instead of synthesized words")
    g.add_argument("--ladder", help="comma-separated word counts, one request per rung")
    g.add_argument("--requests", type=int)
    g.add_argument("--batch", type=int)
    g.add_argument("--async", dest="async", action="store_const", const=True)
    g.add_argument("--max-in-flight", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--mode", choices=("letters", "full"))
    g.add_argument("--sleep-ms", type=int)
    g.add_argument("--limit-ms", type=int)
    g.add_argument("--cold-start-ms", type=int)
    g.add_argument("--warm-window-ms", type=int)
    g.add_argument("--header-echo", action="store_const", const=True)
    g.add_argument("--initial-wait-ms", type=int)
    g.add_argument("--multiplier", type=float)
    g.add_argument("--steps", type=int)
    g.add_argument("--request-timeout-ms", type=int)
    g.add_argument("--forward-timeout-ms", type=int)
    g.add_argument("--injected-latency-ms", type=int)
    g.add_argument("--allow-host", action="append")
    g.add_argument("--host")
    g.add_argument("--port", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faasbench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a benchmark run")
    run.add_argument("config", nargs="?", help="properties file")
    _add_common(run)

    for name in ("serve-proxy", "serve-target"):
        sp = sub.add_parser(name, help=f"start the {name.split('-')[1]} server")
        sp.add_argument("--config", help="properties file")
        _add_common(sp)

    rep = sub.add_parser("report", help="summarize a run.csv")
    rep.add_argument("csv")
    return parser


_NON_SETTINGS = {"command", "config", "verbose", "csv"}


def _settings(args: argparse.Namespace) -> dict[str, Any]:
    flags = {k: v for k, v in vars(args).items() if k not in _NON_SETTINGS}
    file_values = load_properties(args.config) if getattr(args, "config", None) else {}
    return merge_settings(file_values, flags)


def _serve_forever(handle) -> int:
    print(f"{handle.name} listening on {handle.url}", flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass
    finally:
        handle.shutdown()
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.command == "report":
            print(report(args.csv))
            return EXIT_OK
        settings = _settings(args)
        if args.command == "run":
            config = run_config(settings)
            summary = run_benchmark(config)
            print(render_summary(summary))
            print(f"\nwrote {config.output_dir / 'run.csv'} and {config.output_dir / 'run.log'}")
            return EXIT_OK
        if args.command == "serve-proxy":
            return _serve_forever(serve_proxy(proxy_config(settings, default_port=8000)))
        if args.command == "serve-target":
            target = TargetConfig(host=settings.get("host", "127.0.0.1"), port=settings.get("port", 8080),
                                  gateway=gateway_config(settings))
            return _serve_forever(serve_target(target))
    except (ConfigError, SchemaError, EmptyRun, ValueError) as exc:
        print(f"faasbench: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (ProxyUnreachable, BindError, OSError) as exc:
        print(f"faasbench: failed: {exc}", file=sys.stderr)
        return EXIT_INFRA
    return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
