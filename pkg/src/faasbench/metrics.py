"""Timing capture, HTTP size accounting, status classification and reporting."""

from __future__ import annotations

import csv
import enum
import math
import statistics
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .protocol import (
    GATEWAY_ERROR,
    NS_PER_SECOND,
    PROXY_ERROR,
    TARGET_ERROR,
    RequestEnvelope,
    ResponseEnvelope,
    correlate,
)

NS_PER_MS = 1_000_000
POINTS = ("m1", "m2", "m3", "m4")
LAYERS = ("client", "proxy", "target")

CSV_COLUMNS = (
    "uuid", "status", "words",
    "m1_header_b", "m1_body_b", "m2_header_b", "m2_body_b",
    "m3_header_b", "m3_body_b", "m4_header_b", "m4_body_b",
    "client_ms", "proxy_ms", "target_ms",
    "target_start_epoch_ms", "target_stop_epoch_ms",
    "result", "error",
)

GATEWAY_TIMEOUT_DETAIL = "gateway timeout"
FUNCTION_TIMEOUT_DETAIL = "function timeout"


class ClockError(RuntimeError):
    pass


class EmptyRun(ValueError):
    pass


class SchemaError(ValueError):
    pass


class Status(str, enum.Enum):
    SUCCESS = "Success"
    INVALID = "Invalid"
    GATEWAY_TIMEOUT = "GatewayTimeout"
    FUNCTION_TIMEOUT = "FunctionTimeout"
    TRANSPORT_ERROR = "TransportError"
    FUNCTION_ERROR = "FunctionError"


# ---- timing ----------------------------------------------------------------

def epoch_ms() -> int:
    return time.time_ns() // NS_PER_MS


def mark() -> int:
    """A monotonic high-resolution mark in nanoseconds."""
    return time.perf_counter_ns()


def hr_elapsed(start_mark: int, stop_mark: int) -> tuple[int, int]:
    if stop_mark < start_mark:
        raise ClockError(f"stop mark {stop_mark} precedes start mark {start_mark}")
    return divmod(stop_mark - start_mark, NS_PER_SECOND)


def hr_to_ns(hr: tuple[int, int]) -> int:
    return hr[0] * NS_PER_SECOND + hr[1]


@dataclass(frozen=True)
class TimingSample:
    epoch_start_ms: Optional[int]
    epoch_stop_ms: Optional[int]
    hr: tuple[int, int]

    @property
    def ns(self) -> int:
        return hr_to_ns(self.hr)

    @property
    def ms(self) -> float:
        return self.ns / NS_PER_MS


class Stopwatch:
    """Epoch stamps plus a monotonic interval, read back to back."""

    def start(self) -> "Stopwatch":
        self.epoch_start = epoch_ms()
        self._t0 = mark()
        return self

    def stop(self) -> TimingSample:
        t1 = mark()
        self.epoch_stop = epoch_ms()
        return TimingSample(self.epoch_start, self.epoch_stop, hr_elapsed(self._t0, t1))


# ---- sizes -----------------------------------------------------------------

@dataclass(frozen=True)
class SizeSample:
    point: str
    header_bytes: int
    body_bytes: int

    def __post_init__(self):
        if self.point not in POINTS:
            raise ValueError(f"unknown measurement point {self.point!r}")
        if self.header_bytes < 0 or self.body_bytes < 0:
            raise ValueError("byte counts must be non-negative")


def measure_http_sizes(raw_head: bytes, raw_body: bytes, point: str) -> SizeSample:
    """Sizes of one HTTP message as seen on the wire.

    ``raw_head`` is the start line, every header line and the blank line
    that ends the head, CRLFs included.
    """
    return SizeSample(point, len(raw_head), len(raw_body))


# ---- classification --------------------------------------------------------

def classify(
    request: RequestEnvelope,
    response: Optional[ResponseEnvelope],
    transport_error: Optional[str] = None,
) -> tuple[Status, Optional[str]]:
    """Status of one invocation plus a human-readable error detail.

    Precedence: TransportError > GatewayTimeout > FunctionTimeout >
    FunctionError > Invalid > Success.
    """
    if transport_error is not None or response is None:
        return Status.TRANSPORT_ERROR, transport_error or "no response"
    extra = response.extra
    if GATEWAY_ERROR in extra:
        return Status.GATEWAY_TIMEOUT, str(extra[GATEWAY_ERROR])
    if extra.get(PROXY_ERROR) == GATEWAY_TIMEOUT_DETAIL:
        return Status.GATEWAY_TIMEOUT, GATEWAY_TIMEOUT_DETAIL
    target_error = extra.get(TARGET_ERROR)
    if isinstance(target_error, str) and target_error.startswith(FUNCTION_TIMEOUT_DETAIL):
        return Status.FUNCTION_TIMEOUT, target_error
    errors = response.errors
    if errors:
        return Status.FUNCTION_ERROR, "; ".join(f"{k}={v}" for k, v in errors.items())
    if not correlate(request, response):
        return Status.INVALID, f"uuid mismatch: sent {request.workload_uuid!r}, got {response.workload_uuid!r}"
    return Status.SUCCESS, None


# ---- records ---------------------------------------------------------------

@dataclass
class InvocationRecord:
    uuid: str
    status: Status
    words: int = 0
    client_timing: Optional[TimingSample] = None
    proxy_timing: Optional[TimingSample] = None
    target_timing: Optional[TimingSample] = None
    sizes: dict[str, SizeSample] = field(default_factory=dict)
    result: str = ""
    error_detail: Optional[str] = None

    def timing(self, layer: str) -> Optional[TimingSample]:
        return getattr(self, f"{layer}_timing")


class RecordStore:
    """Thread-safe append-only record list; order is completion order."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: list[InvocationRecord] = []

    def append(self, record: InvocationRecord) -> None:
        with self._lock:
            self._records.append(record)

    def snapshot(self) -> list[InvocationRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self):
        with self._lock:
            return len(self._records)


# ---- statistics ------------------------------------------------------------

@dataclass(frozen=True)
class DurationStats:
    count: int
    min: float
    max: float
    mean: float
    median: float
    p95: float
    p99: float
    stddev: float


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    rank = max(1, math.ceil(pct / 100 * len(sorted_values)))
    return sorted_values[rank - 1]


def duration_stats(values: Iterable[float]) -> Optional[DurationStats]:
    ordered = sorted(values)
    if not ordered:
        return None
    n = len(ordered)
    return DurationStats(
        count=n,
        min=ordered[0],
        max=ordered[-1],
        mean=statistics.fmean(ordered),
        median=ordered[(n - 1) // 2],
        p95=nearest_rank(ordered, 95),
        p99=nearest_rank(ordered, 99),
        stddev=statistics.pstdev(ordered),
    )


@dataclass(frozen=True)
class RunSummary:
    request_count: int
    success_count: int
    success_ratio: float
    layers: dict[str, Optional[DurationStats]]
    header_bytes: dict[str, int]
    body_bytes: dict[str, int]
    total_runtime_ms: float


def summarize(records: Sequence[InvocationRecord]) -> RunSummary:
    """Aggregate a run.

    Duration statistics use Success records only; byte totals cover every
    record that has sizes. Total runtime is the sum of client durations.
    """
    if not records:
        raise EmptyRun("no records to summarize")
    ok = [r for r in records if r.status is Status.SUCCESS]
    layers = {}
    for layer in LAYERS:
        layers[layer] = duration_stats(r.timing(layer).ms for r in ok if r.timing(layer) is not None)
    headers = {p: 0 for p in POINTS}
    bodies = {p: 0 for p in POINTS}
    for r in records:
        for p, s in r.sizes.items():
            headers[p] += s.header_bytes
            bodies[p] += s.body_bytes
    total = math.fsum(r.client_timing.ms for r in records if r.client_timing is not None)
    return RunSummary(
        request_count=len(records),
        success_count=len(ok),
        success_ratio=len(ok) / len(records),
        layers=layers,
        header_bytes=headers,
        body_bytes=bodies,
        total_runtime_ms=total,
    )


def size_table(records: Sequence[InvocationRecord]) -> list[list]:
    """One row per record (words, then header/body per point) plus a total row."""
    rows = []
    totals = [0] * (2 * len(POINTS))
    for r in records:
        row = [r.words]
        for i, p in enumerate(POINTS):
            s = r.sizes.get(p)
            h, b = (s.header_bytes, s.body_bytes) if s else (0, 0)
            totals[2 * i] += h
            totals[2 * i + 1] += b
            row += [h, b]
        rows.append(row)
    rows.append(["total"] + totals)
    return rows


def _fmt(value) -> str:
    return f"{value:.3f}" if isinstance(value, float) else str(value)


def render_summary(summary: RunSummary, records: Sequence[InvocationRecord] = ()) -> str:
    lines = [
        f"requests: {summary.request_count}  success: {summary.success_count}  "
        f"ratio: {summary.success_ratio:.3f}  total runtime: {summary.total_runtime_ms:.3f} ms",
        "",
    ]
    head = ["layer", "n", "min", "max", "mean", "median", "p95", "p99", "stddev"]
    rows = [head]
    for layer, st in summary.layers.items():
        if st is None:
            rows.append([layer, "0"] + ["-"] * 7)
        else:
            rows.append([layer, st.count, st.min, st.max, st.mean, st.median, st.p95, st.p99, st.stddev])
    lines += _align(rows)
    lines.append("")
    size_head = ["words"] + [f"{p}_{k}" for p in POINTS for k in ("header_b", "body_b")]
    if records:
        lines += _align([size_head] + size_table(records))
    else:
        totals = ["total"]
        for p in POINTS:
            totals += [summary.header_bytes[p], summary.body_bytes[p]]
        lines += _align([size_head, totals])
    return "\n".join(lines)


def _align(rows: list[list]) -> list[str]:
    cells = [[_fmt(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))]
    return ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]


# ---- CSV -------------------------------------------------------------------

def _ms_text(t: Optional[TimingSample]) -> str:
    # six decimals is exactly nanosecond resolution, so parse-back is lossless
    if t is None:
        return ""
    ns = t.ns
    return f"{ns // NS_PER_MS}.{ns % NS_PER_MS:06d}"


def _ms_parse(text: str, epoch_start=None, epoch_stop=None) -> Optional[TimingSample]:
    if text == "":
        return None
    ns = int(Decimal(text) * NS_PER_MS)
    return TimingSample(epoch_start, epoch_stop, divmod(ns, NS_PER_SECOND))


def _opt_int(text: str) -> Optional[int]:
    return int(text) if text != "" else None


def record_row(r: InvocationRecord) -> list[str]:
    row = [r.uuid, r.status.value, str(r.words)]
    for p in POINTS:
        s = r.sizes.get(p)
        row += [str(s.header_bytes), str(s.body_bytes)] if s else ["", ""]
    target = r.target_timing
    row += [
        _ms_text(r.client_timing), _ms_text(r.proxy_timing), _ms_text(target),
        "" if target is None or target.epoch_start_ms is None else str(target.epoch_start_ms),
        "" if target is None or target.epoch_stop_ms is None else str(target.epoch_stop_ms),
        r.result,
        r.error_detail or "",
    ]
    return row


def write_csv(records: Iterable[InvocationRecord], destination: str | Path) -> int:
    count = 0
    with open(destination, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(record_row(r))
            count += 1
    return count


def read_csv(source: str | Path) -> list[InvocationRecord]:
    """Rebuild records from a CSV written by write_csv.

    Only the serialized columns survive: proxy and client epoch stamps are
    not part of the file.
    """
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{source}: empty file") from None
        if tuple(header) != CSV_COLUMNS:
            raise SchemaError(f"{source}: unexpected columns {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise SchemaError(f"{source}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            v = dict(zip(CSV_COLUMNS, row))
            sizes = {}
            for p in POINTS:
                h, b = v[f"{p}_header_b"], v[f"{p}_body_b"]
                if h != "":
                    sizes[p] = SizeSample(p, int(h), int(b))
            records.append(InvocationRecord(
                uuid=v["uuid"],
                status=Status(v["status"]),
                words=int(v["words"]),
                client_timing=_ms_parse(v["client_ms"]),
                proxy_timing=_ms_parse(v["proxy_ms"]),
                target_timing=_ms_parse(v["target_ms"], _opt_int(v["target_start_epoch_ms"]),
                                        _opt_int(v["target_stop_epoch_ms"])),
                sizes=sizes,
                result=v["result"],
                error_detail=v["error"] or None,
            ))
    return records


# ---- log -------------------------------------------------------------------

def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def log_line(level: str, message: str) -> str:
    return f"{_now_iso()} {level} {message}\n"


def write_log(metadata: dict, events: Iterable[InvocationRecord], destination: str | Path) -> None:
    """Append a run to a plain-text log: start line, one line per record, stop line."""
    meta = " ".join(f"{k}={v}" for k, v in metadata.items())
    with open(destination, "a", encoding="utf-8") as fh:
        fh.write(log_line("INFO", f"run start {meta}".rstrip()))
        n = 0
        for r in events:
            n += 1
            client = _ms_text(r.client_timing) or "-"
            msg = f"invocation uuid={r.uuid} status={r.status.value} client_ms={client}"
            if r.status is Status.SUCCESS:
                fh.write(log_line("INFO", msg))
            else:
                fh.write(log_line("ERROR", f"{msg} error={r.error_detail or ''}"))
        fh.write(log_line("INFO", f"run stop invocations={n}"))
