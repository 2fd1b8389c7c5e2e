"""JSON message format shared by the bench driver, the proxy and the targets.

Every field name carries a prefix naming the component that authored it
(``faasbench_``, ``proxy_``, ``target_``). The only exception is
``target_uri``, which the driver writes.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Optional
from urllib.parse import urlsplit

NS_PER_SECOND = 1_000_000_000


class Origin(enum.Enum):
    BENCH = "faasbench_"
    PROXY = "proxy_"
    TARGET = "target_"

    @property
    def prefix(self) -> str:
        return self.value


# request wire names
REQ_UUID = "faasbench_workload_uuid"
REQ_URI = "target_uri"
REQ_DATA = "faasbench_workload_data"

# response wire names
PROXY_UUID = "proxy_workload_uuid"
TARGET_UUID = "target_workload_uuid"
TARGET_START = "target_start_time"
TARGET_STOP = "target_stop_time"
TARGET_HR_S = "target_run_time_hr_seconds"
TARGET_HR_NS = "target_run_time_hr_nanoseconds"
TARGET_RESULT = "target_workload_result"
PROXY_START = "proxy_start_time"
PROXY_STOP = "proxy_stop_time"
PROXY_HR_S = "proxy_run_time_hr_seconds"
PROXY_HR_NS = "proxy_run_time_hr_nanoseconds"

# well-known optional fields
PROXY_ERROR = "proxy_error"
TARGET_ERROR = "target_error"
GATEWAY_ERROR = "target_gateway_error"
MODE_FIELD = "faasbench_mode"
SLEEP_FIELD = "faasbench_sleep_ms"

_TARGET_CORE = (TARGET_START, TARGET_STOP, TARGET_HR_S, TARGET_HR_NS, TARGET_RESULT)
_RESPONSE_KNOWN = frozenset(
    (PROXY_UUID, PROXY_START, PROXY_STOP, PROXY_HR_S, PROXY_HR_NS) + _TARGET_CORE
)


class ProtocolError(ValueError):
    """Base class for message decoding failures."""


class MalformedMessage(ProtocolError):
    pass


class MissingField(ProtocolError):
    pass


class BadPrefix(ProtocolError):
    pass


class RangeError(ProtocolError):
    pass


def origin_of(name: str) -> Optional[Origin]:
    """Return the component that authored ``name``, or None if unprefixed."""
    if name == REQ_URI:
        return Origin.BENCH
    for origin in Origin:
        if name.startswith(origin.prefix):
            return origin
    return None


def _check_prefixes(obj: dict) -> None:
    for name in obj:
        if origin_of(name) is None:
            raise BadPrefix(f"field {name!r} has no origin prefix")


def is_error_field(name: str) -> bool:
    return origin_of(name) is not None and name.endswith("_error")


@dataclass(frozen=True)
class RequestEnvelope:
    workload_uuid: str
    target_uri: str
    workload_data: str
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.workload_uuid, str) or not self.workload_uuid:
            raise MalformedMessage("workload uuid must be a non-empty string")
        if not isinstance(self.target_uri, str):
            raise MalformedMessage("target_uri must be a string")
        parts = urlsplit(self.target_uri)
        if not parts.scheme or not parts.netloc:
            raise MalformedMessage(f"target_uri {self.target_uri!r} is not absolute")
        if not isinstance(self.workload_data, str):
            raise MalformedMessage("workload data must be a string")
        for name in self.extra:
            if name in (REQ_UUID, REQ_URI, REQ_DATA):
                raise MalformedMessage(f"extra field {name!r} shadows a mandatory field")
            if origin_of(name) is None:
                raise BadPrefix(f"field {name!r} has no origin prefix")

    def with_extra(self, **fields: Any) -> "RequestEnvelope":
        merged = dict(self.extra)
        merged.update(fields)
        return RequestEnvelope(self.workload_uuid, self.target_uri, self.workload_data, merged)

    def to_dict(self) -> dict[str, Any]:
        obj = {REQ_UUID: self.workload_uuid, REQ_URI: self.target_uri, REQ_DATA: self.workload_data}
        obj.update(self.extra)
        return obj


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _loads_object(text: str | bytes) -> dict:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedMessage(f"body is not UTF-8: {exc}") from None
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedMessage(f"body is not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedMessage("body is not a JSON object")
    return obj


def encode_request(env: RequestEnvelope) -> str:
    return _dumps(env.to_dict())


def decode_request(text: str | bytes) -> RequestEnvelope:
    obj = _loads_object(text)
    for name in (REQ_UUID, REQ_URI, REQ_DATA):
        if name not in obj:
            raise MissingField(name)
    _check_prefixes(obj)
    extra = {k: v for k, v in obj.items() if k not in (REQ_UUID, REQ_URI, REQ_DATA)}
    return RequestEnvelope(obj[REQ_UUID], obj[REQ_URI], obj[REQ_DATA], extra)


def _check_hr(pair: Optional[tuple[int, int]], what: str) -> None:
    if pair is None:
        return
    seconds, nanos = pair
    if seconds < 0:
        raise RangeError(f"{what} seconds negative: {seconds}")
    if not 0 <= nanos < NS_PER_SECOND:
        raise RangeError(f"{what} nanoseconds out of range: {nanos}")


@dataclass(frozen=True)
class ResponseEnvelope:
    """A reply from a target or the proxy.

    Target fields are optional only on error replies, where the proxy never
    got as far as a target reply. ``extra`` keeps every other prefixed field
    in arrival order (status fields, m2/m3 sizes, ``target_workload_uuid``).
    """

    workload_uuid: str
    target_start_time: Optional[int] = None
    target_stop_time: Optional[int] = None
    target_run_time_hr: Optional[tuple[int, int]] = None
    target_workload_result: Optional[str] = None
    proxy_start_time: Optional[int] = None
    proxy_stop_time: Optional[int] = None
    proxy_run_time_hr: Optional[tuple[int, int]] = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("target_start_time", "target_stop_time", "proxy_start_time", "proxy_stop_time"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise RangeError(f"{name} negative: {value}")
        if None not in (self.target_start_time, self.target_stop_time):
            if self.target_stop_time < self.target_start_time:
                raise RangeError("target_stop_time precedes target_start_time")
        if None not in (self.proxy_start_time, self.proxy_stop_time):
            if self.proxy_stop_time < self.proxy_start_time:
                raise RangeError("proxy_stop_time precedes proxy_start_time")
        _check_hr(self.target_run_time_hr, "target hr")
        _check_hr(self.proxy_run_time_hr, "proxy hr")
        for name in self.extra:
            if name in _RESPONSE_KNOWN:
                raise MalformedMessage(f"extra field {name!r} shadows a core field")
            if origin_of(name) is None:
                raise BadPrefix(f"field {name!r} has no origin prefix")

    @property
    def errors(self) -> dict[str, Any]:
        return {k: v for k, v in self.extra.items() if is_error_field(k)}

    def to_dict(self, layer: Origin = Origin.PROXY) -> dict[str, Any]:
        obj: dict[str, Any] = {}
        if layer is Origin.TARGET:
            obj[TARGET_UUID] = self.workload_uuid
        else:
            obj[PROXY_UUID] = self.workload_uuid
        if self.target_start_time is not None:
            obj[TARGET_START] = self.target_start_time
        if self.target_stop_time is not None:
            obj[TARGET_STOP] = self.target_stop_time
        if self.target_run_time_hr is not None:
            obj[TARGET_HR_S], obj[TARGET_HR_NS] = self.target_run_time_hr
        if self.target_workload_result is not None:
            obj[TARGET_RESULT] = self.target_workload_result
        if self.proxy_start_time is not None:
            obj[PROXY_START] = self.proxy_start_time
        if self.proxy_stop_time is not None:
            obj[PROXY_STOP] = self.proxy_stop_time
        if self.proxy_run_time_hr is not None:
            obj[PROXY_HR_S], obj[PROXY_HR_NS] = self.proxy_run_time_hr
        for name, value in self.extra.items():
            if layer is Origin.TARGET and name == TARGET_UUID:
                continue
            obj[name] = value
        return obj


def encode_response(env: ResponseEnvelope, layer: Origin = Origin.PROXY) -> str:
    """Serialize a reply.

    ``layer`` picks the uuid wire name: targets answer with
    ``target_workload_uuid``, the proxy with ``proxy_workload_uuid``.
    """
    return _dumps(env.to_dict(layer))


def _int_field(obj: dict, name: str) -> Optional[int]:
    if name not in obj:
        return None
    value = obj[name]
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedMessage(f"{name} must be an integer, got {value!r}")
    if value < 0:
        raise RangeError(f"{name} negative: {value}")
    return value


def _hr_field(obj: dict, seconds_name: str, nanos_name: str) -> Optional[tuple[int, int]]:
    seconds = _int_field(obj, seconds_name)
    nanos = _int_field(obj, nanos_name)
    if seconds is None and nanos is None:
        return None
    if seconds is None or nanos is None:
        raise MissingField(nanos_name if nanos is None else seconds_name)
    return seconds, nanos


def decode_response(text: str | bytes, layer: Origin = Origin.PROXY) -> ResponseEnvelope:
    obj = _loads_object(text)
    uuid_name = TARGET_UUID if layer is Origin.TARGET else PROXY_UUID
    if uuid_name not in obj:
        raise MissingField(uuid_name)
    uuid = obj[uuid_name]
    if not isinstance(uuid, str) or not uuid:
        raise MalformedMessage(f"{uuid_name} must be a non-empty string")
    _check_prefixes(obj)

    has_error = any(is_error_field(k) for k in obj)
    if not has_error:
        for name in _TARGET_CORE:
            if name not in obj:
                raise MissingField(name)
    result = obj.get(TARGET_RESULT)
    if result is not None and not isinstance(result, str):
        raise MalformedMessage(f"{TARGET_RESULT} must be a string")

    skip = _RESPONSE_KNOWN | {uuid_name}
    if layer is Origin.TARGET:
        # target replies carry no proxy fields; anything proxy_ stays in extra
        skip = frozenset(_TARGET_CORE) | {uuid_name}
    extra = {k: v for k, v in obj.items() if k not in skip}
    if layer is Origin.TARGET:
        return ResponseEnvelope(
            workload_uuid=uuid,
            target_start_time=_int_field(obj, TARGET_START),
            target_stop_time=_int_field(obj, TARGET_STOP),
            target_run_time_hr=_hr_field(obj, TARGET_HR_S, TARGET_HR_NS),
            target_workload_result=result,
            extra=extra,
        )
    return ResponseEnvelope(
        workload_uuid=uuid,
        target_start_time=_int_field(obj, TARGET_START),
        target_stop_time=_int_field(obj, TARGET_STOP),
        target_run_time_hr=_hr_field(obj, TARGET_HR_S, TARGET_HR_NS),
        target_workload_result=result,
        proxy_start_time=_int_field(obj, PROXY_START),
        proxy_stop_time=_int_field(obj, PROXY_STOP),
        proxy_run_time_hr=_hr_field(obj, PROXY_HR_S, PROXY_HR_NS),
        extra=extra,
    )


def correlate(req: RequestEnvelope, resp: ResponseEnvelope) -> bool:
    """True iff the reply echoes the request uuid byte for byte."""
    return req.workload_uuid.encode("utf-8") == resp.workload_uuid.encode("utf-8")
