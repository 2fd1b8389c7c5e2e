"""Proxy-based benchmarking toolkit for Function-as-a-Service platforms."""

from .protocol import (
    Origin,
    RequestEnvelope,
    ResponseEnvelope,
    correlate,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    origin_of,
)
from .metrics import InvocationRecord, RunSummary, Status, summarize
from .workload import synthesize_words

__version__ = "0.1.0"

__all__ = [
    "InvocationRecord",
    "Origin",
    "RequestEnvelope",
    "ResponseEnvelope",
    "RunSummary",
    "Status",
    "correlate",
    "decode_request",
    "decode_response",
    "encode_request",
    "encode_response",
    "origin_of",
    "summarize",
    "synthesize_words",
]
