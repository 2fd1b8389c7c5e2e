"""Workload generation: synthetic text payloads and invocation plans.

Three plan shapes are supported: batches for peak throughput, a backoff
schedule with growing idle gaps for cold-start probing, and a single
timeout probe against the sleeper target.
"""

from __future__ import annotations

import enum
import math
import random
import string
import uuid
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .protocol import MODE_FIELD, SLEEP_FIELD, RequestEnvelope

DEFAULT_MEMORY_BUDGET = 64 * 1024 * 1024
ALPHABET = string.ascii_lowercase
MIN_WORD, MAX_WORD = 1, 8

# the six rungs of the header-growth experiment
WORD_LADDER = (10, 10**2, 10**3, 10**4, 10**5, 10**6)


class CapacityError(MemoryError):
    pass


class DispatchMode(str, enum.Enum):
    SYNC = "sync"
    ASYNC = "async"


class TimeoutLevel(str, enum.Enum):
    GATEWAY = "gateway"
    FUNCTION = "function"


def synthesize_words(n: int, seed: int, budget: int = DEFAULT_MEMORY_BUDGET) -> str:
    """Return ``n`` random lowercase words joined by single spaces.

    Word lengths are uniform in [1, 8]. Raises CapacityError when the text
    would exceed ``budget`` bytes.
    """
    if n < 0:
        raise ValueError("word count must be non-negative")
    if n == 0:
        return ""
    # every word costs at least one letter plus a separator
    if 2 * n - 1 > budget:
        raise CapacityError(f"{n} words cannot fit in {budget} bytes")
    rng = random.Random(seed)
    lengths = rng.choices(range(MIN_WORD, MAX_WORD + 1), k=n)
    size = sum(lengths) + n - 1
    if size > budget:
        raise CapacityError(f"{n} words need {size} bytes, budget is {budget}")
    letters = "".join(rng.choices(ALPHABET, k=size - n + 1))
    words = []
    pos = 0
    for length in lengths:
        words.append(letters[pos:pos + length])
        pos += length
    return " ".join(words)


@dataclass(frozen=True)
class BatchSpec:
    total_requests: int
    batch_size: int = 1
    dispatch_mode: DispatchMode = DispatchMode.SYNC
    max_in_flight: int = 1
    words_per_request: int = 10
    seed: int = 0
    # when non-empty, request i carries ladder[i % len(ladder)] words
    ladder: tuple[int, ...] = ()
    mode: Optional[str] = None
    # literal text sent instead of synthesized words
    payload: Optional[str] = None

    def __post_init__(self):
        if self.total_requests < 1 or self.batch_size < 1:
            raise ValueError("total_requests and batch_size must be positive")
        if self.batch_size > self.total_requests:
            raise ValueError("batch_size exceeds total_requests")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.words_per_request < 0 or any(w < 0 for w in self.ladder):
            raise ValueError("word counts must be non-negative")


@dataclass(frozen=True)
class BackoffSpec:
    initial_wait_ms: int = 100
    multiplier: float | Fraction = 2
    steps: int = 8
    words_per_request: int = 10
    seed: int = 0
    mode: Optional[str] = None

    def __post_init__(self):
        if self.initial_wait_ms <= 0:
            raise ValueError("initial_wait_ms must be positive")
        if Fraction(str(self.multiplier)) <= 1:
            raise ValueError("multiplier must exceed 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass(frozen=True)
class TimeoutSpec:
    requested_sleep_ms: int
    expected_limit_ms: int
    level_under_test: TimeoutLevel = TimeoutLevel.GATEWAY
    seed: int = 0

    def __post_init__(self):
        if self.requested_sleep_ms <= 0:
            raise ValueError("requested_sleep_ms must be positive")

    @property
    def expects_timeout(self) -> bool:
        return self.requested_sleep_ms > self.expected_limit_ms


@dataclass(frozen=True)
class PlannedInvocation:
    fire_offset_ms: int
    envelope: RequestEnvelope
    words: int
    batch: int = 0


@dataclass(frozen=True)
class WorkloadPlan:
    invocations: tuple[PlannedInvocation, ...]
    dispatch_mode: DispatchMode = DispatchMode.SYNC
    max_in_flight: int = 1
    expected: Optional[str] = None  # "Timeout" / "Success" for timeout probes

    def __post_init__(self):
        offsets = [inv.fire_offset_ms for inv in self.invocations]
        if any(b < a for a, b in zip(offsets, offsets[1:])):
            raise ValueError("fire offsets must be non-decreasing")
        uuids = {inv.envelope.workload_uuid for inv in self.invocations}
        if len(uuids) != len(self.invocations):
            raise ValueError("duplicate workload uuid in plan")

    def __len__(self):
        return len(self.invocations)

    @property
    def batches(self) -> list[list[PlannedInvocation]]:
        groups: dict[int, list[PlannedInvocation]] = {}
        for inv in self.invocations:
            groups.setdefault(inv.batch, []).append(inv)
        return [groups[k] for k in sorted(groups)]


class UuidSource:
    """Seeded 128-bit uuids, never repeating within one source."""

    def __init__(self, rng: random.Random):
        self._rng = rng
        self._seen: set[str] = set()

    def __call__(self) -> str:
        while True:
            value = uuid.UUID(int=self._rng.getrandbits(128), version=4).hex
            if value not in self._seen:
                self._seen.add(value)
                return value


def _extras(mode: Optional[str]) -> dict[str, str]:
    return {MODE_FIELD: mode} if mode else {}


def plan_batch(spec: BatchSpec, target_uri: str, proxy_uri: str | None = None) -> WorkloadPlan:
    # proxy_uri is accepted for symmetry with the driver; envelopes only name the target
    rng = random.Random(spec.seed)
    new_uuid = UuidSource(rng)
    payloads: dict[int, str] = {}
    invocations = []
    for i in range(spec.total_requests):
        if spec.payload is not None:
            words = sum(1 for w in spec.payload.split(" ") if w)
            data = spec.payload
        else:
            words = spec.ladder[i % len(spec.ladder)] if spec.ladder else spec.words_per_request
            if words not in payloads:
                payloads[words] = synthesize_words(words, spec.seed + words)
            data = payloads[words]
        env = RequestEnvelope(new_uuid(), target_uri, data, _extras(spec.mode))
        invocations.append(PlannedInvocation(0, env, words, batch=i // spec.batch_size))
    in_flight = 1 if spec.dispatch_mode is DispatchMode.SYNC else spec.max_in_flight
    return WorkloadPlan(tuple(invocations), spec.dispatch_mode, in_flight)


def backoff_gaps(initial_wait_ms: int, multiplier, steps: int) -> list[int]:
    """Waits initial * multiplier**i for i < steps, floored to whole ms."""
    m = Fraction(str(multiplier))
    return [math.floor(initial_wait_ms * m**i) for i in range(steps)]


def plan_backoff(spec: BackoffSpec, target_uri: str, proxy_uri: str | None = None) -> WorkloadPlan:
    rng = random.Random(spec.seed)
    new_uuid = UuidSource(rng)
    data = synthesize_words(spec.words_per_request, spec.seed)
    offsets = [0]
    for gap in backoff_gaps(spec.initial_wait_ms, spec.multiplier, spec.steps):
        offsets.append(offsets[-1] + gap)
    invocations = tuple(
        PlannedInvocation(off, RequestEnvelope(new_uuid(), target_uri, data, _extras(spec.mode)),
                          spec.words_per_request, batch=i)
        for i, off in enumerate(offsets)
    )
    return WorkloadPlan(invocations, DispatchMode.SYNC, 1)


def plan_offsets_gaps(plan: WorkloadPlan) -> list[int]:
    offs = [inv.fire_offset_ms for inv in plan.invocations]
    return [b - a for a, b in zip(offs, offs[1:])]


def plan_timeout_probe(spec: TimeoutSpec, sleeper_uri: str, proxy_uri: str | None = None) -> WorkloadPlan:
    new_uuid = UuidSource(random.Random(spec.seed))
    env = RequestEnvelope(new_uuid(), sleeper_uri, "", {SLEEP_FIELD: str(spec.requested_sleep_ms)})
    expected = "Timeout" if spec.expects_timeout else "Success"
    return WorkloadPlan((PlannedInvocation(0, env, 0),), DispatchMode.SYNC, 1, expected)

