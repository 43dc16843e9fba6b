"""HTTP client for annotator backends.

One gateway serves all roles; descriptors bind a role to an endpoint with a
timeout and an in-flight cap. Transient failures (timeouts, refused
connections, 5xx) are retried with jittered exponential backoff; responses
that violate the role schema are quarantined and never retried, since a
malformed backend will not heal by asking again.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional

import httpx

from .mocks import mock_response
from .wire import (AnnotatorRequest, AnnotatorResponse, ROLES, WireError,
                   endpoint_path, validate_response)

DEFAULT_BACKOFF = (0.2, 0.8, 3.2)


class GatewayError(Exception):
    pass


class RetryExhaustedError(GatewayError):
    """Transient failures persisted across every allowed attempt."""


class SchemaViolationError(GatewayError):
    """Backend answered with a payload outside its role contract."""


class AnnotatorError(GatewayError):
    """Backend answered with an explicit error field."""


@dataclass(frozen=True)
class AnnotatorDescriptor:
    role: str
    endpoint: str
    name: Optional[str] = None
    timeout: float = 10.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role: {self.role!r}")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be positive")
        if self.name is None:
            object.__setattr__(self, "name", self.role)

    @property
    def url(self) -> str:
        return self.endpoint.rstrip("/") + endpoint_path(self.role)


@dataclass
class QuarantineEntry:
    descriptor: str
    request: dict
    reason: str


class QuarantineLog:
    """Append-only record of permanently failed requests."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: List[QuarantineEntry] = []

    def record(self, descriptor: str, request: dict, reason: str) -> None:
        with self._lock:
            self._entries.append(QuarantineEntry(descriptor, request, reason))

    def entries(self) -> List[QuarantineEntry]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class AnnotatorGateway:
    """Shared, thread-safe client over all registered descriptors."""

    def __init__(self, transport: Optional[httpx.BaseTransport] = None,
                 retries: int = 3, backoff=DEFAULT_BACKOFF,
                 sleep: Callable[[float], None] = time.sleep,
                 quarantine: Optional[QuarantineLog] = None,
                 rng: Optional[random.Random] = None):
        self._client = httpx.Client(transport=transport)
        self._retries = retries
        self._backoff = backoff
        self._sleep = sleep
        self.quarantine = quarantine if quarantine is not None else QuarantineLog()
        self._rng = rng if rng is not None else random.Random()
        self._descriptors: Dict[str, AnnotatorDescriptor] = {}
        self._limiters: Dict[str, threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()

    def register(self, descriptor: AnnotatorDescriptor) -> None:
        with self._lock:
            if descriptor.name in self._descriptors:
                raise ValueError(f"descriptor {descriptor.name!r} already registered")
            self._descriptors[descriptor.name] = descriptor
            self._limiters[descriptor.name] = threading.BoundedSemaphore(
                descriptor.max_in_flight)

    def descriptor(self, name: str) -> AnnotatorDescriptor:
        with self._lock:
            try:
                return self._descriptors[name]
            except KeyError:
                raise GatewayError(f"no descriptor named {name!r}") from None

    def has(self, name: str) -> bool:
        with self._lock:
            return name in self._descriptors

    def names(self) -> List[str]:
        with self._lock:
            return sorted(self._descriptors)

    def call(self, name: str, request: AnnotatorRequest) -> AnnotatorResponse:
        desc = self.descriptor(name)
        if request.role != desc.role:
            raise GatewayError(
                f"request role {request.role!r} does not match descriptor "
                f"{desc.name!r} ({desc.role})")
        limiter = self._limiters[desc.name]
        with limiter:
            return self._call_with_retries(desc, request)

    def _call_with_retries(self, desc: AnnotatorDescriptor,
                           request: AnnotatorRequest) -> AnnotatorResponse:
        payload = request.to_payload()
        last_exc: Optional[Exception] = None
        for attempt in range(self._retries):
            try:
                http_resp = self._client.post(desc.url, json=payload,
                                              timeout=desc.timeout)
            except (httpx.TimeoutException, httpx.ConnectError,
                    httpx.RemoteProtocolError) as exc:
                last_exc = exc
                self._pause(attempt)
                continue
            if http_resp.status_code >= 500:
                last_exc = GatewayError(f"server error {http_resp.status_code}")
                self._pause(attempt)
                continue
            if http_resp.status_code != 200:
                reason = f"http status {http_resp.status_code}"
                self.quarantine.record(desc.name, payload, reason)
                raise SchemaViolationError(f"{desc.name}: {reason}")
            try:
                resp = AnnotatorResponse.from_payload(http_resp.json())
                validate_response(request, resp)
            except (WireError, ValueError) as exc:
                self.quarantine.record(desc.name, payload, str(exc))
                raise SchemaViolationError(f"{desc.name}: {exc}") from exc
            if resp.error is not None:
                raise AnnotatorError(f"{desc.name}: {resp.error}")
            return resp
        raise RetryExhaustedError(
            f"{desc.name}: {self._retries} attempts failed: {last_exc}")

    def _pause(self, attempt: int) -> None:
        if attempt + 1 >= self._retries:
            return
        base = self._backoff[min(attempt, len(self._backoff) - 1)]
        self._sleep(base * (0.8 + 0.4 * self._rng.random()))

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "AnnotatorGateway":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


MOCK_ENDPOINT = "mock://annotators"


def mock_transport(seed: int, bias: Optional[Mapping[str, float]] = None,
                   hook: Optional[Callable] = None) -> httpx.MockTransport:
    """In-process transport answering every role from the synthetic scenes.

    `hook(request_payload)` runs before each response is produced; tests use
    it to count concurrency or inject failures by raising httpx errors.
    """
    def handler(http_req: httpx.Request) -> httpx.Response:
        import json as _json
        payload = _json.loads(http_req.content.decode("utf-8"))
        if hook is not None:
            out = hook(payload)
            if out is not None:
                return out
        req = AnnotatorRequest.from_payload(payload)
        resp = mock_response(req, seed, bias=bias)
        return httpx.Response(200, json=resp.to_payload())

    return httpx.MockTransport(handler)


def build_mock_gateway(seed: int, bias: Optional[Mapping[str, float]] = None,
                       hook: Optional[Callable] = None,
                       **gateway_kw) -> AnnotatorGateway:
    """Gateway wired to in-process mocks with every standard descriptor."""
    gw = AnnotatorGateway(transport=mock_transport(seed, bias=bias, hook=hook),
                          **gateway_kw)
    for desc in standard_descriptors(MOCK_ENDPOINT):
        gw.register(desc)
    return gw


def standard_descriptors(endpoint: str) -> List[AnnotatorDescriptor]:
    """The full annotator set against one endpoint root.

    Two closed-set descriptors share a role but carry distinct names so the
    localization ensemble can address them in its fixed order.
    """
    return [
        AnnotatorDescriptor(role="class_agnostic_proposer", endpoint=endpoint),
        AnnotatorDescriptor(role="closed_set_detector", endpoint=endpoint,
                            name="closed_set_a"),
        AnnotatorDescriptor(role="closed_set_detector", endpoint=endpoint,
                            name="closed_set_b"),
        AnnotatorDescriptor(role="grounding_detector", endpoint=endpoint),
        AnnotatorDescriptor(role="image_captioner", endpoint=endpoint),
        AnnotatorDescriptor(role="region_captioner", endpoint=endpoint),
        AnnotatorDescriptor(role="llm_completer", endpoint=endpoint),
        AnnotatorDescriptor(role="vqa_responder", endpoint=endpoint),
        AnnotatorDescriptor(role="region_text_matcher", endpoint=endpoint),
        AnnotatorDescriptor(role="segmenter", endpoint=endpoint),
        AnnotatorDescriptor(role="ocr", endpoint=endpoint),
    ]
