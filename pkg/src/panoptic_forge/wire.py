"""Wire protocol for annotator model backends.

Every backend, mock or real, speaks the same request/response JSON over
HTTP, one endpoint per role under /v1/<role>. Requests carry only the
fields a role needs; responses are validated per role before anything
downstream touches them.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from typing import List, Optional

ROLES = (
    "class_agnostic_proposer",
    "closed_set_detector",
    "grounding_detector",
    "image_captioner",
    "region_captioner",
    "llm_completer",
    "vqa_responder",
    "region_text_matcher",
    "segmenter",
    "ocr",
)

# response fields each role must fill; other payload fields are rejected
_REQUIRED = {
    "class_agnostic_proposer": ("boxes",),
    "closed_set_detector": ("boxes", "tags"),
    "grounding_detector": ("boxes", "tags"),
    "image_captioner": ("text",),
    "region_captioner": ("text",),
    "llm_completer": ("text",),
    "vqa_responder": ("text",),
    "region_text_matcher": ("scores",),
    "segmenter": ("mask_fractions",),
    "ocr": ("boxes", "tags"),
}

# roles whose tags list labels boxes one-to-one
_LABELED_BOX_ROLES = ("closed_set_detector", "grounding_detector", "ocr")

_PAYLOAD_FIELDS = ("boxes", "tags", "text", "scores", "mask_fractions")


class WireError(ValueError):
    """Malformed request or response payload."""


def endpoint_path(role: str) -> str:
    if role not in ROLES:
        raise WireError(f"unknown role: {role!r}")
    return f"/v1/{role}"


@dataclass
class AnnotatorRequest:
    role: str
    image_ref: str
    id: str = field(default_factory=lambda: uuid.uuid4().hex)
    bbox: Optional[List[float]] = None
    prompt: Optional[str] = None
    candidates: Optional[List[str]] = None

    def to_payload(self) -> dict:
        if self.role not in ROLES:
            raise WireError(f"unknown role: {self.role!r}")
        payload = {"id": self.id, "role": self.role, "image_ref": self.image_ref}
        if self.bbox is not None:
            payload["bbox"] = list(self.bbox)
        if self.prompt is not None:
            payload["prompt"] = self.prompt
        if self.candidates is not None:
            payload["candidates"] = list(self.candidates)
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "AnnotatorRequest":
        if not isinstance(payload, dict):
            raise WireError("request payload must be an object")
        for name in ("id", "role", "image_ref"):
            if name not in payload:
                raise WireError(f"request missing {name!r}")
        known = {"id", "role", "image_ref", "bbox", "prompt", "candidates"}
        extra = set(payload) - known
        if extra:
            raise WireError(f"unexpected request fields: {sorted(extra)}")
        if payload["role"] not in ROLES:
            raise WireError(f"unknown role: {payload['role']!r}")
        return cls(
            role=payload["role"],
            image_ref=payload["image_ref"],
            id=payload["id"],
            bbox=payload.get("bbox"),
            prompt=payload.get("prompt"),
            candidates=payload.get("candidates"),
        )


@dataclass
class AnnotatorResponse:
    id: str
    boxes: Optional[list] = None
    tags: Optional[list] = None
    text: Optional[str] = None
    scores: Optional[list] = None
    mask_fractions: Optional[list] = None
    error: Optional[str] = None

    def to_payload(self) -> dict:
        payload = {"id": self.id}
        for name in _PAYLOAD_FIELDS + ("error",):
            v = getattr(self, name)
            if v is not None:
                payload[name] = v
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "AnnotatorResponse":
        if not isinstance(payload, dict):
            raise WireError("response payload must be an object")
        if "id" not in payload:
            raise WireError("response missing id")
        known = {"id", "boxes", "tags", "text", "scores", "mask_fractions", "error"}
        extra = set(payload) - known
        if extra:
            raise WireError(f"unexpected response fields: {sorted(extra)}")
        return cls(**payload)


def validate_response(req: AnnotatorRequest, resp: AnnotatorResponse) -> AnnotatorResponse:
    """Check a response against the request's role contract.

    An error response is allowed for any role and short-circuits payload
    checks; the caller decides whether it is worth retrying.
    """
    if resp.id != req.id:
        raise WireError(f"response id {resp.id!r} does not match request {req.id!r}")
    if resp.error is not None:
        return resp
    required = _REQUIRED[req.role]
    for name in required:
        if getattr(resp, name) is None:
            raise WireError(f"{req.role} response missing {name!r}")
    for name in _PAYLOAD_FIELDS:
        if name not in required and getattr(resp, name) is not None:
            raise WireError(f"{req.role} response must not carry {name!r}")
    _validate_shapes(req, resp)
    return resp


def _validate_shapes(req: AnnotatorRequest, resp: AnnotatorResponse) -> None:
    if resp.boxes is not None:
        for b in resp.boxes:
            if not (isinstance(b, (list, tuple)) and len(b) == 4):
                raise WireError(f"box must be [x1,y1,x2,y2], got {b!r}")
            if not all(isinstance(v, (int, float)) for v in b):
                raise WireError(f"box coords must be numeric: {b!r}")
    if resp.tags is not None:
        for t in resp.tags:
            if not isinstance(t, str) or not t.strip():
                raise WireError(f"tag must be a non-empty string: {t!r}")
        if req.role in _LABELED_BOX_ROLES and len(resp.tags) != len(resp.boxes or ()):
            raise WireError(
                f"{req.role}: {len(resp.tags)} tags do not label "
                f"{len(resp.boxes or ())} boxes"
            )
    if resp.text is not None and not isinstance(resp.text, str):
        raise WireError("text must be a string")
    if resp.scores is not None:
        n = len(req.candidates or ())
        if len(resp.scores) != n:
            raise WireError(f"expected {n} scores, got {len(resp.scores)}")
        for s in resp.scores:
            if not isinstance(s, (int, float)) or not (0.0 <= s <= 1.0):
                raise WireError(f"score out of [0,1]: {s!r}")
    if resp.mask_fractions is not None:
        n = len(req.candidates or ())
        if len(resp.mask_fractions) != n:
            raise WireError(f"expected {n} mask fractions, got {len(resp.mask_fractions)}")
        for s in resp.mask_fractions:
            if not isinstance(s, (int, float)) or not (0.0 <= s <= 1.0):
                raise WireError(f"mask fraction out of [0,1]: {s!r}")
