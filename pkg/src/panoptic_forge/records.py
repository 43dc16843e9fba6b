"""Region records: tags, QA pairs, verification state, and the JSONL schema.

Records are immutable dataclasses; pipeline stages evolve them with
`dataclasses.replace`. `region_id` is content-derived so re-annotating the
same input is idempotent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .geometry import BoundingBox

TAG_SOURCES = (
    "spotter",
    "imaginator",
    "splitter",
    "magnifier",
    "closed_set_detector",
    "grounding_detector",
    "ocr",
)

PROPOSAL_SOURCES = ("class_agnostic", "closed_set_a", "closed_set_b", "grounding")

QA_STATUSES = (
    "unverified",
    "correct",
    "wrong_answer",
    "unanswerable",
    "wrong_semantic",
    "human_corrected",
)

RECORD_SCHEMA_VERSION = 1

UNANSWERABLE_ANSWER = "This question is unanswerable according to the image"
WRONG_SEMANTIC_ANSWER = "The object in this region is incorrectly labeled"


class RecordError(ValueError):
    """Raised for records that violate the schema or its invariants."""


def stable_digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def region_id_for(image_id: str, bbox: BoundingBox, proposal_source: str) -> str:
    """Stable id from (image_id, bbox rounded to 2 decimals, source)."""
    key = f"{bbox.x1:.2f},{bbox.y1:.2f},{bbox.x2:.2f},{bbox.y2:.2f}"
    return stable_digest(image_id, key, proposal_source)[:16]


@dataclass(frozen=True)
class SemanticTag:
    text: str
    source: str
    align_score: Optional[float] = None
    mask_fraction: Optional[float] = None

    def __post_init__(self):
        if not self.text.strip():
            raise RecordError("tag text must be non-empty")
        if self.source not in TAG_SOURCES:
            raise RecordError(f"unknown tag source: {self.source!r}")
        if self.align_score is not None and not (0.0 <= self.align_score <= 1.0):
            raise RecordError(f"align_score out of [0,1]: {self.align_score}")
        if self.mask_fraction is not None and not (0.0 <= self.mask_fraction <= 1.0):
            raise RecordError(f"mask_fraction out of [0,1]: {self.mask_fraction}")

    def to_record(self) -> dict:
        return {
            "text": self.text,
            "source": self.source,
            "align_score": self.align_score,
            "mask_fraction": self.mask_fraction,
        }

    @classmethod
    def from_record(cls, d: dict) -> "SemanticTag":
        return cls(
            text=d["text"],
            source=d["source"],
            align_score=d.get("align_score"),
            mask_fraction=d.get("mask_fraction"),
        )


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    status: str = "unverified"

    def __post_init__(self):
        if self.status not in QA_STATUSES:
            raise RecordError(f"unknown qa status: {self.status!r}")

    def to_record(self) -> dict:
        return {"q": self.question, "a": self.answer, "status": self.status}

    @classmethod
    def from_record(cls, d: dict) -> "QAPair":
        return cls(question=d["q"], answer=d["a"], status=d["status"])


@dataclass(frozen=True)
class VerificationState:
    state: str = "unverified"  # unverified | verified
    confirmed: tuple = ()
    rejected: tuple = ()
    worker_id: Optional[str] = None
    round: Optional[int] = None

    def to_record(self) -> dict:
        return {
            "state": self.state,
            "confirmed": list(self.confirmed),
            "rejected": list(self.rejected),
            "worker_id": self.worker_id,
            "round": self.round,
        }

    @classmethod
    def from_record(cls, d: dict) -> "VerificationState":
        return cls(
            state=d.get("state", "unverified"),
            confirmed=tuple(d.get("confirmed", ())),
            rejected=tuple(d.get("rejected", ())),
            worker_id=d.get("worker_id"),
            round=d.get("round"),
        )


@dataclass(frozen=True)
class Region:
    region_id: str
    image_id: str
    bbox: BoundingBox
    proposal_source: str
    candidate_tags: tuple = ()
    matched_tags: tuple = ()
    qa_pairs: tuple = ()
    caption: Optional[str] = None
    verification: VerificationState = field(default_factory=VerificationState)
    generation: int = 0

    def __post_init__(self):
        if self.proposal_source not in PROPOSAL_SOURCES:
            raise RecordError(f"unknown proposal source: {self.proposal_source!r}")
        candidate_texts = {t.text for t in self.candidate_tags}
        for t in self.matched_tags:
            if t.text not in candidate_texts:
                raise RecordError(f"matched tag {t.text!r} not among candidates")

    @classmethod
    def create(cls, image_id: str, bbox: BoundingBox, proposal_source: str, **kw) -> "Region":
        rid = region_id_for(image_id, bbox, proposal_source)
        return cls(region_id=rid, image_id=image_id, bbox=bbox,
                   proposal_source=proposal_source, **kw)

    def with_tags(self, candidate_tags) -> "Region":
        return replace(self, candidate_tags=tuple(candidate_tags))

    def to_record(self) -> dict:
        return {
            "schema": RECORD_SCHEMA_VERSION,
            "region_id": self.region_id,
            "image_id": self.image_id,
            "bbox": self.bbox.as_list(),
            "proposal_source": self.proposal_source,
            "candidates": [t.to_record() for t in self.candidate_tags],
            "matched": [t.to_record() for t in self.matched_tags],
            "qa": [q.to_record() for q in self.qa_pairs],
            "caption": self.caption,
            "verification": self.verification.to_record(),
            "generation": self.generation,
        }

    @classmethod
    def from_record(cls, d: dict) -> "Region":
        if d.get("schema") != RECORD_SCHEMA_VERSION:
            raise RecordError(f"unsupported schema version: {d.get('schema')!r}")
        return cls(
            region_id=d["region_id"],
            image_id=d["image_id"],
            bbox=BoundingBox.from_list(d["bbox"]),
            proposal_source=d["proposal_source"],
            candidate_tags=tuple(SemanticTag.from_record(t) for t in d["candidates"]),
            matched_tags=tuple(SemanticTag.from_record(t) for t in d["matched"]),
            qa_pairs=tuple(QAPair.from_record(q) for q in d["qa"]),
            caption=d.get("caption"),
            verification=VerificationState.from_record(d.get("verification", {})),
            generation=d.get("generation", 0),
        )


def canonical_record_json(record: dict) -> str:
    """Stable serialization used for hashing and snapshot files."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def contains_phrase(text: str, phrase: str) -> bool:
    """True when `phrase`'s tokens appear contiguously in `text`'s tokens."""
    toks, want = text.split(), phrase.split()
    if not want:
        return False
    return any(toks[i:i + len(want)] == want
               for i in range(len(toks) - len(want) + 1))


def dedup_tags(tags) -> tuple:
    """Drop repeated (text, source) pairs, keeping first occurrence order."""
    seen = set()
    out = []
    for t in tags:
        key = (t.text, t.source)
        if key not in seen:
            seen.add(key)
            out.append(t)
    return tuple(out)


def dedup_tags_by_text(tags) -> tuple:
    seen = set()
    out = []
    for t in tags:
        if t.text not in seen:
            seen.add(t.text)
            out.append(t)
    return tuple(out)
