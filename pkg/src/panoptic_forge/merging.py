"""Cross-detector box merging.

Proposals from several detectors overlap heavily. Rather than keep near
duplicates, an incoming box whose IoU with an already-kept box exceeds the
threshold is dropped and its tags folded into the best-overlapping keeper.
Tag identity is (text, source), so the same word from two detectors is kept
once per detector.
"""

from __future__ import annotations

from dataclasses import replace
from typing import List, Sequence

from .geometry import iou
from .records import Region, dedup_tags

DEFAULT_IOU_THRESHOLD = 0.5


def merge_batch(existing: Sequence[Region], incoming: Sequence[Region],
                t_iou: float = DEFAULT_IOU_THRESHOLD) -> List[Region]:
    """Fold one detector's proposals into the kept set.

    Each incoming region is compared against the regions that existed before
    this batch, not against other regions appended during it. Two proposals
    from the same detector are assumed already NMS'd by that detector.

    Ties on IoU go to the earliest existing region.
    """
    kept = list(existing)
    n_existing = len(existing)
    for r in incoming:
        best_idx = -1
        best_iou = 0.0
        for i in range(n_existing):
            v = iou(kept[i].bbox, r.bbox)
            if v > best_iou:
                best_iou = v
                best_idx = i
        if best_idx >= 0 and best_iou > t_iou:
            host = kept[best_idx]
            merged = dedup_tags(tuple(host.candidate_tags) + tuple(r.candidate_tags))
            kept[best_idx] = replace(host, candidate_tags=merged)
        else:
            kept.append(r)
    return kept


def merge_proposal_rounds(rounds: Sequence[Sequence[Region]],
                          t_iou: float = DEFAULT_IOU_THRESHOLD) -> List[Region]:
    """Apply merge_batch over detector outputs in their fixed source order."""
    kept: List[Region] = []
    for batch in rounds:
        kept = merge_batch(kept, batch, t_iou=t_iou)
    return kept
