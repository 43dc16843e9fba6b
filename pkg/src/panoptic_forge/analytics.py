"""Corpus statistics and the zero-shot region-recognition evaluation.

The stats report groups regions by scale bucket, attributes each region's
top-1 tag to its generator, and aggregates generator columns the way the
comparison tables do: spotter, imaginator and splitter fold into one
"vllms" column, the per-region captioner reports as "blip". Token counts
use whitespace splitting throughout.
"""

from __future__ import annotations

import io
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .geometry import SCALE_BUCKETS, scale_bucket
from .records import PROPOSAL_SOURCES, Region

SOURCE_COLUMNS = ("vllms", "blip", "closed_set", "grounding", "ocr")
_COLUMN_OF = {
    "spotter": "vllms",
    "imaginator": "vllms",
    "splitter": "vllms",
    "magnifier": "blip",
    "closed_set_detector": "closed_set",
    "grounding_detector": "grounding",
    "ocr": "ocr",
}

# COCO-convention area thresholds for size-stratified AP
AP_SMALL_MAX = 32 ** 2
AP_MEDIUM_MAX = 96 ** 2


class AnalyticsError(Exception):
    pass


def _token_stats(texts: Sequence[str]) -> dict:
    counts = [len(t.split()) for t in texts]
    total = sum(counts)
    return {
        "count": len(texts),
        "total_tokens": total,
        "avg_tokens": (total / len(texts)) if texts else None,
    }


def corpus_stats(regions: Sequence[Region]) -> dict:
    """Aggregate report over a matched corpus; marker report when empty."""
    regions = list(regions)
    if not regions:
        return {"empty": True}
    n = len(regions)
    buckets = {b: 0 for b in SCALE_BUCKETS}
    by_bucket_source: Dict[str, Dict[str, int]] = {
        b: {c: 0 for c in SOURCE_COLUMNS} for b in SCALE_BUCKETS}
    source_overall = {c: 0 for c in SOURCE_COLUMNS}
    proposal = {p: 0 for p in PROPOSAL_SOURCES}
    concept_counts: Dict[str, int] = {}
    with_top1 = 0
    questions: List[str] = []
    answers: List[str] = []
    captions: List[str] = []

    for r in regions:
        bucket = scale_bucket(r.bbox)
        buckets[bucket] += 1
        proposal[r.proposal_source] += 1
        if r.matched_tags:
            top = r.matched_tags[0]
            col = _COLUMN_OF[top.source]
            by_bucket_source[bucket][col] += 1
            source_overall[col] += 1
            concept_counts[top.text] = concept_counts.get(top.text, 0) + 1
            with_top1 += 1
        for qa in r.qa_pairs:
            questions.append(qa.question)
            answers.append(qa.answer)
        if r.caption:
            captions.append(r.caption)

    def proportions(counts: Dict[str, int], total: int) -> dict:
        return {k: {"count": v, "proportion": (v / total) if total else 0.0}
                for k, v in counts.items()}

    report = {
        "empty": False,
        "regions": n,
        "images": len({r.image_id for r in regions}),
        "buckets": proportions(buckets, n),
        "proposal_sources": proportions(proposal, n),
        "semantic_sources_overall": {
            c: (source_overall[c] / with_top1) if with_top1 else 0.0
            for c in SOURCE_COLUMNS},
        "semantic_sources_by_bucket": {
            b: {c: (by_bucket_source[b][c] / buckets[b]) if buckets[b] else 0.0
                for c in SOURCE_COLUMNS}
            for b in SCALE_BUCKETS if buckets[b]},
        "tokens": {
            "questions": _token_stats(questions),
            "answers": _token_stats(answers),
            "captions": _token_stats(captions),
        },
        "concepts": {
            "total": len(concept_counts),
            "histogram": sorted(concept_counts.items(),
                                key=lambda kv: (-kv[1], kv[0])),
        },
    }
    return report


def histogram_csv(report: dict) -> str:
    """Concept frequency histogram as CSV for external plotting."""
    out = io.StringIO()
    out.write("concept,count\n")
    if not report.get("empty"):
        for text, count in report["concepts"]["histogram"]:
            safe = '"' + text.replace('"', '""') + '"' if "," in text else text
            out.write(f"{safe},{count}\n")
    return out.getvalue()


def stats_table(report: dict) -> str:
    """Aligned-column text rendering of the report."""
    if report.get("empty"):
        return "corpus is empty\n"
    lines = []
    lines.append(f"regions: {report['regions']}   images: {report['images']}   "
                 f"concepts: {report['concepts']['total']}")
    lines.append("")
    lines.append("scale buckets")
    lines.append(f"  {'bucket':<8} {'count':>7} {'prop':>7}")
    for b, row in report["buckets"].items():
        lines.append(f"  {b:<8} {row['count']:>7} {row['proportion']:>7.3f}")
    lines.append("")
    lines.append("proposal sources")
    lines.append(f"  {'source':<16} {'count':>7} {'prop':>7}")
    for s, row in report["proposal_sources"].items():
        lines.append(f"  {s:<16} {row['count']:>7} {row['proportion']:>7.3f}")
    lines.append("")
    lines.append("top-1 semantic sources by bucket")
    header = "  " + f"{'bucket':<8}" + "".join(f"{c:>12}" for c in SOURCE_COLUMNS)
    lines.append(header)
    for b, row in report["semantic_sources_by_bucket"].items():
        lines.append("  " + f"{b:<8}" +
                     "".join(f"{row[c]:>12.3f}" for c in SOURCE_COLUMNS))
    lines.append("")
    lines.append("tokens (whitespace split)")
    lines.append(f"  {'field':<10} {'count':>7} {'total':>9} {'avg':>8}")
    for name, st in report["tokens"].items():
        avg = f"{st['avg_tokens']:.2f}" if st["avg_tokens"] is not None else "-"
        lines.append(f"  {name:<10} {st['count']:>7} {st['total_tokens']:>9} {avg:>8}")
    return "\n".join(lines) + "\n"


# -- zero-shot region recognition -------------------------------------------

def average_precision(scored: Sequence[Tuple[float, bool]]) -> Optional[float]:
    """All-point interpolated AP over (score, is_positive) pairs.

    Ranks by score descending (ties keep input order), walks the PR curve,
    and integrates the monotone precision envelope. None when the class
    has no positives.
    """
    n_pos = sum(1 for _, pos in scored if pos)
    if n_pos == 0:
        return None
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][0], i))
    precisions, recalls = [], []
    tp = 0
    for k, idx in enumerate(order, start=1):
        if scored[idx][1]:
            tp += 1
        precisions.append(tp / k)
        recalls.append(tp / n_pos)
    envelope = list(precisions)
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for i in range(len(order)):
        if recalls[i] > prev_recall:
            ap += (recalls[i] - prev_recall) * envelope[i]
            prev_recall = recalls[i]
    return ap


def eval_zero_shot(gt_regions: Sequence[Tuple[str, object, str]],
                   class_names: Sequence[str],
                   score_fn: Callable[[str, object, Sequence[str]], Sequence[float]]
                   ) -> dict:
    """Classify ground-truth boxes over a closed class list.

    `gt_regions` is (image_ref, bbox, label) triples; `score_fn` returns
    one score per class name for a region. Prediction is the argmax class
    (ties to the lexicographically first name). Reports top-1 accuracy,
    per-class all-point AP, their mean, and size-stratified means.
    """
    class_names = list(class_names)
    if len(set(class_names)) != len(class_names):
        raise AnalyticsError("duplicate class names")
    known = set(class_names)
    for _, _, label in gt_regions:
        if label not in known:
            raise AnalyticsError(f"label {label!r} not in class_names")
    if not gt_regions:
        return {"empty": True}

    all_scores: List[List[float]] = []
    correct = 0
    for image_ref, bbox, label in gt_regions:
        scores = list(score_fn(image_ref, bbox, class_names))
        if len(scores) != len(class_names):
            raise AnalyticsError("score_fn returned wrong arity")
        all_scores.append(scores)
        top = max(scores)
        # score ties break toward the lexicographically first class name
        prediction = min(name for j, name in enumerate(class_names)
                         if scores[j] == top)
        if prediction == label:
            correct += 1

    def strata_of(bbox) -> str:
        area = bbox.area
        if area < AP_SMALL_MAX:
            return "small"
        if area < AP_MEDIUM_MAX:
            return "medium"
        return "large"

    def map_over(indices: Sequence[int]) -> Tuple[Optional[float], Dict[str, float]]:
        per_class: Dict[str, float] = {}
        for j, name in enumerate(class_names):
            scored = [(all_scores[i][j], gt_regions[i][2] == name)
                      for i in indices]
            ap = average_precision(scored)
            if ap is not None:
                per_class[name] = ap
        if not per_class:
            return None, per_class
        return sum(per_class.values()) / len(per_class), per_class

    everything = list(range(len(gt_regions)))
    mean_ap, per_class = map_over(everything)
    result = {
        "empty": False,
        "regions": len(gt_regions),
        "top1_acc": correct / len(gt_regions),
        "per_class_AP": per_class,
        "mAP": mean_ap,
    }
    for name in ("small", "medium", "large"):
        idx = [i for i in everything if strata_of(gt_regions[i][1]) == name]
        stratum_map, _ = map_over(idx) if idx else (None, {})
        result[f"AP_{name[0].upper()}"] = stratum_map
    return result
