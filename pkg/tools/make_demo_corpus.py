#!/usr/bin/env python3
"""Regenerate the bundled demo corpus and its golden stats report.

Picks synthetic images until the corpus holds exactly 200 regions, runs the
full annotation pipeline against the mock annotators at seed 7, and writes:

    src/panoptic_forge/data/demo_corpus.jsonl
    tests/data/stats_golden.json

The golden report is computed with the independent reference implementation
in tests/oracles.py, not with the library's own stats code, so the two can
be checked against each other.
"""

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from panoptic_forge.gateway import build_mock_gateway
from panoptic_forge.mocks import synth_scene
from panoptic_forge.pipeline import AnnotationPipeline, PipelineConfig

from oracles import stats_reference

SEED = 7
TARGET = 200


def pick_refs(seed: int, target: int) -> list:
    """Choose image refs whose scene sizes sum to exactly `target` regions.

    Scene sizes run 3..6, so a remaining gap of 1 or 2 can never be filled;
    only take an image when the gap after it is 0 or at least 3.
    """
    refs = []
    total = 0
    i = 0
    while total < target and i < 500:
        ref = f"mock://images/{i:04d}"
        i += 1
        n = len(synth_scene(ref, seed).objects)
        gap = target - total - n
        if gap == 0 or gap >= 3:
            refs.append(ref)
            total += n
    if total != target:
        raise SystemExit(f"selector stuck at {total}/{target} regions")
    return refs


def main() -> None:
    gateway = build_mock_gateway(seed=SEED)
    pipeline = AnnotationPipeline(gateway, PipelineConfig())
    refs = pick_refs(SEED, TARGET)
    annotations, failures = pipeline.annotate(refs)
    if failures:
        raise SystemExit(f"annotation failures: {failures}")
    regions = [r for ann in annotations for r in ann.regions]
    if len(regions) != TARGET:
        raise SystemExit(f"expected {TARGET} regions, got {len(regions)}")

    corpus_path = ROOT / "src" / "panoptic_forge" / "data" / "demo_corpus.jsonl"
    corpus_path.parent.mkdir(parents=True, exist_ok=True)
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for region in regions:
            fh.write(json.dumps(region.to_record(), sort_keys=True) + "\n")

    records = [json.loads(line) for line in corpus_path.read_text().splitlines()]
    golden = stats_reference(records)
    golden_path = ROOT / "tests" / "data" / "stats_golden.json"
    golden_path.parent.mkdir(parents=True, exist_ok=True)
    golden_path.write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n")

    print(f"wrote {len(regions)} regions from {len(refs)} images to {corpus_path}")
    print(f"wrote golden stats to {golden_path}")


if __name__ == "__main__":
    main()
