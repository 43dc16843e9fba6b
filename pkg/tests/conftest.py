import json
import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from panoptic_forge.gateway import build_mock_gateway
from panoptic_forge.geometry import BoundingBox
from panoptic_forge.records import Region, SemanticTag

DATA_DIR = Path(__file__).resolve().parent / "data"
DEMO_CORPUS = (Path(__file__).resolve().parents[1]
               / "src" / "panoptic_forge" / "data" / "demo_corpus.jsonl")


@pytest.fixture(scope="session")
def demo_records():
    with open(DEMO_CORPUS, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh]


@pytest.fixture(scope="session")
def demo_regions(demo_records):
    return [Region.from_record(d) for d in demo_records]


@pytest.fixture
def mock_gateway():
    return build_mock_gateway(seed=7)


def random_box(rng: random.Random, span: int = 200) -> BoundingBox:
    x1 = rng.randint(0, span - 2)
    y1 = rng.randint(0, span - 2)
    x2 = rng.randint(x1 + 1, span)
    y2 = rng.randint(y1 + 1, span)
    return BoundingBox(float(x1), float(y1), float(x2), float(y2))


def make_region(image_id: str, bbox: BoundingBox, texts=(), source="closed_set_a",
                tag_source="closed_set_detector", **kw) -> Region:
    tags = tuple(SemanticTag(text=t, source=tag_source) for t in texts)
    return Region.create(image_id=image_id, bbox=bbox, proposal_source=source,
                         candidate_tags=tags, **kw)


def top1_accuracy(regions, truth: dict) -> float:
    """Fraction of regions whose top match names the planted object."""
    from panoptic_forge.records import contains_phrase

    hits = sum(1 for r in regions
               if r.matched_tags
               and contains_phrase(r.matched_tags[0].text, truth[r.region_id]))
    return hits / len(regions)


@pytest.fixture(scope="session")
def planted_loop():
    """A 200-region corpus with twenty wrong score overrides planted.

    Four regions per scene kind (largest kinds first, region-id order)
    get one co-occurring distractor word scored at 0.99, which outranks
    every genuine match. Ground truth comes from the synthetic scenes.
    """
    from panoptic_forge.gateway import build_mock_gateway
    from panoptic_forge.mocks import SCENE_KINDS, region_key, synth_scene
    from panoptic_forge.pipeline import AnnotationPipeline

    seed = 7
    refs = refs_totalling(200, seed)
    results, failures = AnnotationPipeline(
        build_mock_gateway(seed=seed)).annotate(refs)
    assert not failures
    regions = [r for ann in results for r in ann.regions]
    assert len(regions) == 200

    truth, kind_of = {}, {}
    for r in regions:
        scene = synth_scene(r.image_id, seed)
        truth[r.region_id] = scene.gt_noun(r.bbox)
        kind_of[r.region_id] = scene.kind
    assert top1_accuracy(regions, truth) == 1.0

    by_kind = {}
    for r in regions:
        by_kind.setdefault(kind_of[r.region_id], []).append(r)
    bias, planted = {}, []
    for kind in sorted(by_kind, key=lambda k: -len(by_kind[k])):
        if len(planted) == 20:
            break
        awords = [w for w in SCENE_KINDS[kind]["cooccur"]
                  if w.startswith("a")]
        picks = sorted(by_kind[kind], key=lambda r: r.region_id)[:4]
        for r, w in zip(picks, awords):
            bias[f"{region_key(r.image_id, r.bbox)}::{w}"] = 0.99
            planted.append((r.region_id, w))
    assert len(planted) == 20
    assert len({w for _, w in planted}) == 20
    return {"seed": seed, "refs": refs, "truth": truth, "bias": bias,
            "planted": planted}


def refs_totalling(target: int, seed: int, prefix: str = "loop") -> list:
    """Image refs whose synthetic scenes hold exactly `target` objects.

    Scene sizes run 3..6, so a gap of 1 or 2 can never be closed; an image
    is taken only when the gap after it is 0 or at least 3.
    """
    from panoptic_forge.mocks import synth_scene

    refs = []
    total = 0
    i = 0
    while total < target and i < 500:
        ref = f"{prefix}-{i:03d}"
        i += 1
        n = len(synth_scene(ref, seed).objects)
        gap = target - total - n
        if gap == 0 or gap >= 3:
            refs.append(ref)
            total += n
    assert total == target, f"selector stuck at {total}/{target}"
    return refs
