"""Location-semantic matching and the corpus cleaning pass.

A region's candidates are scored by the matcher role; the score can be
damped by how much of the box the candidate's mask actually covers, which
punishes tags that describe a sliver of the crop (the carried backpack
labeling the whole person). Cleaning keeps the strongest regions per image
and scale, then re-ranks the survivors with the segmenter switched on.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .gateway import AnnotatorGateway, GatewayError
from .geometry import scale_bucket
from .records import Region, SemanticTag
from .wire import AnnotatorRequest

DEFAULT_GAMMA = 1.0
DEFAULT_TOP_K = 5
DEFAULT_CLEAN_KEEP = 100


def final_score(align_score: float, mask_fraction: Optional[float], gamma: float) -> float:
    fraction = 1.0 if mask_fraction is None else mask_fraction
    return align_score * (fraction ** gamma)


def rank_candidates(scored: Sequence[Tuple[str, float]]) -> List[str]:
    """Texts by descending score; equal scores fall back to text order."""
    return [t for t, _ in sorted(scored, key=lambda p: (-p[1], p[0]))]


class MatchError(GatewayError):
    pass


class TagMatcher:
    """Ranks candidate tags for regions through matcher/segmenter roles."""

    def __init__(self, gateway: AnnotatorGateway,
                 matcher_name: str = "region_text_matcher",
                 segmenter_name: str = "segmenter",
                 gamma: float = DEFAULT_GAMMA, top_k: int = DEFAULT_TOP_K):
        self.gateway = gateway
        self.matcher_name = matcher_name
        self.segmenter_name = segmenter_name
        self.gamma = gamma
        self.top_k = top_k

    def _scores(self, region: Region, texts: List[str],
                use_segmenter: bool) -> Tuple[List[float], Optional[List[float]]]:
        desc = self.gateway.descriptor(self.matcher_name)
        req = AnnotatorRequest(role=desc.role, image_ref=region.image_id,
                               bbox=region.bbox.as_list(), candidates=texts)
        align = self.gateway.call(self.matcher_name, req).scores
        fractions = None
        if use_segmenter:
            sdesc = self.gateway.descriptor(self.segmenter_name)
            sreq = AnnotatorRequest(role=sdesc.role, image_ref=region.image_id,
                                    bbox=region.bbox.as_list(), candidates=texts)
            fractions = self.gateway.call(self.segmenter_name, sreq).mask_fractions
        return align, fractions

    def match_region(self, region: Region, use_segmenter: bool = False) -> Region:
        """Score all candidates, annotate them, and set top-k matched_tags."""
        if not region.candidate_tags:
            raise MatchError(f"region {region.region_id} has no candidates")
        texts = [t.text for t in region.candidate_tags]
        align, fractions = self._scores(region, texts, use_segmenter)

        annotated = []
        scored = []
        for i, tag in enumerate(region.candidate_tags):
            frac = fractions[i] if fractions is not None else None
            annotated.append(replace(tag, align_score=align[i], mask_fraction=frac))
            scored.append((tag.text, final_score(align[i], frac, self.gamma)))

        order = rank_candidates(scored)
        by_text = {t.text: t for t in annotated}
        matched = tuple(by_text[t] for t in order[:self.top_k])
        return replace(region, candidate_tags=tuple(annotated), matched_tags=matched)

    def rerank_region(self, region: Region) -> Region:
        """Replace matched_tags using segmenter-modulated scores.

        Candidates are left untouched; only the ranking moves.
        """
        if not region.matched_tags:
            raise MatchError(f"region {region.region_id} is unmatched")
        texts = [t.text for t in region.candidate_tags]
        align, fractions = self._scores(region, texts, use_segmenter=True)
        scored = list(zip(texts, (final_score(a, f, self.gamma)
                                  for a, f in zip(align, fractions))))
        order = rank_candidates(scored)
        fresh = {texts[i]: SemanticTag(text=texts[i],
                                       source=region.candidate_tags[i].source,
                                       align_score=align[i],
                                       mask_fraction=fractions[i])
                 for i in range(len(texts))}
        matched = tuple(fresh[t] for t in order[:self.top_k])
        return replace(region, matched_tags=matched)

    def match_corpus(self, regions: Iterable[Region],
                     use_segmenter: bool = False,
                     max_attempts: int = 2) -> Tuple[List[Region], List[Tuple[Region, str]]]:
        """Match every region; transient failures get one requeue pass.

        Returns (matched in input order, [(region, reason)] for the rest).
        """
        items = list(regions)
        queue = deque(enumerate(items))
        attempts: Dict[int, int] = defaultdict(int)
        done: Dict[int, Region] = {}
        failed: Dict[int, str] = {}
        while queue:
            idx, region = queue.popleft()
            attempts[idx] += 1
            try:
                done[idx] = self.match_region(region, use_segmenter=use_segmenter)
            except GatewayError as exc:
                if attempts[idx] < max_attempts:
                    queue.append((idx, region))
                else:
                    failed[idx] = str(exc)
        matched = [done[i] for i in sorted(done)]
        failures = [(items[i], failed[i]) for i in sorted(failed)]
        return matched, failures


def top1_score(region: Region, gamma: float = DEFAULT_GAMMA) -> float:
    if not region.matched_tags:
        raise MatchError(f"region {region.region_id} is unmatched")
    top = region.matched_tags[0]
    if top.align_score is None:
        raise MatchError(f"region {region.region_id} top tag has no score")
    return final_score(top.align_score, top.mask_fraction, gamma)


def select_survivors(regions: Sequence[Region], keep: int = DEFAULT_CLEAN_KEEP,
                     gamma: float = DEFAULT_GAMMA) -> List[Region]:
    """Per (image, scale bucket), keep the `keep` regions with best top-1."""
    groups = defaultdict(list)
    for r in regions:
        groups[(r.image_id, scale_bucket(r.bbox))].append(r)
    surviving_ids = set()
    for members in groups.values():
        ranked = sorted(members, key=lambda r: (-top1_score(r, gamma), r.region_id))
        surviving_ids.update(r.region_id for r in ranked[:keep])
    return [r for r in regions if r.region_id in surviving_ids]


def clean_dataset(regions: Sequence[Region], matcher: TagMatcher,
                  keep: int = DEFAULT_CLEAN_KEEP) -> List[Region]:
    """Keep the top `keep` per (image, bucket), then segmenter re-rank."""
    survivors = select_survivors(regions, keep=keep, gamma=matcher.gamma)
    return [matcher.rerank_region(r) for r in survivors]
