"""Annotation pipeline: localization ensemble, tag generation, matching,
and per-region detailed descriptions.

Stage order per image:
  (a) class-agnostic boxes seed the region set; closed-set A, closed-set B,
      and grounding outputs fold in sequentially through the box merger.
  (b) spotter caption phrases + OCR + imagined co-occurrences + part splits
      form the image-shared tag list; a crop caption per region adds
      exclusive tags.
  (c) matcher ranks every region's candidates.
  (d) three questions, three answers, and one paraphrased caption per
      region, keyed to its top-1 tag.

A grounding detector needs phrases before tags exist, so a bootstrap
caption pass supplies them during (a); the same caption is reused in (b).
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from . import prompts
from .chunker import extract_noun_phrases
from .gateway import AnnotatorGateway, GatewayError
from .geometry import BoundingBox
from .matching import TagMatcher
from .merging import merge_batch
from .mocks import SCENE_H, SCENE_W, VOCAB_A, VOCAB_B
from .records import QAPair, Region, SemanticTag, dedup_tags_by_text
from .wire import AnnotatorRequest

log = logging.getLogger(__name__)


class ImageFailure(Exception):
    def __init__(self, image_ref: str, stage: str, reason: str):
        super().__init__(f"{image_ref}: {stage}: {reason}")
        self.image_ref = image_ref
        self.stage = stage
        self.reason = reason


@dataclass
class PipelineConfig:
    t_iou: float = 0.5
    gamma: float = 1.0
    top_k: int = 5
    crop_padding: float = 0.10
    image_width: int = SCENE_W
    image_height: int = SCENE_H
    vocab_a: Sequence[str] = field(default_factory=lambda: list(VOCAB_A))
    vocab_b: Sequence[str] = field(default_factory=lambda: list(VOCAB_B))
    web_search_expansion: bool = False
    description_retries: int = 1
    generation: int = 0


@dataclass
class ImageAnnotation:
    image_ref: str
    regions: List[Region]
    caption: str
    shared_tags: List[SemanticTag]
    description_failures: List[str] = field(default_factory=list)


class AnnotationPipeline:
    def __init__(self, gateway: AnnotatorGateway, config: Optional[PipelineConfig] = None):
        self.gateway = gateway
        self.config = config if config is not None else PipelineConfig()
        self.matcher = TagMatcher(gateway, gamma=self.config.gamma,
                                  top_k=self.config.top_k)

    # -- stage (a) -----------------------------------------------------

    def _bootstrap_phrases(self, image_ref: str) -> Tuple[str, List[str], List[str]]:
        """Image caption, its noun phrases, and OCR texts."""
        caption = ""
        try:
            req = AnnotatorRequest(role="image_captioner", image_ref=image_ref)
            caption = self.gateway.call("image_captioner", req).text or ""
        except GatewayError as exc:
            log.warning("image_captioner failed for %s: %s", image_ref, exc)
        phrases = extract_noun_phrases(caption)
        ocr_texts: List[str] = []
        if self.gateway.has("ocr"):
            try:
                req = AnnotatorRequest(role="ocr", image_ref=image_ref)
                resp = self.gateway.call("ocr", req)
                ocr_texts = [t.lower() for t in (resp.tags or [])]
            except GatewayError as exc:
                log.warning("ocr failed for %s: %s", image_ref, exc)
        return caption, phrases, ocr_texts

    def _detector_regions(self, image_ref: str, name: str, proposal_source: str,
                          tag_source: str, candidates: Optional[List[str]] = None,
                          prompt: Optional[str] = None) -> List[Region]:
        desc = self.gateway.descriptor(name)
        req = AnnotatorRequest(role=desc.role, image_ref=image_ref,
                               candidates=candidates, prompt=prompt)
        resp = self.gateway.call(name, req)
        out = []
        labels = resp.tags or [None] * len(resp.boxes or ())
        for box, label in zip(resp.boxes or (), labels):
            tags = ()
            if label:
                tags = (SemanticTag(text=label.lower(), source=tag_source),)
            out.append(Region.create(image_id=image_ref,
                                     bbox=BoundingBox.from_list(box),
                                     proposal_source=proposal_source,
                                     candidate_tags=tags,
                                     generation=self.config.generation))
        return out

    def localize(self, image_ref: str, phrases: Optional[List[str]] = None) -> List[Region]:
        """Build the merged region set for one image.

        A proposer failure fails the whole image; any other source is
        skipped with a warning, keeping the fixed merge order.
        """
        try:
            regions = self._detector_regions(image_ref, "class_agnostic_proposer",
                                             "class_agnostic", "closed_set_detector")
        except GatewayError as exc:
            raise ImageFailure(image_ref, "localize", str(exc)) from exc

        if phrases is None:
            _, phrases, ocr_texts = self._bootstrap_phrases(image_ref)
            phrases = phrases + ocr_texts

        rounds = [
            ("closed_set_a", "closed_set_a", "closed_set_detector",
             list(self.config.vocab_a), None),
            ("closed_set_b", "closed_set_b", "closed_set_detector",
             list(self.config.vocab_b), None),
            ("grounding_detector", "grounding", "grounding_detector",
             None, ". ".join(phrases)),
        ]
        for name, source, tag_source, vocab, prompt in rounds:
            if not self.gateway.has(name):
                continue
            try:
                incoming = self._detector_regions(image_ref, name, source,
                                                  tag_source, candidates=vocab,
                                                  prompt=prompt)
            except GatewayError as exc:
                log.warning("detector %s skipped for %s: %s", name, image_ref, exc)
                continue
            regions = merge_batch(regions, incoming, t_iou=self.config.t_iou)
        return regions

    # -- stage (b) -----------------------------------------------------

    def _completer_tags(self, prompt: str, source: str) -> List[SemanticTag]:
        req = AnnotatorRequest(role="llm_completer", image_ref="", prompt=prompt)
        text = self.gateway.call("llm_completer", req).text or ""
        return [SemanticTag(text=t, source=source) for t in prompts.parse_tag_list(text)]

    def generate_tags(self, image_ref: str, regions: List[Region],
                      caption: str, ocr_texts: List[str]) -> Tuple[List[Region], List[SemanticTag]]:
        """Attach shared and region-exclusive candidates to every region."""
        shared: List[SemanticTag] = []
        for np in extract_noun_phrases(caption):
            shared.append(SemanticTag(text=np, source="spotter"))
        for t in ocr_texts:
            shared.append(SemanticTag(text=t, source="ocr"))

        try:
            shared.extend(self._completer_tags(prompts.imaginator_prompt(caption),
                                               "imaginator"))
        except GatewayError as exc:
            log.warning("imaginator skipped for %s: %s", image_ref, exc)

        if self.config.web_search_expansion and self.gateway.has("web_search_expander"):
            try:
                req = AnnotatorRequest(role="llm_completer", image_ref=image_ref,
                                       prompt=prompts.imaginator_prompt(caption))
                text = self.gateway.call("web_search_expander", req).text or ""
                shared.extend(SemanticTag(text=t, source="imaginator")
                              for t in prompts.parse_tag_list(text))
            except GatewayError as exc:
                log.warning("web search expansion skipped for %s: %s", image_ref, exc)

        split_inputs = []
        seen_split = set()
        for tag in shared + [t for r in regions for t in r.candidate_tags]:
            if tag.text not in seen_split:
                seen_split.add(tag.text)
                split_inputs.append(tag.text)
        for text in split_inputs:
            try:
                shared.extend(self._completer_tags(prompts.splitter_prompt(text),
                                                   "splitter"))
            except GatewayError as exc:
                log.warning("splitter skipped for %r on %s: %s", text, image_ref, exc)

        out = []
        for region in regions:
            exclusive: List[SemanticTag] = []
            try:
                crop = region.bbox.padded(self.config.crop_padding,
                                          self.config.image_width,
                                          self.config.image_height)
                req = AnnotatorRequest(role="region_captioner", image_ref=image_ref,
                                       bbox=crop.as_list())
                crop_caption = self.gateway.call("region_captioner", req).text or ""
                exclusive = [SemanticTag(text=np, source="magnifier")
                             for np in extract_noun_phrases(crop_caption)]
            except GatewayError as exc:
                log.warning("magnifier skipped for %s region %s: %s",
                            image_ref, region.region_id, exc)
            merged = dedup_tags_by_text(tuple(region.candidate_tags)
                                        + tuple(shared) + tuple(exclusive))
            out.append(replace(region, candidate_tags=merged, matched_tags=()))
        return out, shared

    # -- stage (d) -----------------------------------------------------

    def generate_descriptions(self, region: Region) -> Region:
        """Three QA pairs and one caption for the region's top-1 tag."""
        if not region.matched_tags:
            raise ImageFailure(region.image_id, "describe",
                               f"region {region.region_id} unmatched")
        top = region.matched_tags[0].text

        questions: List[str] = []
        for _ in range(self.config.description_retries + 1):
            req = AnnotatorRequest(role="llm_completer", image_ref=region.image_id,
                                   prompt=prompts.questioner_prompt(top))
            text = self.gateway.call("llm_completer", req).text or ""
            questions = prompts.parse_questions(text)
            if len(questions) == 3:
                break
        if len(questions) != 3:
            raise ImageFailure(region.image_id, "describe",
                               f"region {region.region_id}: expected 3 questions, "
                               f"got {len(questions)}")

        crop = region.bbox.padded(self.config.crop_padding,
                                  self.config.image_width,
                                  self.config.image_height)
        answers = []
        for q in questions:
            req = AnnotatorRequest(role="vqa_responder", image_ref=region.image_id,
                                   bbox=crop.as_list(), prompt=q)
            answers.append(self.gateway.call("vqa_responder", req).text or "")

        req = AnnotatorRequest(role="llm_completer", image_ref=region.image_id,
                               prompt=prompts.writer_prompt(*answers))
        caption = self.gateway.call("llm_completer", req).text or ""

        qa = tuple(QAPair(question=q, answer=a) for q, a in zip(questions, answers))
        return replace(region, qa_pairs=qa, caption=caption)

    # -- full run ------------------------------------------------------

    def annotate_image(self, image_ref: str) -> ImageAnnotation:
        caption, phrases, ocr_texts = self._bootstrap_phrases(image_ref)
        regions = self.localize(image_ref, phrases=phrases + ocr_texts)
        regions, shared = self.generate_tags(image_ref, regions, caption, ocr_texts)
        matched, failures = self.matcher.match_corpus(regions)
        if failures:
            raise ImageFailure(image_ref, "match",
                               f"{len(failures)} regions unmatched: {failures[0][1]}")
        out = []
        desc_failures = []
        for region in matched:
            try:
                out.append(self.generate_descriptions(region))
            except (GatewayError, ImageFailure) as exc:
                desc_failures.append(region.region_id)
                log.warning("description failed for %s: %s", region.region_id, exc)
                out.append(region)
        return ImageAnnotation(image_ref=image_ref, regions=out, caption=caption,
                               shared_tags=shared, description_failures=desc_failures)

    def annotate(self, image_refs: Sequence[str], jobs: int = 1,
                 skip_region_check=None) -> Tuple[List[ImageAnnotation], Dict[str, str]]:
        """Annotate many images; failures collected per image, not raised.

        `skip_region_check(region_id)` true means the stored record is
        authoritative (human-verified) and must not be overwritten; such
        regions are dropped from the fresh output.
        """
        results: Dict[str, ImageAnnotation] = {}
        failures: Dict[str, str] = {}
        lock = threading.Lock()

        def work(ref: str) -> None:
            try:
                ann = self.annotate_image(ref)
                if skip_region_check is not None:
                    ann.regions = [r for r in ann.regions
                                   if not skip_region_check(r.region_id)]
                with lock:
                    results[ref] = ann
            except (ImageFailure, GatewayError) as exc:
                with lock:
                    failures[ref] = str(exc)

        if jobs <= 1:
            for ref in image_refs:
                work(ref)
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(work, image_refs))
        ordered = [results[ref] for ref in image_refs if ref in results]
        return ordered, failures
