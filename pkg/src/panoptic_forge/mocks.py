"""Deterministic stand-ins for every annotator role.

A synthetic scene is derived purely from (seed, image_ref): planted objects
with boxes, an attribute each, a state, and a scene kind that fixes which
co-occurring objects the completer imagines. Every role answer is a pure
function of (seed, request), so full pipeline runs are byte-reproducible
and tests can recover the planted ground truth.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Tuple

from . import prompts
from .geometry import BoundingBox, iou
from .records import stable_digest
from .wire import AnnotatorRequest, AnnotatorResponse

SCENE_W = 640
SCENE_H = 480

SCENE_KINDS: Dict[str, dict] = {
    "street": {
        "pool": ["car", "bus", "person", "dog", "bicycle", "traffic light",
                 "sign", "tree", "building", "truck"],
        "cooccur": ["pedestrian", "streetlight", "crosswalk", "curb",
                    "awning", "antenna", "asphalt", "arch"],
    },
    "classroom": {
        "pool": ["person", "desk", "chair", "book", "backpack", "globe", "poster"],
        "cooccur": ["teacher", "blackboard", "stationery", "chalk",
                    "atlas", "abacus", "apple", "alphabet"],
    },
    "kitchen": {
        "pool": ["pot", "pan", "stove", "bottle", "cup", "knife", "sink", "kettle"],
        "cooccur": ["spoon", "towel", "shelf", "apron",
                    "appliance", "apricot", "aluminum"],
    },
    "park": {
        "pool": ["tree", "bench", "dog", "person", "bird", "fountain", "kite", "flower"],
        "cooccur": ["squirrel", "path", "bush", "lamppost",
                    "acorn", "anthill", "azalea", "arbor"],
    },
    "harbor": {
        "pool": ["boat", "ship", "person", "crane", "container", "seagull", "rope"],
        "cooccur": ["dock", "buoy", "gull", "anchor",
                    "algae", "anemone", "atoll"],
    },
    "office": {
        "pool": ["person", "laptop", "monitor", "keyboard", "chair", "plant", "mug", "phone"],
        "cooccur": ["stapler", "notebook", "whiteboard", "cable",
                    "agenda", "adapter", "archive", "album"],
    },
}

PART_MAP: Dict[str, tuple] = {
    "building": ("roof", "door", "windows", "walls"),
    "house": ("roof", "door", "windows", "walls"),
    "car": ("wheel", "window", "headlight"),
    "bus": ("wheel", "window", "door"),
    "truck": ("wheel", "cab", "trailer"),
    "bicycle": ("wheel", "handlebar", "saddle"),
    "person": ("face", "hand", "arm"),
    "teacher": ("face", "hand", "arm"),
    "pedestrian": ("face", "hand", "arm"),
    "dog": ("ear", "tail", "paw"),
    "bird": ("wing", "beak", "tail"),
    "seagull": ("wing", "beak", "tail"),
    "tree": ("trunk", "branch", "leaves"),
    "flower": ("petal", "stem", "leaves"),
    "boat": ("hull", "deck", "mast"),
    "ship": ("hull", "deck", "funnel"),
    "chair": ("leg", "seat", "backrest"),
    "bench": ("leg", "seat", "backrest"),
    "desk": ("leg", "drawer", "tabletop"),
    "laptop": ("screen", "keyboard", "hinge"),
    "monitor": ("screen", "frame", "stand"),
    "kettle": ("spout", "lid", "handle"),
    "pot": ("lid", "handle", "rim"),
    "bottle": ("cap", "neck", "label"),
    "cup": ("handle", "rim", "base"),
    "mug": ("handle", "rim", "base"),
    "backpack": ("strap", "zipper", "pocket"),
    "book": ("cover", "spine", "pages"),
    "crane": ("jib", "hook", "cabin"),
    "fountain": ("basin", "spout", "base"),
    "phone": ("screen", "button", "camera"),
    "globe": ("sphere", "stand", "base"),
}

# closed-set detector vocabularies; A is narrow, B is broader
VOCAB_A = ("person", "car", "bus", "truck", "dog", "bird", "chair", "bottle",
           "cup", "book", "bench", "boat", "kite", "laptop", "phone", "sink")
VOCAB_B = ("person", "car", "bicycle", "motorcycle", "desk", "monitor",
           "keyboard", "pot", "pan", "stove", "kettle", "ship", "crane",
           "container", "backpack", "flower", "fountain", "globe",
           "mug", "plant", "seagull", "sign", "knife", "traffic light")

# closed-set detectors miss this fraction of in-vocabulary objects; the
# grounding pass is the safety net that still finds them via the caption
CLOSED_SET_MISS_PROB = 0.12

OCR_TEXTS = ("stop", "open", "exit", "bus stop", "no parking")

COLORS = ("red", "blue", "green", "yellow", "white", "black", "gray", "brown",
          "orange", "purple", "silver")
CROP_ADJS = ("small", "large", "shiny", "rusty", "wooden", "metal", "bright", "dark")
PERSON_NOUNS = frozenset({"person", "teacher", "pedestrian"})
PERSON_ADJS = ("young", "old", "tall")
SEXES = ("male", "female")
HAIRSTYLES = ("short hair", "long hair", "curly hair")

STATES_BY_CAT = {
    "vehicle": ("parked", "moving", "waiting"),
    "animal": ("standing", "sitting", "walking", "running"),
    "person": ("standing", "sitting", "walking", "waiting"),
    "thing": ("standing", "lying", "waiting"),
}
VEHICLES = frozenset({"car", "bus", "truck", "bicycle", "motorcycle", "boat", "ship"})
ANIMALS = frozenset({"dog", "bird", "seagull", "squirrel", "cat"})

HERO_PROB = 0.22
ELUSIVE_PROB = 0.15


@dataclass(frozen=True)
class PlantedObject:
    noun: str
    adj: str
    crop_adj: str  # only visible when zoomed in; never in the image caption
    state: str
    bbox: BoundingBox
    elusive: bool
    sex: Optional[str] = None
    hairstyle: Optional[str] = None


@dataclass(frozen=True)
class Scene:
    image_ref: str
    seed: int
    kind: str
    objects: Tuple[PlantedObject, ...]
    caption: str
    ocr: Tuple[Tuple[BoundingBox, str], ...]

    def best_object(self, bbox: BoundingBox) -> Optional[PlantedObject]:
        best, best_v = None, 0.0
        for o in self.objects:
            v = iou(o.bbox, bbox)
            if v > best_v:
                best, best_v = o, v
        return best

    def gt_noun(self, bbox: BoundingBox) -> Optional[str]:
        o = self.best_object(bbox)
        return o.noun if o else None

    @property
    def nouns(self) -> List[str]:
        return [o.noun for o in self.objects]


def _article(word: str) -> str:
    return "an" if word[:1] in "aeiou" else "a"


def _rng(*parts) -> random.Random:
    return random.Random(int(stable_digest(*parts)[:16], 16))


def _fraction(*parts) -> float:
    """Deterministic value in [0, 1)."""
    return int(stable_digest(*parts)[:12], 16) / float(16 ** 12)


def _category(noun: str) -> str:
    if noun in PERSON_NOUNS:
        return "person"
    if noun in VEHICLES:
        return "vehicle"
    if noun in ANIMALS:
        return "animal"
    return "thing"


def _cell_box(rng: random.Random, cx: int, cy: int) -> BoundingBox:
    # cells are 160x120 on the 4x4 grid; sides span tiny through large
    w = rng.randint(10, 150)
    h = rng.randint(10, 110)
    x1 = cx * 160 + rng.randint(0, 160 - w)
    y1 = cy * 120 + rng.randint(0, 120 - h)
    return BoundingBox(float(x1), float(y1), float(x1 + w), float(y1 + h))


def _hero_box(rng: random.Random) -> BoundingBox:
    x1 = rng.randint(0, 60)
    y1 = rng.randint(0, 30)
    w = rng.randint(220, SCENE_W - x1 - 2)
    h = rng.randint(210, SCENE_H - y1 - 2)
    return BoundingBox(float(x1), float(y1), float(x1 + w), float(y1 + h))


@lru_cache(maxsize=4096)
def synth_scene(image_ref: str, seed: int) -> Scene:
    rng = _rng("scene", seed, image_ref)
    kind = rng.choice(sorted(SCENE_KINDS))
    spec = SCENE_KINDS[kind]
    n = rng.randint(3, 6)
    nouns = rng.sample(spec["pool"], n)

    hero = rng.random() < HERO_PROB
    cells = [(cx, cy) for cy in range(4) for cx in range(4)]
    picked = rng.sample(cells, n)

    objects = []
    for i, noun in enumerate(nouns):
        if hero and i == 0:
            bbox = _hero_box(rng)
        else:
            bbox = _cell_box(rng, *picked[i])
        cat = _category(noun)
        adj = rng.choice(PERSON_ADJS if cat == "person" else COLORS)
        state = rng.choice(STATES_BY_CAT[cat])
        sex = rng.choice(SEXES) if cat == "person" else None
        hair = rng.choice(HAIRSTYLES) if cat == "person" else None
        objects.append(PlantedObject(
            noun=noun, adj=adj, crop_adj=rng.choice(CROP_ADJS), state=state,
            bbox=bbox, elusive=rng.random() < ELUSIVE_PROB, sex=sex, hairstyle=hair,
        ))

    mentions = [f"{_article(o.adj)} {o.adj} {o.noun}" for o in objects]
    if len(mentions) == 1:
        listed = mentions[0]
    else:
        listed = ", ".join(mentions[:-1]) + " and " + mentions[-1]
    caption = f"{listed} in {_article(kind)} {kind}."

    ocr = []
    for o in objects:
        if o.noun == "sign":
            b = o.bbox
            inset_x = b.width * 0.2
            inset_y = b.height * 0.2
            sub = BoundingBox(b.x1 + inset_x, b.y1 + inset_y,
                              b.x2 - inset_x, b.y2 - inset_y)
            ocr.append((sub, rng.choice(OCR_TEXTS)))

    return Scene(image_ref=image_ref, seed=seed, kind=kind,
                 objects=tuple(objects), caption=caption, ocr=tuple(ocr))


def _jitter(bbox: BoundingBox, rng: random.Random) -> BoundingBox:
    amp = max(1, min(6, round(min(bbox.width, bbox.height) * 0.05)))
    def j(v, lo, hi):
        return float(min(max(v + rng.randint(-amp, amp), lo), hi))
    x1 = j(bbox.x1, 0, SCENE_W - 2)
    y1 = j(bbox.y1, 0, SCENE_H - 2)
    x2 = j(bbox.x2, x1 + 1, SCENE_W)
    y2 = j(bbox.y2, y1 + 1, SCENE_H)
    return BoundingBox(x1, y1, x2, y2)


def region_key(image_ref: str, bbox: BoundingBox) -> str:
    return f"{image_ref}|{bbox.x1:.2f},{bbox.y1:.2f},{bbox.x2:.2f},{bbox.y2:.2f}"


def _phrase_matches(noun: str, phrase: str) -> bool:
    toks = phrase.split()
    want = noun.split()
    for i in range(len(toks) - len(want) + 1):
        if toks[i:i + len(want)] == want:
            return True
    return False


def _questioner_reply(tag: str) -> str:
    if tag.strip().lower() in PERSON_NOUNS or tag.strip().lower() == "person":
        return ("Q1: What is the sex of this person? "
                "Q2: What is the hairstyle of this person? "
                "Q3: What is this person doing?")
    return (f"Q1: What is the color of this {tag}? "
            f"Q2: What is the state of this {tag}? "
            f"Q3: Where is this {tag}?")


def _writer_reply(payload: str) -> str:
    parts = [s.strip() for s in payload.split(".") if s.strip()]
    if not parts:
        return "There is nothing to describe."
    if len(parts) == 1:
        return parts[0] + "."
    lowered = [parts[0]] + [p[0].lower() + p[1:] for p in parts[1:]]
    return ", ".join(lowered[:-1]) + " and " + lowered[-1] + "."


def _imaginator_reply(caption: str) -> str:
    text = caption.lower()
    out = []
    for kind in sorted(SCENE_KINDS):
        if kind in text:
            for noun in SCENE_KINDS[kind]["cooccur"]:
                if noun not in out:
                    out.append(noun)
    return ", ".join(out)


def _splitter_reply(tag: str) -> str:
    t = tag.strip().lower()
    parts = PART_MAP.get(t)
    if parts is None and " " in t:
        parts = PART_MAP.get(t.split()[-1])
    return ", ".join(parts) if parts else ""


def _completer_reply(prompt: str) -> str:
    if prompt.startswith(prompts.QUESTIONER_PREFIX):
        body = prompt[len(prompts.QUESTIONER_PREFIX):]
        tag = body.split("\n", 1)[0].strip()
        return _questioner_reply(tag)
    if prompt.startswith(prompts.WRITER_PREFIX):
        return _writer_reply(prompt[len(prompts.WRITER_PREFIX):])
    if prompt.startswith(prompts.IMAGINATOR_PREFIX):
        return _imaginator_reply(prompt[len(prompts.IMAGINATOR_PREFIX):])
    if prompt.startswith(prompts.SPLITTER_PREFIX):
        return _splitter_reply(prompt[len(prompts.SPLITTER_PREFIX):])
    return ""


def _responder_reply(scene: Scene, bbox: Optional[BoundingBox], question: str) -> str:
    obj = scene.best_object(bbox) if bbox is not None else None
    if obj is None:
        return "It is not clear from the image."
    q = question.lower()
    if "sex" in q:
        return f"The person is {obj.sex}." if obj.sex else "It is not a person."
    if "hairstyle" in q:
        return f"The person has {obj.hairstyle}." if obj.hairstyle else "It is not a person."
    if "doing" in q:
        return f"The person is {obj.state}."
    if "color" in q:
        return f"The {obj.noun} is {obj.adj}."
    if "state" in q:
        return f"The {obj.noun} is {obj.state}."
    if "where" in q:
        return f"It is in the {scene.kind}."
    return "It is not clear from the image."


def _match_score(scene: Scene, seed: int, key: str, gt: Optional[str],
                 text: str, bias: Optional[Mapping[str, float]]) -> float:
    if bias is not None:
        override = bias.get(f"{key}::{text}")
        if override is not None:
            return float(override)
    frac = _fraction("match", seed, key, text)
    if gt is not None:
        if text == gt:
            return round(0.86 + 0.09 * frac, 6)
        if _phrase_matches(gt, text):
            return round(0.70 + 0.08 * frac, 6)
    familiar = set(scene.nouns)
    familiar.update(SCENE_KINDS[scene.kind]["cooccur"])
    familiar.add(scene.kind)
    if text in familiar:
        return round(0.35 + 0.23 * frac, 6)
    return round(0.05 + 0.30 * frac, 6)


def _mask_fraction(seed: int, key: str, gt: Optional[str], text: str) -> float:
    frac = _fraction("seg", seed, key, text)
    if gt is not None and (text == gt or _phrase_matches(gt, text)):
        return round(0.86 + 0.11 * frac, 6)
    return round(0.45 + 0.30 * frac, 6)


def mock_response(req: AnnotatorRequest, seed: int,
                  bias: Optional[Mapping[str, float]] = None) -> AnnotatorResponse:
    """Answer one wire request. Total: every valid request gets a response."""
    scene = synth_scene(req.image_ref, seed)
    role = req.role

    if role == "class_agnostic_proposer":
        boxes = [o.bbox.as_list() for o in scene.objects if not o.elusive]
        return AnnotatorResponse(id=req.id, boxes=boxes)

    if role == "closed_set_detector":
        vocab = set(req.candidates or ())
        rng = _rng("closed", seed, req.image_ref, ",".join(sorted(vocab)))
        boxes, tags = [], []
        for o in scene.objects:
            missed = rng.random() < CLOSED_SET_MISS_PROB
            if o.noun in vocab and not missed:
                boxes.append(_jitter(o.bbox, rng).as_list())
                tags.append(o.noun)
        return AnnotatorResponse(id=req.id, boxes=boxes, tags=tags)

    if role == "grounding_detector":
        phrases = [p.strip().lower() for p in (req.prompt or "").split(".") if p.strip()]
        rng = _rng("ground", seed, req.image_ref)
        boxes, tags = [], []
        for o in scene.objects:
            if any(_phrase_matches(o.noun, p) for p in phrases):
                boxes.append(_jitter(o.bbox, rng).as_list())
                tags.append(o.noun)
        return AnnotatorResponse(id=req.id, boxes=boxes, tags=tags)

    if role == "image_captioner":
        return AnnotatorResponse(id=req.id, text=scene.caption)

    if role == "region_captioner":
        obj = scene.best_object(BoundingBox.from_list(req.bbox)) if req.bbox else None
        if obj:
            text = f"{_article(obj.crop_adj)} {obj.crop_adj} {obj.adj} {obj.noun}"
        else:
            text = "a background area"
        return AnnotatorResponse(id=req.id, text=text)

    if role == "llm_completer":
        return AnnotatorResponse(id=req.id, text=_completer_reply(req.prompt or ""))

    if role == "vqa_responder":
        bbox = BoundingBox.from_list(req.bbox) if req.bbox else None
        return AnnotatorResponse(id=req.id, text=_responder_reply(scene, bbox, req.prompt or ""))

    if role == "region_text_matcher":
        bbox = BoundingBox.from_list(req.bbox)
        key = region_key(req.image_ref, bbox)
        gt = scene.gt_noun(bbox)
        scores = [_match_score(scene, seed, key, gt, t, bias)
                  for t in (req.candidates or [])]
        return AnnotatorResponse(id=req.id, scores=scores)

    if role == "segmenter":
        bbox = BoundingBox.from_list(req.bbox)
        key = region_key(req.image_ref, bbox)
        gt = scene.gt_noun(bbox)
        fractions = [_mask_fraction(seed, key, gt, t) for t in (req.candidates or [])]
        return AnnotatorResponse(id=req.id, mask_fractions=fractions)

    if role == "ocr":
        boxes = [b.as_list() for b, _ in scene.ocr]
        tags = [t for _, t in scene.ocr]
        return AnnotatorResponse(id=req.id, boxes=boxes, tags=tags)

    return AnnotatorResponse(id=req.id, error=f"unknown role {role!r}")
