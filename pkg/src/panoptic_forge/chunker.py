"""Rule-based noun phrase extraction over a bundled part-of-speech lexicon.

A chunk is a run of adjectives followed by nouns; articles are transparent,
everything else breaks the chunk. "of" extends a noun-final chunk when an
object (article* adjective* noun+) follows, so "group of children" survives
as one phrase. Unknown words default to nouns, except the "-ing" form which
reads as a verb.
"""

from __future__ import annotations

import json
import string
from functools import lru_cache
from importlib import resources
from typing import List, Optional, Tuple

_BREAKING_PUNCT = ",.;:!?"
_STRIP = string.punctuation + "‘’“”"

# classification priority; first class claiming a word wins
_CLASS_ORDER = ("articles", "conjunctions", "prepositions", "pronouns",
                "adverbs", "verbs", "nouns", "adjectives")


class Lexicon:
    def __init__(self, table: dict):
        self._sets = {name: frozenset(table.get(name, ())) for name in _CLASS_ORDER}

    def classify(self, word: str) -> str:
        for name in _CLASS_ORDER:
            if word in self._sets[name]:
                return name[:-1]
        # unknown vocabulary: gerunds read as verbs, the rest as nouns
        if word.endswith("ing") and len(word) > 5:
            return "verb"
        return "noun"


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    path = resources.files(__package__) / "data" / "lexicon.json"
    return Lexicon(json.loads(path.read_text(encoding="utf-8")))


def _tokenize(caption: str) -> List[Tuple[str, bool]]:
    """(word, breaks_after) pairs; punctuation-only tokens force a break."""
    out = []
    for raw in caption.lower().split():
        breaks = raw[-1] in _BREAKING_PUNCT
        word = raw.strip(_STRIP)
        if word:
            out.append((word, breaks))
        elif out:
            prev, _ = out[-1]
            out[-1] = (prev, True)
    return out


def _lookahead_object(words, start: int, classify) -> Tuple[Optional[list], int]:
    """Collect article* adjective* noun+ from `start`; None when absent."""
    j = start
    collected: list = []
    while j < len(words) and classify(words[j][0]) == "article":
        if words[j][1]:
            return None, start
        j += 1
    while j < len(words) and classify(words[j][0]) == "adjective":
        collected.append(words[j][0])
        if words[j][1]:
            return None, start
        j += 1
    found = False
    while j < len(words) and classify(words[j][0]) == "noun":
        collected.append(words[j][0])
        found = True
        j += 1
        if words[j - 1][1]:
            break
    if not found:
        return None, start
    return collected, j


def extract_noun_phrases(caption: str, lexicon: Optional[Lexicon] = None) -> List[str]:
    """Lowercased noun phrases in caption order, deduplicated."""
    if not caption or not caption.strip():
        return []
    lex = lexicon if lexicon is not None else default_lexicon()
    words = _tokenize(caption)

    phrases: List[str] = []
    chunk: List[str] = []
    has_noun = False

    def flush():
        nonlocal chunk, has_noun
        if chunk and has_noun:
            phrases.append(" ".join(chunk))
        chunk = []
        has_noun = False

    i = 0
    while i < len(words):
        word, breaks = words[i]
        cls = lex.classify(word)
        if cls == "article":
            if breaks:
                flush()
            i += 1
            continue
        if word == "of" and chunk and has_noun and not breaks:
            got, nxt = _lookahead_object(words, i + 1, lex.classify)
            if got is not None:
                chunk.append("of")
                chunk.extend(got)
                if words[nxt - 1][1]:
                    flush()
                i = nxt
                continue
            flush()
            i += 1
            continue
        if cls == "adjective":
            if has_noun:
                flush()
            chunk.append(word)
        elif cls == "noun":
            chunk.append(word)
            has_noun = True
        else:
            flush()
        if breaks:
            flush()
        i += 1
    flush()

    seen = set()
    out = []
    for p in phrases:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out
