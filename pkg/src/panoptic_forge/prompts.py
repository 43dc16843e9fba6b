"""Prompt templates shared by the pipeline and the rule-based completer mock.

The completer is one wire role; the prompt prefix selects the behavior, so
both sides must agree on these strings byte-for-byte.
"""

from __future__ import annotations

import re

QUESTIONER_PREFIX = (
    "I will give you some objects. Please list 3 questions about the given "
    "objects. These questions must be answerable based on a photograph of "
    "the object and cannot rely on any outside knowledge. Some examples are "
    "listed as follows: \n\n"
    "Human: Person\n"
    "Assistant: Q1: What is the sex of this person? Q2: What is the "
    "hairstyle of this person? Q3: What is this person doing?\n\n"
    "Human: "
)

WRITER_PREFIX = "Please paraphrase the following sentences into one sentence. "

IMAGINATOR_PREFIX = (
    "I will describe a scene. Please imagine objects that are plausibly "
    "present in the scene, as a comma-separated list. Description: "
)

SPLITTER_PREFIX = (
    "Please divide the following object into its parts, as a comma-separated "
    "list. If the object is non-physical or cannot be further divided, "
    "answer with an empty line. Object: "
)


def questioner_prompt(tag: str) -> str:
    return f"{QUESTIONER_PREFIX}{tag}\nAssistant:"


def writer_prompt(a1: str, a2: str, a3: str) -> str:
    return f"{WRITER_PREFIX}{a1} {a2} {a3}"


def imaginator_prompt(caption: str) -> str:
    return f"{IMAGINATOR_PREFIX}{caption}"


def splitter_prompt(tag: str) -> str:
    return f"{SPLITTER_PREFIX}{tag}"


def parse_questions(text: str) -> list:
    """Pull Q1/Q2/Q3 out of a completer reply, in order."""
    found = re.findall(r"Q\d+:\s*([^?]+\?)", text)
    return [q.strip() for q in found]


def parse_tag_list(text: str) -> list:
    out = []
    for part in text.split(","):
        t = part.strip().lower().rstrip(".")
        if t:
            out.append(t)
    return out
