"""Sentence segmentation for raw reasoning text.

The splitter is lossless: every character of the source text lands in
exactly one sentence (trailing whitespace sticks to the sentence it
follows), so concatenating the sentences, with any stripped standalone
boxed-answer strings re-inserted at their recorded positions, reproduces
the source exactly.

Standalone boxed answers (a sentence that is nothing but an optionally
dollar-wrapped ``\\boxed{...}``, punctuation aside) are removed from the
sentence list to avoid trivially leaking the answer into scoring
contexts; they are returned separately with their positions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

# sentence ends after . ! ? (plus closing quotes/brackets) followed by
# whitespace, or at any newline run
_BOUNDARY = re.compile(r"(?:[.!?][\)\]\"']*(?=\s))|\n+")

RULES = ("simple-v1",)


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class Segmented:
    sentences: list[str]
    stripped: list[tuple[int, str]]  # (index into the pre-strip list, text)

    def reconstruct(self) -> str:
        pieces = list(self.sentences)
        for position, text in sorted(self.stripped):
            pieces.insert(position, text)
        return "".join(pieces)


def _raw_split(text: str) -> list[str]:
    """Split into spans; each span ends after a boundary plus its whitespace."""
    spans: list[str] = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        end = match.end()
        # swallow the whitespace that follows the terminator
        while end < len(text) and text[end] in " \t":
            end += 1
        while end < len(text) and text[end] == "\n":
            end += 1
        spans.append(text[start:end])
        start = end
    if start < len(text):
        spans.append(text[start:])
    # merge whitespace-only fragments into the preceding sentence
    merged: list[str] = []
    for span in spans:
        if merged and not span.strip():
            merged[-1] += span
        else:
            merged.append(span)
    if merged and not merged[0].strip():
        if len(merged) > 1:
            merged[1] = merged[0] + merged[1]
            merged = merged[1:]
    return merged


def is_standalone_boxed(sentence: str) -> bool:
    """True when the sentence is only a boxed answer (modulo $ and punctuation)."""
    text = sentence.strip()
    while text and text[0] == "$":
        text = text[1:].lstrip()
    if not text.startswith("\\boxed{"):
        return False
    depth = 0
    close = -1
    for i, ch in enumerate(text[len("\\boxed") :], start=len("\\boxed")):
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                close = i
                break
    if close < 0:
        return False
    rest = text[close + 1 :].strip()
    while rest and rest[0] == "$":
        rest = rest[1:].lstrip()
    return rest in ("", ".", "!", "?")


def segment(text: str, rule: str = "simple-v1") -> Segmented:
    """Split reasoning text into sentences, stripping standalone boxed answers."""
    if rule not in RULES:
        raise SegmentationError(f"unknown sentence-splitting rule {rule!r}")
    if not text.strip():
        raise SegmentationError("reasoning text is empty")
    spans = _raw_split(text)
    sentences: list[str] = []
    stripped: list[tuple[int, str]] = []
    for index, span in enumerate(spans):
        if is_standalone_boxed(span):
            stripped.append((index, span))
        else:
            sentences.append(span)
    if not sentences:
        raise SegmentationError(
            "text reduces to zero sentences after boxed-answer stripping"
        )
    return Segmented(sentences=sentences, stripped=stripped)
