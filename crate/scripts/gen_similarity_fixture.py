#!/usr/bin/env python3
"""Regenerates crates/core/tests/fixtures/similarity_pairs.json.

Reference values come from CPython's difflib.SequenceMatcher with no junk
predicate and autojunk disabled.
"""
import json
import random
from difflib import SequenceMatcher
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/similarity_pairs.json"


def ratio(a, b):
    return SequenceMatcher(None, a, b, autojunk=False).ratio()


HANDWRITTEN = [
    ("abcd", "bcde"),
    ("tide", "diet"),
    ("", ""),
    ("", "nonempty"),
    ("same text", "same text"),
    ("ab", "cd"),
    ("kitten", "sitting"),
    ("flaw", "lawn"),
    ("naïve café", "naive cafe"),
    ("日本語のテキスト", "日本のテキスト"),
    ("Answer the question using only the context.",
     "Answer the question using the given context only."),
    ("Summarise the document in three sentences.",
     "Write a three sentence summary of the document."),
    ("Read the dialogue and summarise what was agreed.",
     "Summarise the dialogue, focusing on what the speakers agreed."),
    ("Be concise.", "Be concise and accurate."),
    ("You are an expert reader. Extract the exact answer span.",
     "As an expert reader, extract the exact span that answers the question."),
    ("aaaaabbbbb", "bbbbbaaaaa"),
    ("abababab", "babababa"),
    ("the quick brown fox", "the lazy dog"),
    ("    ", "  "),
    ("line one\nline two", "line two\nline one"),
]


def main():
    rng = random.Random(20240611)
    pairs = list(HANDWRITTEN)
    alphabets = ["ab", "abc", "abcde", "abcdefghij ", "xyz ."]
    while len(pairs) < 50:
        alpha = rng.choice(alphabets)
        a = "".join(rng.choice(alpha) for _ in range(rng.randint(0, 40)))
        b = "".join(rng.choice(alpha) for _ in range(rng.randint(0, 40)))
        pairs.append((a, b))
    records = []
    for a, b in pairs:
        ab, ba = ratio(a, b), ratio(b, a)
        records.append({"a": a, "b": b, "ratio_ab": ab, "ratio_ba": ba, "symmetric": (ab + ba) / 2})
    OUT.write_text(json.dumps(records, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
