#!/usr/bin/env python3
"""Regenerates the synthetic dataset fixtures under crates/core/tests/fixtures."""
import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures"

TOWNS = ["Arlen", "Brisk", "Corvo", "Dunmere", "Elsby", "Farrow", "Galt", "Hollin", "Iver", "Jarrow"]
GOODS = ["wool", "salt", "copper", "timber", "cider", "glass", "linen", "amber", "tin", "honey"]
RIVERS = ["Tam", "Ouse", "Lune", "Wye", "Exe", "Nene", "Aire", "Dove", "Test", "Frome"]
NAMES = ["Ada", "Ben", "Cleo", "Dev", "Esme", "Finn", "Gus", "Hana", "Ivo", "June"]
TOPICS = ["the trip", "the budget", "dinner plans", "the deadline", "a lost key", "the concert"]


def write(name, records):
    with open(OUT / name, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def qa(rng, n):
    out = []
    for i in range(n):
        town, good, river = rng.choice(TOWNS), rng.choice(GOODS), rng.choice(RIVERS)
        year = rng.randint(1200, 1900)
        context = (
            f"{town} is a market town on the river {river}. It was founded in {year} "
            f"and grew wealthy from the {good} trade. Its weekly market is held on the old bridge."
        )
        kind = rng.randrange(3)
        if kind == 0:
            query, ref = f"Which river runs through {town}?", f"the river {river}"
        elif kind == 1:
            query, ref = f"When was {town} founded?", f"in {year}"
        else:
            query, ref = f"What trade made {town} wealthy?", f"the {good} trade"
        out.append({"id": f"qa-{i:03}", "context": context, "query": query, "reference": ref})
    return out


def summ(rng, n):
    out = []
    for i in range(n):
        town, good = rng.choice(TOWNS), rng.choice(GOODS)
        pct = rng.randint(5, 60)
        context = (
            f"Traders in {town} reported a {pct} per cent rise in {good} prices this season. "
            f"Local officials blamed poor weather and higher transport costs. "
            f"Shops expect prices to settle once the new harvest arrives."
        )
        ref = f"{good} prices in {town} rose {pct} per cent because of weather and transport costs"
        out.append({"id": f"sum-{i:03}", "context": context, "reference": ref})
    return out


def dialogue(rng, n):
    out = []
    for i in range(n):
        a, b = rng.sample(NAMES, 2)
        topic = rng.choice(TOPICS)
        day = rng.choice(["Monday", "Tuesday", "Friday", "Sunday"])
        context = f"{a}: Did you sort out {topic}?\n{b}: Not yet, can we talk on {day}?\n{a}: Sure, {day} works."
        ref = f"{a} and {b} will discuss {topic} on {day}"
        out.append({"id": f"dlg-{i:03}", "context": context, "reference": ref})
    return out


def main():
    rng = random.Random(17)
    write("qa_100.jsonl", qa(rng, 100))
    write("summarisation_60.jsonl", summ(rng, 60))
    write("dialogue_60.jsonl", dialogue(rng, 60))


if __name__ == "__main__":
    main()
