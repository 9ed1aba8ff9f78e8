#!/usr/bin/env python3
"""Converts public dataset exports into promptforge's JSONL record format.

Each output line is {"id", "context", "query"?, "reference"}; "query" is
present only for question answering. Records with an empty context or
reference are skipped, and so are duplicate ids.

Supported inputs:

  squad    SQuAD v1.1/v2.0 JSON (data[].paragraphs[].qas[]). Unanswerable
           questions are skipped; the first gold answer is the reference.
  cnndm    CNN/Daily Mail as CSV or JSONL with columns id, article, highlights.
  samsum   SAMSum JSON array or JSONL with fields id, dialogue, summary.

Usage:
  convert_datasets.py squad train-v1.1.json qa.jsonl [--limit 500]
"""
import argparse
import csv
import json
import sys
from pathlib import Path


def squad(path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    for article in data["data"]:
        for paragraph in article["paragraphs"]:
            for qa in paragraph["qas"]:
                if qa.get("is_impossible") or not qa["answers"]:
                    continue
                yield {
                    "id": qa["id"],
                    "context": paragraph["context"],
                    "query": qa["question"],
                    "reference": qa["answers"][0]["text"],
                }


def rows(path):
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(encoding="utf-8", newline="") as f:
            yield from csv.DictReader(f)
    elif path.suffix == ".jsonl":
        with path.open(encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    yield json.loads(line)
    else:
        yield from json.loads(path.read_text(encoding="utf-8"))


def cnndm(path):
    for row in rows(path):
        yield {"id": str(row["id"]), "context": row["article"], "reference": row["highlights"]}


def samsum(path):
    for row in rows(path):
        yield {"id": str(row["id"]), "context": row["dialogue"], "reference": row["summary"]}


CONVERTERS = {"squad": squad, "cnndm": cnndm, "samsum": samsum}


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("format", choices=sorted(CONVERTERS))
    parser.add_argument("source")
    parser.add_argument("output")
    parser.add_argument("--limit", type=int, help="stop after this many records")
    args = parser.parse_args()

    seen, written, skipped = set(), 0, 0
    with open(args.output, "w", encoding="utf-8") as out:
        for record in CONVERTERS[args.format](args.source):
            if record["id"] in seen or not record["context"].strip() or not record["reference"].strip():
                skipped += 1
                continue
            seen.add(record["id"])
            out.write(json.dumps(record, ensure_ascii=False) + "\n")
            written += 1
            if args.limit and written >= args.limit:
                break
    print(f"wrote {written} records, skipped {skipped}", file=sys.stderr)


if __name__ == "__main__":
    main()
