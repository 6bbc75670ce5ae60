"""Ingest a messy instruction-response JSONL file: encoding filtering, exact
deduplication, id assignment, and the reproducible corpus store."""

import json
import tempfile
from pathlib import Path

from divforge import export_jsonl, ingest, load_store, save_store

workdir = Path(tempfile.mkdtemp(prefix="divforge_demo_"))
raw = workdir / "raw.jsonl"

# A small corpus with typical dirt: an exact duplicate pair, a record with a
# stray control character, one malformed line, and one record with its own id.
rows = [
    {"instruction": "Translate 'hello' to French.", "response": "Bonjour."},
    {"instruction": "Translate 'hello' to French.", "response": "Bonjour."},
    {"instruction": "List three colors.", "response": "Red, green, blue."},
    {"instruction": "Bad bytes ahead", "response": "bell \x07 character"},
    {"id": "keep-7", "instruction": "What is 2+2?", "response": "4."},
]
with raw.open("w", encoding="utf-8") as fh:
    for row in rows:
        fh.write(json.dumps(row) + "\n")
    fh.write("this line is not JSON\n")

corpus = ingest(raw)
print(f"kept {len(corpus)} samples")
print("drop counts:", corpus.provenance["drops"])
print("ids:", corpus.ids())

# Persist as a store (payload + manifest with digest and cleaning parameters),
# then show that re-ingesting an export reproduces the same samples.
save_store(corpus, workdir / "store")
print("store manifest keys:", sorted(load_store(workdir / "store").provenance))

export_jsonl(corpus, workdir / "export.jsonl")
again = ingest(workdir / "export.jsonl")
print("ingest(export(corpus)) identical:", again.samples == corpus.samples)
