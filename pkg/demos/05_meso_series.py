"""The mesoscopic strategy: ingest externally generated tags, filter them with
the word-shape rule, normalize synonyms by clustering tag embeddings, and
build series by tag-category coverage."""

import numpy as np

from divforge import (Corpus, EmbeddingMatrix, Sample, build_meso_series,
                      build_tag_catalog, category_ratio, filter_tags)
from divforge.meso import TagRecord

rng = np.random.default_rng(9)

corpus = Corpus([Sample(f"{i:04d}", f"q {i}", f"a {i}") for i in range(400)])

# Raw tags as an external tagging model would emit them: mixed case, some
# non-words, and synonym pairs ("humor"/"humour", "cooking"/"cuisine").
# Most samples carry a single tag; a minority carry two.
base_tags = ["Humor", "Humour", "Cooking", "Cuisine", "Travel", "Math",
             "History", "Sports", "1234", "!!!"]
records = []
for i in range(400):
    size = 2 if rng.random() < 0.2 else 1
    picks = rng.choice(len(base_tags), size=size, replace=False)
    records.append(TagRecord(f"{i:04d}", [base_tags[p] for p in picks]))

filtered = filter_tags(records)
print("word-shape filter:", records[0].tags, "->", filtered[0].tags)

# Tag embeddings place synonyms on top of each other.
anchor = {"humor": [0, 0], "cooking": [10, 0], "travel": [0, 10],
          "math": [10, 10], "history": [20, 0], "sports": [0, 20]}
vectors = {
    "humor": anchor["humor"], "humour": [0.05, 0.0],
    "cooking": anchor["cooking"], "cuisine": [10.05, 0.0],
    "travel": anchor["travel"], "math": anchor["math"],
    "history": anchor["history"], "sports": anchor["sports"],
}
tags = sorted(vectors)
emb = EmbeddingMatrix(tags, np.asarray([vectors[t] for t in tags], float))

catalog = build_tag_catalog(records, emb, eps=0.15, min_samples=2)
print(f"{len(catalog.normalized)} tags normalized into "
      f"{len(catalog.categories)} categories:")
for cat, rep in sorted(catalog.categories.items()):
    members = sorted(t for t, c in catalog.normalized.items() if c == cat)
    print(f"  category {cat} <- {members} (representative {rep!r})")

# --- series over a wider tag space -------------------------------------------
# 30 tag categories, most samples carrying a single tag: the distinct-category
# ratio then visibly grows with k.
wide_corpus = Corpus([Sample(f"{i:04d}", f"q {i}", f"a {i}") for i in range(900)])
wide_records = []
for i in range(900):
    size = 2 if rng.random() < 0.1 else 1
    picks = rng.choice(30, size=size, replace=False)
    wide_records.append(TagRecord(f"{i:04d}", [f"area{p:02d}" for p in picks]))
centers = rng.normal(0, 40, (30, 4))
wide_emb = EmbeddingMatrix([f"area{p:02d}" for p in range(30)], centers)
wide_catalog = build_tag_catalog(wide_records, wide_emb, eps=0.15, min_samples=2)

manifest = build_meso_series(wide_catalog, wide_corpus, "instruction",
                             n=120, m=4, seed=2)
print(f"\nmeso series (N=120, M=4) over {len(wide_catalog.categories)} categories:")
for point, ratio in zip(manifest.points, manifest.parameters["category_ratio"]):
    print(f"  k={point.diversity_value:3.0f}  category/tag ratio {ratio:.3f}  "
          f"diversity {point.diversity_percent:6.2f}%")
print("ratio of the last point recomputed:",
      round(category_ratio(wide_catalog, manifest.points[-1].sample_ids), 3))
