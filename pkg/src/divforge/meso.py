"""Mesoscopic (tag-level) diversity control.

Tags arrive from an external tagging model as JSONL; here they are filtered
with a mechanical word-shape rule, normalized into categories by clustering
their embeddings, and used to build series by tag-category coverage.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import EmbeddingMatrix, dbscan
from .corpus import Corpus, CorpusError, RNG_KIND, SeriesManifest, SeriesPoint, \
    uniform_select

log = logging.getLogger(__name__)

DEFAULT_TAG_EPS = 0.15
DEFAULT_TAG_MIN_SAMPLES = 2
MAX_TAG_LENGTH = 64


@dataclass
class TagRecord:
    sample_id: str
    tags: list[str]


def ingest_tags(path: str | Path, corpus: Corpus) -> tuple[list[TagRecord], dict]:
    """Load JSONL {"id", "tags": [...]}; tag entries may be plain strings or
    {"tag", "explanation"} objects (explanations are discarded). Records whose
    id is not in the corpus are dropped and counted."""
    path = Path(path)
    records: list[TagRecord] = []
    stats = {"lines_read": 0, "loaded": 0, "dropped_unknown_id": 0, "malformed": 0}
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            stats["lines_read"] += 1
            try:
                rec = json.loads(line)
                sid = str(rec["id"])
                raw = rec["tags"]
            except (json.JSONDecodeError, KeyError, TypeError):
                stats["malformed"] += 1
                log.warning("skipping malformed tag record at line %d", stats["lines_read"])
                continue
            if sid not in corpus:
                stats["dropped_unknown_id"] += 1
                continue
            tags = []
            for t in raw:
                if isinstance(t, dict):
                    t = t.get("tag", "")
                if isinstance(t, str) and t.strip():
                    tags.append(t)
            if not tags:
                log.warning("sample %s has no tags", sid)
            records.append(TagRecord(sid, tags))
            stats["loaded"] += 1
    return records, stats


def _word_shaped(tag: str) -> bool:
    return bool(tag) and len(tag) <= MAX_TAG_LENGTH and any(ch.isalpha() for ch in tag)


def filter_tags(records: list[TagRecord]) -> list[TagRecord]:
    """Lowercase, trim, and drop tags failing the word-shape rule (needs an
    alphabetic character, at most 64 chars). Duplicates within a record are
    collapsed, keeping first occurrence order."""
    out = []
    for rec in records:
        seen = set()
        kept = []
        for tag in rec.tags:
            norm = tag.strip().lower()
            if _word_shaped(norm) and norm not in seen:
                seen.add(norm)
                kept.append(norm)
        out.append(TagRecord(rec.sample_id, kept))
    return out


@dataclass
class TagCatalog:
    """Raw tag -> category mapping produced by clustering tag embeddings."""

    normalized: dict[str, int]            # filtered tag -> category id
    categories: dict[int, str]            # category id -> representative tag
    sample_categories: dict[str, list[int]]   # sample -> sorted distinct categories
    sample_tag_counts: dict[str, int]     # sample -> surviving tag instances
    eps: float
    min_samples: int
    embedding_fingerprint: str

    def category_pools(self) -> dict[int, list[str]]:
        pools: dict[int, list[str]] = {c: [] for c in self.categories}
        for sid, cats in self.sample_categories.items():
            for c in cats:
                pools[c].append(sid)
        return {c: sorted(v) for c, v in pools.items()}


def build_tag_catalog(records: list[TagRecord], tag_embeddings: EmbeddingMatrix,
                      eps: float = DEFAULT_TAG_EPS,
                      min_samples: int = DEFAULT_TAG_MIN_SAMPLES) -> TagCatalog:
    """Cluster tag embeddings with DBSCAN; each cluster becomes one category
    represented by its centroid-nearest tag (ties: lexicographic), and noise
    tags become singleton categories."""
    filtered = filter_tags(records)
    distinct = sorted({t for rec in filtered for t in rec.tags})
    if not distinct:
        raise CorpusError("no tags survived filtering")
    emb = tag_embeddings.subset(distinct)  # raises on missing tag embeddings

    assignment = dbscan(emb, eps, min_samples)
    pos = {t: i for i, t in enumerate(distinct)}
    normalized: dict[str, int] = {}
    categories: dict[int, str] = {}
    next_cat = 0
    for cluster, members in sorted(assignment.pools().items()):
        vecs = emb.vectors[[pos[t] for t in members]]
        centroid = vecs.mean(axis=0)
        dists = np.linalg.norm(vecs - centroid, axis=1)
        best = min(range(len(members)), key=lambda j: (dists[j], members[j]))
        categories[next_cat] = members[best]
        for t in members:
            normalized[t] = next_cat
        next_cat += 1
    for t in assignment.noise():
        categories[next_cat] = t
        normalized[t] = next_cat
        next_cat += 1

    sample_categories = {}
    sample_tag_counts = {}
    for rec in filtered:
        cats = sorted({normalized[t] for t in rec.tags})
        sample_categories[rec.sample_id] = cats
        sample_tag_counts[rec.sample_id] = len(rec.tags)
    return TagCatalog(normalized, categories, sample_categories, sample_tag_counts,
                      eps, min_samples, tag_embeddings.fingerprint)


def category_ratio(catalog: TagCatalog, sample_ids) -> float:
    """Mesoscopic diversity of a sample set: distinct categories present over
    total tag instances."""
    distinct = set()
    total = 0
    for sid in sample_ids:
        distinct.update(catalog.sample_categories.get(sid, ()))
        total += catalog.sample_tag_counts.get(sid, 0)
    return len(distinct) / total if total else 0.0


def build_meso_series(catalog: TagCatalog, corpus: Corpus, component: str,
                      n: int, m: int, seed: int) -> SeriesManifest:
    """Series over k = number of tag categories drawn from, in descending
    category-frequency order. A sample carrying several chosen categories is
    selected at most once; quotas refill from the category pools."""
    if m < 2:
        raise CorpusError("a series needs at least 2 points")
    pools = {c: [s for s in members if s in corpus]
             for c, members in catalog.category_pools().items()}
    pools = {c: members for c, members in pools.items() if members}
    if not pools:
        raise CorpusError("no tagged samples present in the corpus")
    order = sorted(pools, key=lambda c: (-len(pools[c]), c))

    covered: set[str] = set()
    cum_union = []
    for c in order:
        covered.update(pools[c])
        cum_union.append(len(covered))
    if cum_union[-1] < n:
        raise CorpusError(f"tagged pool holds {cum_union[-1]} samples, need {n}")
    k_min = int(np.searchsorted(np.asarray(cum_union), n) + 1)
    k_max = len(order)
    if k_max == k_min:
        raise CorpusError(f"series undefined: k_min == k_max == {k_min}")

    targets = [int(round(t)) for t in np.linspace(k_min, k_max, m)]
    points = []
    ratios = []
    for k in targets:
        chosen = order[:k]
        ids = uniform_select([pools[c] for c in chosen], n, seed)
        ratios.append(category_ratio(catalog, ids))
        percent = 100.0 * (k - k_min) / (k_max - k_min)
        points.append(SeriesPoint(float(k), percent, ids))

    manifest = SeriesManifest(
        strategy="meso", component=component, size=n, points=points, seed=seed,
        parameters={
            "eps": catalog.eps,
            "min_samples": catalog.min_samples,
            "k_min": k_min,
            "k_max": k_max,
            "targets": targets,
            "category_ratio": ratios,
            "n_categories": len(catalog.categories),
            "tag_embedding_fingerprint": catalog.embedding_fingerprint,
            "rng": RNG_KIND,
            "numpy_version": np.__version__,
            "source_digest": corpus.provenance.get("source_digest"),
        })
    manifest.validate(corpus)
    return manifest
