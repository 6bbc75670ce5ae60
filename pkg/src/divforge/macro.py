"""Macroscopic (semantic-topic) diversity control: cluster sample embeddings,
then build fixed-size series by the number of clusters sampled from."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment, EmbeddingMatrix, density_cluster, \
    pca_reduce
from .corpus import Corpus, CorpusError, RNG_KIND, SeriesManifest, SeriesPoint, \
    uniform_select

log = logging.getLogger(__name__)

PCA_COMPONENTS = 5
DEFAULT_MIN_CLUSTER_SIZE = 20


@dataclass
class TopicModel:
    assignment: ClusterAssignment
    component: str
    embedding_fingerprint: str
    min_cluster_size: int

    def pools(self) -> dict[int, list[str]]:
        return self.assignment.pools()

    @property
    def k(self) -> int:
        return self.assignment.k


def build_topic_model(corpus: Corpus, component: str, embeddings: EmbeddingMatrix,
                      min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE) -> TopicModel:
    """PCA to 5 components, then density clustering. Noise samples keep the
    -1 label and are excluded from every selectable pool."""
    ids = corpus.ids()
    emb = embeddings.subset(ids)  # raises on missing ids
    reduced = pca_reduce(emb, min(PCA_COMPONENTS, emb.dim))
    assignment = density_cluster(reduced, min_cluster_size)
    return TopicModel(assignment, component, embeddings.fingerprint, min_cluster_size)


def _ordered_clusters(pools: dict[int, list[str]]) -> list[int]:
    # descending size, ties by cluster id
    return sorted(pools, key=lambda c: (-len(pools[c]), c))


def build_macro_series(model: TopicModel, n: int, m: int, seed: int,
                       source_digest: str | None = None) -> SeriesManifest:
    """Series over k = number of clusters sampled, from the smallest feasible
    count (clusters taken in descending size) up to all clusters."""
    if m < 2:
        raise CorpusError("a series needs at least 2 points")
    pools = model.pools()
    if not pools:
        raise CorpusError("topic model has no clusters (all noise)")
    order = _ordered_clusters(pools)
    sizes = np.asarray([len(pools[c]) for c in order], dtype=np.int64)
    cum = np.cumsum(sizes)
    if cum[-1] < n:
        raise CorpusError(f"clusters pool {cum[-1]} samples, need {n}")
    k_min = int(np.searchsorted(cum, n) + 1)
    k_max = len(order)
    if k_max < 2:
        raise CorpusError("need at least 2 clusters for a series")
    if k_max == k_min:
        raise CorpusError(f"series undefined: k_min == k_max == {k_min}")

    targets = [int(round(t)) for t in np.linspace(k_min, k_max, m)]
    points = []
    topic_counts = []
    for k in targets:
        chosen = order[:k]
        ids = uniform_select([pools[c] for c in chosen], n, seed)
        id_set = set(ids)
        present = sum(1 for c in chosen if any(s in id_set for s in pools[c]))
        topic_counts.append(present)
        percent = 100.0 * (k - k_min) / (k_max - k_min)
        points.append(SeriesPoint(float(k), percent, ids))

    manifest = SeriesManifest(
        strategy="macro", component=model.component, size=n, points=points, seed=seed,
        parameters={
            "min_cluster_size": model.min_cluster_size,
            "pca_components": PCA_COMPONENTS,
            "dimension_reduction": "pca",
            "k_min": k_min,
            "k_max": k_max,
            "targets": targets,
            "distinct_topics": topic_counts,
            "cluster_sizes": {str(c): int(len(pools[c])) for c in order},
            "embedding_fingerprint": model.embedding_fingerprint,
            "rng": RNG_KIND,
            "numpy_version": np.__version__,
            "source_digest": source_digest,
        })
    manifest.validate()
    return manifest
