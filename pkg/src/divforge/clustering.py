"""Shared geometry: embedding ingestion, PCA, DBSCAN, and a density-clustering
procedure with a minimum cluster size.

The density procedure sweeps DBSCAN over an eps grid derived from the
k-distance curve and keeps the largest cluster count that stays stable while
eps grows by a configurable factor; homogeneous (structureless) data never
produces a stable count and comes back as all noise.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

log = logging.getLogger(__name__)

QUANTILE_LEVELS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
EPS_MULTIPLIERS = (1.25, 1.5, 2.0, 3.0, 4.0, 8.0)
STABILITY_RATIO = 1.6


class ClusteringError(ValueError):
    pass


@dataclass
class EmbeddingMatrix:
    ids: list[str]
    vectors: np.ndarray
    fingerprint: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ClusteringError("vectors must be a 2-D array")
        if len(self.ids) != self.vectors.shape[0]:
            raise ClusteringError(
                f"{len(self.ids)} ids but {self.vectors.shape[0]} vector rows")
        if len(set(self.ids)) != len(self.ids):
            raise ClusteringError("duplicate ids in embedding matrix")
        if not np.all(np.isfinite(self.vectors)):
            raise ClusteringError("non-finite components in embedding matrix")
        if not self.fingerprint:
            h = hashlib.sha256()
            h.update("\n".join(self.ids).encode("utf-8"))
            h.update(np.ascontiguousarray(self.vectors).tobytes())
            self.fingerprint = h.hexdigest()

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, ids: list[str]) -> "EmbeddingMatrix":
        pos = {sid: i for i, sid in enumerate(self.ids)}
        missing = [i for i in ids if i not in pos]
        if missing:
            raise ClusteringError(f"embeddings missing for {len(missing)} ids, "
                                  f"e.g. {missing[:3]}")
        rows = np.asarray([pos[i] for i in ids], dtype=np.int64)
        return EmbeddingMatrix(list(ids), self.vectors[rows])


def load_embeddings_jsonl(path) -> EmbeddingMatrix:
    """JSONL records {"id": str, "vector": [float, ...]}."""
    from pathlib import Path
    raw = Path(path).read_bytes()
    ids, vectors = [], []
    for line in raw.decode("utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        ids.append(str(rec["id"]))
        vectors.append(rec["vector"])
    if not ids:
        raise ClusteringError(f"no embeddings in {path}")
    return EmbeddingMatrix(ids, np.asarray(vectors, dtype=np.float64),
                           fingerprint=hashlib.sha256(raw).hexdigest())


def load_embeddings_binary(vectors_path, sidecar_path) -> EmbeddingMatrix:
    """Flat little-endian float32 payload + JSON sidecar {dim, count, ids}."""
    from pathlib import Path
    raw = Path(vectors_path).read_bytes()
    side = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
    dim, count, ids = int(side["dim"]), int(side["count"]), [str(i) for i in side["ids"]]
    data = np.frombuffer(raw, dtype="<f4")
    if data.size != dim * count or len(ids) != count:
        raise ClusteringError(
            f"sidecar promises {count}x{dim} floats, payload holds {data.size}")
    vecs = data.reshape(count, dim).astype(np.float64)
    return EmbeddingMatrix(ids, vecs, fingerprint=hashlib.sha256(raw).hexdigest())


def save_embeddings_binary(emb: EmbeddingMatrix, vectors_path, sidecar_path) -> None:
    from pathlib import Path
    Path(vectors_path).write_bytes(emb.vectors.astype("<f4").tobytes())
    Path(sidecar_path).write_text(json.dumps(
        {"dim": emb.dim, "count": len(emb), "ids": emb.ids}) + "\n", encoding="utf-8")


@dataclass
class ClusterAssignment:
    """id -> cluster label; -1 marks noise. Labels are dense and canonical:
    cluster 0 holds the lexicographically smallest member id among clusters."""

    labels: dict[str, int]

    @property
    def k(self) -> int:
        return len({v for v in self.labels.values() if v >= 0})

    def members(self, cluster: int) -> list[str]:
        return sorted(i for i, c in self.labels.items() if c == cluster)

    def pools(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for i, c in self.labels.items():
            if c >= 0:
                out.setdefault(c, []).append(i)
        return {c: sorted(v) for c, v in out.items()}

    def noise(self) -> list[str]:
        return sorted(i for i, c in self.labels.items() if c == -1)


def pca_reduce(emb: EmbeddingMatrix, components: int) -> EmbeddingMatrix:
    """Mean-centered projection onto the top principal components.

    Sign convention: the largest-magnitude loading of each component is made
    positive, so results do not depend on the SVD implementation's sign
    choices. If the input rank is below `components` the extra directions
    carry zero variance (warned).
    """
    n, d = emb.vectors.shape
    if n < 2:
        raise ClusteringError("PCA needs at least 2 rows")
    if components > d:
        raise ClusteringError(f"components {components} exceeds dimension {d}")
    x = emb.vectors - emb.vectors.mean(axis=0)
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    tol = max(n, d) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if components > rank:
        log.warning("requested %d components but input rank is %d; "
                    "padding with zero-variance directions", components, rank)
    avail = min(components, vt.shape[0])
    basis = vt[:avail].copy()
    for j in range(avail):
        lead = np.argmax(np.abs(basis[j]))
        if basis[j, lead] < 0:
            basis[j] = -basis[j]
    scores = x @ basis.T
    if avail < components:
        scores = np.hstack([scores, np.zeros((n, components - avail))])
    return EmbeddingMatrix(list(emb.ids), scores, fingerprint=emb.fingerprint)


def _pairwise(x: np.ndarray, chunk: int = 2048) -> np.ndarray:
    n = len(x)
    out = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        out[start:stop] = cdist(x[start:stop], x)
    return out


def _dbscan_rows(dist: np.ndarray, eps: float, min_samples: int,
                 order: np.ndarray) -> np.ndarray:
    """DBSCAN over a precomputed distance matrix.

    Neighborhoods include the point itself. Clusters are grown over the core
    graph scanning seeds in id order; border points are then attached to the
    cluster of their smallest-id core neighbor, so labels depend on ids, not
    row order.
    """
    n = dist.shape[0]
    within = dist <= eps
    degree = within.sum(axis=1)
    core = degree >= min_samples
    labels = np.full(n, -1, dtype=np.int64)
    cid = 0
    for seed in order:
        if not core[seed] or labels[seed] != -1:
            continue
        labels[seed] = cid
        stack = [seed]
        while stack:
            p = stack.pop()
            for q in np.flatnonzero(within[p] & core):
                if labels[q] == -1:
                    labels[q] = cid
                    stack.append(q)
        cid += 1
    # second pass: borders attach to the smallest-id core within eps
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    core_rows = np.flatnonzero(core)
    for row in np.flatnonzero(~core):
        cands = core_rows[within[row, core_rows]]
        if cands.size:
            labels[row] = labels[cands[np.argmin(rank[cands])]]
    return labels


def _canonical_relabel(ids: list[str], labels: np.ndarray) -> dict[str, int]:
    clusters: dict[int, str] = {}
    for i, lab in zip(ids, labels.tolist()):
        if lab >= 0 and (lab not in clusters or i < clusters[lab]):
            clusters[lab] = i
    remap = {old: new for new, (old, _) in
             enumerate(sorted(clusters.items(), key=lambda kv: kv[1]))}
    return {i: (remap[lab] if lab >= 0 else -1) for i, lab in zip(ids, labels.tolist())}


def dbscan(emb: EmbeddingMatrix, eps: float, min_samples: int) -> ClusterAssignment:
    """Standard DBSCAN, Euclidean metric, deterministic id-ordered tie rules."""
    if eps <= 0:
        raise ClusteringError("eps must be positive")
    if min_samples < 1:
        raise ClusteringError("min_samples must be >= 1")
    dist = _pairwise(emb.vectors)
    order = np.asarray(sorted(range(len(emb)), key=lambda r: emb.ids[r]), dtype=np.int64)
    labels = _dbscan_rows(dist, eps, min_samples, order)
    return ClusterAssignment(_canonical_relabel(emb.ids, labels))


def _count_clusters(labels: np.ndarray, min_size: int) -> int:
    vals, counts = np.unique(labels[labels >= 0], return_counts=True)
    return int(np.sum(counts >= min_size))


def density_cluster(emb: EmbeddingMatrix, min_cluster_size: int,
                    stability: float = STABILITY_RATIO) -> ClusterAssignment:
    """Density clustering with a minimum cluster size (HDBSCAN stand-in).

    Sweeps DBSCAN (min_samples = min_cluster_size) over eps candidates taken
    from quantiles of the k-distance curve plus multiples of its median, and
    returns the clustering with the largest cluster count that persists while
    eps grows by at least `stability`. A count of one is never accepted
    (indistinguishable from percolated noise) except in the degenerate case
    where the k-distance curve is identically zero, i.e. every point sits on
    at least min_cluster_size coincident neighbors.
    """
    if min_cluster_size < 2:
        raise ClusteringError("min_cluster_size must be >= 2")
    n = len(emb)
    if n < min_cluster_size:
        return ClusterAssignment({i: -1 for i in emb.ids})

    dist = _pairwise(emb.vectors)
    order = np.asarray(sorted(range(n), key=lambda r: emb.ids[r]), dtype=np.int64)
    kth = min_cluster_size - 1  # column index: distance to the kth nearest other point
    dk = np.partition(dist, kth, axis=1)[:, kth]

    if float(dk.max()) == 0.0:
        # coincidence groups: any positive eps below the smallest gap works
        positive = dist[dist > 0]
        eps0 = float(positive.min()) / 2.0 if positive.size else 1.0
        labels = _dbscan_rows(dist, eps0, min_cluster_size, order)
        return ClusterAssignment(_canonical_relabel(emb.ids, labels))

    med = float(np.median(dk[dk > 0]))
    grid = np.unique(np.concatenate([
        np.quantile(dk, QUANTILE_LEVELS),
        np.asarray([m * med for m in EPS_MULTIPLIERS]),
    ]))
    grid = grid[grid > 0]

    counts = []
    noise_counts = []
    for e in grid:
        labels = _dbscan_rows(dist, float(e), min_cluster_size, order)
        counts.append(_count_clusters(labels, min_cluster_size))
        noise_counts.append(int(np.sum(labels == -1)))
    counts = np.asarray(counts)

    best_c = 0
    best_window = None
    i = 0
    while i < len(grid):
        c = counts[i]
        j = i
        while j + 1 < len(grid) and counts[j + 1] == c:
            j += 1
        if c >= 2 and grid[j] / grid[i] >= stability and c > best_c:
            best_c = int(c)
            best_window = (i, j)
        i = j + 1

    if best_window is None:
        return ClusterAssignment({i: -1 for i in emb.ids})

    # within the stable window, favour the eps leaving the fewest points
    # unassigned (ties toward the smaller eps, away from the merge boundary)
    lo, hi = best_window
    pick = lo + int(np.argmin(noise_counts[lo:hi + 1]))
    labels = _dbscan_rows(dist, float(grid[pick]), min_cluster_size, order)
    # enforce the size floor (vacuous for min_samples == min_cluster_size)
    vals, sizes = np.unique(labels[labels >= 0], return_counts=True)
    for v, s in zip(vals.tolist(), sizes.tolist()):
        if s < min_cluster_size:
            labels[labels == v] = -1
    return ClusterAssignment(_canonical_relabel(emb.ids, labels))
