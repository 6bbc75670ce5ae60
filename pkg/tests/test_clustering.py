import json
import logging

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from divforge.clustering import (ClusteringError, EmbeddingMatrix, dbscan,
                                 density_cluster, load_embeddings_binary,
                                 load_embeddings_jsonl, pca_reduce,
                                 save_embeddings_binary)


def emb(X, prefix="p"):
    return EmbeddingMatrix([f"{prefix}{i:04d}" for i in range(len(X))], np.asarray(X))


def labels_of(assignment, ids):
    return np.asarray([assignment.labels[i] for i in ids])


def same_partition(a, b):
    """Equal clusterings up to relabeling; noise must coincide exactly."""
    fwd, bwd = {}, {}
    for x, y in zip(a.tolist(), b.tolist()):
        if (x == -1) != (y == -1):
            return False
        if x == -1:
            continue
        if fwd.setdefault(x, y) != y or bwd.setdefault(y, x) != x:
            return False
    return True


def blobs(rng, centers, per=50, sigma=1.0):
    pts = [c + rng.normal(0, sigma, (per, len(c))) for c in np.asarray(centers, float)]
    truth = np.repeat(np.arange(len(centers)), per)
    return np.vstack(pts), truth


# --- EmbeddingMatrix ----------------------------------------------------------

def test_embedding_validation():
    with pytest.raises(ClusteringError):
        EmbeddingMatrix(["a"], np.array([[1.0, np.nan]]))
    with pytest.raises(ClusteringError):
        EmbeddingMatrix(["a", "a"], np.zeros((2, 2)))
    with pytest.raises(ClusteringError):
        EmbeddingMatrix(["a", "b"], np.zeros((3, 2)))


def test_embedding_io_jsonl(tmp_path):
    path = tmp_path / "emb.jsonl"
    with path.open("w") as fh:
        for i in range(4):
            fh.write(json.dumps({"id": f"s{i}", "vector": [float(i), 1.0]}) + "\n")
    loaded = load_embeddings_jsonl(path)
    assert loaded.ids == ["s0", "s1", "s2", "s3"]
    assert loaded.vectors.shape == (4, 2)
    assert loaded.fingerprint


def test_embedding_io_binary(tmp_path, rng):
    original = emb(rng.normal(size=(7, 3)))
    save_embeddings_binary(original, tmp_path / "v.bin", tmp_path / "v.json")
    loaded = load_embeddings_binary(tmp_path / "v.bin", tmp_path / "v.json")
    assert loaded.ids == original.ids
    np.testing.assert_allclose(loaded.vectors, original.vectors, atol=1e-6)


def test_embedding_subset_missing_id(rng):
    e = emb(rng.normal(size=(4, 2)))
    with pytest.raises(ClusteringError):
        e.subset(["p0000", "nope"])


# --- PCA ----------------------------------------------------------------------

def test_pca_exact_planar_subspace(rng):
    # points on a 2-D plane embedded in 5-D: projection preserves geometry
    basis = np.linalg.qr(rng.normal(size=(5, 2)))[0].T
    coeffs = rng.normal(size=(60, 2))
    X = coeffs @ basis + rng.normal(size=5)  # fixed offset
    reduced = pca_reduce(emb(X), 2)
    np.testing.assert_allclose(pdist(reduced.vectors), pdist(X), atol=1e-9)


def test_pca_full_rank_preserves_distances(rng):
    X = rng.normal(size=(40, 6))
    reduced = pca_reduce(emb(X), 6)
    np.testing.assert_allclose(pdist(reduced.vectors), pdist(X), atol=1e-9)


def test_pca_explained_variance_matches_eigh_oracle(rng):
    X = rng.normal(size=(100, 10)) * np.linspace(3, 0.5, 10)
    reduced = pca_reduce(emb(X), 10)
    got = reduced.vectors.var(axis=0, ddof=1)
    eigvals = np.linalg.eigh(np.cov(X.T))[0][::-1]
    np.testing.assert_allclose(got, eigvals, atol=1e-6)


def test_pca_rank_deficient_pads_and_warns(rng, caplog):
    row = rng.normal(size=4)
    X = np.vstack([row * t for t in np.linspace(0, 1, 20)])  # rank 1
    with caplog.at_level(logging.WARNING):
        reduced = pca_reduce(emb(X), 3)
    assert "padding" in caplog.text
    assert np.allclose(reduced.vectors[:, 1:], 0.0)


def test_pca_deterministic_under_row_permutation(rng):
    X = rng.normal(size=(30, 4))
    e1 = emb(X)
    reduced1 = pca_reduce(e1, 3)
    perm = rng.permutation(30)
    e2 = EmbeddingMatrix([e1.ids[i] for i in perm], X[perm])
    reduced2 = pca_reduce(e2, 3)
    m1 = dict(zip(reduced1.ids, reduced1.vectors))
    for sid, vec in zip(reduced2.ids, reduced2.vectors):
        np.testing.assert_allclose(vec, m1[sid], atol=1e-9)


def test_pca_preconditions(rng):
    with pytest.raises(ClusteringError):
        pca_reduce(emb(rng.normal(size=(1, 3))), 2)
    with pytest.raises(ClusteringError):
        pca_reduce(emb(rng.normal(size=(5, 3))), 4)


# --- DBSCAN -------------------------------------------------------------------

def test_dbscan_two_blobs(rng):
    X, truth = blobs(rng, [[0, 0], [50, 0]], per=30)
    asg = dbscan(emb(X), eps=5.0, min_samples=3)
    labels = labels_of(asg, [f"p{i:04d}" for i in range(len(X))])
    assert asg.k == 2
    assert (labels == -1).sum() == 0
    assert same_partition(labels, truth)


def test_dbscan_all_noise(rng):
    X = np.arange(10, dtype=float)[:, None] * 100
    asg = dbscan(emb(X), eps=1.0, min_samples=2)
    assert asg.k == 0
    assert len(asg.noise()) == 10


def test_dbscan_matches_sklearn_oracle(rng):
    from sklearn.cluster import DBSCAN as SkDBSCAN
    for trial in range(8):
        centers = rng.normal(0, 20, (int(rng.integers(2, 6)), 3))
        X, _ = blobs(rng, centers, per=60, sigma=1.0)
        X = np.vstack([X, rng.uniform(-30, 30, (int(rng.integers(5, 25)), 3))])
        eps = float(rng.uniform(1.0, 2.5))
        ms = int(rng.integers(2, 8))
        ids = [f"p{i:04d}" for i in range(len(X))]
        got = labels_of(dbscan(EmbeddingMatrix(ids, X), eps, ms), ids)
        want = SkDBSCAN(eps=eps, min_samples=ms).fit_predict(X)
        assert same_partition(got, want), f"trial {trial} diverged from oracle"


def test_dbscan_invariant_to_row_permutation(rng):
    X, _ = blobs(rng, [[0, 0], [30, 0], [0, 30]], per=25)
    ids = [f"p{i:04d}" for i in range(len(X))]
    asg1 = dbscan(EmbeddingMatrix(ids, X), eps=4.0, min_samples=3)
    perm = rng.permutation(len(X))
    asg2 = dbscan(EmbeddingMatrix([ids[i] for i in perm], X[perm]), eps=4.0, min_samples=3)
    assert asg1.labels == asg2.labels


def test_dbscan_invariant_to_translation(rng):
    X, _ = blobs(rng, [[0, 0, 0], [40, 0, 0]], per=20)
    ids = [f"p{i:04d}" for i in range(len(X))]
    asg1 = dbscan(EmbeddingMatrix(ids, X), eps=5.0, min_samples=3)
    asg2 = dbscan(EmbeddingMatrix(ids, X + 123.45), eps=5.0, min_samples=3)
    assert asg1.labels == asg2.labels


def test_dbscan_preconditions(rng):
    e = emb(rng.normal(size=(5, 2)))
    with pytest.raises(ClusteringError):
        dbscan(e, eps=0.0, min_samples=2)
    with pytest.raises(ClusteringError):
        dbscan(e, eps=1.0, min_samples=0)


# --- density clustering ---------------------------------------------------------

def test_density_recovers_three_planted_blobs(rng):
    centers = [[0.0, 0.0], [10.0, 0.0], [5.0, 10.0 * np.sqrt(3) / 2]]
    X, truth = blobs(rng, centers, per=50, sigma=1.0)
    ids = [f"p{i:04d}" for i in range(len(X))]
    asg = density_cluster(EmbeddingMatrix(ids, X), 20)
    labels = labels_of(asg, ids)
    assert asg.k == 3
    assert same_partition(labels, truth)


def test_density_uniform_noise_has_no_stable_cluster(rng):
    X = rng.uniform(0, 1, (300, 5))
    asg = density_cluster(emb(X), 20)
    assert asg.k == 0
    assert len(asg.noise()) == 300


def test_density_small_blob_below_floor(rng):
    X = rng.normal(0, 1, (10, 3))
    asg = density_cluster(emb(X), 20)
    assert asg.k == 0


def test_density_identical_points_single_cluster():
    X = np.ones((60, 4))
    asg = density_cluster(emb(X), 20)
    assert asg.k == 1
    assert len(asg.noise()) == 0


def test_density_never_emits_undersized_cluster(rng):
    for trial in range(5):
        centers = rng.normal(0, 15, (3, 3))
        X, _ = blobs(rng, centers, per=int(rng.integers(20, 60)))
        asg = density_cluster(emb(X), 20)
        for cluster, members in asg.pools().items():
            assert len(members) >= 20


def test_density_invariant_to_row_permutation(rng):
    X, _ = blobs(rng, [[0, 0], [12, 0]], per=40)
    ids = [f"p{i:04d}" for i in range(len(X))]
    asg1 = density_cluster(EmbeddingMatrix(ids, X), 20)
    perm = rng.permutation(len(X))
    asg2 = density_cluster(EmbeddingMatrix([ids[i] for i in perm], X[perm]), 20)
    assert asg1.labels == asg2.labels
