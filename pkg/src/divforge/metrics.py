"""Posterior diversity metrics and correlation/slope reporting.

All metrics are pure functions of the dataset (plus tokenizer); reports embed
the provenance needed to reproduce them (tokenizer fingerprint, codec, log
base, sampling mode).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import zlib
from collections import Counter
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .clustering import EmbeddingMatrix

log = logging.getLogger(__name__)

SELF_BLEU_MAX_N = 4
SELF_BLEU_EPS = 1e-9
SELF_BLEU_SAMPLE_LIMIT = 2000
DEFLATE_LEVEL = 6

METRIC_NAMES = ("nr", "ed", "sl", "cr", "bleu", "ie", "kurt", "gini")


class MetricError(ValueError):
    pass


def worker_count() -> int:
    """Worker cap from DIVFORGE_THREADS (default 1)."""
    raw = os.environ.get("DIVFORGE_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise MetricError(f"DIVFORGE_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise MetricError(f"DIVFORGE_THREADS must be >= 1, got {value}")
    return value


def _token_lists(texts, tokenizer) -> list[list]:
    return [tokenizer.encode(t) for t in texts]


def _token_counts(texts, tokenizer) -> Counter:
    counts: Counter = Counter()
    for t in texts:
        counts.update(tokenizer.encode(t))
    return counts


def ngram_ratio(texts, tokenizer, n: int) -> float:
    """Unique n-grams over total n-grams, pooled over the dataset."""
    if n < 1:
        raise MetricError("n must be >= 1")
    unique = set()
    total = 0
    for toks in _token_lists(texts, tokenizer):
        for i in range(len(toks) - n + 1):
            unique.add(tuple(toks[i:i + n]))
            total += 1
    if total == 0:
        raise MetricError(f"no {n}-grams: all texts shorter than {n} tokens")
    return len(unique) / total


def embedding_distance(emb: EmbeddingMatrix, literal_normalizer: bool = False) -> float:
    """Mean Euclidean distance over unordered embedding pairs.

    With literal_normalizer=True the ordered-pair sum is divided by N instead
    (the alternate normalization some reports use).
    """
    n = len(emb)
    if n < 2:
        raise MetricError("embedding distance needs at least 2 rows")
    total = 0.0
    x = emb.vectors
    chunk = 1024
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = cdist(x[start:stop], x)
        total += float(block.sum())
    # `total` counts ordered pairs (diagonal contributes zero)
    if literal_normalizer:
        return total / n
    return total / (n * (n - 1))


def mean_sequence_length(texts, tokenizer) -> float:
    if not texts:
        raise MetricError("empty dataset")
    lengths = [len(toks) for toks in _token_lists(texts, tokenizer)]
    return float(np.mean(lengths))


def deflate_ratio(data: bytes) -> float:
    """Original size over deflate(level 6) size; the codec is pinned so the
    value is bit-stable across runs."""
    if not data:
        raise MetricError("empty input")
    return len(data) / len(zlib.compress(data, DEFLATE_LEVEL))


def compression_ratio(texts) -> float:
    """deflate_ratio of the newline-joined dataset bytes."""
    return deflate_ratio("\n".join(texts).encode("utf-8"))


def compression_codec() -> dict:
    return {"codec": "deflate", "level": DEFLATE_LEVEL, "zlib_version": zlib.ZLIB_VERSION,
            "separator": "\\n"}


def _ngram_counter(tokens: list, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_against(hyp: list, ref_counters: list[Counter], ref_lengths: list[int],
                  max_n: int) -> float:
    """BLEU of one hypothesis against explicit references: brevity penalty
    times the geometric mean of add-eps smoothed modified precisions."""
    c = len(hyp)
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        hyp_grams = _ngram_counter(hyp, n)
        clipped = 0
        h_total = max(c - n + 1, 0)
        if hyp_grams:
            merged: dict = {}
            for rc in ref_counters:
                for g, cnt in rc[n].items():
                    if g in hyp_grams and cnt > merged.get(g, 0):
                        merged[g] = cnt
            clipped = sum(min(cnt, merged.get(g, 0)) for g, cnt in hyp_grams.items())
        log_p += math.log((clipped + SELF_BLEU_EPS) / (h_total + SELF_BLEU_EPS))
    # closest reference length; ties resolved toward the shorter
    r = min(ref_lengths, key=lambda L: (abs(L - c), L))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p / max_n)


def self_bleu(texts, tokenizer, max_n: int = SELF_BLEU_MAX_N,
              sample_limit: int = SELF_BLEU_SAMPLE_LIMIT, seed: int = 0) -> float:
    """Mean BLEU of each text against the rest of the dataset.

    Exact when the reference pool is within sample_limit; above that each
    hypothesis is scored against a seeded uniform sample of references keyed
    by the hypothesis text, so the result is independent of dataset order and
    of how work is distributed over workers.
    """
    if len(texts) < 2:
        raise MetricError("Self-BLEU needs at least 2 texts")
    token_lists = _token_lists(texts, tokenizer)
    n_texts = len(texts)
    sampled = (n_texts - 1) > sample_limit

    if not sampled:
        # exact mode: per n-gram, keep the two largest per-text counts so the
        # max over all references except i is O(1) per gram
        top: list[dict] = [dict() for _ in range(max_n + 1)]
        for idx, toks in enumerate(token_lists):
            for n in range(1, max_n + 1):
                for g, cnt in _ngram_counter(toks, n).items():
                    best = top[n].get(g)
                    if best is None:
                        top[n][g] = (cnt, idx, 0)
                    else:
                        c1, i1, c2 = best
                        if cnt > c1:
                            top[n][g] = (cnt, idx, c1)
                        elif cnt > c2:
                            top[n][g] = (c1, i1, cnt)
        lengths = [len(t) for t in token_lists]
        len_sorted = sorted(lengths)
        scores = []
        for idx, toks in enumerate(token_lists):
            c = len(toks)
            if c == 0:
                scores.append(0.0)
                continue
            log_p = 0.0
            for n in range(1, max_n + 1):
                hyp_grams = _ngram_counter(toks, n)
                clipped = 0
                for g, cnt in hyp_grams.items():
                    c1, i1, c2 = top[n].get(g, (0, -1, 0))
                    ref_max = c2 if i1 == idx else c1
                    clipped += min(cnt, ref_max)
                h_total = max(c - n + 1, 0)
                log_p += math.log((clipped + SELF_BLEU_EPS) / (h_total + SELF_BLEU_EPS))
            r = _closest_other_length(len_sorted, lengths[idx], c)
            bp = 1.0 if c >= r else math.exp(1.0 - r / c)
            scores.append(bp * math.exp(log_p / max_n))
        return float(np.mean(scores))

    # sampled mode
    order = sorted(range(n_texts), key=lambda i: texts[i])
    scores = []
    for idx, toks in enumerate(token_lists):
        candidates = [j for j in order if j != idx]
        digest = int.from_bytes(
            hashlib.sha256(texts[idx].encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(np.random.SeedSequence([seed, digest]))
        pick = rng.choice(len(candidates), size=sample_limit, replace=False)
        refs = [token_lists[candidates[j]] for j in sorted(pick.tolist())]
        ref_counters = [{n: _ngram_counter(r, n) for n in range(1, max_n + 1)} for r in refs]
        ref_lengths = [len(r) for r in refs]
        scores.append(_bleu_against(toks, ref_counters, ref_lengths, max_n))
    return float(np.mean(scores))


def _closest_other_length(len_sorted: list[int], own: int, c: int) -> int:
    """Reference length closest to c among all lengths excluding one
    occurrence of `own` (ties toward the shorter length)."""
    best = None
    skipped_own = False
    for L in len_sorted:
        if L == own and not skipped_own:
            skipped_own = True
            continue
        key = (abs(L - c), L)
        if best is None or key < best[0]:
            best = (key, L)
    return best[1]


def information_entropy(texts, tokenizer) -> float:
    """Shannon entropy (natural log) of the empirical token distribution."""
    counts = _token_counts(texts, tokenizer)
    total = sum(counts.values())
    if total == 0:
        raise MetricError("no tokens in dataset")
    p = np.asarray(list(counts.values()), dtype=np.float64) / total
    return float(-np.sum(p * np.log(p)))


def gini_index(texts, tokenizer) -> float:
    """1 - sum(p_i^2) over the empirical token distribution."""
    counts = _token_counts(texts, tokenizer)
    total = sum(counts.values())
    if total == 0:
        raise MetricError("no tokens in dataset")
    p = np.asarray(list(counts.values()), dtype=np.float64) / total
    return float(1.0 - np.sum(p * p))


def distribution_kurtosis(texts, tokenizer) -> float:
    """Excess kurtosis (population moments) of the token occurrence counts."""
    counts = _token_counts(texts, tokenizer)
    values = np.asarray(list(counts.values()), dtype=np.float64)
    if values.size < 2 or np.all(values == values[0]):
        raise MetricError("kurtosis undefined: token counts have zero variance")
    mu = values.mean()
    sigma = math.sqrt(float(np.mean((values - mu) ** 2)))
    return float(np.mean(((values - mu) / sigma) ** 4) - 3.0)


def pearson(xs, ys) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.size < 2:
        raise MetricError("pearson needs two equal-length vectors of size >= 2")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    if denom == 0:
        raise MetricError("pearson undefined for zero-variance input")
    return float(np.dot(xc, yc)) / denom


def ols_slope(xs, ys) -> float:
    """Least-squares slope of ys on xs (reports render it x10^-2)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.size < 2:
        raise MetricError("ols_slope needs two equal-length vectors of size >= 2")
    xc = xs - xs.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0:
        raise MetricError("ols_slope undefined for zero x-variance")
    return float(np.dot(xc, ys - ys.mean())) / sxx


def compute_metric_report(texts, tokenizer, metrics=METRIC_NAMES,
                          embeddings: EmbeddingMatrix | None = None,
                          ngram_orders=(1, 2, 3), dataset: str = "dataset",
                          component: str = "response",
                          bleu_sample_limit: int = SELF_BLEU_SAMPLE_LIMIT,
                          bleu_seed: int = 0) -> dict:
    """Compute the requested metrics over one dataset component."""
    unknown = [m for m in metrics if m not in METRIC_NAMES]
    if unknown:
        raise MetricError(f"unknown metrics {unknown}; valid: {METRIC_NAMES}")
    values: dict[str, float] = {}
    if "nr" in metrics:
        for n in ngram_orders:
            values[f"nr_{n}"] = ngram_ratio(texts, tokenizer, n)
    if "ed" in metrics:
        if embeddings is None:
            raise MetricError("embedding distance requested but no embeddings supplied")
        values["ed"] = embedding_distance(embeddings)
        values["ed_literal"] = embedding_distance(embeddings, literal_normalizer=True)
    if "sl" in metrics:
        values["sl"] = mean_sequence_length(texts, tokenizer)
    if "cr" in metrics:
        values["cr"] = compression_ratio(texts)
    if "bleu" in metrics:
        values["bleu"] = self_bleu(texts, tokenizer, sample_limit=bleu_sample_limit,
                                   seed=bleu_seed)
    if "ie" in metrics:
        values["ie"] = information_entropy(texts, tokenizer)
    if "kurt" in metrics:
        values["kurt"] = distribution_kurtosis(texts, tokenizer)
    if "gini" in metrics:
        values["gini"] = gini_index(texts, tokenizer)

    _check_ranges(values)
    digest = hashlib.sha256("\x1e".join(texts).encode("utf-8")).hexdigest()
    return {
        "dataset": dataset,
        "component": component,
        "n_texts": len(texts),
        "values": values,
        "provenance": {
            "tokenizer_fingerprint": tokenizer.fingerprint,
            "tokenizer_kind": tokenizer.kind,
            "dataset_digest": digest,
            "entropy_log_base": "e",
            "compression": compression_codec(),
            "self_bleu": {"max_n": SELF_BLEU_MAX_N, "epsilon": SELF_BLEU_EPS,
                          "sample_limit": bleu_sample_limit, "seed": bleu_seed,
                          "sampled": len(texts) - 1 > bleu_sample_limit},
        },
    }


def _check_ranges(values: dict[str, float]) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise MetricError(f"metric {name} is not finite: {v}")
        if name.startswith("nr_") and not 0.0 < v <= 1.0:
            raise MetricError(f"NR out of (0,1]: {v}")
        if name == "bleu" and not 0.0 <= v <= 1.0 + 1e-12:
            raise MetricError(f"Self-BLEU out of [0,1]: {v}")
        if name == "ie" and v < 0:
            raise MetricError(f"IE negative: {v}")
        if name == "gini" and not 0.0 <= v < 1.0:
            raise MetricError(f"Gini out of [0,1): {v}")
        if name in ("cr", "sl") and v <= 0:
            raise MetricError(f"{name} must be positive: {v}")


def save_metric_report(report: dict, json_path, csv_path=None) -> None:
    Path(json_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    if csv_path is not None:
        with Path(csv_path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dataset", "component", "metric", "value"])
            for name in sorted(report["values"]):
                writer.writerow([report["dataset"], report["component"], name,
                                 repr(report["values"][name])])


def correlation_report(reports: list[dict], scores: dict[str, float]) -> dict:
    """Join metric reports with external scores by dataset id.

    Emits Pearson coefficients per metric against the scores, and per
    (strategy, component) OLS slopes of score vs diversity_percent with the
    conventional x10^-2 rendering.
    """
    missing = sorted(r["dataset"] for r in reports if r["dataset"] not in scores)
    if missing:
        raise MetricError(f"scores missing for datasets: {missing}")

    by_metric: dict[str, list[tuple[float, float]]] = {}
    for r in reports:
        y = scores[r["dataset"]]
        for name, v in r["values"].items():
            by_metric.setdefault(name, []).append((v, y))
    pearson_by_metric = {}
    for name, pairs in sorted(by_metric.items()):
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        try:
            pearson_by_metric[name] = pearson(xs, ys)
        except MetricError as exc:
            log.warning("skipping Pearson for %s: %s", name, exc)

    groups: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for r in reports:
        strategy = r.get("strategy")
        percent = r.get("diversity_percent")
        if strategy is None or percent is None:
            continue
        groups.setdefault((strategy, r["component"]), []).append(
            (percent, scores[r["dataset"]]))
    slopes = {}
    for (strategy, component), pairs in sorted(groups.items()):
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        try:
            slope = ols_slope(xs, ys)
        except MetricError as exc:
            log.warning("skipping slope for %s/%s: %s", strategy, component, exc)
            continue
        slopes[f"{strategy}/{component}"] = {
            "slope": slope, "slope_x100": slope * 100.0, "points": len(pairs)}

    return {"pearson": pearson_by_metric, "slopes": slopes,
            "n_reports": len(reports)}


def save_correlation_report(report: dict, json_path, csv_path=None) -> None:
    Path(json_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    if csv_path is not None:
        with Path(csv_path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "key", "value"])
            for name, v in sorted(report["pearson"].items()):
                writer.writerow(["pearson", name, repr(v)])
            for key, entry in sorted(report["slopes"].items()):
                writer.writerow(["slope_x100", key, repr(entry["slope_x100"])])
