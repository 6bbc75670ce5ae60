"""Shared fixtures and synthetic data generators."""

import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from divforge.corpus import Corpus, Sample
from divforge.tokenization import WhitespaceTokenizer


def make_corpus(records, provenance=None):
    samples = [Sample(str(i), ins, res) for i, (ins, res) in enumerate(records)]
    return Corpus(samples, provenance or {})


def write_jsonl(path: Path, rows):
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_embeddings_jsonl(path: Path, ids, vectors):
    with path.open("w", encoding="utf-8") as fh:
        for sid, vec in zip(ids, vectors):
            fh.write(json.dumps({"id": sid, "vector": [float(v) for v in vec]}) + "\n")


def synthetic_texts(rng, n_texts, vocab, min_len=5, max_len=30, zipf_a=1.3):
    """Texts whose tokens follow a rough Zipf law over the given vocabulary."""
    ranks = np.arange(1, len(vocab) + 1, dtype=np.float64)
    probs = ranks ** (-zipf_a)
    probs /= probs.sum()
    texts = []
    for _ in range(n_texts):
        length = int(rng.integers(min_len, max_len + 1))
        idx = rng.choice(len(vocab), size=length, p=probs)
        texts.append(" ".join(vocab[i] for i in idx))
    return texts


def banded_corpus(rng, n_samples=300, n_mid=40, mid_per_sample=(2, 8),
                  shared=("the", "and", "of")):
    """Corpus whose responses mix a handful of very frequent filler words with
    a controlled pool of mid-frequency marker tokens; instructions are short
    and bland. Mid tokens land in the 10..500 band by construction."""
    mid_vocab = [f"mid{i:03d}" for i in range(n_mid)]
    # walk the mid vocab so every marker appears often enough to clear low band
    assignments = []
    for s in range(n_samples):
        k = int(rng.integers(mid_per_sample[0], mid_per_sample[1] + 1))
        cols = rng.choice(n_mid, size=min(k, n_mid), replace=False)
        assignments.append(sorted(cols.tolist()))
    # top up rare mid tokens to reach the low_max floor
    counts = Counter(c for cols in assignments for c in cols)
    for c in range(n_mid):
        while counts[c] < 12:
            s = int(rng.integers(0, n_samples))
            if c not in assignments[s]:
                assignments[s].append(c)
                counts[c] += 1
    records = []
    for s, cols in enumerate(assignments):
        fillers = " ".join(rng.choice(shared, size=6))
        markers = " ".join(mid_vocab[c] for c in sorted(cols))
        records.append((f"do task {s}", f"{fillers} {markers}"))
    return make_corpus(records)


def train_bpe(text: str, n_merges: int):
    """Tiny reference BPE trainer for fixtures: repeatedly merge the most
    frequent adjacent pair (ties: lexicographic), recording merges in creation
    order so the table is well-formed."""
    symbols = list(text)
    vocab = {ch: i for i, ch in enumerate(sorted(set(symbols)))}
    merges = []
    for _ in range(n_merges):
        pairs = Counter(zip(symbols, symbols[1:]))
        if not pairs:
            break
        # deterministic: highest count, then lexicographically smallest pair
        top = max(pairs.values())
        left, right = min(p for p, c in pairs.items() if c == top)
        merged = left + right
        if merged not in vocab:
            vocab[merged] = len(vocab)
        merges.append([left, right])
        out = []
        i = 0
        while i < len(symbols):
            if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                out.append(merged)
                i += 2
            else:
                out.append(symbols[i])
                i += 1
        symbols = out
    return {"vocab": vocab, "merges": merges}


@pytest.fixture
def ws_tok():
    return WhitespaceTokenizer()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
