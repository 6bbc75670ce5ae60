"""Pluggable tokenizers, corpus-wide token statistics, and frequency banding.

Tokens that occur more than ``high_min`` times across the corpus component are
"high band" (function words, affixes), tokens below ``low_max`` are "low band"
(names, typos), and the inclusive range in between is the "mid band" -- the
important tokens that drive the microscopic strategy.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus

log = logging.getLogger(__name__)

DEFAULT_LOW_MAX = 10
DEFAULT_HIGH_MIN = 500

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


class TokenizerError(ValueError):
    pass


class WhitespaceTokenizer:
    """Word segmentation: lowercase, split on whitespace and punctuation."""

    kind = "whitespace"

    def __init__(self):
        self.fingerprint = hashlib.sha256(b"divforge-whitespace-lower-v1").hexdigest()

    def encode(self, text: str) -> list[str]:
        return _WORD_RE.findall(text.lower())

    def decode(self, tokens: list[str]) -> str:
        return " ".join(tokens)


class BpeTokenizer:
    """Byte-pair tokenizer driven by a definition file: a vocabulary plus an
    ordered merge-rule list. The alphabet is unicode characters (including
    spaces), so decoding is exact surface reconstruction.
    """

    kind = "bpe_file"

    def __init__(self, vocab: dict[str, int], merges: list[tuple[str, str]],
                 fingerprint: str | None = None):
        self.vocab = dict(vocab)
        self.merges = [tuple(m) for m in merges]
        self._validate()
        self.rank = {pair: i for i, pair in enumerate(self.merges)}
        self.surface = {i: tok for tok, i in self.vocab.items()}
        if fingerprint is None:
            canon = json.dumps({"vocab": self.vocab, "merges": self.merges},
                               sort_keys=True, ensure_ascii=False)
            fingerprint = hashlib.sha256(canon.encode("utf-8")).hexdigest()
        self.fingerprint = fingerprint

    def _validate(self) -> None:
        if not self.vocab:
            raise TokenizerError("empty vocabulary")
        ids = list(self.vocab.values())
        if len(set(ids)) != len(ids):
            raise TokenizerError("vocabulary ids are not unique")
        if any(not isinstance(t, str) or not isinstance(i, int) for t, i in self.vocab.items()):
            raise TokenizerError("vocabulary must map strings to integer ids")
        for pair in self.merges:
            if len(pair) != 2 or not all(isinstance(p, str) for p in pair):
                raise TokenizerError(f"bad merge rule {pair!r}")
            left, right = pair
            if left not in self.vocab or right not in self.vocab:
                raise TokenizerError(f"merge rule {pair!r} references unknown symbols")
            if left + right not in self.vocab:
                raise TokenizerError(f"merge result {left + right!r} missing from vocabulary")

    @classmethod
    def from_file(cls, path: str | Path) -> "BpeTokenizer":
        path = Path(path)
        raw = path.read_bytes()
        try:
            doc = json.loads(raw.decode("utf-8"))
            vocab = doc["vocab"]
            merges = [tuple(m) for m in doc["merges"]]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TokenizerError(f"malformed tokenizer definition {path}: {exc}") from exc
        return cls(vocab, merges, fingerprint=hashlib.sha256(raw).hexdigest())

    def encode(self, text: str) -> list[int]:
        if not text:
            return []
        symbols = list(text)
        while len(symbols) >= 2:
            best = None
            for pair in zip(symbols, symbols[1:]):
                r = self.rank.get(pair)
                if r is not None and (best is None or r < best[0]):
                    best = (r, pair)
            if best is None:
                break
            left, right = best[1]
            merged = left + right
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
        try:
            return [self.vocab[s] for s in symbols]
        except KeyError as exc:
            raise TokenizerError(f"symbol {exc.args[0]!r} not in vocabulary") from exc

    def decode(self, ids: list[int]) -> str:
        try:
            return "".join(self.surface[i] for i in ids)
        except KeyError as exc:
            raise TokenizerError(f"unknown token id {exc.args[0]}") from exc


def load_tokenizer(source: str | Path):
    """"whitespace" or a path to a BPE definition file."""
    if str(source) == "whitespace":
        return WhitespaceTokenizer()
    return BpeTokenizer.from_file(source)


@dataclass
class FrequencyTable:
    """Token -> occurrence count over one corpus component, with banding."""

    counts: dict
    component: str
    tokenizer_fingerprint: str
    low_max: int = DEFAULT_LOW_MAX
    high_min: int = DEFAULT_HIGH_MIN
    bands: dict = field(init=False)

    def __post_init__(self):
        self.bands = {t: self.band_of(c) for t, c in self.counts.items()}

    def band_of(self, count: int) -> str:
        if count > self.high_min:
            return "high"
        if count < self.low_max:
            return "low"
        return "mid"

    def band(self, token) -> str:
        return self.bands[token]

    def mid_tokens(self) -> set:
        return {t for t, b in self.bands.items() if b == "mid"}

    def total(self) -> int:
        return sum(self.counts.values())

    def band_sizes(self) -> dict[str, int]:
        sizes = {"high": 0, "mid": 0, "low": 0}
        for b in self.bands.values():
            sizes[b] += 1
        return sizes

    def to_csv(self, path: str | Path, surfaces: dict | None = None) -> None:
        """CSV export (token, count, band), sorted by descending count then token."""
        rows = sorted(self.counts.items(), key=lambda kv: (-kv[1], str(kv[0])))
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["token", "count", "band"])
            for tok, cnt in rows:
                name = surfaces[tok] if surfaces and tok in surfaces else tok
                writer.writerow([name, cnt, self.bands[tok]])


def build_frequency_table(corpus: Corpus, component: str, tokenizer,
                          low_max: int = DEFAULT_LOW_MAX,
                          high_min: int = DEFAULT_HIGH_MIN) -> FrequencyTable:
    counts: Counter = Counter()
    for sample in corpus:
        counts.update(tokenizer.encode(sample.text(component)))
    return FrequencyTable(dict(counts), component, tokenizer.fingerprint,
                          low_max=low_max, high_min=high_min)


class TokenSetIndex:
    """Per-sample sets of distinct mid-band tokens plus the inverted index.

    Tokens are remapped to dense integer columns; ``tokens[col]`` recovers the
    original token key. Rows follow corpus order.
    """

    def __init__(self, sample_ids: list[str], rows: list[np.ndarray],
                 tokens: list, component: str, tokenizer_fingerprint: str):
        self.sample_ids = list(sample_ids)
        self.rows = rows
        self.tokens = list(tokens)
        self.component = component
        self.tokenizer_fingerprint = tokenizer_fingerprint
        self.n_tokens = len(tokens)
        inv: list[list[int]] = [[] for _ in range(self.n_tokens)]
        for r, cols in enumerate(rows):
            for c in cols.tolist():
                inv[c].append(r)
        self.inverted = [np.asarray(v, dtype=np.int32) for v in inv]
        self._matrix = None
        # rank[r] = position of sample_ids[r] in lexicographic id order;
        # all tie-breaking uses this so results don't depend on row order.
        order = sorted(range(len(sample_ids)), key=lambda r: self.sample_ids[r])
        self.id_rank = np.empty(len(sample_ids), dtype=np.int64)
        for pos, r in enumerate(order):
            self.id_rank[r] = pos

    def __len__(self) -> int:
        return len(self.sample_ids)

    def token_set(self, sample_id: str):
        r = self.sample_ids.index(sample_id)
        return {self.tokens[c] for c in self.rows[r].tolist()}

    def as_dict(self) -> dict[str, set]:
        return {sid: {self.tokens[c] for c in self.rows[r].tolist()}
                for r, sid in enumerate(self.sample_ids)}

    def samples_with(self, token) -> set[str]:
        col = self.tokens.index(token)
        return {self.sample_ids[r] for r in self.inverted[col].tolist()}

    def mean_set_size(self) -> float:
        if not self.rows:
            return 0.0
        return float(np.mean([len(r) for r in self.rows]))

    def matrix(self):
        """Sparse boolean incidence matrix (samples x tokens), CSR. Cached."""
        if self._matrix is None:
            from scipy import sparse
            indptr = np.zeros(len(self.rows) + 1, dtype=np.int64)
            for r, cols in enumerate(self.rows):
                indptr[r + 1] = indptr[r] + len(cols)
            indices = (np.concatenate(self.rows) if self.rows and indptr[-1] > 0
                       else np.empty(0, dtype=np.int32))
            data = np.ones(indptr[-1], dtype=np.float64)
            self._matrix = sparse.csr_matrix((data, indices, indptr),
                                             shape=(len(self.rows), self.n_tokens))
        return self._matrix


def build_token_set_index(corpus: Corpus, component: str, table: FrequencyTable,
                          tokenizer) -> TokenSetIndex:
    if table.tokenizer_fingerprint != tokenizer.fingerprint:
        raise TokenizerError(
            "frequency table was built with a different tokenizer "
            f"({table.tokenizer_fingerprint[:12]} != {tokenizer.fingerprint[:12]})")
    if table.component != component:
        raise TokenizerError(
            f"frequency table covers component {table.component!r}, requested {component!r}")
    mid = table.mid_tokens()
    tokens = sorted(mid, key=str)
    col = {t: i for i, t in enumerate(tokens)}
    rows = []
    for sample in corpus:
        cols = {col[t] for t in tokenizer.encode(sample.text(component)) if t in col}
        rows.append(np.asarray(sorted(cols), dtype=np.int32))
    return TokenSetIndex(corpus.ids(), rows, tokens, component, tokenizer.fingerprint)
