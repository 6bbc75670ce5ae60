"""Corpus ingestion, cleaning, persistence, and quota-balanced sampling."""

from __future__ import annotations

import hashlib
import json
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

COMPONENTS = ("instruction", "response")

# Generator family recorded in every manifest so a series can be rebuilt
# bit-identically on another machine.
RNG_KIND = "numpy-pcg64"


class CorpusError(ValueError):
    """Unusable input: empty corpus, infeasible selection, bad manifest."""


@dataclass(frozen=True)
class Sample:
    id: str
    instruction: str
    response: str

    def text(self, component: str) -> str:
        if component == "instruction":
            return self.instruction
        if component == "response":
            return self.response
        raise ValueError(f"unknown component {component!r}, expected one of {COMPONENTS}")


@dataclass
class IngestStats:
    lines_read: int = 0
    malformed: int = 0
    invalid_encoding: int = 0
    duplicate_pairs: int = 0
    duplicate_ids: int = 0
    kept: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class Corpus:
    """Ordered, deduplicated collection of samples. Immutable after construction."""

    def __init__(self, samples: list[Sample], provenance: dict | None = None):
        self.samples = list(samples)
        self.provenance = dict(provenance or {})
        self._by_id: dict[str, Sample] = {}
        for s in self.samples:
            if s.id in self._by_id:
                raise CorpusError(f"duplicate sample id {s.id!r}")
            if not s.id:
                raise CorpusError("empty sample id")
            self._by_id[s.id] = s

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, sample_id: str) -> Sample:
        return self._by_id[sample_id]

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._by_id

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def texts(self, component: str) -> list[str]:
        return [s.text(component) for s in self.samples]

    def subset(self, sample_ids: list[str]) -> "Corpus":
        """New corpus holding the given ids, in the given order."""
        missing = [i for i in sample_ids if i not in self._by_id]
        if missing:
            raise CorpusError(f"{len(missing)} ids not in corpus, e.g. {missing[:3]}")
        return Corpus([self._by_id[i] for i in sample_ids],
                      {"parent_digest": self.provenance.get("source_digest")})


def _clean_text(text: str) -> str:
    return unicodedata.normalize("NFC", text).strip()


def _valid_encoding(text: str) -> bool:
    # Reject control characters other than tab and newline (includes \r).
    return all(ch in "\t\n" or unicodedata.category(ch) != "Cc" for ch in text)


def ingest(path: str | Path) -> Corpus:
    """Load a JSONL file of {"instruction", "response", optional "id"} records.

    Records with invalid encoding or malformed JSON are dropped (counted),
    exact duplicate (instruction, response) pairs are removed, and ids are
    assigned where absent. Raises CorpusError if nothing survives.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc

    stats = IngestStats()
    seen_pairs: set[tuple[str, str]] = set()
    seen_ids: set[str] = set()
    kept: list[tuple[str | None, str, str]] = []

    for line in raw.split(b"\n"):
        if not line.strip():
            continue
        stats.lines_read += 1
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError:
            stats.invalid_encoding += 1
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError:
            stats.malformed += 1
            log.warning("skipping malformed record at line %d", stats.lines_read)
            continue
        if not isinstance(rec, dict) or not isinstance(rec.get("instruction"), str) \
                or not isinstance(rec.get("response"), str):
            stats.malformed += 1
            log.warning("skipping record without string instruction/response at line %d",
                        stats.lines_read)
            continue
        instruction = _clean_text(rec["instruction"])
        response = _clean_text(rec["response"])
        if not (_valid_encoding(instruction) and _valid_encoding(response)):
            stats.invalid_encoding += 1
            continue
        if (instruction, response) in seen_pairs:
            stats.duplicate_pairs += 1
            continue
        seen_pairs.add((instruction, response))
        explicit = rec.get("id")
        sid = str(explicit) if explicit is not None else None
        if sid is not None:
            if sid in seen_ids:
                stats.duplicate_ids += 1
                log.warning("skipping record with duplicate id %r", sid)
                continue
            seen_ids.add(sid)
        kept.append((sid, instruction, response))

    if not kept:
        raise CorpusError(f"no samples survived ingest of {path}")

    samples = []
    for ordinal, (sid, instruction, response) in enumerate(kept):
        if sid is None:
            sid = f"{ordinal:08d}"
            if sid in seen_ids:
                raise CorpusError(
                    f"assigned ordinal id {sid!r} collides with an explicit id in the input")
        samples.append(Sample(sid, instruction, response))
    stats.kept = len(samples)

    provenance = {
        "source_path": str(path),
        "source_digest": hashlib.sha256(raw).hexdigest(),
        "cleaning": {
            "unicode_normalization": "NFC",
            "whitespace": "strip",
            "dedup_key": "instruction+response",
            "encoding_filter": "utf-8 strict, control chars other than tab/newline rejected",
        },
        "drops": stats.as_dict(),
    }
    return Corpus(samples, provenance)


def export_jsonl(corpus: Corpus, path: str | Path) -> None:
    """Write samples in the ingest format (one JSON object per line)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in corpus:
            fh.write(json.dumps(
                {"id": s.id, "instruction": s.instruction, "response": s.response},
                ensure_ascii=False) + "\n")


def save_store(corpus: Corpus, directory: str | Path) -> None:
    """Persist a corpus as a directory: payload.jsonl + manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    export_jsonl(corpus, directory / "payload.jsonl")
    manifest = dict(corpus.provenance)
    manifest["count"] = len(corpus)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_store(directory: str | Path) -> Corpus:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    payload_path = directory / "payload.jsonl"
    if not manifest_path.is_file() or not payload_path.is_file():
        raise OSError(f"{directory} is not a corpus store (need payload.jsonl + manifest.json)")
    provenance = json.loads(manifest_path.read_text(encoding="utf-8"))
    samples = []
    with payload_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples.append(Sample(str(rec["id"]), rec["instruction"], rec["response"]))
    if not samples:
        raise CorpusError(f"empty corpus store {directory}")
    return Corpus(samples, provenance)


def _canonical_class_order(classes: list[frozenset]) -> list[int]:
    """Order classes by descending size, then by sorted member ids.

    Depends on class content only, so selection is invariant to the order
    classes are supplied in.
    """
    keys = [(-len(c), tuple(sorted(c))) for c in classes]
    return sorted(range(len(classes)), key=lambda i: keys[i])


def uniform_select(classes: list, n: int, seed: int) -> list[str]:
    """Select exactly n distinct ids, balanced across classes.

    Per-class quotas are floor(n/k) or ceil(n/k); a class smaller than its
    quota contributes all members and the deficit is redistributed
    round-robin over the remaining classes in descending-size order.
    Within-class draws are uniform under the seed. Overlapping classes are
    handled by never selecting an id twice (the quota is refilled from the
    class pool or, if exhausted, from later classes).
    """
    if not classes:
        raise CorpusError("empty class list")
    sets = [frozenset(c) for c in classes]
    union = set().union(*sets)
    if len(union) < n:
        raise CorpusError(f"classes hold {len(union)} distinct ids, need {n}")
    if n < 0:
        raise CorpusError("n must be non-negative")

    order = _canonical_class_order(sets)
    k = len(sets)
    sizes = [len(sets[i]) for i in order]

    base, rem = divmod(n, k)
    quotas = [base + (1 if pos < rem else 0) for pos in range(k)]
    quotas = [min(q, s) for q, s in zip(quotas, sizes)]
    deficit = n - sum(quotas)
    while deficit > 0:
        progressed = False
        for pos in range(k):
            if deficit == 0:
                break
            if quotas[pos] < sizes[pos]:
                quotas[pos] += 1
                deficit -= 1
                progressed = True
        if not progressed:
            break  # classes overlap; the draw stage tops up across classes

    rng = np.random.default_rng(seed)
    selected: set[str] = set()
    out: list[str] = []

    def draw(pos: int, want: int) -> int:
        eligible = sorted(sets[order[pos]] - selected)
        take = min(want, len(eligible))
        if take > 0:
            idx = rng.choice(len(eligible), size=take, replace=False)
            for j in sorted(idx.tolist()):
                sid = eligible[j]
                selected.add(sid)
                out.append(sid)
        return take

    for pos in range(k):
        draw(pos, quotas[pos])
    # Top-up rounds: overlap may have starved some quotas.
    while len(out) < n:
        progressed = False
        for pos in range(k):
            if len(out) == n:
                break
            if draw(pos, 1):
                progressed = True
        if not progressed:
            raise CorpusError("selection infeasible despite sufficient union")  # pragma: no cover
    return out


def length_window_filter(corpus: Corpus, component: str, lo: int, hi: int | None,
                         tokenizer) -> set[str]:
    """Ids whose component token length L satisfies lo <= L <= hi (hi=None: unbounded)."""
    if hi is not None and lo > hi:
        raise CorpusError(f"invalid window [{lo}, {hi}]")
    keep = set()
    for s in corpus:
        length = len(tokenizer.encode(s.text(component)))
        if length >= lo and (hi is None or length <= hi):
            keep.add(s.id)
    return keep


@dataclass
class SeriesPoint:
    diversity_value: float
    diversity_percent: float
    sample_ids: list[str] = field(default_factory=list)


@dataclass
class SeriesManifest:
    """Reproducibility record for one diversity series {D_k1 .. D_kM}."""

    strategy: str
    component: str
    size: int
    points: list[SeriesPoint]
    seed: int
    parameters: dict

    def validate(self, corpus: Corpus | None = None) -> None:
        if self.strategy not in ("macro", "meso", "micro"):
            raise CorpusError(f"unknown strategy {self.strategy!r}")
        if self.component not in COMPONENTS:
            raise CorpusError(f"unknown component {self.component!r}")
        for p in self.points:
            if len(p.sample_ids) != self.size:
                raise CorpusError(
                    f"point k={p.diversity_value} has {len(p.sample_ids)} ids, expected {self.size}")
            if len(set(p.sample_ids)) != len(p.sample_ids):
                raise CorpusError(f"point k={p.diversity_value} has duplicate ids")
            if corpus is not None:
                missing = [i for i in p.sample_ids if i not in corpus]
                if missing:
                    raise CorpusError(f"point k={p.diversity_value}: ids not in corpus: {missing[:3]}")
        pcts = [p.diversity_percent for p in self.points]
        if len(pcts) >= 2:
            if any(b < a for a, b in zip(pcts, pcts[1:])):
                raise CorpusError(f"diversity_percent not monotone: {pcts}")
            if abs(pcts[0]) > 1e-9 or abs(pcts[-1] - 100.0) > 1e-9:
                raise CorpusError(f"diversity_percent endpoints must be 0 and 100, got {pcts}")

    def to_json(self) -> str:
        doc = {
            "strategy": self.strategy,
            "component": self.component,
            "size": self.size,
            "points": [
                {
                    "diversity_value": p.diversity_value,
                    "diversity_percent": p.diversity_percent,
                    "sample_ids": p.sample_ids,
                }
                for p in self.points
            ],
            "seed": self.seed,
            "parameters": self.parameters,
        }
        return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SeriesManifest":
        doc = json.loads(text)
        points = [SeriesPoint(p["diversity_value"], p["diversity_percent"],
                              list(p["sample_ids"])) for p in doc["points"]]
        return cls(doc["strategy"], doc["component"], doc["size"], points,
                   doc["seed"], doc["parameters"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SeriesManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
