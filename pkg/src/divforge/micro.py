"""Microscopic (token-level) diversity control.

Two-stage construction: inverse greedy pruning shrinks the covered mid-band
token set down to a target size by repeatedly discarding the sample that
contributes the most exclusive tokens, then token-aware sampling draws a
fixed-size subset that first covers every remaining token and then favours
samples whose tokens are still under-represented.
"""

from __future__ import annotations

import heapq
import logging

import numpy as np

from .corpus import Corpus, CorpusError, RNG_KIND, SeriesManifest, SeriesPoint
from .tokenization import (DEFAULT_HIGH_MIN, DEFAULT_LOW_MAX, TokenSetIndex,
                           build_frequency_table, build_token_set_index)

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 1.0
DEFAULT_BATCH = 64


class PruneTrajectory:
    """Greedy removal order with coverage after each removal.

    The argmax step never looks at the target K, so one trajectory serves
    every prune target: pruning to K is the shortest prefix of removals whose
    trailing coverage is <= K.
    """

    def __init__(self, index: TokenSetIndex, order: list[int],
                 coverage_after: list[int], stats: dict):
        self.index = index
        self.order = order
        self.coverage_after = coverage_after
        self.initial_coverage = int(sum(1 for inv in index.inverted if len(inv) > 0))
        self.stats = stats

    def prefix_for_target(self, k: int) -> int:
        """Number of removals needed to reach coverage <= k (capped at the
        trajectory length when k is infeasible)."""
        if self.initial_coverage <= k:
            return 0
        for steps, cov in enumerate(self.coverage_after, start=1):
            if cov <= k:
                return steps
        return len(self.order)

    def state_after(self, steps: int) -> tuple[np.ndarray, np.ndarray]:
        """(survivor row mask, covered token-column mask) after `steps` removals."""
        alive = np.ones(len(self.index), dtype=bool)
        alive[self.order[:steps]] = False
        tok_count = np.zeros(self.index.n_tokens, dtype=np.int64)
        for r in np.flatnonzero(alive):
            tok_count[self.index.rows[r]] += 1
        return alive, tok_count > 0


def prune_trajectory(index: TokenSetIndex, min_survivors: int = 0) -> PruneTrajectory:
    """Compute the full inverse-greedy removal order.

    Each step removes the survivor with the largest count of tokens exclusive
    to it (Unique), ties broken by smallest sample id. Exclusive counts are
    maintained incrementally: a token->survivor-count array plus a lazy
    max-heap updated only when a token drops to a single owner.
    """
    n = len(index)
    rank = index.id_rank
    tok_count = np.array([len(inv) for inv in index.inverted], dtype=np.int64)
    unique = np.zeros(n, dtype=np.int64)
    for col in np.flatnonzero(tok_count == 1):
        unique[index.inverted[col][0]] += 1
    covered = int(np.sum(tok_count > 0))
    alive = np.ones(n, dtype=bool)

    stats = {"removals": 0, "heap_pushes": 0, "heap_pops": 0,
             "owner_scan_elems": 0, "token_updates": 0, "full_recounts": 0}

    heap = [(-int(unique[r]), int(rank[r]), r) for r in range(n)]
    heapq.heapify(heap)
    stats["heap_pushes"] += n

    order: list[int] = []
    coverage_after: list[int] = []
    survivors = n
    while survivors > min_survivors:
        while True:
            neg_u, _, r = heapq.heappop(heap)
            stats["heap_pops"] += 1
            if alive[r] and -neg_u == unique[r]:
                break
        alive[r] = False
        survivors -= 1
        for col in index.rows[r].tolist():
            stats["token_updates"] += 1
            tok_count[col] -= 1
            c = tok_count[col]
            if c == 0:
                covered -= 1
            elif c == 1:
                # find the lone surviving owner; each token passes through
                # count==1 at most once, so total scan cost is bounded by the
                # index size
                owner = -1
                for cand in index.inverted[col].tolist():
                    stats["owner_scan_elems"] += 1
                    if alive[cand]:
                        owner = cand
                        break
                unique[owner] += 1
                heapq.heappush(heap, (-int(unique[owner]), int(rank[owner]), owner))
                stats["heap_pushes"] += 1
        order.append(r)
        coverage_after.append(covered)
        stats["removals"] += 1
    return PruneTrajectory(index, order, coverage_after, stats)


def inverse_greedy_prune(index: TokenSetIndex, k: int) -> tuple[set[str], set]:
    """Prune until at most k distinct mid-band tokens remain covered.

    Returns (surviving sample ids, covered token set). A target at or above
    the initial coverage leaves the input unchanged; an unreachable target
    empties the input.
    """
    if k < 0:
        raise CorpusError("token target must be non-negative")
    traj = prune_trajectory(index)
    steps = traj.prefix_for_target(k)
    alive, covered = traj.state_after(steps)
    ids = {index.sample_ids[r] for r in np.flatnonzero(alive)}
    tokens = {index.tokens[c] for c in np.flatnonzero(covered)}
    return ids, tokens


def _lazy_greedy_pick(heap: list, current, alive: np.ndarray, rank: np.ndarray) -> int:
    """Pop the entry with the best (key, rank); keys may be stale, so verify
    against `current` and reinsert until the top is provably optimal."""
    while True:
        key, rk, r = heapq.heappop(heap)
        if not alive[r]:
            continue
        fresh = current(r)
        if fresh != key:
            heapq.heappush(heap, (fresh, rk, r))
            continue
        if not heap or (key, rk) <= (heap[0][0], heap[0][1]):
            return r
        heapq.heappush(heap, (key, rk, r))


def token_aware_sample(index: TokenSetIndex, candidate_ids, candidate_tokens,
                       n: int, alpha: float = DEFAULT_ALPHA, batch: int = DEFAULT_BATCH,
                       seed: int | None = None) -> list[str]:
    """Select n samples from the candidates, coverage-first then score-ranked.

    Coverage phase: while any candidate token is uncovered, admit the single
    sample covering the most uncovered tokens (ties: smallest id). Score
    phase: rank remaining samples by sum over their tokens of
    1/(Counts[t]+alpha) and admit the top min(batch, n-|S|) per round,
    updating Counts after every admission. The procedure is deterministic;
    `seed` is accepted for manifest plumbing only.
    """
    del seed  # deterministic by construction (documented tie rules)
    if n < 1:
        raise CorpusError("target size must be >= 1")
    if alpha <= 0:
        raise CorpusError("alpha must be positive")
    if batch < 1:
        raise CorpusError("batch size must be >= 1")

    id_to_row = {sid: r for r, sid in enumerate(index.sample_ids)}
    cand_rows = np.asarray(sorted(id_to_row[s] for s in candidate_ids), dtype=np.int64)
    if n > len(cand_rows):
        log.warning("target size %d exceeds candidate pool %d; returning all",
                    n, len(cand_rows))
        n = len(cand_rows)

    token_pos = {t: i for i, t in enumerate(index.tokens)}
    tmask = np.zeros(index.n_tokens, dtype=bool)
    for t in candidate_tokens:
        tmask[token_pos[t]] = True

    rank = index.id_rank
    alive = np.zeros(len(index), dtype=bool)
    alive[cand_rows] = True
    counts = np.zeros(index.n_tokens, dtype=np.int64)
    uncovered = tmask.copy()
    uncovered_left = int(uncovered.sum())
    selected: list[int] = []

    def admit(r: int) -> None:
        nonlocal uncovered_left
        alive[r] = False
        selected.append(r)
        cols = index.rows[r]
        counts[cols] += 1
        newly = cols[uncovered[cols]]
        uncovered[newly] = False
        uncovered_left -= len(newly)

    # --- coverage phase: one admission per iteration, lazy greedy ---
    def gain(r: int) -> int:
        return -int(uncovered[index.rows[r]].sum())

    gains0 = index.matrix() @ uncovered.astype(np.float64)
    heap = [(-int(gains0[r]), int(rank[r]), r) for r in cand_rows.tolist()]
    heapq.heapify(heap)
    while len(selected) < n and uncovered_left > 0 and heap:
        r = _lazy_greedy_pick(heap, gain, alive, rank)
        admit(r)

    # --- score phase: batched, scores computed against pre-batch counts ---
    if len(selected) < n:
        mat = index.matrix()[cand_rows]
        cand_rank = rank[cand_rows]
        cand_alive = alive[cand_rows]
        while len(selected) < n and cand_alive.any():
            weights = np.where(tmask, 1.0 / (counts + alpha), 0.0)
            scores = mat @ weights
            scores[~cand_alive] = -np.inf
            k = min(batch, n - len(selected), int(cand_alive.sum()))
            order = np.lexsort((cand_rank, -scores))[:k]
            for j in order.tolist():
                r = int(cand_rows[j])
                admit(r)
                cand_alive[j] = False

    return [index.sample_ids[r] for r in selected]


def min_coverage_select(index: TokenSetIndex, n: int) -> list[str]:
    """Greedily admit the sample adding the fewest new mid-band tokens until
    n samples are chosen (ties: smallest id). Anchors the series lower bound."""
    if n > len(index):
        raise CorpusError(f"target {n} exceeds corpus size {len(index)}")
    rank = index.id_rank
    covered = np.zeros(index.n_tokens, dtype=bool)
    gains = np.array([len(r) for r in index.rows], dtype=np.int64)
    alive = np.ones(len(index), dtype=bool)
    # New-token counts only decrease, so pushing on every decrease keeps a
    # fresh entry for the true minimum in the heap.
    heap = [(int(gains[r]), int(rank[r]), r) for r in range(len(index))]
    heapq.heapify(heap)
    selected: list[int] = []
    while len(selected) < n:
        while True:
            g, rk, r = heapq.heappop(heap)
            if alive[r] and g == gains[r]:
                break
        alive[r] = False
        selected.append(r)
        newly = index.rows[r][~covered[index.rows[r]]]
        covered[newly] = True
        for col in newly.tolist():
            for other in index.inverted[col].tolist():
                if alive[other]:
                    gains[other] -= 1
                    heapq.heappush(heap, (int(gains[other]), int(rank[other]), other))
    return [index.sample_ids[r] for r in selected]


def distinct_tokens_of(index: TokenSetIndex, sample_ids) -> int:
    """Recount of distinct mid-band tokens covered by the given samples."""
    id_to_row = {sid: r for r, sid in enumerate(index.sample_ids)}
    mask = np.zeros(index.n_tokens, dtype=bool)
    for sid in sample_ids:
        mask[index.rows[id_to_row[sid]]] = True
    return int(mask.sum())


def build_micro_series(corpus: Corpus, component: str, tokenizer, n: int, m: int,
                       alpha: float = DEFAULT_ALPHA, batch: int = DEFAULT_BATCH,
                       seed: int = 0, low_max: int = DEFAULT_LOW_MAX,
                       high_min: int = DEFAULT_HIGH_MIN,
                       index: TokenSetIndex | None = None) -> SeriesManifest:
    """Series of m fixed-size datasets spanning minimal to maximal mid-band
    token-type coverage.

    The lower endpoint is the minimum-coverage subset and the upper endpoint
    is the unpruned token-aware selection, so the achieved counts hit the
    series bounds exactly; intermediate targets are linearly interpolated and
    realised by prune-then-sample. Infeasible targets (pruned pool smaller
    than n) are relaxed upward to the smallest feasible coverage and flagged.
    """
    if m < 2:
        raise CorpusError("a series needs at least 2 points")
    if n < 1 or n > len(corpus):
        raise CorpusError(f"size {n} infeasible for corpus of {len(corpus)}")
    if index is None:
        table = build_frequency_table(corpus, component, tokenizer, low_max, high_min)
        index = build_token_set_index(corpus, component, table, tokenizer)

    low_ids = min_coverage_select(index, n)
    k_min = distinct_tokens_of(index, low_ids)
    all_ids = index.sample_ids
    all_tokens = [index.tokens[c] for c in range(index.n_tokens) if len(index.inverted[c]) > 0]
    high_ids = token_aware_sample(index, all_ids, all_tokens, n, alpha, batch)
    k_max = distinct_tokens_of(index, high_ids)
    if k_max <= k_min:
        raise CorpusError(
            f"degenerate corpus: series bounds coincide (K_min={k_min}, K_max={k_max})")

    targets = [int(round(t)) for t in np.linspace(k_min, k_max, m)]
    traj = prune_trajectory(index, min_survivors=n)

    points: list[SeriesPoint] = []
    achieved_list: list[int] = []
    relaxed: list[bool] = []
    for i, target in enumerate(targets):
        if i == 0:
            ids, achieved, was_relaxed = low_ids, k_min, False
        elif i == m - 1:
            ids, achieved, was_relaxed = high_ids, k_max, False
        else:
            steps = traj.prefix_for_target(target)
            coverage = traj.coverage_after[steps - 1] if steps else traj.initial_coverage
            was_relaxed = coverage > target
            alive, covered = traj.state_after(steps)
            pool = [index.sample_ids[r] for r in np.flatnonzero(alive)]
            tokens = [index.tokens[c] for c in np.flatnonzero(covered)]
            ids = token_aware_sample(index, pool, tokens, n, alpha, batch)
            achieved = distinct_tokens_of(index, ids)
            if was_relaxed:
                log.warning("prune target %d infeasible at size %d; relaxed to %d",
                            target, n, coverage)
        achieved_list.append(achieved)
        relaxed.append(was_relaxed)
        percent = 100.0 * (achieved - k_min) / (k_max - k_min)
        points.append(SeriesPoint(float(target), percent, list(ids)))

    manifest = SeriesManifest(
        strategy="micro", component=component, size=n, points=points, seed=seed,
        parameters={
            "alpha": alpha,
            "batch": batch,
            "low_max": low_max,
            "high_min": high_min,
            "k_min": k_min,
            "k_max": k_max,
            "targets": targets,
            "achieved_token_types": achieved_list,
            "relaxed_targets": relaxed,
            "tokenizer_kind": tokenizer.kind,
            "tokenizer_fingerprint": tokenizer.fingerprint,
            "rng": RNG_KIND,
            "numpy_version": np.__version__,
            "source_digest": corpus.provenance.get("source_digest"),
        })
    manifest.validate(corpus)
    return manifest
