import numpy as np
import pytest

from divforge.corpus import CorpusError
from divforge.micro import (build_micro_series, distinct_tokens_of,
                            inverse_greedy_prune, min_coverage_select,
                            prune_trajectory, token_aware_sample)
from divforge.tokenization import TokenSetIndex, WhitespaceTokenizer, \
    build_frequency_table, build_token_set_index

from conftest import banded_corpus


def make_index(token_sets: dict[str, set]) -> TokenSetIndex:
    sample_ids = sorted(token_sets)
    tokens = sorted({t for s in token_sets.values() for t in s})
    col = {t: i for i, t in enumerate(tokens)}
    rows = [np.asarray(sorted(col[t] for t in token_sets[sid]), dtype=np.int32)
            for sid in sample_ids]
    return TokenSetIndex(sample_ids, rows, tokens, "response", "test-fingerprint")


def random_instance(rng, n_samples=None, n_tokens=None, max_set=8):
    n_samples = n_samples or int(rng.integers(5, 51))
    n_tokens = n_tokens or int(rng.integers(5, 81))
    sets = {}
    for i in range(n_samples):
        k = int(rng.integers(0, min(max_set, n_tokens) + 1))
        sets[f"d{i:03d}"] = set(rng.choice(n_tokens, size=k, replace=False).tolist())
    return sets


# --- pruning oracle: brute-force argmax of Unique(d) per step ----------------

def oracle_prune(token_sets: dict[str, set], k: int):
    survivors = dict(token_sets)
    t_tmp = set().union(*survivors.values()) if survivors else set()
    trace = []
    while len(t_tmp) > k and survivors:
        best = None
        for d in sorted(survivors):
            rest = [s for d2, s in survivors.items() if d2 != d]
            others = set().union(*rest) if rest else set()
            uniq = len(survivors[d] - others)
            if best is None or uniq > best[0]:
                best = (uniq, d)
        trace.append(best[1])
        del survivors[best[1]]
        t_tmp = set().union(*survivors.values()) if survivors else set()
    return trace, set(survivors), t_tmp


def test_prune_three_sample_example():
    sets = {"d1": {1, 2}, "d2": {2, 3}, "d3": {4, 5}}
    ids, tokens = inverse_greedy_prune(make_index(sets), 3)
    assert ids == {"d1", "d2"}
    assert tokens == {1, 2, 3}


def test_prune_noop_when_target_above_coverage():
    sets = {"a": {1, 2}, "b": {3}}
    ids, tokens = inverse_greedy_prune(make_index(sets), 10)
    assert ids == {"a", "b"}
    assert tokens == {1, 2, 3}


def test_prune_matches_bruteforce_oracle(rng):
    for trial in range(30):
        sets = random_instance(rng)
        k = int(rng.integers(0, 20))
        index = make_index(sets)
        traj = prune_trajectory(index)
        trace, survivors, t_tmp = oracle_prune(sets, k)
        assert [index.sample_ids[r] for r in traj.order[:len(trace)]] == trace
        ids, tokens = inverse_greedy_prune(index, k)
        assert ids == survivors
        assert tokens == t_tmp
        assert len(tokens) <= k or not ids


def test_prune_incremental_uses_no_full_recounts(rng):
    sets = random_instance(rng, n_samples=50, n_tokens=60)
    index = make_index(sets)
    traj = prune_trajectory(index)
    nnz = sum(len(r) for r in index.rows)
    assert traj.stats["full_recounts"] == 0
    assert traj.stats["owner_scan_elems"] <= nnz
    assert traj.stats["token_updates"] <= nnz


def test_prune_coverage_recount(rng):
    sets = random_instance(rng, n_samples=40)
    index = make_index(sets)
    ids, tokens = inverse_greedy_prune(index, 12)
    recount = set().union(*(sets[i] for i in ids)) if ids else set()
    assert tokens == recount


# --- sampling oracle: literal step-by-step simulation ------------------------

def oracle_token_aware(token_sets: dict[str, set], t_tmp: set, n: int,
                       alpha: float, batch: int):
    selected = []
    remaining = set(token_sets)
    counts = {t: 0 for t in t_tmp}
    n = min(n, len(remaining))
    while len(selected) < n and remaining:
        uncovered = {t for t in t_tmp if counts[t] == 0}
        if uncovered:
            best = None
            for d in sorted(remaining):
                gain = len(token_sets[d] & uncovered)
                if best is None or gain > best[0]:
                    best = (gain, d)
            chosen = [best[1]]
        else:
            scores = {}
            for d in remaining:
                s = 0.0
                for t in sorted(token_sets[d] & t_tmp):
                    s += 1.0 / (counts[t] + alpha)
                scores[d] = s
            ranked = sorted(remaining, key=lambda d: (-scores[d], d))
            chosen = ranked[:min(batch, n - len(selected))]
        for d in chosen:
            selected.append(d)
            remaining.discard(d)
            for t in token_sets[d]:
                if t in counts:
                    counts[t] += 1
    return selected


def test_score_formula():
    # Counts={t1:1, t2:3}, alpha=1, T_d={t1,t2} -> s = 1/2 + 1/4 = 0.75
    assert 1.0 / (1 + 1.0) + 1.0 / (3 + 1.0) == 0.75


def test_full_coverer_selected_first():
    sets = {"z_all": {1, 2, 3, 4}, "a_part": {1, 2}, "b_part": {3}}
    index = make_index(sets)
    out = token_aware_sample(index, list(sets), [1, 2, 3, 4], n=2)
    assert out[0] == "z_all"


def test_sample_matches_literal_simulation(rng):
    for trial in range(30):
        sets = random_instance(rng, n_samples=40)
        union = set().union(*sets.values()) if sets else set()
        if not union:
            continue
        n = int(rng.integers(1, len(sets) + 1))
        batch = int(rng.integers(1, 6))
        alpha = float(rng.choice([0.5, 1.0, 2.0]))
        index = make_index(sets)
        got = token_aware_sample(index, list(sets), sorted(union), n,
                                 alpha=alpha, batch=batch)
        want = oracle_token_aware(sets, union, n, alpha, batch)
        assert got == want, f"trial {trial}: trace diverged"


def test_sample_trace_40_pool_batch_2(rng):
    sets = random_instance(rng, n_samples=40, n_tokens=60)
    union = set().union(*sets.values())
    index = make_index(sets)
    got = token_aware_sample(index, list(sets), sorted(union), 10, alpha=1.0, batch=2)
    want = oracle_token_aware(sets, union, 10, 1.0, 2)
    assert got == want
    assert len(got) == 10


def test_sample_returns_all_when_target_exceeds_pool(rng, caplog):
    sets = {"a": {1}, "b": {2}}
    index = make_index(sets)
    out = token_aware_sample(index, list(sets), [1, 2], n=10)
    assert sorted(out) == ["a", "b"]


def test_sample_counts_recount(rng):
    sets = random_instance(rng, n_samples=30)
    union = set().union(*sets.values())
    if not union:
        pytest.skip("degenerate draw")
    index = make_index(sets)
    out = token_aware_sample(index, list(sets), sorted(union), n=12)
    assert len(out) == min(12, len(sets))
    # Counts at termination must equal the brute-force recount over S
    recount = {t: sum(1 for d in out if t in sets[d]) for t in union}
    covered = {t for t, c in recount.items() if c > 0}
    assert covered == set().union(*(sets[d] for d in out))


def test_coverage_completes_on_coverable_instances(rng):
    # ten samples partition the token space; the extra samples are subsets,
    # so greedy coverage finishes within the partition size
    partition = {f"p{i}": set(range(6 * i, 6 * (i + 1))) for i in range(10)}
    noise = {f"x{j:02d}": set(rng.choice(60, size=3, replace=False).tolist())
             for j in range(30)}
    sets = {**partition, **noise}
    index = make_index(sets)
    out = token_aware_sample(index, list(sets), list(range(60)), n=15)
    covered = set().union(*(sets[d] for d in out))
    assert covered == set(range(60))


# --- series ------------------------------------------------------------------

def toy_micro_corpus(rng, n_samples=200, n_mid=60):
    return banded_corpus(rng, n_samples=n_samples, n_mid=n_mid,
                         mid_per_sample=(2, 5))


def _build(corpus, n, m, seed=11):
    tok = WhitespaceTokenizer()
    return build_micro_series(corpus, "response", tok, n, m, seed=seed)


def test_series_endpoints_are_exact(rng):
    manifest = _build(toy_micro_corpus(rng), n=50, m=2)
    assert manifest.points[0].diversity_percent == 0.0
    assert manifest.points[-1].diversity_percent == 100.0
    assert len(manifest.points) == 2


def test_series_seven_points_monotone(rng):
    manifest = _build(toy_micro_corpus(rng), n=50, m=7)
    pcts = [p.diversity_percent for p in manifest.points]
    assert len(pcts) == 7
    assert all(b >= a for a, b in zip(pcts, pcts[1:]))


def test_series_achieved_counts_near_targets(rng):
    corpus = toy_micro_corpus(rng)
    tok = WhitespaceTokenizer()
    manifest = build_micro_series(corpus, "response", tok, 50, 3, seed=5)
    table = build_frequency_table(corpus, "response", tok)
    index = build_token_set_index(corpus, "response", table, tok)
    achieved = [distinct_tokens_of(index, p.sample_ids) for p in manifest.points]
    assert achieved == manifest.parameters["achieved_token_types"]
    assert all(b >= a for a, b in zip(achieved, achieved[1:]))
    targets = manifest.parameters["targets"]
    assert all(abs(a - t) <= 2 for a, t in zip(achieved, targets))
    for p in manifest.points:
        assert len(p.sample_ids) == 50


def test_series_rebuild_is_byte_identical(rng):
    corpus = toy_micro_corpus(rng)
    m1 = _build(corpus, 40, 5, seed=3)
    m2 = _build(corpus, 40, 5, seed=3)
    assert m1.to_json().encode() == m2.to_json().encode()


def test_series_degenerate_corpus_errors():
    # every sample shares the same mid tokens: K_min == K_max
    records = [(f"q{i}", "alpha beta") for i in range(30)]
    from conftest import make_corpus
    corpus = make_corpus(records)
    with pytest.raises(CorpusError):
        _build(corpus, 10, 3)


def test_min_coverage_select_prefers_small_sets():
    sets = {"big": {1, 2, 3, 4, 5}, "s1": {1}, "s2": {1}, "s3": {2}}
    index = make_index(sets)
    out = min_coverage_select(index, 3)
    assert "big" not in out
    # first pick: smallest gain, tie by id -> s1 (gain 1); then s2 (gain 0)
    assert out[0] == "s1"
    assert out[1] == "s2"
