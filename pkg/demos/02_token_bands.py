"""Token frequency banding: corpus-wide counts split into high / mid / low
bands, where the mid band ("important tokens") drives the microscopic
strategy."""

import numpy as np

from divforge import (Corpus, Sample, WhitespaceTokenizer, build_frequency_table,
                      build_token_set_index)

rng = np.random.default_rng(0)

# Synthetic responses: a handful of filler words appear everywhere (high
# band), a few hundred topical markers appear tens of times (mid band), and
# rare names appear a couple of times (low band).
fillers = ["the", "and", "of", "to"]
markers = [f"topic{i:03d}" for i in range(200)]
rares = [f"name{i:04d}" for i in range(150)]

samples = []
for i in range(1200):
    words = list(rng.choice(fillers, size=6))
    words += [markers[j] for j in rng.choice(200, size=5, replace=False)]
    if rng.random() < 0.3:
        words.append(str(rng.choice(rares)))
    samples.append(Sample(f"{i:05d}", f"prompt {i}", " ".join(words)))
corpus = Corpus(samples)

tok = WhitespaceTokenizer()
table = build_frequency_table(corpus, "response", tok)

print("vocabulary:", len(table.counts), "tokens,", table.total(), "occurrences")
print("band sizes:", table.band_sizes())
for probe in ("the", markers[0], rares[0]):
    if probe in table.counts:
        print(f"  {probe!r}: count={table.counts[probe]} band={table.band(probe)}")

# The per-sample sets of mid-band tokens and their inverted index.
index = build_token_set_index(corpus, "response", table, tok)
print(f"mean important tokens per sample: {index.mean_set_size():.2f}")
some = index.tokens[0]
print(f"token {some!r} occurs in {len(index.samples_with(some))} samples")

# Thresholds are parameters; tightening them reclassifies the spectrum.
tight = build_frequency_table(corpus, "response", tok, low_max=40, high_min=100)
print("band sizes with thresholds (40, 100):", tight.band_sizes())
