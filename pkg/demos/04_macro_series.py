"""The macroscopic strategy: ingest sample embeddings, reduce with PCA,
cluster densely, and sweep series over the number of clusters drawn from."""

import numpy as np

from divforge import Corpus, EmbeddingMatrix, Sample, build_macro_series, \
    build_topic_model

rng = np.random.default_rng(3)

# Six planted topics; each sample gets an embedding near its topic center.
# In production these embeddings come from an external encoder via
# load_embeddings_jsonl / load_embeddings_binary.
n_topics, per_topic, dim = 6, 80, 12
centers = rng.normal(0, 40, (n_topics, dim))
samples, vectors = [], []
for t in range(n_topics):
    for j in range(per_topic):
        sid = f"{t:02d}-{j:03d}"
        samples.append(Sample(sid, f"topic{t} question {j}", f"topic{t} answer {j}"))
        vectors.append(centers[t] + rng.normal(0, 1, dim))
corpus = Corpus(samples)
embeddings = EmbeddingMatrix(corpus.ids(), np.asarray(vectors))

model = build_topic_model(corpus, "instruction", embeddings, min_cluster_size=20)
print(f"recovered {model.k} clusters (planted {n_topics})")
for cluster, members in sorted(model.pools().items()):
    print(f"  cluster {cluster}: {len(members)} samples, e.g. {members[:3]}")

manifest = build_macro_series(model, n=120, m=4, seed=5)
print("\nmacro series (N=120, M=4): k from "
      f"{manifest.parameters['k_min']} to {manifest.parameters['k_max']}")
for point, topics in zip(manifest.points, manifest.parameters["distinct_topics"]):
    print(f"  k={point.diversity_value:3.0f}  distinct topics {topics}  "
          f"diversity {point.diversity_percent:6.2f}%")
