"""divforge: diversity-controlled subset construction and diversity metrics
for instruction-response corpora."""

__version__ = "0.1.0"

from .clustering import (ClusterAssignment, ClusteringError, EmbeddingMatrix,
                         dbscan, density_cluster, load_embeddings_binary,
                         load_embeddings_jsonl, pca_reduce)
from .corpus import (Corpus, CorpusError, Sample, SeriesManifest, SeriesPoint,
                     export_jsonl, ingest, length_window_filter, load_store,
                     save_store, uniform_select)
from .macro import TopicModel, build_macro_series, build_topic_model
from .meso import (TagCatalog, TagRecord, build_meso_series, build_tag_catalog,
                   category_ratio, filter_tags, ingest_tags)
from .metrics import (MetricError, compression_ratio, compute_metric_report,
                      correlation_report, distribution_kurtosis,
                      embedding_distance, gini_index, information_entropy,
                      mean_sequence_length, ngram_ratio, ols_slope, pearson,
                      self_bleu)
from .micro import (build_micro_series, inverse_greedy_prune,
                    min_coverage_select, prune_trajectory, token_aware_sample)
from .tokenization import (BpeTokenizer, FrequencyTable, TokenizerError,
                           TokenSetIndex, WhitespaceTokenizer,
                           build_frequency_table, build_token_set_index,
                           load_tokenizer)
