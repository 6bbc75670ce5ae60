"""Command-line entry point.

Subcommands: ingest, export, tokenstats, build, metrics, correlate.
Exit codes: 0 success, 1 I/O error, 2 precondition violation. A config file
(TOML, flat keys mirroring flag names) supplies defaults; flags override.
"""

from __future__ import annotations

import argparse
import csv
import glob as globlib
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .clustering import ClusteringError, load_embeddings_jsonl
from .corpus import Corpus, CorpusError, SeriesManifest, export_jsonl, ingest, \
    load_store, save_store
from .macro import build_macro_series, build_topic_model
from .meso import build_meso_series, build_tag_catalog, ingest_tags
from .metrics import METRIC_NAMES, MetricError, compute_metric_report, \
    correlation_report, save_correlation_report, save_metric_report, worker_count
from .micro import build_micro_series
from .tokenization import TokenizerError, build_frequency_table, \
    build_token_set_index, load_tokenizer

log = logging.getLogger("divforge")

EXIT_OK = 0
EXIT_IO = 1
EXIT_PRECONDITION = 2


def _load_corpus(args) -> Corpus:
    if getattr(args, "store", None):
        return load_store(args.store)
    if getattr(args, "input", None):
        return ingest(args.input)
    raise CorpusError("supply a corpus via --store or --input")


def cmd_ingest(args) -> int:
    corpus = ingest(args.input)
    save_store(corpus, args.out)
    drops = corpus.provenance["drops"]
    print(f"ingested {len(corpus)} samples into {args.out} "
          f"(malformed={drops['malformed']}, invalid_encoding={drops['invalid_encoding']}, "
          f"duplicates={drops['duplicate_pairs']})")
    return EXIT_OK


def cmd_export(args) -> int:
    corpus = load_store(args.store)
    export_jsonl(corpus, args.out)
    print(f"exported {len(corpus)} samples to {args.out}")
    return EXIT_OK


def cmd_tokenstats(args) -> int:
    corpus = _load_corpus(args)
    tokenizer = load_tokenizer(args.tokenizer)
    table = build_frequency_table(corpus, args.component, tokenizer,
                                  low_max=args.low_max, high_min=args.high_min)
    index = build_token_set_index(corpus, args.component, table, tokenizer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    surfaces = getattr(tokenizer, "surface", None)
    table.to_csv(out / "frequency.csv", surfaces=surfaces)
    summary = {
        "component": args.component,
        "tokenizer_kind": tokenizer.kind,
        "tokenizer_fingerprint": tokenizer.fingerprint,
        "low_max": args.low_max,
        "high_min": args.high_min,
        "total_tokens": table.total(),
        "vocabulary": len(table.counts),
        "band_sizes": table.band_sizes(),
        "mean_important_tokens_per_sample": index.mean_set_size(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    print(f"tokenstats written to {out} "
          f"(vocab={summary['vocabulary']}, bands={summary['band_sizes']}, "
          f"mean |T_d|={summary['mean_important_tokens_per_sample']:.2f})")
    return EXIT_OK


def _require(args, attr: str, flag: str, strategy: str) -> None:
    if getattr(args, attr, None) is None:
        raise CorpusError(f"strategy {strategy!r} requires {flag}")


def cmd_build(args) -> int:
    corpus = _load_corpus(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.strategy == "micro":
        tokenizer = load_tokenizer(args.tokenizer)
        manifest = build_micro_series(
            corpus, args.component, tokenizer, args.size, args.points,
            alpha=args.alpha, batch=args.batch, seed=args.seed,
            low_max=args.low_max, high_min=args.high_min)
    elif args.strategy == "macro":
        _require(args, "embeddings", "--embeddings", "macro")
        emb = load_embeddings_jsonl(args.embeddings)
        model = build_topic_model(corpus, args.component, emb,
                                  min_cluster_size=args.min_cluster_size)
        manifest = build_macro_series(model, args.size, args.points, args.seed,
                                      source_digest=corpus.provenance.get("source_digest"))
    elif args.strategy == "meso":
        _require(args, "tags", "--tags", "meso")
        _require(args, "tag_embeddings", "--tag-embeddings", "meso")
        records, stats = ingest_tags(args.tags, corpus)
        log.info("tag ingest: %s", stats)
        emb = load_embeddings_jsonl(args.tag_embeddings)
        catalog = build_tag_catalog(records, emb, eps=args.eps,
                                    min_samples=args.min_samples)
        manifest = build_meso_series(catalog, corpus, args.component,
                                     args.size, args.points, args.seed)
    else:  # pragma: no cover - argparse restricts choices
        raise CorpusError(f"unknown strategy {args.strategy!r}")

    manifest.parameters["command"] = {
        "strategy": args.strategy, "component": args.component,
        "size": args.size, "points": args.points, "seed": args.seed,
    }
    manifest.save(out / "series_manifest.json")
    for i, point in enumerate(manifest.points):
        export_jsonl(corpus.subset(point.sample_ids), out / f"point_{i:02d}.jsonl")
    print(f"built {args.strategy} series with {len(manifest.points)} points in {out}")
    return EXIT_OK


def _load_dataset_texts(args):
    """Resolve --dataset into (texts, label, extras).

    A .json path is a series manifest (requires --point and --store); anything
    else is a JSONL file in ingest format.
    """
    dataset = Path(args.dataset)
    if dataset.suffix == ".json":
        if args.point is None or args.store is None:
            raise CorpusError("manifest datasets require --point and --store")
        manifest = SeriesManifest.load(dataset)
        corpus = load_store(args.store)
        point = manifest.points[args.point]
        texts = [corpus[sid].text(args.component) for sid in point.sample_ids]
        label = args.label or f"{dataset.stem}#{args.point}"
        extras = {"strategy": manifest.strategy,
                  "diversity_percent": point.diversity_percent}
        return texts, label, extras
    corpus = ingest(dataset)
    texts = corpus.texts(args.component)
    label = args.label or dataset.stem
    return texts, label, {}


def cmd_metrics(args) -> int:
    texts, label, extras = _load_dataset_texts(args)
    tokenizer = load_tokenizer(args.tokenizer)
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    embeddings = load_embeddings_jsonl(args.embeddings) if args.embeddings else None
    report = compute_metric_report(
        texts, tokenizer, metrics=metrics, embeddings=embeddings, dataset=label,
        component=args.component, bleu_sample_limit=args.bleu_sample_limit,
        bleu_seed=args.seed if args.seed is not None else 0)
    report.update(extras)
    report["workers"] = worker_count()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_metric_report(report, out.with_suffix(".json"), out.with_suffix(".csv"))
    print(f"metrics for {label} written to {out.with_suffix('.json')}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    report_paths = sorted(globlib.glob(args.reports))
    if not report_paths:
        raise OSError(f"no reports match {args.reports!r}")
    reports = [json.loads(Path(p).read_text(encoding="utf-8")) for p in report_paths]
    scores: dict[str, float] = {}
    with Path(args.scores).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] in ("id", "dataset"):
                continue
            scores[row[0]] = float(row[1])
    report = correlation_report(reports, scores)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_correlation_report(report, out.with_suffix(".json"), out.with_suffix(".csv"))
    print(f"correlation report over {len(reports)} datasets written to "
          f"{out.with_suffix('.json')}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divforge",
        description="Diversity-controlled subset construction and diversity metrics "
                    "for instruction-response corpora.")
    parser.add_argument("--version", action="version", version=f"divforge {__version__}")
    parser.add_argument("--config", help="TOML file with flat keys mirroring flag names")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="clean + deduplicate a JSONL corpus into a store")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="corpus store directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("export", help="write a corpus store back to ingest-format JSONL")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("tokenstats", help="token frequency table and band summary")
    p.add_argument("--store")
    p.add_argument("--input", help="JSONL corpus (alternative to --store)")
    p.add_argument("--component", choices=("instruction", "response"), required=True)
    p.add_argument("--tokenizer", default="whitespace",
                   help='"whitespace" or path to a BPE definition JSON')
    p.add_argument("--low-max", type=int, default=10)
    p.add_argument("--high-min", type=int, default=500)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_tokenstats)

    p = sub.add_parser("build", help="build a diversity series")
    p.add_argument("--strategy", choices=("macro", "meso", "micro"), required=True)
    p.add_argument("--store")
    p.add_argument("--input", help="JSONL corpus (alternative to --store)")
    p.add_argument("--component", choices=("instruction", "response"), required=True)
    p.add_argument("--size", type=int, required=True, help="samples per dataset (N)")
    p.add_argument("--points", type=int, required=True, help="datasets in the series (M)")
    p.add_argument("--seed", type=int, required=True,
                   help="required: no randomized operation runs without a seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tokenizer", default="whitespace")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--low-max", type=int, default=10)
    p.add_argument("--high-min", type=int, default=500)
    p.add_argument("--embeddings", help="sample embeddings JSONL (macro)")
    p.add_argument("--min-cluster-size", type=int, default=20)
    p.add_argument("--tags", help="tags JSONL (meso)")
    p.add_argument("--tag-embeddings", help="tag embeddings JSONL (meso)")
    p.add_argument("--eps", type=float, default=0.15)
    p.add_argument("--min-samples", type=int, default=2)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("metrics", help="posterior diversity metrics for one dataset")
    p.add_argument("--dataset", required=True,
                   help="JSONL file, or a series manifest (.json) with --point/--store")
    p.add_argument("--point", type=int)
    p.add_argument("--store")
    p.add_argument("--label", help="dataset id used in reports (default: derived)")
    p.add_argument("--component", choices=("instruction", "response"), required=True)
    p.add_argument("--metrics", default=",".join(METRIC_NAMES))
    p.add_argument("--tokenizer", default="whitespace")
    p.add_argument("--embeddings", help="embeddings JSONL for the ED metric")
    p.add_argument("--bleu-sample-limit", type=int, default=2000)
    p.add_argument("--seed", type=int, help="seed for sampled Self-BLEU")
    p.add_argument("--out", required=True, help="output path prefix (.json/.csv added)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("correlate", help="join metric reports with external scores")
    p.add_argument("--reports", required=True, help="glob of metric report JSON files")
    p.add_argument("--scores", required=True, help="CSV of dataset id,score")
    p.add_argument("--out", required=True, help="output path prefix (.json/.csv added)")
    p.set_defaults(func=cmd_correlate)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    with open(known.config, "rb") as fh:
        cfg = tomllib.load(fh)
    flat = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    for action in parser._subparsers._group_actions:  # noqa: SLF001 - argparse plumbing
        for sp in action.choices.values():
            applicable = {k: v for k, v in flat.items()
                          if any(a.dest == k for a in sp._actions)}
            sp.set_defaults(**applicable)
            for a in sp._actions:
                # a config-supplied value satisfies a required flag
                if a.dest in applicable and a.required:
                    a.required = False


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        worker_count()  # validate DIVFORGE_THREADS early
        return args.func(args)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CorpusError, TokenizerError, ClusteringError, MetricError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
