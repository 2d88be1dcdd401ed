"""Command-line interface.

All reports go to stdout as JSON; artifacts go to files. Exit codes:
0 success, 2 validation error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import augment as aug_mod
from . import corpus, discretize, evaluate, filtering, matching, pipeline
from .embedding import ProviderConfig, SentenceVectorCache, make_provider
from .errors import StageError, ValidationError

MODE_ALIASES = {
    "hrt": aug_mod.MODE_COORDINATED_HRT,
    "h": aug_mod.MODE_HEAD_ONLY,
    "t": aug_mod.MODE_TAIL_ONLY,
    "r": aug_mod.MODE_RELATION_ONLY,
    "ht": aug_mod.MODE_HT_ONLY,
}


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _provider_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider-kind", default="deterministic_test",
                        choices=["deterministic_test", "service", "file_cache"])
    parser.add_argument("--dimension", type=int, default=32)
    parser.add_argument("--endpoint", default="")
    parser.add_argument("--cache-dir", default="")


def _make_provider(args) -> object:
    return make_provider(
        ProviderConfig(
            kind=args.provider_kind,
            dimension=args.dimension,
            endpoint=args.endpoint,
            cache_dir=args.cache_dir,
        )
    )


def _resolve_mode(mode: str) -> str:
    return MODE_ALIASES.get(mode, mode)


def cmd_load_check(args) -> int:
    report = corpus.LoadReport()
    corpus.load_dataset(
        args.path, format=args.format, max_tokens=args.max_tokens, report=report
    )
    _emit(report.to_dict())
    return 0


def cmd_discretize(args) -> int:
    dataset = corpus.load_dataset(args.dataset, format=args.format, max_tokens=args.max_tokens)
    if not any(triples for _, triples in dataset):
        library = discretize.BlockLibrary(groups={}, sentences={})
        skipped: list = []
    else:
        schema = corpus.RelationSchema.from_dataset(dataset)
        skipped = []
        library = discretize.build_library(
            dataset, schema, context_width=args.context_width, mode=args.mode, report=skipped
        )
    Path(args.out).write_text(
        json.dumps(library.to_json_dict(), sort_keys=True), encoding="utf-8"
    )
    _emit({
        "blocks": library.block_count,
        "groups": len(library.groups),
        "skipped_triples": len(skipped),
        "out": args.out,
    })
    return 0


def cmd_embed_warm(args) -> int:
    cache_dir = args.cache or args.cache_dir
    if not cache_dir:
        raise ValidationError("embed-warm requires --cache")
    dataset = corpus.load_dataset(args.dataset, format=args.format, max_tokens=args.max_tokens)
    base = None
    if args.provider_kind == "service":
        base = make_provider(ProviderConfig(
            kind="service", dimension=args.dimension, endpoint=args.endpoint,
        ))
    provider = make_provider(
        ProviderConfig(kind="file_cache", dimension=args.dimension, cache_dir=cache_dir),
        base=base,
    )
    warmed = 0
    for sentence, _ in sorted(dataset, key=lambda inst: inst[0].id):
        provider.embed(sentence.text, sentence.tokens)
        warmed += 1
    _emit({"sentences": warmed, "cache": cache_dir})
    return 0


def cmd_match(args) -> int:
    library = discretize.BlockLibrary.from_json_dict(
        json.loads(Path(args.blocks).read_text(encoding="utf-8"))
    )
    weights = matching.SimilarityWeights(*(float(w) for w in args.weights.split(",")))
    provider = _make_provider(args)
    report = matching.MatchReport()
    queues = matching.build_queues(
        library, weights, provider, floor=args.floor,
        per_group_cap=args.cap, report=report,
    )
    Path(args.out).write_text(
        json.dumps(matching.queues_to_json_dict(queues, weights, args.floor), sort_keys=True),
        encoding="utf-8",
    )
    payload = report.to_dict()
    payload["out"] = args.out
    _emit(payload)
    return 0


def cmd_augment(args) -> int:
    dataset = corpus.load_dataset(args.dataset, format=args.format, max_tokens=args.max_tokens)
    queues = matching.queues_from_json_dict(
        json.loads(Path(args.queues).read_text(encoding="utf-8"))
    )
    policy = aug_mod.AugmentPolicy(
        mode=_resolve_mode(args.mode),
        epsilon=args.epsilon,
        epsilon_entity=args.epsilon_entity,
        epsilon_relation=args.epsilon_relation,
        max_per_sentence=args.max_per_sentence,
        nu_floor=args.nu_floor,
    )
    report = aug_mod.AugmentReport()
    instances = aug_mod.augment_dataset(dataset, queues, policy, report)
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(aug_mod.augmented_to_record(inst), sort_keys=True))
            fh.write("\n")
    payload = report.to_dict()
    payload["out"] = args.out
    _emit(payload)
    return 0


def cmd_filter(args) -> int:
    instances = [
        aug_mod.augmented_from_record(json.loads(line))
        for line in Path(args.augmented).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    dataset = corpus.load_dataset(args.dataset, format=args.format, max_tokens=args.max_tokens)
    if not any(triples for _, triples in dataset):
        raise ValidationError("filter requires a dataset with triples")
    schema = corpus.RelationSchema.from_dataset(dataset)
    provider = _make_provider(args)
    filter_cfg = {
        "keep_fraction": args.keep,
        "k_topics": args.topics,
        "min_affinity": args.min_affinity,
        "topic_filter_first": not args.consistency_first,
        "max_span": args.max_span,
        "scorer": {
            "d_e": args.d_e,
            "ridge": args.ridge,
            "epochs": args.epochs,
            "learning_rate": args.learning_rate,
            "dropout_rate": args.dropout,
        },
    }
    kept, report, scorer = pipeline.run_filter_stage(
        instances, dataset, schema, provider, filter_cfg, args.seed
    )
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for inst in kept:
            fh.write(json.dumps(aug_mod.augmented_to_record(inst), sort_keys=True))
            fh.write("\n")
    if scorer is not None and args.scorer_out:
        filtering.save_scorer(
            scorer, args.scorer_out,
            seed=pipeline.derive_seed(args.seed, "scorer-init"), init_kind="pretrained",
        )
    report["out"] = args.out
    _emit(report)
    return 0


def _read_triple_sets(path: str, mode: str) -> dict[str, evaluate.TripleSet]:
    out: dict[str, evaluate.TripleSet] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        surfaces = [
            (t["head"]["surface"], t["relation"], t["tail"]["surface"])
            for t in rec.get("triples", [])
        ]
        out[rec["id"]] = evaluate.TripleSet.from_surface_triples(surfaces, mode)
    return out


def cmd_eval(args) -> int:
    pred = _read_triple_sets(args.pred, args.mode)
    gold = _read_triple_sets(args.gold, args.mode)
    m = evaluate.corpus_metrics(pred, gold, macro=args.macro)
    _emit({
        "mode": args.mode,
        "aggregate": "macro" if args.macro else "micro",
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "iou": m.iou,
    })
    return 0


def cmd_sweep(args) -> int:
    dataset = corpus.load_dataset(args.dataset, format=args.format, max_tokens=args.max_tokens)
    queues = matching.queues_from_json_dict(
        json.loads(Path(args.queues).read_text(encoding="utf-8"))
    )
    bins = evaluate.parse_bins(args.bins)
    policy = aug_mod.AugmentPolicy(
        mode=aug_mod.MODE_HEAD_ONLY,
        epsilon=bins[0][0],
        max_per_sentence=args.max_per_sentence,
        nu_floor=args.nu_floor,
    )
    report = evaluate.sweep(args.label, dataset, queues, policy, bins)
    print(report.render_table(), file=sys.stderr)
    _emit(report.to_dict())
    return 0


def cmd_augment_all(args) -> int:
    config = pipeline.RunConfig.from_file(args.config)
    manifest = pipeline.run_pipeline(config)
    _emit(manifest.to_dict())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssdau")
    sub = parser.add_subparsers(dest="command", required=True)

    def dataset_args(p):
        p.add_argument("--format", default="nyt_json", choices=["nyt_json", "webnlg_json"])
        p.add_argument("--max-tokens", type=int, default=corpus.DEFAULT_MAX_TOKENS)

    p = sub.add_parser("load-check", help="validate a dataset file")
    p.add_argument("path")
    dataset_args(p)
    p.set_defaults(func=cmd_load_check)

    p = sub.add_parser("discretize", help="encode and group text blocks")
    p.add_argument("dataset")
    dataset_args(p)
    p.add_argument("--context-width", type=int, default=discretize.DEFAULT_CONTEXT_WIDTH)
    p.add_argument("--mode", default=discretize.MODE_STANDARD, choices=discretize.ENCODE_MODES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_discretize)

    p = sub.add_parser("embed-warm", help="precompute sentence embeddings into a cache")
    p.add_argument("dataset")
    dataset_args(p)
    _provider_args(p)
    p.add_argument("--cache", default="")
    p.set_defaults(func=cmd_embed_warm)

    p = sub.add_parser("match", help="build similarity candidate queues")
    p.add_argument("blocks")
    _provider_args(p)
    p.add_argument("--floor", type=float, default=0.0)
    p.add_argument("--weights", default="1,1,1,1,1")
    p.add_argument("--cap", type=int, default=matching.DEFAULT_GROUP_CAP)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("augment", help="generate augmented instances")
    p.add_argument("dataset")
    dataset_args(p)
    p.add_argument("--queues", required=True)
    p.add_argument("--mode", default="hrt")
    p.add_argument("--epsilon", type=float, default=0.7)
    p.add_argument("--epsilon-entity", type=float, default=None)
    p.add_argument("--epsilon-relation", type=float, default=None)
    p.add_argument("--max-per-sentence", type=int, default=aug_mod.DEFAULT_MAX_PER_SENTENCE)
    p.add_argument("--nu-floor", type=float, default=aug_mod.DEFAULT_NU_FLOOR)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("filter", help="consistency + topic filtering")
    p.add_argument("augmented")
    p.add_argument("--dataset", required=True)
    dataset_args(p)
    _provider_args(p)
    p.add_argument("--keep", type=float, default=filtering.DEFAULT_KEEP_FRACTION)
    p.add_argument("--topics", type=int, default=8)
    p.add_argument("--min-affinity", type=float, default=0.7)
    p.add_argument("--consistency-first", action="store_true",
                   help="rank by consistency before topic filtering")
    p.add_argument("--max-span", type=int, default=corpus.DEFAULT_MAX_SPAN)
    p.add_argument("--d-e", type=int, default=32)
    p.add_argument("--ridge", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--dropout", type=float, default=filtering.DEFAULT_DROPOUT)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scorer-out", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="triple-set metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--mode", default="exact", choices=list(evaluate.MATCH_MODES))
    p.add_argument("--macro", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="augmented counts per similarity bin")
    p.add_argument("dataset")
    dataset_args(p)
    p.add_argument("--queues", required=True)
    p.add_argument("--bins", default="0.5:1.0:0.1")
    p.add_argument("--label", default="dataset")
    p.add_argument("--max-per-sentence", type=int, default=aug_mod.DEFAULT_MAX_PER_SENTENCE)
    p.add_argument("--nu-floor", type=float, default=aug_mod.DEFAULT_NU_FLOOR)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("augment-all", help="run the full pipeline from a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_augment_all)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(json.dumps({"error": str(exc), "kind": "validation"}), file=sys.stderr)
        return 2
    except StageError as exc:
        print(json.dumps({"error": str(exc), "kind": "stage"}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
