"""End-to-end pipeline: discretize -> match -> augment -> filter -> report.

Each stage writes its artifact to disk and the next stage reads it back,
exactly as the individual CLI subcommands would, so composed runs and
manual stage-by-stage runs produce byte-identical files. The manifest
records the fully resolved config, input and artifact hashes, per-stage
counts, and a determinism hash that must be stable across reruns.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import augment as aug_mod
from . import corpus, discretize, evaluate, filtering, matching
from .embedding import ProviderConfig, SentenceVectorCache, make_provider
from .errors import StageError, ValidationError

DEFAULT_CONFIG = {
    "dataset": "",
    "format": "nyt_json",
    "max_tokens": corpus.DEFAULT_MAX_TOKENS,
    "provider": {
        "kind": "deterministic_test",
        "dimension": 32,
        "endpoint": "",
        "cache_dir": "",
    },
    "context_width": discretize.DEFAULT_CONTEXT_WIDTH,
    "encode_mode": discretize.MODE_STANDARD,
    "weights": [1.0, 1.0, 1.0, 1.0, 1.0],
    "floor": 0.0,
    "per_group_cap": matching.DEFAULT_GROUP_CAP,
    "policy": {
        "mode": aug_mod.MODE_COORDINATED_HRT,
        "epsilon": 0.7,
        "epsilon_entity": None,
        "epsilon_relation": None,
        "max_per_sentence": aug_mod.DEFAULT_MAX_PER_SENTENCE,
        "nu_floor": aug_mod.DEFAULT_NU_FLOOR,
    },
    "filter": {
        "keep_fraction": filtering.DEFAULT_KEEP_FRACTION,
        "k_topics": 8,
        "min_affinity": 0.7,
        "topic_filter_first": True,
        "max_span": corpus.DEFAULT_MAX_SPAN,
        "scorer": {
            "d_e": 32,
            "ridge": 0.01,
            "epochs": 30,
            "learning_rate": 0.5,
            "dropout_rate": filtering.DEFAULT_DROPOUT,
        },
    },
    "append": False,
    "seed": None,
    "output_dir": "ssdau-out",
}


def _merge(defaults: dict, override: dict) -> dict:
    out = {}
    for key, value in defaults.items():
        if key in override and isinstance(value, dict) and isinstance(override[key], dict):
            out[key] = _merge(value, override[key])
        elif key in override:
            out[key] = override[key]
        else:
            out[key] = value
    for key in override:
        if key not in defaults:
            raise ValidationError(f"unknown config key: {key!r}")
    return out


@dataclass
class RunConfig:
    """Fully resolved run configuration (defaults applied)."""

    raw: dict

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        resolved = _merge(DEFAULT_CONFIG, d)
        if resolved["seed"] is None:
            raise ValidationError("config requires an explicit seed")
        if not resolved["dataset"]:
            raise ValidationError("config requires a dataset path")
        return cls(resolved)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def __getitem__(self, key):
        return self.raw[key]

    def provider_config(self) -> ProviderConfig:
        p = self.raw["provider"]
        return ProviderConfig(
            kind=p["kind"],
            dimension=p["dimension"],
            endpoint=p.get("endpoint", ""),
            cache_dir=p.get("cache_dir", ""),
        )

    def weights(self) -> matching.SimilarityWeights:
        return matching.SimilarityWeights(*self.raw["weights"])

    def policy(self) -> aug_mod.AugmentPolicy:
        p = self.raw["policy"]
        return aug_mod.AugmentPolicy(
            mode=p["mode"],
            epsilon=p["epsilon"],
            epsilon_entity=p["epsilon_entity"],
            epsilon_relation=p["epsilon_relation"],
            max_per_sentence=p["max_per_sentence"],
            nu_floor=p["nu_floor"],
        )

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True)


def derive_seed(run_seed: int, stage: str) -> int:
    """Per-stage seed, derived so stages are independently reproducible."""
    digest = hashlib.sha256(f"{run_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    input_hashes: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    failed_stage: str | None = None
    wall_time_s: float = 0.0

    def determinism_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.config_hash.encode())
        for name, digest in sorted(self.input_hashes.items()):
            h.update(f"{name}:{digest}".encode())
        for name, digest in sorted(self.artifacts.items()):
            h.update(f"{name}:{digest}".encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "input_hashes": self.input_hashes,
            "stages": self.stages,
            "artifacts": self.artifacts,
            "failed_stage": self.failed_stage,
            "determinism_hash": self.determinism_hash(),
            "wall_time_s": self.wall_time_s,
        }


def _build_scorer_training(dataset, schema, cache):
    """(head vec, tail vec, relation index) samples from the gold triples."""
    samples = []
    for sentence, triples in sorted(dataset, key=lambda inst: inst[0].id):
        for t in triples:
            l_h = cache.span_vector(sentence, t.head.token_start, t.head.token_end)
            l_t = cache.span_vector(sentence, t.tail.token_start, t.tail.token_end)
            samples.append((l_h, l_t, schema.index(t.relation)))
    return samples


def run_filter_stage(
    instances,
    dataset,
    schema,
    provider,
    filter_cfg: dict,
    seed: int,
):
    """Topic filtering then consistency ranking (order per config flag).

    Returns (kept instances, stage report dict, scorer or None).
    """
    cache = SentenceVectorCache(provider)
    report = {
        "instances": len(instances),
        "topic_rejected": 0,
        "consistency_rejected": 0,
        "kept": 0,
        "scorer": None,
    }
    if not instances:
        return [], report, None

    training = _build_scorer_training(dataset, schema, cache)
    scorer = None
    if training:
        scorer_cfg = filter_cfg["scorer"]
        scorer = filtering.init_pretrained(
            training,
            d_e=scorer_cfg["d_e"],
            K=schema.K,
            ridge=scorer_cfg["ridge"],
            seed=derive_seed(seed, "scorer-init"),
            dropout_rate=scorer_cfg["dropout_rate"],
        )
        if scorer_cfg["epochs"] > 0:
            scorer = filtering.train_scorer(
                scorer,
                training,
                epochs=scorer_cfg["epochs"],
                learning_rate=scorer_cfg["learning_rate"],
                seed=derive_seed(seed, "scorer-train"),
            )
        report["scorer"] = {"init": "pretrained", "trained_epochs": scorer_cfg["epochs"]}

    sentences = [sent for sent, _ in sorted(dataset, key=lambda inst: inst[0].id)]
    by_id = {sent.id: sent for sent in sentences}

    def topic_pass(pool):
        k = min(filter_cfg["k_topics"], max(1, len(sentences)))
        model = filtering.fit_topics(sentences, cache, k, seed=derive_seed(seed, "topics"))
        kept = []
        for inst in pool:
            source = by_id.get(inst.provenance.source_id)
            if source is None or filtering.topic_filter(
                model, source, inst, filter_cfg["min_affinity"], cache
            ):
                kept.append(inst)
            else:
                report["topic_rejected"] += 1
        return kept

    def consistency_pass(pool):
        if scorer is None or not pool:
            return pool
        results = filtering.filter_consistency(
            pool, scorer, cache, schema, filter_cfg["keep_fraction"], filter_cfg["max_span"]
        )
        kept_ids = {r.instance_id for r in results if r.kept}
        report["consistency_rejected"] += sum(1 for r in results if not r.kept)
        return [inst for inst in pool if inst.sentence.id in kept_ids]

    if filter_cfg["topic_filter_first"]:
        kept = consistency_pass(topic_pass(instances))
    else:
        kept = topic_pass(consistency_pass(instances))
    report["kept"] = len(kept)
    return kept, report, scorer


def run_pipeline(config: RunConfig) -> RunManifest:
    """Run every stage, writing artifacts and the manifest to output_dir."""
    started = time.monotonic()
    out_dir = Path(config["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config=config.raw,
        config_hash=hashlib.sha256(config.canonical_json().encode()).hexdigest(),
    )
    dataset_path = Path(config["dataset"])
    if not dataset_path.exists():
        raise ValidationError(f"dataset file not found: {dataset_path}")
    manifest.input_hashes[dataset_path.name] = _sha256_file(dataset_path)

    def finish(failed: str | None = None) -> RunManifest:
        manifest.failed_stage = failed
        manifest.wall_time_s = round(time.monotonic() - started, 3)
        _write_json(out_dir / "manifest.json", manifest.to_dict())
        return manifest

    stage = "load"
    try:
        load_report = corpus.LoadReport()
        dataset = corpus.load_dataset(
            dataset_path,
            format=config["format"],
            max_tokens=config["max_tokens"],
            report=load_report,
        )
        schema = (
            corpus.RelationSchema.from_dataset(dataset)
            if any(triples for _, triples in dataset)
            else None
        )
        manifest.stages["load"] = load_report.to_dict()

        stage = "discretize"
        encode_report: list = []
        if schema is not None:
            library = discretize.build_library(
                dataset,
                schema,
                context_width=config["context_width"],
                mode=config["encode_mode"],
                report=encode_report,
            )
        else:
            library = discretize.BlockLibrary(groups={}, sentences={})
        blocks_path = out_dir / "blocks.json"
        _write_json(blocks_path, library.to_json_dict())
        manifest.stages["discretize"] = {
            "blocks": library.block_count,
            "groups": len(library.groups),
            "skipped_triples": len(encode_report),
        }
        manifest.artifacts["blocks.json"] = _sha256_file(blocks_path)

        stage = "match"
        library = discretize.BlockLibrary.from_json_dict(
            json.loads(blocks_path.read_text(encoding="utf-8"))
        )
        provider = make_provider(config.provider_config())
        match_report = matching.MatchReport()
        queues = matching.build_queues(
            library,
            config.weights(),
            provider,
            floor=config["floor"],
            per_group_cap=config["per_group_cap"],
            report=match_report,
        )
        queues_path = out_dir / "queues.json"
        _write_json(
            queues_path, matching.queues_to_json_dict(queues, config.weights(), config["floor"])
        )
        manifest.stages["match"] = match_report.to_dict()
        manifest.artifacts["queues.json"] = _sha256_file(queues_path)

        stage = "augment"
        queues = matching.queues_from_json_dict(
            json.loads(queues_path.read_text(encoding="utf-8"))
        )
        augment_report = aug_mod.AugmentReport()
        instances = aug_mod.augment_dataset(dataset, queues, config.policy(), augment_report)
        aug_path = out_dir / "aug.jsonl"
        with aug_path.open("w", encoding="utf-8") as fh:
            for inst in instances:
                fh.write(json.dumps(aug_mod.augmented_to_record(inst), sort_keys=True))
                fh.write("\n")
        manifest.stages["augment"] = augment_report.to_dict()
        manifest.artifacts["aug.jsonl"] = _sha256_file(aug_path)

        stage = "filter"
        instances = [
            aug_mod.augmented_from_record(json.loads(line))
            for line in aug_path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        kept, filter_report, scorer = run_filter_stage(
            instances,
            dataset,
            schema,
            provider,
            config["filter"],
            config["seed"],
        ) if schema is not None else ([], {"instances": 0, "kept": 0}, None)
        filtered_path = out_dir / "filtered.jsonl"
        with filtered_path.open("w", encoding="utf-8") as fh:
            for inst in kept:
                fh.write(json.dumps(aug_mod.augmented_to_record(inst), sort_keys=True))
                fh.write("\n")
        if scorer is not None:
            filtering.save_scorer(
                scorer, out_dir / "scorer.bin",
                seed=derive_seed(config["seed"], "scorer-init"),
                init_kind="pretrained",
            )
            manifest.artifacts["scorer.bin"] = _sha256_file(out_dir / "scorer.bin")
        manifest.stages["filter"] = filter_report
        manifest.artifacts["filtered.jsonl"] = _sha256_file(filtered_path)

        stage = "report"
        if config["append"]:
            combined_path = out_dir / "combined.jsonl"
            with combined_path.open("w", encoding="utf-8") as fh:
                for sentence, triples in dataset:
                    fh.write(
                        json.dumps(corpus.instance_to_record(sentence, triples), sort_keys=True)
                    )
                    fh.write("\n")
                for inst in kept:
                    fh.write(json.dumps(aug_mod.augmented_to_record(inst), sort_keys=True))
                    fh.write("\n")
            manifest.artifacts["combined.jsonl"] = _sha256_file(combined_path)
        breakdown = evaluate.triplet_count_breakdown(dataset, kept)
        manifest.stages["report"] = {
            "triplet_breakdown": {str(k): v for k, v in breakdown.items()}
        }
    except Exception as exc:
        finish(failed=stage)
        raise StageError(f"stage {stage!r} failed: {exc}") from exc
    return finish()
