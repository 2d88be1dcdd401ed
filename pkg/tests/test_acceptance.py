"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Tolerances and runtime budgets are asserted inside the tests.
"""

import math
import random
import time

import numpy as np
import pytest

from fixture_corpus import donor_example, table_example

from ssdau.augment import (
    AugmentPolicy,
    apply_replacement,
    augment_dataset,
)
from ssdau.corpus import (
    TagAssignment,
    instance_to_record,
    inject_perturbation,
    save_dataset,
    triples_to_tags,
    tags_to_triples,
    make_sentence,
    EntityMention,
    Triple,
)
from ssdau.discretize import HEAD, encode, reconstruct
from ssdau.embedding import DeterministicTestProvider, SentenceVectorCache
from ssdau.evaluate import Metrics, TripleSet, metrics, normalize_triple
from ssdau.filtering import (
    consistency_loss,
    filter_consistency,
    fit_topics,
    init_pretrained,
    init_random,
    init_zero,
    loss_and_grads,
    score_pair,
    softmax,
    topic_filter,
    train_scorer,
    zeta_dense,
)
from ssdau.matching import (
    ComponentScores,
    MatchCandidate,
    SimilarityScorer,
    SimilarityWeights,
    build_queues,
    hybrid_score,
)
from ssdau.pipeline import RunConfig, run_pipeline


def _passed(name: str, detail: str = "") -> None:
    print(f"[PASS] {name}" + (f": {detail}" if detail else ""))


def test_round_trip(dataset, schema):
    """encode/reconstruct and tag round trips over the 200-sentence fixture."""
    started = time.monotonic()
    assert len(dataset) == 200
    for sentence, triples in dataset:
        blocks = encode(sentence, triples)
        assert reconstruct(sentence, blocks) == sentence.text
        tags = triples_to_tags(sentence, triples, schema)
        back = tags_to_triples(sentence, tags, schema)
        assert {t.key() for t in back} == {t.key() for t in triples}
        assert {(t.head.surface, t.head.tag, t.relation, t.tail.surface, t.tail.tag)
                for t in back} == \
               {(t.head.surface, t.head.tag, t.relation, t.tail.surface, t.tail.tag)
                for t in triples}
    elapsed = time.monotonic() - started
    assert elapsed < 5.0
    _passed("round-trip", f"200/200 sentences byte-exact, tags exact, {elapsed:.2f}s")


def test_hybrid_similarity(dataset, schema, library, cache):
    """Formula equivalence on 1,000 pairs and threshold-sweep containment."""
    started = time.monotonic()
    scorer = SimilarityScorer(cache, library.sentences)
    blocks = [b for g in library.groups.values() for b in g if b.span_text]
    rng = random.Random(20240202)

    for _ in range(1000):
        a, b = rng.sample(blocks, 2)
        comps = scorer.component_scores(a, b)
        w = SimilarityWeights(*(rng.uniform(0.0, 2.0) for _ in range(4)), rng.uniform(0.1, 2.0))
        theta = hybrid_score(comps, w)
        assert 0.0 <= theta <= 1.0
        assert theta == hybrid_score(scorer.component_scores(b, a), w)
        wt = w.as_tuple()
        expected = sum(wi * ci for wi, ci in zip(wt, comps.as_tuple())) / sum(wt)
        assert abs(theta - expected) <= 1e-12
        assert hybrid_score(scorer.component_scores(a, a), w) == 1.0

    floors = [round(0.1 * i, 1) for i in range(10)]
    weights = SimilarityWeights()
    sweeps = {
        floor: build_queues(library, weights, cache, floor=floor, scorer=scorer)
        for floor in floors
    }
    pair_sets = {
        floor: {
            (key.as_string(), c.source.block_id, c.replacement.block_id)
            for key, queue in queues.items()
            for c in queue.entries
        }
        for floor, queues in sweeps.items()
    }
    for lo in floors:
        for hi in floors:
            if hi >= lo:
                assert pair_sets[hi] <= pair_sets[lo]
    sizes = [len(pair_sets[f]) for f in floors]
    assert sizes == sorted(sizes, reverse=True)
    elapsed = time.monotonic() - started
    assert elapsed < 30.0
    _passed(
        "hybrid-similarity",
        f"1000 pairs match the weighted mean to 1e-12; containment over "
        f"{len(floors)} floors ({sizes[0]} -> {sizes[-1]} candidates), {elapsed:.1f}s",
    )


def test_pair_scorer_oracle():
    """score_pair equals a scalar-loop chain; zero scorer gives exact 1/K."""
    rng = np.random.default_rng(7)
    for trial in range(100):
        d = int(rng.integers(2, 6))
        d_e = int(rng.integers(2, 5))
        K = int(rng.integers(2, 5))
        from ssdau.filtering import PairScorer

        scorer = PairScorer(
            rng.standard_normal((d_e, 2 * d)),
            rng.standard_normal(d_e),
            rng.standard_normal((d_e, K)),
            0.0,
            d_e,
        )
        l_h = rng.standard_normal(d)
        l_t = rng.standard_normal(d)
        got = score_pair(scorer, l_h, l_t)

        x = list(l_h) + list(l_t)
        e = []
        for i in range(d_e):
            acc = float(scorer.bias[i])
            for j in range(2 * d):
                acc += float(scorer.W[i, j]) * x[j]
            e.append(max(acc, 0.0))
        expected = []
        for k in range(K):
            acc = 0.0
            for i in range(d_e):
                acc += float(scorer.R_rel[i, k]) * e[i]
            expected.append(acc)
        for g, want in zip(got, expected):
            denom = max(abs(g), abs(want), 1e-12)
            assert abs(g - want) / denom <= 1e-9

    for K in (2, 3, 7):
        zero = init_zero(d=4, d_e=3, K=K)
        p = softmax(score_pair(zero, np.ones(4), np.ones(4)))
        assert np.all(p == 1.0 / K)
    _passed("pair-scorer-oracle", "100 scalar-loop scorers within 1e-9; zero scorer exact 1/K")


def test_consistency_loss_analytics():
    """Uniform = log T, perfect = 0, sparse equals dense on the small grid."""
    started = time.monotonic()
    provider = DeterministicTestProvider(5)
    cache = SentenceVectorCache(provider)

    sentence = make_sentence("u", "a b c d")
    for T in (2, 3, 4):
        tags = TagAssignment({(0, 0, 1, 1)}, T)
        zeta = consistency_loss(init_zero(d=5, d_e=3, K=2), sentence, tags, cache)
        assert abs(zeta - math.log(T)) <= 1e-12

    n, K, T = 3, 2, 4
    tags = TagAssignment({(0, 1, 2, 3), (1, 0, 0, 1)}, T)
    log_probs = np.full((n, K, n, T), -1e9)
    gold = np.zeros((n, K, n), dtype=int)
    for i, k, j, t in tags.entries:
        gold[i, k, j] = t
    for i in range(n):
        for k in range(K):
            for j in range(n):
                log_probs[i, k, j, gold[i, k, j]] = 0.0
    assert zeta_dense(log_probs, tags) == 0.0

    rng = np.random.default_rng(11)
    checked = 0
    for n in range(1, 7):
        words = " ".join(f"w{i}" for i in range(n))
        sentence = make_sentence(f"g{n}", words)
        per_token, _ = cache.vectors(sentence)
        for K in range(1, 4):
            for T in range(2, 5):
                from ssdau.filtering import PairScorer

                scorer = PairScorer(
                    rng.standard_normal((3, 10)),
                    rng.standard_normal(3),
                    rng.standard_normal((3, K)),
                    0.0,
                    3,
                )
                entries = set()
                for _ in range(int(rng.integers(0, 4))):
                    entries.add((
                        int(rng.integers(n)), int(rng.integers(K)),
                        int(rng.integers(n)), int(rng.integers(1, T)),
                    ))
                tags = TagAssignment(entries, T)
                got = consistency_loss(scorer, sentence, tags, cache)

                gold = {}
                for i, k, j, t in tags.entries:
                    gold[(i, k, j)] = t
                total = 0.0
                for i in range(n):
                    for k in range(K):
                        for j in range(n):
                            s = float(score_pair(scorer, per_token[i], per_token[j])[k])
                            logits = np.array([0.0] + [s] * (T - 1))
                            probs = softmax(logits)
                            total += -math.log(probs[gold.get((i, k, j), 0)])
                expected = total / (n * K * n)
                assert got == pytest.approx(expected, rel=1e-9, abs=1e-12)
                checked += 1
    elapsed = time.monotonic() - started
    assert elapsed < 10.0
    _passed(
        "consistency-loss-analytics",
        f"uniform = log T, perfect = 0, {checked} grid instances sparse == dense, "
        f"{elapsed:.1f}s",
    )


def test_training_criteria():
    """Finite-difference gradient agreement and full accuracy on a toy set."""
    d, d_e, K = 3, 2, 2
    rng = np.random.default_rng(13)
    from ssdau.filtering import PairScorer

    scorer = PairScorer(
        rng.standard_normal((d_e, 2 * d)) * 0.7,
        rng.standard_normal(d_e) * 0.7,
        rng.standard_normal((d_e, K)) * 0.7,
        0.0,
        d_e,
    )
    batch = [
        (rng.standard_normal(d), rng.standard_normal(d), int(rng.integers(K)))
        for _ in range(8)
    ]
    _, grads = loss_and_grads(scorer, batch)
    h = 1e-6
    worst = 0.0
    for name in ("W", "bias", "R_rel"):
        arr = getattr(scorer, name)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up, _ = loss_and_grads(scorer, batch)
            arr[idx] = orig - h
            down, _ = loss_and_grads(scorer, batch)
            arr[idx] = orig
            numeric = (up - down) / (2 * h)
            denom = max(abs(numeric), abs(grads[name][idx]), 1e-8)
            worst = max(worst, abs(numeric - grads[name][idx]) / denom)
    assert worst < 1e-4

    rng = np.random.default_rng(4)
    samples = []
    for k, shift in ((0, 1.5), (1, -1.5)):
        for _ in range(10):
            samples.append((
                rng.standard_normal(4) + shift,
                rng.standard_normal(4) + shift,
                k,
            ))
    start = init_random(d=4, d_e=8, K=2, seed=0, dropout_rate=0.0)
    trained = train_scorer(start, samples, epochs=200, learning_rate=0.5)
    correct = 0
    for l_h, l_t, gold in samples:
        x = np.concatenate([l_h, l_t])
        e = np.maximum(trained.W @ x + trained.bias, 0.0)
        v = [float(np.dot(trained.R_rel[:, k], e)) for k in range(2)]
        correct += int(v[gold] == max(v) and v[gold] > v[1 - gold])
    assert correct == 20
    _passed(
        "training",
        f"max FD relative error {worst:.2e} < 1e-4; toy accuracy 20/20 within 200 epochs",
    )


def test_initialization_ordering():
    """Pretrained init beats random and zero inits on >= 95 of 100 seeds."""

    def mean_ce(scorer, samples):
        total = 0.0
        for l_h, l_t, gold in samples:
            p = softmax(score_pair(scorer, l_h, l_t))
            total += -math.log(max(float(p[gold]), 1e-300))
        return total / len(samples)

    wins = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        centers = rng.standard_normal((2, 2, 6))
        samples = []
        for k in range(2):
            for _ in range(10):
                samples.append((
                    centers[k, 0] + 0.1 * rng.standard_normal(6),
                    centers[k, 1] + 0.1 * rng.standard_normal(6),
                    k,
                ))
        pre = init_pretrained(samples, d_e=16, K=2, ridge=0.01, seed=seed)
        rand = init_random(d=6, d_e=16, K=2, seed=seed + 7)
        zero = init_zero(d=6, d_e=16, K=2)
        loss_pre = mean_ce(pre, samples)
        if loss_pre < mean_ce(rand, samples) and loss_pre < mean_ce(zero, samples):
            wins += 1
    assert wins >= 95
    _passed("initialization-ordering", f"pretrained best on {wins}/100 seeds")


def test_replacement_integrity(dataset, queues):
    """Offset-exact instances under coordinated replacement at 0.7."""
    policy = AugmentPolicy(mode="coordinated_hrt", epsilon=0.7)
    instances = augment_dataset(dataset, queues, policy)
    assert len(instances) > 0
    by_id = {s.id: (s, t) for s, t in dataset}
    for inst in instances:
        _, source_triples = by_id[inst.provenance.source_id]
        assert len(inst.triples) == len(source_triples)
        text = inst.sentence.text
        for triple in inst.triples:
            for m in (triple.head, triple.tail):
                a = inst.sentence.tokens[m.token_start].char_start
                b = inst.sentence.tokens[m.token_end - 1].char_end
                # offset oracle: the stored surface must be found in the
                # rebuilt text at exactly this position
                assert text[a:b] == m.surface
                assert text.find(m.surface, a) == a

    # fixed two-triple example: replacing the head must update both triples
    sentence, triples = table_example()
    donor_sentence, donor_triples = donor_example()
    src = next(b for b in encode(sentence, triples) if b.source_triple == 0 and b.role == HEAD)
    repl = next(b for b in encode(donor_sentence, donor_triples)
                if b.source_triple == 0 and b.role == HEAD)
    cand = MatchCandidate(src, repl, ComponentScores(1, 1, 1, 1, 1), 0.9)
    out = apply_replacement(sentence, triples, cand)
    assert out.sentence.text == (
        "At Arkansas , the freshman Amy Grant led the Razorbacks "
        "in a 24-23 double-overtime upset of Alabama ."
    )
    surfaces = [(t.head.surface, t.relation, t.tail.surface) for t in out.triples]
    assert surfaces == [
        ("Amy Grant", "place_lived", "Arkansas"),
        ("Razorbacks", "contain", "Amy Grant"),
    ]
    _passed(
        "replacement-integrity",
        f"{len(instances)} instances pass the offset oracle; two-triple propagation holds",
    )


def test_metrics_oracle():
    """Set-operation oracle, the IoU/F1 identity, and partial-vs-exact containment."""
    universe = [(f"h{i}", f"r{i % 3}", f"t{i}") for i in range(10)]
    rng = random.Random(99)
    for _ in range(1000):
        p = rng.sample(universe, rng.randint(0, 5))
        g = rng.sample(universe, rng.randint(0, 5))
        m = metrics(
            TripleSet.from_surface_triples(p), TripleSet.from_surface_triples(g)
        )
        inter = sum(1 for x in p if x in g)
        union = len({*p, *g})
        precision = 1.0 if not p and not g else (0.0 if not p else inter / len(p))
        recall = 1.0 if not g and not p else (0.0 if not g else inter / len(g))
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        iou = 1.0 if union == 0 else inter / union
        assert m == Metrics(precision, recall, f1, iou)
        if m.f1 > 0:
            assert abs(m.iou - m.f1 / (2 - m.f1)) <= 1e-12

    rng = random.Random(5)
    first = ["Amy", "John", "Sarah", "David"]
    last = ["Grant", "Adams", "Palin", "Cohen"]
    places = ["Arkansas", "Georgia", "Nashville"]
    gold, pred = [], []
    for i in range(20):
        h = f"{rng.choice(first)} {rng.choice(last)}"
        t = rng.choice(places)
        gold.append((h, "place_lived", t))
        pred.append((h, "place_lived", t) if i % 2 == 0
                    else (h.split()[-1], "place_lived", t))
    exact = TripleSet.from_surface_triples(pred, "exact").triples \
        & TripleSet.from_surface_triples(gold, "exact").triples
    partial = TripleSet.from_surface_triples(pred, "partial").triples \
        & TripleSet.from_surface_triples(gold, "partial").triples
    assert {normalize_triple(t, "partial") for t in exact} <= partial
    _passed("metrics-oracle", "1000 random pairs exact; iou = f1/(2-f1); partial >= exact")


def test_filtering_criteria(schema, provider):
    """Keep-count and tie determinism; planted cross-cluster rejection."""
    cache = SentenceVectorCache(provider)
    texts = [
        "Amy Grant lived happily in Fort Wayne .",
        "John Adams lived quietly in San Pedro .",
        "Sarah Palin lived proudly in Georgia .",
        "Mitch Daniels lived briefly in Nashville .",
        "Laura Cohen lived happily in Alabama .",
        "David Palin lived quietly in Arkansas .",
        "Amy Adams lived proudly in New Haven .",
        "John Grant lived briefly in San Marino .",
        "Sarah Grant lived happily in Fort Collins .",
        "David Cohen lived quietly in New Orleans .",
    ]
    from ssdau.augment import AugmentedInstance, Provenance

    instances = []
    for i, text in enumerate(texts):
        s = make_sentence(f"k{i:02d}", text)
        head = EntityMention(0, 2, s.token_text(0, 2), "people")
        tail = EntityMention(5, 7, s.token_text(5, 7), "place")
        instances.append(AugmentedInstance(
            s, [Triple(head, "place_lived", tail)], Provenance(f"k{i:02d}", "head_only")
        ))
    # duplicate texts produce tied losses; ids must break the tie
    twin_a = AugmentedInstance(
        make_sentence("tie-b", texts[0]), instances[0].triples, Provenance("tie-b", "head_only")
    )
    twin_b = AugmentedInstance(
        make_sentence("tie-a", texts[0]), instances[0].triples, Provenance("tie-a", "head_only")
    )
    pool = instances + [twin_a, twin_b]
    scorer = init_random(d=32, d_e=8, K=schema.K, seed=3, dropout_rate=0.0)
    for frac in (0.3, 0.5, 0.8, 1.0):
        results = filter_consistency(pool, scorer, cache, schema, keep_fraction=frac)
        kept = [r for r in results if r.kept]
        assert len(kept) == math.ceil(frac * len(pool))
        zetas = [r.zeta for r in results]
        assert zetas == sorted(zetas)
    results = filter_consistency(pool, scorer, cache, schema, keep_fraction=1.0)
    tie_ranks = {r.instance_id: r.rank for r in results if r.instance_id.startswith("tie")}
    twin_zetas = {r.instance_id: r.zeta for r in results if r.instance_id.startswith("tie")}
    assert twin_zetas["tie-a"] == twin_zetas["tie-b"]
    assert tie_ranks["tie-a"] < tie_ranks["tie-b"]

    cluster_a = [
        "alpha beta gamma delta market",
        "alpha gamma delta beta trading",
        "beta delta alpha gamma finance",
        "gamma alpha beta delta economy",
    ]
    cluster_b = [
        "omega sigma lambda kappa nebula",
        "sigma kappa omega lambda galaxy",
        "lambda omega kappa sigma cosmos",
        "kappa lambda sigma omega stellar",
    ]
    sentences = [make_sentence(f"t{i:02d}", t) for i, t in enumerate(cluster_a + cluster_b)]
    model = fit_topics(sentences, cache, 2, seed=0)
    src = sentences[0]
    cross = AugmentedInstance(
        make_sentence("x", "omega sigma lambda kappa galaxy"), [], Provenance("t00", "m")
    )
    within = [
        AugmentedInstance(
            make_sentence(f"w{i}", t.replace("market", "commerce")), [], Provenance("t00", "m")
        )
        for i, t in enumerate(cluster_a)
    ]
    assert not topic_filter(model, src, cross, min_affinity=0.9, provider=cache)
    for cand in within:
        assert topic_filter(model, src, cand, min_affinity=0.9, provider=cache)
    _passed(
        "filtering",
        "keep counts exact with deterministic ties; planted cross-cluster candidate rejected",
    )


def test_end_to_end_determinism(tmp_path, dataset, foreign_pool):
    """Identical reruns produce identical artifacts; injection adds 10%."""
    data_file = tmp_path / "corpus.jsonl"
    save_dataset(dataset[:40], data_file)
    manifests = []
    for name in ("a", "b"):
        config = RunConfig.from_dict({
            "dataset": str(data_file),
            "seed": 77,
            "output_dir": str(tmp_path / name),
            "filter": {"k_topics": 4},
        })
        manifests.append(run_pipeline(config).to_dict())
    assert manifests[0]["artifacts"] == manifests[1]["artifacts"]

    perturbed = inject_perturbation(dataset, foreign_pool, 0.1, seed=5)
    assert len(perturbed) == len(dataset) + round(0.1 * len(dataset))
    original_records = [instance_to_record(s, t) for s, t in dataset]
    after_records = [instance_to_record(s, t) for s, t in perturbed[: len(dataset)]]
    assert original_records == after_records
    _passed(
        "end-to-end-determinism",
        f"artifact hashes identical across runs; injection {len(dataset)} -> {len(perturbed)}",
    )
