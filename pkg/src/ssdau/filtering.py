"""Scoring-based consistency filtering and topic-coherence filtering.

The pair scorer maps concatenated head/tail token vectors through a ReLU
projection and a relation matrix to per-relation scores:

    e = relu(W [l_h; l_t] + b)          (d_e,)
    v = R_rel^T drop(e)                 (K,)

Per-cell tag distributions for the consistency loss put logit 0 on the
null tag and the pair's relation-k score on every non-null tag, so a
zero scorer is exactly the uniform predictor. The loss

    zeta = -(1 / (n * K * n)) * sum log P(gold tag | sentence)

is evaluated sparsely: absent cells contribute their null log-probability
through the closed form log P(null) = -log(1 + (T-1) e^s), which makes
the sparse sum equal the dense enumeration without materializing the
n x K x n x T tensor.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentedInstance
from .corpus import (
    DEFAULT_MAX_SPAN,
    RelationSchema,
    Sentence,
    TagAssignment,
    triples_to_tags,
)
from .embedding import SentenceVectorCache
from .errors import (
    ConfigurationError,
    DivergenceError,
    ProviderError,
    TopicModelError,
)

DEFAULT_DROPOUT = 0.1
DEFAULT_KEEP_FRACTION = 0.8

SCORER_MAGIC = "ssdau-scorer"
SCORER_VERSION = 1


@dataclass
class PairScorer:
    W: np.ndarray  # (d_e, 2d)
    bias: np.ndarray  # (d_e,)
    R_rel: np.ndarray  # (d_e, K)
    dropout_rate: float = DEFAULT_DROPOUT
    d_e: int = 0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.R_rel = np.asarray(self.R_rel, dtype=np.float64)
        if self.d_e == 0:
            self.d_e = self.W.shape[0]
        if self.W.shape[0] != self.d_e or self.bias.shape != (self.d_e,):
            raise ProviderError("scorer W/bias dimensions inconsistent with d_e")
        if self.R_rel.shape[0] != self.d_e:
            raise ProviderError("scorer R_rel dimension inconsistent with d_e")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigurationError("dropout_rate must be in [0, 1)")
        for arr in (self.W, self.bias, self.R_rel):
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError("scorer parameters must be finite")

    @property
    def d(self) -> int:
        return self.W.shape[1] // 2

    @property
    def K(self) -> int:
        return self.R_rel.shape[1]

    def copy(self) -> "PairScorer":
        return PairScorer(
            self.W.copy(), self.bias.copy(), self.R_rel.copy(), self.dropout_rate, self.d_e
        )


def _dropout_mask(rng: np.random.Generator, size: int, rate: float) -> np.ndarray:
    if rate <= 0.0:
        return np.ones(size)
    keep = rng.random(size) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def score_pair(
    scorer: PairScorer,
    l_h: np.ndarray,
    l_t: np.ndarray,
    train_mode: bool = False,
    seed: int = 0,
) -> np.ndarray:
    """Relation score vector for one head/tail pair of token vectors.

    Dropout (inverted, expectation-preserving) is applied only in train
    mode, with a Bernoulli mask drawn from the given seed.
    """
    l_h = np.asarray(l_h, dtype=np.float64)
    l_t = np.asarray(l_t, dtype=np.float64)
    if l_h.shape != (scorer.d,) or l_t.shape != (scorer.d,):
        raise ProviderError(
            f"expected vectors of dimension {scorer.d}, got {l_h.shape} and {l_t.shape}"
        )
    x = np.concatenate([l_h, l_t])
    e = np.maximum(scorer.W @ x + scorer.bias, 0.0)
    if train_mode and scorer.dropout_rate > 0.0:
        e = e * _dropout_mask(np.random.default_rng(seed), scorer.d_e, scorer.dropout_rate)
    return scorer.R_rel.T @ e


def softmax(v: np.ndarray) -> np.ndarray:
    shifted = v - np.max(v)
    exp = np.exp(shifted)
    return exp / exp.sum()


def pair_grid_scores(
    scorer: PairScorer, token_vectors: list[np.ndarray]
) -> np.ndarray:
    """Scores for all (head token, tail token) pairs; shape (n, n, K)."""
    n = len(token_vectors)
    L = np.stack([np.asarray(v, dtype=np.float64) for v in token_vectors])
    if L.shape[1] != scorer.d:
        raise ProviderError(
            f"token vectors have dimension {L.shape[1]}, scorer expects {scorer.d}"
        )
    d_e = scorer.d_e
    Wh = scorer.W[:, : scorer.d]
    Wt = scorer.W[:, scorer.d :]
    head_part = L @ Wh.T  # (n, d_e)
    tail_part = L @ Wt.T  # (n, d_e)
    pre = head_part[:, None, :] + tail_part[None, :, :] + scorer.bias  # (n, n, d_e)
    e = np.maximum(pre, 0.0)
    return (e.reshape(n * n, d_e) @ scorer.R_rel).reshape(n, n, scorer.K)


def consistency_loss(
    scorer: PairScorer,
    sentence: Sentence,
    tags: TagAssignment,
    provider,
) -> float:
    """Average per-cell gold-tag negative log-likelihood (see module docs)."""
    cache = provider if isinstance(provider, SentenceVectorCache) else SentenceVectorCache(provider)
    per_token, _ = cache.vectors(sentence)
    n = len(per_token)
    K = scorer.K
    T = tags.tag_vocab_size
    if n == 0 or T < 2:
        return 0.0
    scores = pair_grid_scores(scorer, per_token)
    # total null log-partition over every cell
    log_z = np.logaddexp(0.0, scores + math.log(T - 1))  # (n, n, K)
    total = float(log_z.sum())
    # each cell holds one gold tag; all non-null tags share a logit, so a
    # cell contributes -s once no matter how many entries land on it
    cells = {(i, k, j) for i, k, j, tag in tags.entries if tag >= 1}
    for i, k, j in cells:
        total -= float(scores[i, j, k])
    return total / (n * K * n)


def zeta_dense(log_probs: np.ndarray, tags: TagAssignment) -> float:
    """Reference form of the loss over explicit per-cell log-probabilities.

    ``log_probs`` has shape (n, K, n, T); absent cells are scored against
    the null tag (id 0).
    """
    n, K, n2, _ = log_probs.shape
    gold = np.zeros((n, K, n2), dtype=np.int64)
    for i, k, j, tag in tags.entries:
        gold[i, k, j] = tag
    picked = np.take_along_axis(log_probs, gold[..., None], axis=-1)
    return float(-picked.mean())


def init_zero(
    d: int, d_e: int, K: int, dropout_rate: float = DEFAULT_DROPOUT
) -> PairScorer:
    return PairScorer(
        np.zeros((d_e, 2 * d)), np.zeros(d_e), np.zeros((d_e, K)), dropout_rate, d_e
    )


def init_random(
    d: int,
    d_e: int,
    K: int,
    seed: int = 0,
    scale: float = 0.1,
    dropout_rate: float = DEFAULT_DROPOUT,
) -> PairScorer:
    rng = np.random.default_rng(seed)
    return PairScorer(
        rng.standard_normal((d_e, 2 * d)) * scale,
        rng.standard_normal(d_e) * scale,
        rng.standard_normal((d_e, K)) * scale,
        dropout_rate,
        d_e,
    )


def init_pretrained(
    training: list[tuple[np.ndarray, np.ndarray, int]],
    d_e: int,
    K: int,
    ridge: float = 1e-2,
    seed: int = 0,
    dropout_rate: float = DEFAULT_DROPOUT,
) -> PairScorer:
    """Closed-form init from embedding statistics.

    A seeded random ReLU expansion of the concatenated pair vectors is
    fitted to one-hot relation targets by ridge regression; the solved
    readout becomes the relation matrix. Degenerate (all-identical)
    inputs fall back to a seeded random init with a warning.
    """
    if not training:
        raise ConfigurationError("init_pretrained requires a non-empty training set")
    if ridge <= 0:
        raise ConfigurationError("ridge must be positive")
    X = np.stack(
        [np.concatenate([np.asarray(h, dtype=np.float64), np.asarray(t, dtype=np.float64)])
         for h, t, _ in training]
    )
    d2 = X.shape[1]
    if np.allclose(X, X[0]):
        warnings.warn("all training pairs identical; falling back to random init")
        return init_random(d2 // 2, d_e, K, seed=seed, dropout_rate=dropout_rate)
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d_e, d2)) / math.sqrt(d2)
    b = rng.standard_normal(d_e) * 0.1
    H = np.maximum(X @ W.T + b, 0.0)  # (N, d_e)
    Y = np.zeros((len(training), K))
    for row, (_, _, gold) in enumerate(training):
        Y[row, gold] = 1.0
    R = np.linalg.solve(H.T @ H + ridge * np.eye(d_e), H.T @ Y)
    return PairScorer(W, b, R, dropout_rate, d_e)


def loss_and_grads(
    scorer: PairScorer,
    batch: list[tuple[np.ndarray, np.ndarray, int]],
    train_mode: bool = False,
    seed: int = 0,
):
    """Mean cross-entropy of softmax(v) vs gold relations, with gradients."""
    gW = np.zeros_like(scorer.W)
    gb = np.zeros_like(scorer.bias)
    gR = np.zeros_like(scorer.R_rel)
    total = 0.0
    rng = np.random.default_rng(seed)
    for l_h, l_t, gold in batch:
        x = np.concatenate(
            [np.asarray(l_h, dtype=np.float64), np.asarray(l_t, dtype=np.float64)]
        )
        pre = scorer.W @ x + scorer.bias
        e = np.maximum(pre, 0.0)
        if train_mode and scorer.dropout_rate > 0.0:
            mask = _dropout_mask(rng, scorer.d_e, scorer.dropout_rate)
        else:
            mask = np.ones(scorer.d_e)
        dropped = e * mask
        v = scorer.R_rel.T @ dropped
        p = softmax(v)
        total += -math.log(max(p[gold], 1e-300))
        dv = p.copy()
        dv[gold] -= 1.0
        gR += np.outer(dropped, dv)
        d_dropped = scorer.R_rel @ dv
        de = d_dropped * mask * (pre > 0.0)
        gW += np.outer(de, x)
        gb += de
    m = len(batch)
    return total / m, {"W": gW / m, "bias": gb / m, "R_rel": gR / m}


def train_scorer(
    scorer: PairScorer,
    training: list[tuple[np.ndarray, np.ndarray, int]],
    epochs: int,
    learning_rate: float,
    seed: int = 0,
) -> PairScorer:
    """Full-batch gradient descent; deterministic under the seed."""
    if learning_rate < 0:
        raise ConfigurationError("learning_rate must be >= 0")
    if not training:
        raise ConfigurationError("training set must be non-empty")
    out = scorer.copy()
    if learning_rate == 0.0 or epochs == 0:
        return out
    use_dropout = out.dropout_rate > 0.0
    for epoch in range(epochs):
        loss, grads = loss_and_grads(
            out, training, train_mode=use_dropout, seed=seed + epoch
        )
        if not math.isfinite(loss):
            raise DivergenceError(
                f"non-finite training loss at epoch {epoch}", epoch=epoch
            )
        out.W -= learning_rate * grads["W"]
        out.bias -= learning_rate * grads["bias"]
        out.R_rel -= learning_rate * grads["R_rel"]
    return out


@dataclass
class ConsistencyResult:
    instance_id: str
    zeta: float
    rank: int
    kept: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def filter_consistency(
    instances: list[AugmentedInstance],
    scorer: PairScorer,
    provider,
    schema: RelationSchema,
    keep_fraction: float = DEFAULT_KEEP_FRACTION,
    max_span: int = DEFAULT_MAX_SPAN,
) -> list[ConsistencyResult]:
    """Rank instances by ascending loss; keep the ceil(fraction * n) best.

    Ties break on instance id, so the output is a pure function of the
    (loss, id) pairs regardless of input order.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigurationError("keep_fraction must be in (0, 1]")
    cache = provider if isinstance(provider, SentenceVectorCache) else SentenceVectorCache(provider)
    zetas = []
    for inst in instances:
        tags = triples_to_tags(inst.sentence, inst.triples, schema, max_span)
        zetas.append((consistency_loss(scorer, inst.sentence, tags, cache), inst.sentence.id))
    order = sorted(range(len(zetas)), key=lambda i: zetas[i])
    keep_count = math.ceil(keep_fraction * len(instances))
    results = []
    for rank, idx in enumerate(order):
        zeta, inst_id = zetas[idx]
        results.append(ConsistencyResult(inst_id, zeta, rank, rank < keep_count))
    return results


@dataclass
class TopicModel:
    k_topics: int
    centroids: np.ndarray  # (k, dim)
    topic_terms: list[list[tuple[str, float]]]
    assignments: dict[str, int] = field(default_factory=dict)

    def nearest(self, vector: np.ndarray) -> int:
        dist = np.linalg.norm(self.centroids - np.asarray(vector, dtype=np.float64), axis=1)
        return int(np.argmin(dist))


def _kmeans(vectors: np.ndarray, k: int, seed: int, iters: int = 100):
    rng = np.random.default_rng(seed)
    n = vectors.shape[0]
    centroids = vectors[rng.choice(n, size=k, replace=False)].copy()
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dist = np.linalg.norm(vectors[:, None, :] - centroids[None, :, :], axis=2)
        new_assign = np.argmin(dist, axis=1)
        for c in range(k):
            if not np.any(new_assign == c):
                # reseed an empty cluster with the point farthest from its centroid
                worst = int(np.argmax(dist[np.arange(n), new_assign]))
                new_assign[worst] = c
        if np.array_equal(new_assign, assign) and _ > 0:
            break
        assign = new_assign
        for c in range(k):
            centroids[c] = vectors[assign == c].mean(axis=0)
    return centroids, assign


def _class_tfidf(sentences: list[Sentence], assign, k: int) -> list[list[tuple[str, float]]]:
    class_counts: list[dict[str, int]] = [{} for _ in range(k)]
    for sent, topic in zip(sentences, assign):
        counts = class_counts[topic]
        for tok in sent.tokens:
            w = tok.surface.lower()
            if w.isalpha():
                counts[w] = counts.get(w, 0) + 1
    totals = [max(1, sum(c.values())) for c in class_counts]
    avg_class_size = sum(totals) / k
    global_freq: dict[str, int] = {}
    for counts in class_counts:
        for w, c in counts.items():
            global_freq[w] = global_freq.get(w, 0) + c
    terms = []
    for c in range(k):
        scored = [
            (w, (cnt / totals[c]) * math.log(1.0 + avg_class_size / global_freq[w]))
            for w, cnt in class_counts[c].items()
        ]
        scored.sort(key=lambda item: (-item[1], item[0]))
        terms.append(scored[:10])
    return terms


def fit_topics(
    sentences: list[Sentence], provider, k_topics: int, seed: int = 0
) -> TopicModel:
    """Seeded k-means over pooled sentence vectors + class-based TF-IDF terms."""
    if k_topics < 1:
        raise TopicModelError("k_topics must be >= 1")
    if len(sentences) < k_topics:
        raise TopicModelError(
            f"need at least {k_topics} sentences to fit {k_topics} topics, "
            f"got {len(sentences)}"
        )
    cache = provider if isinstance(provider, SentenceVectorCache) else SentenceVectorCache(provider)
    vectors = np.stack(
        [cache.vectors(s)[1].astype(np.float64) for s in sentences]
    )
    centroids, assign = _kmeans(vectors, k_topics, seed)
    return TopicModel(
        k_topics=k_topics,
        centroids=centroids,
        topic_terms=_class_tfidf(sentences, assign, k_topics),
        assignments={s.id: int(a) for s, a in zip(sentences, assign)},
    )


def topic_filter(
    model: TopicModel,
    source: Sentence,
    candidate: AugmentedInstance,
    min_affinity: float,
    provider,
) -> bool:
    """Keep a candidate whose topic matches its source (or is affine enough)."""
    if not 0.0 <= min_affinity <= 1.0:
        raise ConfigurationError("min_affinity must be in [0, 1]")
    cache = provider if isinstance(provider, SentenceVectorCache) else SentenceVectorCache(provider)
    source_topic = model.assignments.get(source.id)
    if source_topic is None:
        source_topic = model.nearest(cache.vectors(source)[1])
    cand_vec = cache.vectors(candidate.sentence)[1].astype(np.float64)
    if model.nearest(cand_vec) == source_topic:
        return True
    centroid = model.centroids[source_topic]
    nu = float(np.linalg.norm(cand_vec))
    nc = float(np.linalg.norm(centroid))
    if nu == 0.0 or nc == 0.0:
        return False
    affinity = (float(np.dot(cand_vec, centroid) / (nu * nc)) + 1.0) / 2.0
    return affinity >= min_affinity


def save_scorer(
    scorer: PairScorer, path: str | Path, seed: int = 0, init_kind: str = "unknown"
) -> None:
    """Versioned binary blob: one JSON header line, then raw float64 arrays."""
    header = {
        "magic": SCORER_MAGIC,
        "version": SCORER_VERSION,
        "d": scorer.d,
        "d_e": scorer.d_e,
        "K": scorer.K,
        "dropout_rate": scorer.dropout_rate,
        "seed": seed,
        "init": init_kind,
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(scorer.W.astype("<f8").tobytes())
        fh.write(scorer.bias.astype("<f8").tobytes())
        fh.write(scorer.R_rel.astype("<f8").tobytes())


def load_scorer(path: str | Path) -> PairScorer:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("magic") != SCORER_MAGIC or header.get("version") != SCORER_VERSION:
            raise ConfigurationError(f"not a scorer blob: {path}")
        d, d_e, K = header["d"], header["d_e"], header["K"]
        W = np.frombuffer(fh.read(d_e * 2 * d * 8), dtype="<f8").reshape(d_e, 2 * d)
        b = np.frombuffer(fh.read(d_e * 8), dtype="<f8")
        R = np.frombuffer(fh.read(d_e * K * 8), dtype="<f8").reshape(d_e, K)
    return PairScorer(W.copy(), b.copy(), R.copy(), header["dropout_rate"], d_e)
