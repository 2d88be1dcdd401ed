"""Cross-block similarity scoring and per-group candidate queues.

Five signals, each in [0, 1] and symmetric:

* lexical: token Jaccard of the two span texts
* context: token Jaccard of the context windows
* syntactic: normalized POS-pattern edit similarity of the spans
* semantic: cosine of the spans embedded in isolation, rescaled by (x+1)/2
* contextual_embedding: cosine of the spans embedded inside their full
  source sentences, rescaled the same way

The hybrid score is the weighted mean of the components, so it stays in
[0, 1] and is monotone in every signal. Queues hold all ordered pairs of
distinct-surface blocks within a group whose hybrid score clears the
floor, in a deterministic total order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import tokenize
from .discretize import BlockLibrary, GroupKey, TextBlock
from .embedding import SentenceVectorCache
from .errors import ConfigurationError
from .pos import pattern_similarity, pos_pattern

DEFAULT_GROUP_CAP = 5000

COMPONENT_ORDER = ("semantic", "syntactic", "lexical", "context", "contextual_embedding")


@dataclass(frozen=True)
class SimilarityWeights:
    w_semantic: float = 1.0
    w_syntactic: float = 1.0
    w_lexical: float = 1.0
    w_context: float = 1.0
    w_contextual_embedding: float = 1.0

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.w_semantic,
            self.w_syntactic,
            self.w_lexical,
            self.w_context,
            self.w_contextual_embedding,
        )

    def validate(self) -> None:
        values = self.as_tuple()
        if any(w < 0 for w in values):
            raise ConfigurationError("similarity weights must be nonnegative")
        if sum(values) <= 0:
            raise ConfigurationError("similarity weights must not all be zero")


@dataclass(frozen=True)
class ComponentScores:
    semantic: float
    syntactic: float
    lexical: float
    context: float
    contextual_embedding: float

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.semantic,
            self.syntactic,
            self.lexical,
            self.context,
            self.contextual_embedding,
        )

    def to_dict(self) -> dict:
        return dict(zip(COMPONENT_ORDER, self.as_tuple()))


@dataclass
class MatchCandidate:
    source: TextBlock
    replacement: TextBlock
    components: ComponentScores
    hybrid: float

    def sort_key(self) -> tuple:
        return (-self.hybrid, self.source.block_id, self.replacement.block_id)

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "replacement": self.replacement.to_dict(),
            "components": self.components.to_dict(),
            "hybrid": self.hybrid,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchCandidate":
        return cls(
            source=TextBlock.from_dict(d["source"]),
            replacement=TextBlock.from_dict(d["replacement"]),
            components=ComponentScores(**d["components"]),
            hybrid=d["hybrid"],
        )


@dataclass
class CandidateQueue:
    group: GroupKey
    entries: list[MatchCandidate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class MatchReport:
    groups: int = 0
    blocks: int = 0
    pairs_scored: int = 0
    rejected_empty_span: int = 0
    rejected_same_surface: int = 0
    below_floor: int = 0
    truncated: int = 0
    candidates: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 1.0


def _unit(v: np.ndarray) -> np.ndarray:
    """Normalized float64 copy; the zero vector stays zero."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0.0 else v


def _rescaled_cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of pre-normalized vectors mapped by (x+1)/2 into [0, 1]."""
    if u is v or np.array_equal(u, v):
        return 1.0
    if not u.any() or not v.any():
        return 0.5
    cos = float(u @ v)
    return min(1.0, max(0.0, (cos + 1.0) / 2.0))


class SimilarityScorer:
    """Caches block features and scores pairs within a group."""

    def __init__(self, provider, sentences: dict):
        self.cache = provider if isinstance(provider, SentenceVectorCache) else SentenceVectorCache(provider)
        self.sentences = sentences
        self._features: dict[str, tuple] = {}
        self._pair_memo: dict[tuple[str, str], tuple[float, ...]] = {}

    def _feature(self, block: TextBlock):
        feat = self._features.get(block.block_id)
        if feat is None:
            span_tokens = tokenize(block.span_text)
            surfaces = [t.surface for t in span_tokens]
            _, iso_pooled = self.cache.provider.embed(block.span_text, span_tokens)
            sentence = self.sentences[block.source_sentence]
            ctx_vec = self.cache.span_vector(sentence, block.cut[0], block.cut[1])
            feat = (
                set(surfaces),
                set(block.context_tokens),
                pos_pattern(surfaces),
                _unit(iso_pooled),
                _unit(ctx_vec),
            )
            self._features[block.block_id] = feat
        return feat

    def _score_tuple(self, a: TextBlock, b: TextBlock) -> tuple[float, ...]:
        pair = (a.block_id, b.block_id) if a.block_id <= b.block_id else (b.block_id, a.block_id)
        hit = self._pair_memo.get(pair)
        if hit is not None:
            return hit
        fa, fb = self._feature(a), self._feature(b)
        scores = (
            _rescaled_cosine(fa[3], fb[3]),
            pattern_similarity(fa[2], fb[2]),
            _jaccard(fa[0], fb[0]),
            _jaccard(fa[1], fb[1]),
            _rescaled_cosine(fa[4], fb[4]),
        )
        self._pair_memo[pair] = scores
        return scores

    def component_scores(self, a: TextBlock, b: TextBlock) -> ComponentScores:
        return ComponentScores(*self._score_tuple(a, b))


def component_scores(
    a: TextBlock, b: TextBlock, provider, sentences: dict
) -> ComponentScores:
    """Score one block pair (see module docstring for the definitions)."""
    return SimilarityScorer(provider, sentences).component_scores(a, b)


def hybrid_score(components: ComponentScores, weights: SimilarityWeights) -> float:
    """Weighted mean of the component scores, in [0, 1]."""
    weights.validate()
    w = weights.as_tuple()
    c = components.as_tuple()
    return sum(wi * ci for wi, ci in zip(w, c)) / sum(w)


def build_queues(
    library: BlockLibrary,
    weights: SimilarityWeights,
    provider,
    floor: float = 0.0,
    per_group_cap: int = DEFAULT_GROUP_CAP,
    report: MatchReport | None = None,
    scorer: SimilarityScorer | None = None,
) -> dict[GroupKey, CandidateQueue]:
    """Score all in-group pairs and build the per-group candidate queues.

    For every ordered pair (a, b) of distinct blocks with different span
    surfaces and hybrid score >= floor, the queue holds one candidate.
    Queues are sorted by (hybrid desc, source id, replacement id) and
    truncated to ``per_group_cap`` after sorting, so results do not
    depend on enumeration or thread order. Passing a pre-built scorer
    reuses its feature and pair-score memos across repeated builds.
    """
    if not 0.0 <= floor <= 1.0:
        raise ConfigurationError(f"floor must be in [0, 1], got {floor}")
    weights.validate()
    rep = report if report is not None else MatchReport()
    if scorer is None:
        scorer = SimilarityScorer(provider, library.sentences)
    queues: dict[GroupKey, CandidateQueue] = {}
    w = weights.as_tuple()
    w_total = sum(w)

    for key in sorted(library.groups, key=lambda k: k.as_string()):
        members = library.groups[key]
        rep.groups += 1
        rep.blocks += len(members)
        eligible = [b for b in members if b.span_text]
        rep.rejected_empty_span += len(members) - len(eligible)
        entries: list[MatchCandidate] = []
        for i in range(len(eligible)):
            for j in range(i + 1, len(eligible)):
                a, b = eligible[i], eligible[j]
                if a.span_text == b.span_text:
                    rep.rejected_same_surface += 1
                    continue
                rep.pairs_scored += 1
                c = scorer._score_tuple(a, b)
                # same arithmetic as hybrid_score, with the validation hoisted
                theta = sum(wi * ci for wi, ci in zip(w, c)) / w_total
                if theta < floor:
                    rep.below_floor += 1
                    continue
                comps = ComponentScores(*c)
                entries.append(MatchCandidate(a, b, comps, theta))
                entries.append(MatchCandidate(b, a, comps, theta))
        entries.sort(key=MatchCandidate.sort_key)
        if per_group_cap is not None and len(entries) > per_group_cap:
            rep.truncated += len(entries) - per_group_cap
            entries = entries[:per_group_cap]
        rep.candidates += len(entries)
        queues[key] = CandidateQueue(group=key, entries=entries)
    return queues


def queues_to_json_dict(
    queues: dict[GroupKey, CandidateQueue],
    weights: SimilarityWeights,
    floor: float,
) -> dict:
    return {
        "floor": floor,
        "weights": dict(zip(COMPONENT_ORDER, weights.as_tuple())),
        "queues": {
            key.as_string(): [c.to_dict() for c in queues[key].entries]
            for key in sorted(queues, key=lambda k: k.as_string())
        },
    }


def queues_from_json_dict(d: dict) -> dict[GroupKey, CandidateQueue]:
    out = {}
    for key_s, entries in d["queues"].items():
        key = GroupKey.from_string(key_s)
        out[key] = CandidateQueue(
            group=key, entries=[MatchCandidate.from_dict(e) for e in entries]
        )
    return out
