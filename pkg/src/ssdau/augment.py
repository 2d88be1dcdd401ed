"""Structure-consistent replacement and the syntactic coherence gate.

A replacement swaps one block's span for a compatible block's surface at
the recorded cut position. Entity replacements propagate: every
token-aligned occurrence of the replaced surface in the sentence changes
with it (so an entity appearing in several triples stays consistent),
and all triple offsets are remapped against the rebuilt text. Relation
replacements swap only the inter-entity span and relabel the affected
triple with the replacement span's owning relation.

Multi-role modes compose single replacements in listed order (head,
relation, tail), re-resolving cut positions from the remapped triples
after each step.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace as dc_replace

from .corpus import (
    EntityMention,
    Instance,
    Sentence,
    Triple,
    make_sentence,
    resolve_mention,
)
from .discretize import HEAD, RELATION, TAIL, GroupKey, TextBlock
from .errors import SsdauError, ValidationError
from .matching import CandidateQueue, MatchCandidate
from .pos import pattern_similarity, pos_pattern

MODE_COORDINATED_HRT = "coordinated_hrt"
MODE_HEAD_ONLY = "head_only"
MODE_TAIL_ONLY = "tail_only"
MODE_RELATION_ONLY = "relation_only"
MODE_HT_ONLY = "ht_only"
MODE_HRH = "hrh"
MODE_TRT = "trt"
AUGMENT_MODES = (
    MODE_COORDINATED_HRT,
    MODE_HEAD_ONLY,
    MODE_TAIL_ONLY,
    MODE_RELATION_ONLY,
    MODE_HT_ONLY,
    MODE_HRH,
    MODE_TRT,
)

DEFAULT_NU_FLOOR = 0.5
DEFAULT_MAX_PER_SENTENCE = 3


class ReplacementRejected(SsdauError):
    """A candidate replacement could not produce a valid instance."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass
class AugmentPolicy:
    mode: str = MODE_COORDINATED_HRT
    epsilon: float = 0.7
    epsilon_entity: float | None = None
    epsilon_relation: float | None = None
    max_per_sentence: int = DEFAULT_MAX_PER_SENTENCE
    nu_floor: float = DEFAULT_NU_FLOOR

    def validate(self) -> None:
        if self.mode not in AUGMENT_MODES:
            raise ValidationError(f"unknown augment mode: {self.mode!r}")
        for name in ("epsilon", "epsilon_entity", "epsilon_relation", "nu_floor"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.01:
                raise ValidationError(f"{name} must be in [0, 1], got {value}")
        if self.max_per_sentence < 1:
            raise ValidationError("max_per_sentence must be >= 1")

    def threshold(self, role: str) -> float:
        if role == RELATION:
            return self.epsilon_relation if self.epsilon_relation is not None else self.epsilon
        return self.epsilon_entity if self.epsilon_entity is not None else self.epsilon


@dataclass
class Provenance:
    source_id: str
    mode: str
    replaced_roles: list[str] = field(default_factory=list)
    thetas: list[float] = field(default_factory=list)
    replacement_sources: list[str] = field(default_factory=list)
    rank: int = 0
    nu: float = 1.0

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "mode": self.mode,
            "replaced_roles": list(self.replaced_roles),
            "thetas": list(self.thetas),
            "replacement_sources": list(self.replacement_sources),
            "rank": self.rank,
            "nu": self.nu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(
            source_id=d["source_id"],
            mode=d["mode"],
            replaced_roles=list(d["replaced_roles"]),
            thetas=list(d["thetas"]),
            replacement_sources=list(d["replacement_sources"]),
            rank=d.get("rank", 0),
            nu=d.get("nu", 1.0),
        )


@dataclass
class AugmentedInstance:
    sentence: Sentence
    triples: list[Triple]
    provenance: Provenance


@dataclass
class CoherenceReport:
    nu: float
    source_pattern: list[str]
    candidate_pattern: list[str]


@dataclass
class AugmentReport:
    sentences: int = 0
    compositions: int = 0
    rejected: dict = field(default_factory=dict)
    coherence_dropped: int = 0
    identity_dropped: int = 0
    kept: int = 0

    def reject(self, reason: str) -> None:
        self.rejected[reason] = self.rejected.get(reason, 0) + 1

    def to_dict(self) -> dict:
        return {
            "sentences": self.sentences,
            "compositions": self.compositions,
            "rejected": dict(sorted(self.rejected.items())),
            "coherence_dropped": self.coherence_dropped,
            "identity_dropped": self.identity_dropped,
            "kept": self.kept,
        }


def _token_aligned_sites(sentence: Sentence, surface: str) -> list[tuple[int, int]]:
    """Char spans of all token-aligned occurrences of ``surface``."""
    boundaries_start = {t.char_start for t in sentence.tokens}
    boundaries_end = {t.char_end for t in sentence.tokens}
    sites = []
    pos = sentence.text.find(surface)
    while pos != -1:
        end = pos + len(surface)
        if pos in boundaries_start and end in boundaries_end:
            sites.append((pos, end))
            pos = sentence.text.find(surface, end)
        else:
            pos = sentence.text.find(surface, pos + 1)
    return sites


def _remap_char_span(span, sites, new_len):
    """Map an old char span through the replacement edits.

    Returns (new_start, new_end, replaced) or raises on partial overlap.
    """
    a, b = span
    delta = 0
    for sa, sb in sites:
        if (sa, sb) == (a, b):
            return a + delta, a + delta + new_len, True
        if sb <= a:
            delta += new_len - (sb - sa)
            continue
        if b <= sa:
            break
        raise ReplacementRejected(
            "overlapping_spans",
            f"mention span ({a}, {b}) partially overlaps replacement site ({sa}, {sb})",
        )
    return a + delta, b + delta, False


def _rebuild_text(text: str, sites: list[tuple[int, int]], new_surface: str) -> str:
    parts = []
    cursor = 0
    for sa, sb in sites:
        parts.append(text[cursor:sa])
        parts.append(new_surface)
        cursor = sb
    parts.append(text[cursor:])
    return "".join(parts)


def _mention_char_span(sentence: Sentence, m: EntityMention) -> tuple[int, int]:
    return (
        sentence.tokens[m.token_start].char_start,
        sentence.tokens[m.token_end - 1].char_end,
    )


def _mention_at(sentence: Sentence, char_span: tuple[int, int], tag: str) -> EntityMention:
    start_idx = end_idx = None
    for i, tok in enumerate(sentence.tokens):
        if tok.char_start == char_span[0]:
            start_idx = i
        if tok.char_end == char_span[1]:
            end_idx = i + 1
    if start_idx is None or end_idx is None or start_idx >= end_idx:
        raise ReplacementRejected(
            "token_misalignment",
            f"remapped span {char_span} is not token-aligned in the rebuilt text",
        )
    surface = sentence.text[char_span[0] : char_span[1]]
    return EntityMention(start_idx, end_idx, surface, tag)


def apply_replacement(
    sentence: Sentence,
    triples: list[Triple],
    candidate: MatchCandidate,
    new_id: str | None = None,
) -> AugmentedInstance:
    """Apply one replacement and remap every triple onto the rebuilt text.

    The caller is responsible for threshold checks; this function only
    enforces structural validity (it raises ``ReplacementRejected`` when
    the result cannot be represented consistently).
    """
    src = candidate.source
    if src.source_sentence != sentence.id:
        raise ValidationError(
            f"candidate source block {src.block_id} does not belong to "
            f"sentence {sentence.id!r}"
        )
    new_surface = candidate.replacement.span_text
    if not new_surface:
        raise ReplacementRejected("empty_replacement", candidate.replacement.block_id)
    if not (0 <= src.source_triple < len(triples)):
        raise ValidationError(f"source triple index {src.source_triple} out of range")

    if src.role == RELATION:
        if src.cut[0] >= src.cut[1]:
            raise ReplacementRejected("empty_relation_span", src.block_id)
        sites = [
            (
                sentence.tokens[src.cut[0]].char_start,
                sentence.tokens[src.cut[1] - 1].char_end,
            )
        ]
    else:
        old_surface = src.span_text
        if not old_surface:
            raise ReplacementRejected("empty_source_span", src.block_id)
        sites = _token_aligned_sites(sentence, old_surface)
        if not sites:
            raise ReplacementRejected("surface_not_found", old_surface)

    new_text = _rebuild_text(sentence.text, sites, new_surface)
    rebuilt = make_sentence(new_id or f"{sentence.id}::aug", new_text)

    new_triples: list[Triple] = []
    for ti, triple in enumerate(triples):
        relation = triple.relation
        if src.role == RELATION and ti == src.source_triple:
            relation = candidate.replacement.relation
        mentions = []
        for m in (triple.head, triple.tail):
            old_span = _mention_char_span(sentence, m)
            new_span = _remap_char_span(old_span, sites, len(new_surface))
            mentions.append(_mention_at(rebuilt, new_span[:2], m.tag))
        head, tail = mentions
        if head.token_start < tail.token_end and tail.token_start < head.token_end:
            raise ReplacementRejected(
                "overlapping_spans",
                f"triple {ti} head/tail overlap after remapping",
            )
        new_triples.append(Triple(head, relation, tail))

    provenance = Provenance(
        source_id=sentence.id,
        mode=src.role,
        replaced_roles=[src.role],
        thetas=[candidate.hybrid],
        replacement_sources=[candidate.replacement.block_id],
    )
    return AugmentedInstance(rebuilt, new_triples, provenance)


def coherence_score(source: Sentence, candidate: AugmentedInstance) -> CoherenceReport:
    """Normalized POS-pattern agreement between source and rebuilt text."""
    src_pattern = pos_pattern([t.surface for t in source.tokens])
    cand_pattern = pos_pattern([t.surface for t in candidate.sentence.tokens])
    return CoherenceReport(
        nu=pattern_similarity(src_pattern, cand_pattern),
        source_pattern=src_pattern,
        candidate_pattern=cand_pattern,
    )


def _adjusted_candidate(
    candidate: MatchCandidate, sentence: Sentence, triples: list[Triple]
) -> MatchCandidate:
    """Re-anchor a candidate's source block onto a partially rebuilt instance."""
    block = candidate.source
    triple = triples[block.source_triple]
    if block.role == HEAD:
        cut = (triple.head.token_start, triple.head.token_end)
    elif block.role == TAIL:
        cut = (triple.tail.token_start, triple.tail.token_end)
    else:
        hs, he = triple.head.token_start, triple.head.token_end
        ts, te = triple.tail.token_start, triple.tail.token_end
        cut = (he, ts) if he <= ts else (te, hs)
    adjusted = dc_replace(
        block,
        cut=cut,
        span_text=sentence.token_text(*cut),
        source_sentence=sentence.id,
    )
    return MatchCandidate(
        source=adjusted,
        replacement=candidate.replacement,
        components=candidate.components,
        hybrid=candidate.hybrid,
    )


def compose_replacements(
    sentence: Sentence, triples: list[Triple], candidates: list[MatchCandidate]
) -> AugmentedInstance:
    """Apply candidates in order, re-resolving offsets after each step."""
    if not candidates:
        raise ValidationError("composition requires at least one candidate")
    cur_sentence, cur_triples = sentence, triples
    roles: list[str] = []
    thetas: list[float] = []
    sources: list[str] = []
    for step, cand in enumerate(candidates):
        if step > 0:
            cand = _adjusted_candidate(cand, cur_sentence, cur_triples)
        inst = apply_replacement(cur_sentence, cur_triples, cand)
        cur_sentence, cur_triples = inst.sentence, inst.triples
        cur_sentence = Sentence(f"{sentence.id}::aug", cur_sentence.text, cur_sentence.tokens)
        roles.append(cand.source.role)
        thetas.append(cand.hybrid)
        sources.append(cand.replacement.block_id)
    provenance = Provenance(
        source_id=sentence.id,
        mode="",
        replaced_roles=roles,
        thetas=thetas,
        replacement_sources=sources,
    )
    return AugmentedInstance(cur_sentence, cur_triples, provenance)


def _index_candidates(queues: dict[GroupKey, CandidateQueue]):
    """sentence id -> (triple index, role) -> candidates in queue order."""
    index: dict[str, dict[tuple[int, str], list[MatchCandidate]]] = {}
    for key in sorted(queues, key=lambda k: k.as_string()):
        for cand in queues[key].entries:
            src = cand.source
            index.setdefault(src.source_sentence, {}).setdefault(
                (src.source_triple, src.role), []
            ).append(cand)
    return index


def _eligible(cands, policy: AugmentPolicy, role: str) -> list[MatchCandidate]:
    return [c for c in cands if c.hybrid >= policy.threshold(role)]


def _combos_for_sentence(triples, cand_map, policy: AugmentPolicy):
    """Enumerate candidate compositions for one sentence, deterministically."""
    mode = policy.mode
    triple_indices = sorted({ti for ti, _ in cand_map})

    def pool(ti, role):
        return _eligible(cand_map.get((ti, role), []), policy, role)

    combos: list[list[MatchCandidate]] = []
    if mode in (MODE_HEAD_ONLY, MODE_TAIL_ONLY, MODE_RELATION_ONLY):
        role = {MODE_HEAD_ONLY: HEAD, MODE_TAIL_ONLY: TAIL, MODE_RELATION_ONLY: RELATION}[mode]
        for ti in triple_indices:
            combos.extend([c] for c in pool(ti, role))
    elif mode == MODE_HT_ONLY:
        for ti in triple_indices:
            for h in pool(ti, HEAD):
                for t in pool(ti, TAIL):
                    combos.append([h, t])
    elif mode == MODE_COORDINATED_HRT:
        for ti in triple_indices:
            for h in pool(ti, HEAD):
                for r in pool(ti, RELATION):
                    for t in pool(ti, TAIL):
                        combos.append([h, r, t])
    elif mode in (MODE_HRH, MODE_TRT):
        role = HEAD if mode == MODE_HRH else TAIL
        for ti in triple_indices:
            for tj in triple_indices:
                if tj == ti:
                    continue
                for first in pool(ti, role):
                    for r in pool(ti, RELATION):
                        for second in pool(tj, role):
                            combos.append([first, r, second])
    return combos


def augment_dataset(
    dataset: list[Instance],
    queues: dict[GroupKey, CandidateQueue],
    policy: AugmentPolicy,
    report: AugmentReport | None = None,
) -> list[AugmentedInstance]:
    """Generate augmented instances for a dataset under a policy.

    Output contains augmented instances only, ordered by (source sentence
    id, rank); appending them to the originals is the caller's decision.
    """
    policy.validate()
    rep = report if report is not None else AugmentReport()
    index = _index_candidates(queues)
    out: list[AugmentedInstance] = []

    for sentence, triples in sorted(dataset, key=lambda inst: inst[0].id):
        rep.sentences += 1
        cand_map = index.get(sentence.id)
        if not cand_map:
            continue
        # rank before composing (the key needs only candidate metadata), then
        # compose lazily until the per-sentence cap is filled; gates only drop
        # combos, so this selects exactly the cap-many best survivors
        ranked = sorted(
            _combos_for_sentence(triples, cand_map, policy),
            key=lambda combo: (
                -statistics.fmean(c.hybrid for c in combo),
                tuple(c.replacement.block_id for c in combo),
            ),
        )
        selected = []
        for combo in ranked:
            if len(selected) >= policy.max_per_sentence:
                break
            rep.compositions += 1
            try:
                inst = compose_replacements(sentence, triples, combo)
            except ReplacementRejected as exc:
                rep.reject(exc.reason)
                continue
            if inst.sentence.text == sentence.text:
                rep.identity_dropped += 1
                continue
            nu = coherence_score(sentence, inst).nu
            if nu < policy.nu_floor:
                rep.coherence_dropped += 1
                continue
            inst.provenance.mode = policy.mode
            inst.provenance.nu = nu
            selected.append(inst)
        for rank, inst in enumerate(selected):
            inst.provenance.rank = rank
            inst.sentence.id = f"{sentence.id}::aug-{rank:04d}"
            out.append(inst)
            rep.kept += 1
    return out


def augmented_to_record(instance: AugmentedInstance) -> dict:
    sentence = instance.sentence

    def mention(m: EntityMention) -> dict:
        return {
            "char_start": sentence.tokens[m.token_start].char_start,
            "surface": m.surface,
            "tag": m.tag,
        }

    return {
        "id": sentence.id,
        "text": sentence.text,
        "triples": [
            {"head": mention(t.head), "relation": t.relation, "tail": mention(t.tail)}
            for t in instance.triples
        ],
        "provenance": instance.provenance.to_dict(),
    }


def augmented_from_record(record: dict) -> AugmentedInstance:
    sentence = make_sentence(record["id"], record["text"])
    triples = []
    for t in record["triples"]:
        head = resolve_mention(
            sentence, t["head"]["surface"], t["head"].get("tag", ""), t["head"].get("char_start")
        )
        tail = resolve_mention(
            sentence, t["tail"]["surface"], t["tail"].get("tag", ""), t["tail"].get("char_start")
        )
        triples.append(Triple(head, t["relation"], tail))
    return AugmentedInstance(sentence, triples, Provenance.from_dict(record["provenance"]))
