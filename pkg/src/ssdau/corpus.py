"""Data model and I/O for triple-annotated corpora.

A dataset is a list of ``(Sentence, [Triple])`` instances. Sentences carry
an offset-exact tokenization (whitespace-plus-punctuation split); every
entity mention is anchored to token indices, and the mention surface must
equal the covered text byte for byte. Triple labels can be projected into
a sparse tag assignment (one entry per triple, tag id encoding the head
and tail span lengths) and recovered exactly from it.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    AlignmentError,
    ConfigurationError,
    DatasetFormatError,
    SchemaError,
    ValidationError,
)

TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

DEFAULT_MAX_TOKENS = 128
DEFAULT_MAX_SPAN = 8


@dataclass(frozen=True)
class Token:
    surface: str
    char_start: int
    char_end: int


@dataclass
class Sentence:
    """A sentence with its offset-exact tokenization."""

    id: str
    text: str
    tokens: list[Token]

    def token_text(self, token_start: int, token_end: int) -> str:
        """Text covered by tokens[token_start:token_end], inter-token gaps included."""
        if token_start >= token_end:
            return ""
        a = self.tokens[token_start].char_start
        b = self.tokens[token_end - 1].char_end
        return self.text[a:b]


@dataclass(frozen=True)
class EntityMention:
    token_start: int  # inclusive
    token_end: int  # exclusive
    surface: str
    tag: str


@dataclass(frozen=True)
class Triple:
    head: EntityMention
    relation: str
    tail: EntityMention

    def key(self) -> tuple:
        """Positional identity: (head span, relation, tail span)."""
        return (
            (self.head.token_start, self.head.token_end),
            self.relation,
            (self.tail.token_start, self.tail.token_end),
        )


Instance = tuple[Sentence, list[Triple]]


@dataclass
class RelationSchema:
    """The relation inventory plus the entity-tag vocabulary.

    ``argument_tags`` optionally maps a relation name to its (head tag,
    tail tag) signature; it is filled when a dataset is unanimous about a
    relation's argument types and is used to restore mention tags when
    decoding tag assignments.
    """

    relations: list[str]
    entity_tags: set[str]
    argument_tags: dict[str, tuple[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.relations:
            raise SchemaError("relation set must be non-empty")
        if len(set(self.relations)) != len(self.relations):
            raise SchemaError("relation names must be unique")
        self._index = {name: i for i, name in enumerate(self.relations)}

    @property
    def K(self) -> int:
        return len(self.relations)

    def index(self, relation: str) -> int:
        try:
            return self._index[relation]
        except KeyError:
            raise SchemaError(f"unknown relation: {relation!r}") from None

    @classmethod
    def from_dataset(cls, dataset: list[Instance]) -> "RelationSchema":
        """Derive a schema from observed relations, tags, and signatures."""
        relations: set[str] = set()
        tags: set[str] = set()
        signatures: dict[str, set[tuple[str, str]]] = {}
        for _, triples in dataset:
            for t in triples:
                relations.add(t.relation)
                tags.add(t.head.tag)
                tags.add(t.tail.tag)
                signatures.setdefault(t.relation, set()).add((t.head.tag, t.tail.tag))
        argument_tags = {
            rel: next(iter(sigs)) for rel, sigs in signatures.items() if len(sigs) == 1
        }
        return cls(sorted(relations), tags, argument_tags)


@dataclass
class TagAssignment:
    """Sparse stand-in for the dense sentence-level label tensor.

    Entries are ``(head start token, relation index, tail start token,
    tag id)``. Tag id 0 is the null tag; id ``1 + (hl-1)*L + (tl-1)``
    encodes head/tail span lengths up to ``L`` tokens, so
    ``tag_vocab_size == 1 + L*L``.
    """

    entries: set[tuple[int, int, int, int]]
    tag_vocab_size: int

    @property
    def max_span(self) -> int:
        return int(math.isqrt(self.tag_vocab_size - 1))


def tokenize(text: str) -> list[Token]:
    """Split into word/punctuation tokens with exact char offsets."""
    return [Token(m.group(), m.start(), m.end()) for m in TOKEN_RE.finditer(text)]


def make_sentence(sent_id: str, text: str) -> Sentence:
    return Sentence(sent_id, text, tokenize(text))


def _find_token_span(sentence: Sentence, char_start: int, char_end: int):
    """Token range exactly covering [char_start, char_end), or None."""
    start_idx = end_idx = None
    for i, tok in enumerate(sentence.tokens):
        if tok.char_start == char_start:
            start_idx = i
        if tok.char_end == char_end:
            end_idx = i + 1
    if start_idx is None or end_idx is None or start_idx >= end_idx:
        return None
    return start_idx, end_idx


def resolve_mention(
    sentence: Sentence,
    surface: str,
    tag: str,
    char_start: int | None = None,
    warnings: list[str] | None = None,
) -> EntityMention:
    """Anchor a surface string to token indices.

    A stated char offset is trusted (and verified); otherwise the first
    token-aligned occurrence is used and a warning is recorded.
    """
    if not surface:
        raise AlignmentError("empty mention surface", sentence_id=sentence.id)
    if char_start is not None:
        if sentence.text[char_start : char_start + len(surface)] != surface:
            raise AlignmentError(
                f"surface {surface!r} not found at offset {char_start} "
                f"in sentence {sentence.id!r}",
                sentence_id=sentence.id,
            )
        span = _find_token_span(sentence, char_start, char_start + len(surface))
        if span is None:
            raise AlignmentError(
                f"surface {surface!r} at offset {char_start} does not align with "
                f"token boundaries in sentence {sentence.id!r}",
                sentence_id=sentence.id,
            )
        return EntityMention(span[0], span[1], surface, tag)

    pos = sentence.text.find(surface)
    while pos != -1:
        span = _find_token_span(sentence, pos, pos + len(surface))
        if span is not None:
            if warnings is not None:
                warnings.append(
                    f"{sentence.id}: mention {surface!r} resolved by first match"
                )
            return EntityMention(span[0], span[1], surface, tag)
        pos = sentence.text.find(surface, pos + 1)
    raise AlignmentError(
        f"surface {surface!r} not found in sentence {sentence.id!r}",
        sentence_id=sentence.id,
    )


@dataclass
class LoadReport:
    """Counts emitted by ``load_dataset`` (the `load-check` payload)."""

    path: str = ""
    format: str = ""
    sentences: int = 0
    triples: int = 0
    rejected_too_long: int = 0
    skipped_unknown_relations: int = 0
    unknown_relations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "format": self.format,
            "sentences": self.sentences,
            "triples": self.triples,
            "rejected_too_long": self.rejected_too_long,
            "skipped_unknown_relations": self.skipped_unknown_relations,
            "unknown_relations": sorted(set(self.unknown_relations)),
            "warnings": self.warnings,
        }


def _iter_records(path: Path, fmt: str):
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return
    if fmt == "webnlg_json" and text.lstrip().startswith("{") and '"data"' in text.split("\n", 1)[0]:
        doc = json.loads(text)
        for i, rec in enumerate(doc.get("data", [])):
            yield i, rec
        return
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            yield i, json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(
                f"invalid JSON at record {i}: {exc}", record_index=i
            ) from exc


def _parse_triple_fields(rec: dict, idx: int):
    """Normalize the supported record layouts to canonical triple dicts."""
    if "triples" in rec:
        out = []
        for t in rec["triples"]:
            if "head" not in t or "tail" not in t or "relation" not in t:
                raise DatasetFormatError(
                    f"record {idx}: triple missing head/relation/tail", record_index=idx
                )
            out.append(t)
        return out
    if "relationMentions" in rec:
        out = []
        for m in rec["relationMentions"]:
            if "em1Text" not in m or "em2Text" not in m or "label" not in m:
                raise DatasetFormatError(
                    f"record {idx}: relation mention missing em1Text/em2Text/label",
                    record_index=idx,
                )
            out.append(
                {
                    "head": {"surface": m["em1Text"], "tag": m.get("em1Tag", "entity")},
                    "relation": m["label"],
                    "tail": {"surface": m["em2Text"], "tag": m.get("em2Tag", "entity")},
                }
            )
        return out
    if "triple_list" in rec:
        out = []
        for t in rec["triple_list"]:
            if len(t) != 3:
                raise DatasetFormatError(
                    f"record {idx}: triple_list entries must be [head, relation, tail]",
                    record_index=idx,
                )
            h, r, tl = t
            out.append(
                {
                    "head": {"surface": h, "tag": "entity"},
                    "relation": r,
                    "tail": {"surface": tl, "tag": "entity"},
                }
            )
        return out
    raise DatasetFormatError(
        f"record {idx}: no triples / relationMentions / triple_list field",
        record_index=idx,
    )


def load_dataset(
    path: str | Path,
    format: str = "nyt_json",
    schema: RelationSchema | None = None,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    on_unknown_relation: str = "fail",
    report: LoadReport | None = None,
) -> list[Instance]:
    """Load a triple-annotated dataset from JSON lines.

    ``format`` selects the record layout (``nyt_json`` or ``webnlg_json``);
    both also accept the canonical ``{id, text, triples}`` layout written
    by ``save_dataset``. When ``schema`` is given, unknown relations fail
    the load (default) or are skipped and collected in the report.
    """
    if format not in ("nyt_json", "webnlg_json"):
        raise ConfigurationError(f"unsupported format: {format!r}")
    if on_unknown_relation not in ("fail", "skip"):
        raise ConfigurationError("on_unknown_relation must be 'fail' or 'skip'")
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    rep = report if report is not None else LoadReport()
    rep.path = str(path)
    rep.format = format

    dataset: list[Instance] = []
    for idx, rec in _iter_records(path, format):
        if not isinstance(rec, dict):
            raise DatasetFormatError(f"record {idx}: expected object", record_index=idx)
        text = rec.get("text") or rec.get("sentText")
        if not text or not isinstance(text, str):
            raise DatasetFormatError(
                f"record {idx}: missing sentence text", record_index=idx
            )
        sent_id = str(rec.get("id", f"s{idx:05d}"))
        sentence = make_sentence(sent_id, text)
        if len(sentence.tokens) > max_tokens:
            rep.rejected_too_long += 1
            continue

        triples: list[Triple] = []
        for t in _parse_triple_fields(rec, idx):
            relation = t["relation"]
            if schema is not None and relation not in schema.relations:
                rep.unknown_relations.append(relation)
                if on_unknown_relation == "fail":
                    raise SchemaError(
                        f"record {idx}: relation {relation!r} not in schema"
                    )
                rep.skipped_unknown_relations += 1
                continue
            head = resolve_mention(
                sentence,
                t["head"]["surface"],
                t["head"].get("tag", "entity"),
                t["head"].get("char_start"),
                rep.warnings,
            )
            tail = resolve_mention(
                sentence,
                t["tail"]["surface"],
                t["tail"].get("tag", "entity"),
                t["tail"].get("char_start"),
                rep.warnings,
            )
            triples.append(Triple(head, relation, tail))
        dataset.append((sentence, triples))
        rep.sentences += 1
        rep.triples += len(triples)
    return dataset


def instance_to_record(sentence: Sentence, triples: list[Triple]) -> dict:
    """Canonical record form (field order normalized by sorted keys)."""

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
            for t in triples
        ],
    }


def save_dataset(dataset: list[Instance], path: str | Path) -> None:
    """Write canonical JSON lines; load/save round trips are byte-stable."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sentence, triples in dataset:
            fh.write(json.dumps(instance_to_record(sentence, triples), sort_keys=True))
            fh.write("\n")


def encode_tag(head_len: int, tail_len: int, max_span: int = DEFAULT_MAX_SPAN) -> int:
    if not (1 <= head_len <= max_span and 1 <= tail_len <= max_span):
        raise ValidationError(
            f"span lengths ({head_len}, {tail_len}) exceed the tag vocabulary "
            f"limit of {max_span}"
        )
    return 1 + (head_len - 1) * max_span + (tail_len - 1)


def decode_tag(tag: int, max_span: int) -> tuple[int, int]:
    if tag < 1:
        raise ValidationError("cannot decode the null tag")
    idx = tag - 1
    return idx // max_span + 1, idx % max_span + 1


def triples_to_tags(
    sentence: Sentence,
    triples: list[Triple],
    schema: RelationSchema,
    max_span: int = DEFAULT_MAX_SPAN,
) -> TagAssignment:
    """Project triples into the sparse tag assignment (one entry each)."""
    entries = set()
    for t in triples:
        k = schema.index(t.relation)
        tag = encode_tag(
            t.head.token_end - t.head.token_start,
            t.tail.token_end - t.tail.token_start,
            max_span,
        )
        entries.add((t.head.token_start, k, t.tail.token_start, tag))
    return TagAssignment(entries, 1 + max_span * max_span)


def tags_to_triples(
    sentence: Sentence, tags: TagAssignment, schema: RelationSchema
) -> list[Triple]:
    """Invert ``triples_to_tags``; mention tags come from the schema's
    argument signatures (empty when a relation has none recorded)."""
    max_span = tags.max_span
    triples = []
    for i, k, j, tag in sorted(tags.entries):
        head_len, tail_len = decode_tag(tag, max_span)
        relation = schema.relations[k]
        head_tag, tail_tag = schema.argument_tags.get(relation, ("", ""))
        head = EntityMention(i, i + head_len, sentence.token_text(i, i + head_len), head_tag)
        tail = EntityMention(j, j + tail_len, sentence.token_text(j, j + tail_len), tail_tag)
        triples.append(Triple(head, relation, tail))
    return triples


def inject_perturbation(
    dataset: list[Instance],
    foreign: list[Instance],
    rate: float,
    seed: int,
) -> list[Instance]:
    """Append ``round(rate * |dataset|)`` foreign instances, originals untouched.

    Appended instances get fresh ids so they cannot collide with the
    originals; sampling is a pure function of the seed.
    """
    if not 0 <= rate <= 1:
        raise ConfigurationError(f"perturbation rate must be in [0, 1], got {rate}")
    count = round(rate * len(dataset))
    if count == 0:
        return list(dataset)
    if not foreign:
        raise ConfigurationError("perturbation rate > 0 requires a foreign pool")
    rng = random.Random(seed)
    if count <= len(foreign):
        picks = rng.sample(range(len(foreign)), count)
    else:
        picks = [rng.randrange(len(foreign)) for _ in range(count)]
    out = list(dataset)
    for n, fi in enumerate(picks):
        sent, triples = foreign[fi]
        renamed = Sentence(f"pert-{n:05d}-{sent.id}", sent.text, sent.tokens)
        out.append((renamed, list(triples)))
    return out
