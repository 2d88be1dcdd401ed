"""Sentence discretization into head/relation/tail text blocks.

The encoder cuts one head, one relation, and one tail block out of every
non-degenerate triple, keeping a context window and the exact cut
position so the original sentence can always be rebuilt. The decoder
side groups blocks that satisfy the same semantic constraints:

* head/tail blocks group by (role, owning relation, entity tag);
* relation blocks group by the (head tag, tail tag) signature of their
  owning triple, so spans expressing compatible relations can stand in
  for each other even across relation names (this is what lets a
  replacement switch the relation label downstream).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .corpus import Instance, RelationSchema, Sentence, Token, tokenize
from .errors import ReconstructionError, SchemaError

HEAD = "head"
RELATION = "relation"
TAIL = "tail"
ROLES = (HEAD, RELATION, TAIL)

MODE_STANDARD = "standard"
MODE_NO_LABEL_SPLIT = "no_label_split"  # ablation: drop semantic tags
MODE_FULL_SPLIT = "full_split"  # ablation: one block per token
ENCODE_MODES = (MODE_STANDARD, MODE_NO_LABEL_SPLIT, MODE_FULL_SPLIT)

DEFAULT_CONTEXT_WIDTH = 3


@dataclass(frozen=True)
class GroupKey:
    role: str
    relation: str
    entity_tag: str

    def as_string(self) -> str:
        return json.dumps([self.role, self.relation, self.entity_tag])

    @classmethod
    def from_string(cls, s: str) -> "GroupKey":
        role, relation, tag = json.loads(s)
        return cls(role, relation, tag)


@dataclass
class TextBlock:
    """One discretized span: text, role, tag, context, and cut position."""

    span_text: str
    role: str
    label_tag: str  # entity tag for head/tail, relation name for relation blocks
    relation: str  # owning triple's relation
    head_tag: str  # owning triple's argument tags (drives relation grouping)
    tail_tag: str
    context_tokens: list[str]
    cut: tuple[int, int]
    source_sentence: str
    source_triple: int

    @property
    def block_id(self) -> str:
        return (
            f"{self.source_sentence}|{self.source_triple:04d}|{self.role}"
            f"|{self.cut[0]:04d}-{self.cut[1]:04d}"
        )

    def group_key(self) -> GroupKey:
        if self.role == RELATION:
            return GroupKey(RELATION, "", f"{self.head_tag}>{self.tail_tag}")
        return GroupKey(self.role, self.relation, self.label_tag)

    def to_dict(self) -> dict:
        return {
            "span_text": self.span_text,
            "role": self.role,
            "label_tag": self.label_tag,
            "relation": self.relation,
            "head_tag": self.head_tag,
            "tail_tag": self.tail_tag,
            "context_tokens": list(self.context_tokens),
            "cut": list(self.cut),
            "source_sentence": self.source_sentence,
            "source_triple": self.source_triple,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextBlock":
        return cls(
            span_text=d["span_text"],
            role=d["role"],
            label_tag=d["label_tag"],
            relation=d["relation"],
            head_tag=d["head_tag"],
            tail_tag=d["tail_tag"],
            context_tokens=list(d["context_tokens"]),
            cut=(d["cut"][0], d["cut"][1]),
            source_sentence=d["source_sentence"],
            source_triple=d["source_triple"],
        )


@dataclass
class BlockLibrary:
    """Partition of blocks into semantic groups, plus the sentence table
    needed to score blocks in their full-sentence context."""

    groups: dict[GroupKey, list[TextBlock]]
    sentences: dict[str, Sentence] = field(default_factory=dict)
    context_width: int = DEFAULT_CONTEXT_WIDTH
    mode: str = MODE_STANDARD

    @property
    def block_count(self) -> int:
        return sum(len(v) for v in self.groups.values())

    def to_json_dict(self) -> dict:
        return {
            "context_width": self.context_width,
            "mode": self.mode,
            "sentences": {
                sid: {
                    "text": s.text,
                    "tokens": [[t.char_start, t.char_end] for t in s.tokens],
                }
                for sid, s in sorted(self.sentences.items())
            },
            "groups": {
                key.as_string(): [b.to_dict() for b in blocks]
                for key, blocks in sorted(
                    self.groups.items(), key=lambda kv: kv[0].as_string()
                )
            },
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "BlockLibrary":
        sentences = {}
        for sid, s in d.get("sentences", {}).items():
            toks = [Token(s["text"][a:b], a, b) for a, b in s["tokens"]]
            sentences[sid] = Sentence(sid, s["text"], toks)
        groups = {
            GroupKey.from_string(k): [TextBlock.from_dict(b) for b in blocks]
            for k, blocks in d["groups"].items()
        }
        return cls(
            groups=groups,
            sentences=sentences,
            context_width=d.get("context_width", DEFAULT_CONTEXT_WIDTH),
            mode=d.get("mode", MODE_STANDARD),
        )


def _context(tokens: list[Token], start: int, end: int, width: int) -> list[str]:
    left = tokens[max(0, start - width) : start]
    right = tokens[end : end + width]
    return [t.surface for t in left] + [t.surface for t in right]


def _block(sentence, triple, triple_idx, role, label_tag, cut, width) -> TextBlock:
    return TextBlock(
        span_text=sentence.token_text(*cut),
        role=role,
        label_tag=label_tag,
        relation=triple.relation,
        head_tag=triple.head.tag,
        tail_tag=triple.tail.tag,
        context_tokens=_context(sentence.tokens, cut[0], cut[1], width),
        cut=cut,
        source_sentence=sentence.id,
        source_triple=triple_idx,
    )


def encode(
    sentence: Sentence,
    triples: list,
    context_width: int = DEFAULT_CONTEXT_WIDTH,
    mode: str = MODE_STANDARD,
    report: list | None = None,
) -> list[TextBlock]:
    """Cut head/relation/tail blocks for every triple of a sentence.

    In the standard mode each non-degenerate triple yields exactly three
    blocks; triples with overlapping head/tail spans are skipped with a
    report entry. The relation block covers the tokens strictly between
    the head and tail spans (possibly empty when they are adjacent).
    """
    if context_width < 0:
        raise ValueError("context_width must be >= 0")
    if mode not in ENCODE_MODES:
        raise ValueError(f"unknown encode mode: {mode!r}")
    blocks: list[TextBlock] = []
    for ti, triple in enumerate(triples):
        hs, he = triple.head.token_start, triple.head.token_end
        ts, te = triple.tail.token_start, triple.tail.token_end
        if hs < te and ts < he:  # overlapping spans
            if report is not None:
                report.append(
                    {
                        "sentence": sentence.id,
                        "triple": ti,
                        "reason": "degenerate_overlap",
                    }
                )
            continue
        rel_cut = (he, ts) if he <= ts else (te, hs)

        head_tag = triple.head.tag if mode != MODE_NO_LABEL_SPLIT else ""
        tail_tag = triple.tail.tag if mode != MODE_NO_LABEL_SPLIT else ""
        plain = triple
        if mode == MODE_NO_LABEL_SPLIT:
            # same triple with tags blanked, so blocks carry no semantic tag
            plain = type(triple)(
                head=type(triple.head)(hs, he, triple.head.surface, ""),
                relation=triple.relation,
                tail=type(triple.tail)(ts, te, triple.tail.surface, ""),
            )

        role_cuts = [
            (HEAD, head_tag, (hs, he)),
            (RELATION, triple.relation, rel_cut),
            (TAIL, tail_tag, (ts, te)),
        ]
        for role, label, cut in role_cuts:
            if mode == MODE_FULL_SPLIT:
                for pos in range(cut[0], cut[1]):
                    blocks.append(
                        _block(sentence, plain, ti, role, label, (pos, pos + 1), context_width)
                    )
            else:
                blocks.append(_block(sentence, plain, ti, role, label, cut, context_width))
    return blocks


def reconstruct(sentence: Sentence, blocks: list[TextBlock]) -> str:
    """Verify the blocks against their source sentence and return its text."""
    n = len(sentence.tokens)
    for block in blocks:
        if block.source_sentence != sentence.id:
            raise ReconstructionError(
                f"block {block.block_id} does not belong to sentence {sentence.id!r}"
            )
        a, b = block.cut
        if not (0 <= a <= b <= n):
            raise ReconstructionError(
                f"block {block.block_id} cut {block.cut} outside sentence bounds"
            )
        if sentence.token_text(a, b) != block.span_text:
            raise ReconstructionError(
                f"block {block.block_id} span text does not match its cut position"
            )
    return sentence.text


def group_blocks(blocks: list[TextBlock], schema: RelationSchema) -> BlockLibrary:
    """Partition blocks by their group key (disjoint and exhaustive)."""
    groups: dict[GroupKey, list[TextBlock]] = {}
    for block in blocks:
        if block.relation not in schema.relations:
            raise SchemaError(f"block relation {block.relation!r} not in schema")
        if block.role in (HEAD, TAIL) and block.label_tag:
            if block.label_tag not in schema.entity_tags:
                raise SchemaError(f"entity tag {block.label_tag!r} not in schema")
        groups.setdefault(block.group_key(), []).append(block)
    for members in groups.values():
        members.sort(key=lambda b: b.block_id)
    return BlockLibrary(groups=groups)


def build_library(
    dataset: list[Instance],
    schema: RelationSchema,
    context_width: int = DEFAULT_CONTEXT_WIDTH,
    mode: str = MODE_STANDARD,
    report: list | None = None,
) -> BlockLibrary:
    """Encode a whole dataset (sorted by sentence id) and group the blocks."""
    blocks: list[TextBlock] = []
    sentences: dict[str, Sentence] = {}
    for sentence, triples in sorted(dataset, key=lambda inst: inst[0].id):
        blocks.extend(encode(sentence, triples, context_width, mode, report))
        sentences[sentence.id] = sentence
    library = group_blocks(blocks, schema)
    library.sentences = sentences
    library.context_width = context_width
    library.mode = mode
    return library
