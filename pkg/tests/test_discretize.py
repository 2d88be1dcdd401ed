"""Encoder/decoder: block extraction, reconstruction, grouping."""

import pytest

from fixture_corpus import table_example, _family_d
import random

from ssdau.corpus import EntityMention, RelationSchema, Triple, make_sentence
from ssdau.discretize import (
    HEAD,
    MODE_FULL_SPLIT,
    MODE_NO_LABEL_SPLIT,
    RELATION,
    TAIL,
    BlockLibrary,
    GroupKey,
    build_library,
    encode,
    group_blocks,
    reconstruct,
)
from ssdau.errors import ReconstructionError, SchemaError


def _mention(sentence, start, end, tag=""):
    return EntityMention(start, end, sentence.token_text(start, end), tag)


class TestEncode:
    def test_fixed_example_blocks(self):
        sentence, triples = table_example()
        blocks = encode(sentence, triples)
        by_role = {(b.source_triple, b.role): b for b in blocks}
        head = by_role[(0, HEAD)]
        tail = by_role[(0, TAIL)]
        assert head.span_text == "Mitch Mustain"
        assert head.label_tag == "people"
        assert tail.span_text == "Arkansas"
        assert tail.label_tag == "place"

    def test_no_triples_no_blocks(self):
        sentence = make_sentence("s", "a b c")
        assert encode(sentence, []) == []

    def test_context_window(self):
        sentence = make_sentence("s", "a b HEAD c d")
        triple = Triple(_mention(sentence, 2, 3, "x"), "r", _mention(sentence, 4, 5, "y"))
        blocks = encode(sentence, [triple], context_width=2)
        head = next(b for b in blocks if b.role == HEAD)
        assert head.context_tokens == ["a", "b", "c", "d"]

    def test_three_blocks_per_triple(self, dataset):
        for sentence, triples in dataset:
            blocks = encode(sentence, triples)
            assert len(blocks) == 3 * len(triples)
            roles = [b.role for b in blocks]
            assert roles.count(HEAD) == roles.count(RELATION) == roles.count(TAIL)

    def test_relation_span_between_entities(self):
        sentence = make_sentence("s", "X lived in Y .")
        triple = Triple(_mention(sentence, 0, 1, "p"), "r", _mention(sentence, 3, 4, "q"))
        blocks = encode(sentence, [triple])
        rel = next(b for b in blocks if b.role == RELATION)
        assert rel.span_text == "lived in"
        assert rel.cut == (1, 3)

    def test_relation_span_tail_before_head(self):
        sentence = make_sentence("s", "In Y lived X .")
        triple = Triple(_mention(sentence, 3, 4, "p"), "r", _mention(sentence, 1, 2, "q"))
        rel = next(b for b in encode(sentence, [triple]) if b.role == RELATION)
        assert rel.span_text == "lived"
        assert rel.cut == (2, 3)

    def test_adjacent_entities_empty_relation_block(self):
        sentence = make_sentence("s", "X Y end")
        triple = Triple(_mention(sentence, 0, 1, "p"), "r", _mention(sentence, 1, 2, "q"))
        rel = next(b for b in encode(sentence, [triple]) if b.role == RELATION)
        assert rel.span_text == ""
        assert rel.cut == (1, 1)

    def test_degenerate_triple_skipped_with_report(self):
        sentence = make_sentence("s", "a b c d")
        triple = Triple(_mention(sentence, 0, 2, "p"), "r", _mention(sentence, 1, 3, "q"))
        report = []
        blocks = encode(sentence, [triple], report=report)
        assert blocks == []
        assert report[0]["reason"] == "degenerate_overlap"

    def test_no_label_split_blanks_tags(self):
        sentence, triples = table_example()
        blocks = encode(sentence, triples, mode=MODE_NO_LABEL_SPLIT)
        for b in blocks:
            if b.role in (HEAD, TAIL):
                assert b.label_tag == ""
            assert b.head_tag == "" and b.tail_tag == ""

    def test_full_split_one_block_per_token(self):
        sentence = make_sentence("s", "X lived in Y .")
        triple = Triple(_mention(sentence, 0, 1, "p"), "r", _mention(sentence, 3, 4, "q"))
        blocks = encode(sentence, [triple], mode=MODE_FULL_SPLIT)
        assert all(b.cut[1] - b.cut[0] == 1 for b in blocks)
        assert sum(1 for b in blocks if b.role == RELATION) == 2


class TestReconstruct:
    def test_round_trip_whole_corpus(self, dataset):
        for sentence, triples in dataset:
            blocks = encode(sentence, triples)
            assert reconstruct(sentence, blocks) == sentence.text

    def test_shifted_cut_raises(self):
        sentence = make_sentence("s", "a b c d e")
        triple = Triple(_mention(sentence, 0, 1, "p"), "r", _mention(sentence, 3, 4, "q"))
        blocks = encode(sentence, [triple])
        shifted = blocks[0]
        shifted.cut = (shifted.cut[0] + 1, shifted.cut[1] + 1)
        with pytest.raises(ReconstructionError):
            reconstruct(sentence, blocks)

    def test_wrong_sentence_raises(self):
        sentence = make_sentence("s", "a b c d")
        other = make_sentence("other", "a b c d")
        triple = Triple(_mention(sentence, 0, 1, "p"), "r", _mention(sentence, 2, 3, "q"))
        blocks = encode(sentence, [triple])
        with pytest.raises(ReconstructionError):
            reconstruct(other, blocks)

    def test_three_triple_shared_entities(self):
        # hand-built multi-triple sentence with entities shared across triples
        sentence, triples = _family_d("d0", random.Random(11))
        assert len(triples) == 3
        blocks = encode(sentence, triples)
        assert reconstruct(sentence, blocks) == sentence.text


class TestGroupBlocks:
    def test_same_tag_same_relation_one_group(self, schema):
        s1 = make_sentence("g1", "Alice lived in Rome .")
        s2 = make_sentence("g2", "Bob lived in Paris .")
        blocks = []
        for s in (s1, s2):
            triple = Triple(
                _mention(s, 0, 1, "people"), "place_lived", _mention(s, 3, 4, "place")
            )
            blocks.extend(encode(s, [triple]))
        heads = [b for b in blocks if b.role == HEAD]
        lib = group_blocks(heads, schema)
        assert len(lib.groups) == 1
        (key, members), = lib.groups.items()
        assert key == GroupKey(HEAD, "place_lived", "people")
        assert len(members) == 2

    def test_relation_differs_two_groups(self, schema):
        s1 = make_sentence("g1", "Alice lived in Rome .")
        s2 = make_sentence("g2", "Bob was in Paris .")
        b1 = encode(s1, [Triple(_mention(s1, 0, 1, "people"), "place_lived",
                                _mention(s1, 3, 4, "place"))])
        b2 = encode(s2, [Triple(_mention(s2, 0, 1, "people"), "born_in",
                                _mention(s2, 3, 4, "place"))])
        heads = [b for b in b1 + b2 if b.role == HEAD]
        lib = group_blocks(heads, schema)
        assert len(lib.groups) == 2

    def test_relation_blocks_group_by_signature(self, schema):
        # different relation names, same (head tag, tail tag) signature
        s1 = make_sentence("g1", "Alice lived in Rome .")
        s2 = make_sentence("g2", "Bob was in Paris .")
        b1 = encode(s1, [Triple(_mention(s1, 0, 1, "people"), "place_lived",
                                _mention(s1, 3, 4, "place"))])
        b2 = encode(s2, [Triple(_mention(s2, 0, 1, "people"), "born_in",
                                _mention(s2, 3, 4, "place"))])
        rels = [b for b in b1 + b2 if b.role == RELATION]
        lib = group_blocks(rels, schema)
        assert len(lib.groups) == 1
        (key,) = lib.groups
        assert key == GroupKey(RELATION, "", "people>place")

    def test_partition_against_brute_force_group_by(self, dataset, schema):
        # independent oracle: plain dict group-by over the key definition
        blocks = []
        for sentence, triples in dataset[:12]:
            blocks.extend(encode(sentence, triples))
        lib = group_blocks(blocks, schema)

        oracle = {}
        for b in blocks:
            if b.role == RELATION:
                key = (RELATION, "", f"{b.head_tag}>{b.tail_tag}")
            else:
                key = (b.role, b.relation, b.label_tag)
            oracle.setdefault(key, set()).add(b.block_id)
        got = {
            (k.role, k.relation, k.entity_tag): {b.block_id for b in v}
            for k, v in lib.groups.items()
        }
        assert got == oracle

    def test_partition_disjoint_and_exhaustive(self, library):
        ids = [b.block_id for members in library.groups.values() for b in members]
        assert len(ids) == len(set(ids)) == library.block_count

    def test_group_count_bound(self, library, schema):
        assert len(library.groups) <= 3 * schema.K * len(schema.entity_tags)

    def test_unknown_relation_rejected(self, schema):
        s = make_sentence("g1", "Alice lived in Rome .")
        blocks = encode(s, [Triple(_mention(s, 0, 1, "people"), "place_lived",
                                   _mention(s, 3, 4, "place"))])
        for b in blocks:
            b.relation = "not-a-relation"
        with pytest.raises(SchemaError):
            group_blocks(blocks, schema)


class TestLibrarySerialization:
    def test_json_round_trip(self, library):
        d = library.to_json_dict()
        back = BlockLibrary.from_json_dict(d)
        assert back.context_width == library.context_width
        assert set(back.groups) == set(library.groups)
        for key in library.groups:
            assert [b.to_dict() for b in back.groups[key]] == [
                b.to_dict() for b in library.groups[key]
            ]
        for sid, sentence in library.sentences.items():
            assert back.sentences[sid].text == sentence.text
            assert back.sentences[sid].tokens == sentence.tokens

    def test_build_library_counts(self, dataset, library):
        triples_total = sum(len(t) for _, t in dataset)
        assert library.block_count == 3 * triples_total
