"""Template rendering tests: surface strings, mask bookkeeping, substitution."""

import numpy as np
import pytest

from ontonorm.encoder import MASK_TOKEN, tokenize
from ontonorm.graph import Triple, build_graph
from ontonorm.templates import (
    IGNORED,
    RELATION_PHRASES,
    EmptyPhrase,
    ExcludedVariant,
    MaskedSide,
    PromptInstance,
    SubstitutionNotTrainingSynonym,
    T2Variant,
    TemplateOrder,
    load_phrase_overrides,
    relation_phrase,
    render_t0,
    render_t1,
    render_t2,
)


@pytest.fixture()
def toy_graph():
    entities = [
        ("E:0", "regulation"),
        ("E:1", "regulation of blood circulation"),
        ("E:2", "regulation of heart contraction"),
        ("E:3", "heart process"),
        ("E:4", "heart contraction"),
    ]
    pairs = [("circulation control", "E:1"), ("cardiac regulation", "E:2")]
    triples = [
        ("E:1", "is_a", "E:0"),
        ("E:2", "is_a", "E:1"),
        ("E:4", "is_a", "E:3"),
        ("E:4", "part_of", "E:3"),
    ]
    return build_graph(entities, pairs, triples)


def _scan_masks(instance: PromptInstance) -> list[int]:
    return [i for i, t in enumerate(instance.tokens) if t == MASK_TOKEN]


def test_relation_phrases_from_table():
    assert relation_phrase("is_a") == "is a kind of"
    assert relation_phrase("part_of") == "is part of"
    assert relation_phrase("synapsed_via_type_Ib_bouton_to") == "is synapsed via type Ib bouton to"
    assert relation_phrase("identical") == "is identical with"


def test_relation_phrase_fallback():
    assert relation_phrase("governed_by") == "governed by"


def test_phrase_overrides(tmp_path):
    path = tmp_path / "phrases.tsv"
    path.write_text("governed_by\tis governed by\n", encoding="utf-8")
    overrides = load_phrase_overrides(path)
    assert relation_phrase("governed_by", overrides) == "is governed by"
    assert relation_phrase("is_a", overrides) == "is a kind of"


def test_render_t0_surface():
    inst = render_t0("heart process", target=3)
    assert inst.text == "[CLS] [MASK] is identical with heart process [SEP]"
    assert inst.mask_slots == ((1, 3),)
    assert inst.order == TemplateOrder.ZEROTH


def test_render_t0_single_token_positions():
    inst = render_t0("process")
    assert len(inst.tokens) == 7
    assert inst.tokens[1] == MASK_TOKEN
    assert inst.mask_slots[0][0] == 1


def test_render_t0_retokenization_reproduces_slots():
    rng = np.random.default_rng(3)
    words = ["heart", "process", "of", "regulation", "contraction", "blood"]
    for _ in range(50):
        phrase = " ".join(rng.choice(words, size=rng.integers(1, 5)))
        inst = render_t0(phrase, target=0)
        assert list(inst.tokens) == tokenize(inst.text)
        assert _scan_masks(inst) == [pos for pos, _ in inst.mask_slots]


def test_render_t0_empty_raises():
    with pytest.raises(EmptyPhrase):
        render_t0("   ")


def test_render_t1_mask_head(toy_graph):
    inst = render_t1(toy_graph, Triple(4, "is_a", 3), MaskedSide.HEAD)
    assert inst.text == "[CLS] [MASK] is a kind of heart process [SEP]"
    assert inst.mask_slots == ((1, 4),)


def test_render_t1_mask_tail(toy_graph):
    inst = render_t1(toy_graph, Triple(4, "part_of", 3), MaskedSide.TAIL)
    assert inst.text == "[CLS] heart contraction is part of [MASK] [SEP]"
    assert inst.mask_slots[0][1] == 3


def test_render_t1_substitution_changes_surface_not_target(toy_graph):
    base = render_t1(toy_graph, Triple(2, "is_a", 1), MaskedSide.HEAD)
    sub = render_t1(toy_graph, Triple(2, "is_a", 1), MaskedSide.HEAD, substitution="circulation control")
    assert "circulation control" in sub.text
    assert base.mask_slots[0][1] == sub.mask_slots[0][1] == 2


def test_render_t1_rejects_foreign_substitution(toy_graph):
    with pytest.raises(SubstitutionNotTrainingSynonym):
        render_t1(toy_graph, Triple(2, "is_a", 1), MaskedSide.HEAD, substitution="not a synonym")
    with pytest.raises(SubstitutionNotTrainingSynonym):
        render_t1(
            toy_graph,
            Triple(2, "is_a", 1),
            MaskedSide.HEAD,
            substitution="circulation control",
            allowed_synonyms=["something else"],
        )


def test_render_t1_random_scan(toy_graph):
    rng = np.random.default_rng(11)
    for _ in range(100):
        triple = toy_graph.edges[int(rng.integers(len(toy_graph.edges)))]
        side = MaskedSide.HEAD if rng.integers(2) else MaskedSide.TAIL
        inst = render_t1(toy_graph, triple, side)
        masks = _scan_masks(inst)
        assert len(masks) == 1
        assert masks == [inst.mask_slots[0][0]]
        assert relation_phrase(triple.relation) in inst.text


def test_render_t2_unmasked_matches_reference_sentence(toy_graph):
    inst = render_t2(toy_graph, (2, "is_a", 1, 0), variant=None)
    inner = inst.text.removeprefix("[CLS] ").removesuffix(" [SEP]")
    assert inner == "regulation of heart contraction is a kind of regulation of blood circulation, which is a kind of regulation"
    assert inst.mask_slots == ()


def test_render_t2_mask_head_and_grand(toy_graph):
    inst = render_t2(toy_graph, (2, "is_a", 1, 0), T2Variant.MASK_HEAD_AND_GRAND)
    assert inst.text == "[CLS] [MASK] is a kind of regulation of blood circulation, which is a kind of [MASK] [SEP]"
    assert [t for _, t in inst.mask_slots] == [2, 0]
    assert _scan_masks(inst) == [pos for pos, _ in inst.mask_slots]


def test_render_t2_mask_mid_and_grand(toy_graph):
    inst = render_t2(toy_graph, (2, "is_a", 1, 0), T2Variant.MASK_MID_AND_GRAND)
    assert [t for _, t in inst.mask_slots] == [1, 0]
    assert inst.tokens[1] != MASK_TOKEN  # head surface stays


def test_render_t2_excluded_variant(toy_graph):
    with pytest.raises(ExcludedVariant):
        render_t2(toy_graph, (2, "is_a", 1, 0), T2Variant.MASK_HEAD_AND_MID)


def test_padded_t0_keeps_first_slot_targeting():
    plain = render_t0("heart process", target=3)
    padded = render_t0("heart process", target=3, padded=True)
    assert padded.mask_slots[0] == plain.mask_slots[0]
    assert padded.mask_slots[1][1] == IGNORED
    assert padded.text.endswith(", which is a kind of [MASK] [SEP]")


def test_padded_t1_ignored_second_slot(toy_graph):
    inst = render_t1(toy_graph, Triple(4, "is_a", 3), MaskedSide.HEAD, padded=True)
    assert len(inst.mask_slots) == 2
    assert inst.mask_slots[1][1] == IGNORED
    assert _scan_masks(inst) == [pos for pos, _ in inst.mask_slots]


def test_render_t2_substitution_invariance(toy_graph):
    base = render_t2(toy_graph, (2, "is_a", 1, 0), T2Variant.MASK_HEAD_AND_GRAND)
    sub = render_t2(
        toy_graph,
        (2, "is_a", 1, 0),
        T2Variant.MASK_HEAD_AND_GRAND,
        substitution="circulation control",
    )
    assert [t for _, t in base.mask_slots] == [t for _, t in sub.mask_slots]
    assert "circulation control" in sub.text


def test_random_t2_mask_scan(toy_graph):
    from ontonorm.graph import two_hop_paths

    rng = np.random.default_rng(7)
    paths = two_hop_paths(toy_graph)
    assert paths
    for _ in range(100):
        path = paths[int(rng.integers(len(paths)))]
        variant = T2Variant.MASK_HEAD_AND_GRAND if rng.integers(2) else T2Variant.MASK_MID_AND_GRAND
        inst = render_t2(toy_graph, path, variant)
        assert len(_scan_masks(inst)) == 2
        assert _scan_masks(inst) == [pos for pos, _ in inst.mask_slots]
        assert relation_phrase(path[1]) in inst.text
        assert ", which is a kind of" in inst.text
