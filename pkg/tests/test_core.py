from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from whvcanvas.core import (
    LEVELS,
    MAX_TEXT_LEN,
    PILLAR_ORDER,
    SLOT_ORDER,
    AbstractionOperator,
    DuplicateSlot,
    EmptyField,
    Fragment,
    FragmentSet,
    IdeaNode,
    InvalidLevel,
    InvalidPillar,
    LinkCycle,
    LinkKind,
    MissingSlot,
    ParentLink,
    Pillar,
    TextTooLong,
    UnknownNode,
    WrongCount,
    check_parent_links,
    fragments_from_records,
    level_label,
    normalize_level,
    normalize_pillar,
    validate_fragment,
    validate_fragment_set,
)
from conftest import fragment_record, full_slot_fragments, make_fragment


class TestLevels:
    def test_labels(self):
        assert level_label(25) == "L1"
        assert level_label(50) == "L2"
        assert level_label(75) == "L3"
        assert level_label(100) == "L4"

    def test_label_rejects_off_grid(self):
        for bad in (0, 24, 26, 99, 101, -25, "25"):
            with pytest.raises(InvalidLevel):
                level_label(bad)

    def test_normalize_accepts_numeric_forms(self):
        assert normalize_level(25) == 25
        assert normalize_level(50.0) == 50
        assert normalize_level("75") == 75
        assert normalize_level(" 100 ") == 100

    def test_normalize_rejects_bool_and_fractions(self):
        with pytest.raises(InvalidLevel):
            normalize_level(True)
        with pytest.raises(InvalidLevel):
            normalize_level(25.5)
        with pytest.raises(InvalidLevel):
            normalize_level("fifty")
        with pytest.raises(InvalidLevel):
            normalize_level(None)

    @given(st.integers(min_value=-1000, max_value=1000))
    def test_normalize_agrees_with_membership(self, n):
        if n in LEVELS:
            assert normalize_level(n) == n
        else:
            with pytest.raises(InvalidLevel):
                normalize_level(n)


class TestPillars:
    def test_normalize_case_insensitive(self):
        assert normalize_pillar("What") is Pillar.WHAT
        assert normalize_pillar("HOW") is Pillar.HOW
        assert normalize_pillar(" value ") is Pillar.VALUE

    def test_rejects_unknown(self):
        for bad in ("why", "", None, 3, "what "):
            if isinstance(bad, str) and bad.strip().lower() in ("what", "how", "value"):
                continue
            with pytest.raises(InvalidPillar):
                normalize_pillar(bad)

    def test_order(self):
        assert PILLAR_ORDER == (Pillar.WHAT, Pillar.HOW, Pillar.VALUE)


class TestOperators:
    def test_pillar_mapping(self):
        assert AbstractionOperator.ELEVATE.pillar is Pillar.WHAT
        assert AbstractionOperator.MECH.pillar is Pillar.HOW
        assert AbstractionOperator.VALUE.pillar is Pillar.VALUE

    def test_semantics_nonempty_and_distinct(self):
        texts = {op.semantics for op in AbstractionOperator}
        assert len(texts) == 3
        assert all(t.strip() for t in texts)


class TestFragmentValidation:
    def test_valid_record(self):
        frag = validate_fragment(
            {"level": "50", "pillar": "How", "title": " t ", "content": "c"}
        )
        assert frag.level == 50
        assert frag.pillar is Pillar.HOW
        assert frag.title == "t"
        assert frag.content == "c"

    def test_missing_keys(self):
        with pytest.raises(InvalidLevel):
            validate_fragment({"pillar": "what", "title": "t", "content": "c"})
        with pytest.raises(InvalidPillar):
            validate_fragment({"level": 25, "title": "t", "content": "c"})
        with pytest.raises(EmptyField):
            validate_fragment({"level": 25, "pillar": "what", "content": "c"})
        with pytest.raises(EmptyField):
            validate_fragment({"level": 25, "pillar": "what", "title": "t"})

    def test_blank_and_nonstring_text(self):
        with pytest.raises(EmptyField):
            validate_fragment({"level": 25, "pillar": "what", "title": "  ", "content": "c"})
        with pytest.raises(EmptyField):
            validate_fragment({"level": 25, "pillar": "what", "title": 7, "content": "c"})

    def test_text_length_cap(self):
        long = "x" * (MAX_TEXT_LEN + 1)
        with pytest.raises(TextTooLong):
            validate_fragment({"level": 25, "pillar": "what", "title": "t", "content": long})
        ok = "x" * MAX_TEXT_LEN
        frag = validate_fragment({"level": 25, "pillar": "what", "title": "t", "content": ok})
        assert len(frag.content) == MAX_TEXT_LEN

    @given(fragment_record)
    def test_round_trip(self, rec):
        frag = validate_fragment(rec)
        again = validate_fragment(frag.to_record())
        assert again.slot == frag.slot
        assert again.title == frag.title
        assert again.content == frag.content


class TestFragmentSet:
    def test_iteration_is_level_major(self):
        fs = validate_fragment_set(full_slot_fragments())
        slots = [f.slot for f in fs]
        assert slots == list(SLOT_ORDER)
        assert slots[0] == (25, Pillar.WHAT)
        assert slots[1] == (25, Pillar.HOW)
        assert slots[2] == (25, Pillar.VALUE)
        assert slots[-1] == (100, Pillar.VALUE)

    def test_order_independent_acceptance(self):
        frags = full_slot_fragments()
        rng = random.Random(3)
        shuffled = frags[:]
        rng.shuffle(shuffled)
        fs = validate_fragment_set(shuffled)
        assert [f.slot for f in fs] == list(SLOT_ORDER)

    def test_wrong_count_reported_first(self):
        frags = full_slot_fragments()
        with pytest.raises(WrongCount):
            validate_fragment_set(frags[:11])
        # 13 entries with a duplicate: count check still wins.
        with pytest.raises(WrongCount):
            validate_fragment_set(frags + [frags[0]])

    def test_duplicate_reported_before_missing(self):
        frags = full_slot_fragments()
        frags[5] = frags[4]  # duplicates one slot, leaves another missing
        with pytest.raises(DuplicateSlot):
            validate_fragment_set(frags)

    def test_absent_slot_surfaces_as_duplicate(self):
        # With exactly 12 entries, a missing slot forces a duplicate slot
        # (pigeonhole), and duplicates are checked first.
        frags = full_slot_fragments()
        frags[0] = make_fragment(50, Pillar.WHAT)
        with pytest.raises(DuplicateSlot):
            validate_fragment_set(frags)

    def test_missing_slot_error_shape(self):
        err = MissingSlot(25, Pillar.WHAT)
        assert "25" in err.detail and "what" in err.detail

    def test_get(self):
        fs = validate_fragment_set(full_slot_fragments())
        frag = fs.get(75, Pillar.HOW)
        assert frag.slot == (75, Pillar.HOW)

    def test_by_pillar(self):
        fs = validate_fragment_set(full_slot_fragments())
        hows = fs.by_pillar(Pillar.HOW)
        assert [f.level for f in hows] == [25, 50, 75, 100]

    def test_records_round_trip(self):
        fs = validate_fragment_set(full_slot_fragments())
        frags = fragments_from_records(fs.to_records())
        fs2 = validate_fragment_set(frags)
        assert fs2.to_records() == fs.to_records()


class TestNodeLinks:
    def _node(self, node_id, created_at, parents=()):
        return IdeaNode(
            id=node_id,
            title=f"n{node_id}",
            content="body",
            created_at=created_at,
            parent_links=[ParentLink(p, LinkKind.DRAGOUT) for p in parents],
        )

    def test_ok(self):
        a = self._node("a", 1)
        b = self._node("b", 2, parents=("a",))
        check_parent_links(b, {"a": a, "b": b})

    def test_self_link(self):
        a = self._node("a", 1, parents=("a",))
        with pytest.raises(LinkCycle):
            check_parent_links(a, {"a": a})

    def test_unknown_parent(self):
        b = self._node("b", 2, parents=("ghost",))
        with pytest.raises(UnknownNode):
            check_parent_links(b, {"b": b})

    def test_parent_must_be_older(self):
        a = self._node("a", 5)
        b = self._node("b", 2, parents=("a",))
        with pytest.raises(LinkCycle):
            check_parent_links(b, {"a": a, "b": b})

    def test_attach_fragments_keeps_history(self):
        node = self._node("a", 1)
        fs1 = validate_fragment_set(full_slot_fragments(seed=1))
        fs2 = validate_fragment_set(full_slot_fragments(seed=2))
        node.attach_fragments(fs1)
        assert node.fragments is fs1
        assert node.fragment_history == []
        node.attach_fragments(fs2)
        assert node.fragments is fs2
        assert node.fragment_history == [fs1]
