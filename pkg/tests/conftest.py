from __future__ import annotations

import random

from hypothesis import strategies as st

from whvcanvas.core import (
    LEVELS,
    PILLAR_ORDER,
    SLOT_ORDER,
    Fragment,
    Pillar,
    validate_fragment_set,
)

WORDS = [
    "signal", "market", "garden", "sensor", "habit", "budget", "story",
    "repair", "commute", "recipe", "ledger", "studio", "tutor", "meadow",
]


def make_fragment(level: int, pillar: Pillar, rng: random.Random | None = None) -> Fragment:
    rng = rng or random.Random(level * 31 + hash(pillar.value) % 97)
    w = rng.choice(WORDS)
    return Fragment(
        pillar=pillar,
        level=level,
        title=f"{w} {pillar.value} {level}",
        content=f"A {w} oriented {pillar.value} statement held at level {level}.",
    )


def full_slot_fragments(seed: int = 0) -> list[Fragment]:
    rng = random.Random(seed)
    return [make_fragment(level, pillar, rng) for level, pillar in SLOT_ORDER]


def make_fragment_set(seed: int = 0):
    return validate_fragment_set(full_slot_fragments(seed))


short_text = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"), whitelist_characters=" "),
    min_size=1,
    max_size=60,
).filter(lambda s: s.strip())

fragment_record = st.fixed_dictionaries({
    "level": st.sampled_from(LEVELS),
    "pillar": st.sampled_from([p.value for p in PILLAR_ORDER]),
    "title": short_text,
    "content": short_text,
})
