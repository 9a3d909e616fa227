from __future__ import annotations

import numpy as np
import pytest

from whvcanvas.core import Pillar
from whvcanvas.embedding import HashingEmbedder
from whvcanvas.llm import MockBackend
from whvcanvas.protograph import (
    EXPANSION_FAILURE_LIMIT,
    EmptyCorpus,
    EmptyGraph,
    ExpansionStalled,
    FilterReport,
    PillarMismatch,
    PrototypeGraph,
    SchemaError,
    ShiftType,
    TransformationSample,
    build_graph,
    check_graph,
    dedup_filter,
    expand_corpus,
    find_anchor,
    ingest_seeds,
    load_graph,
    load_seeds,
    normalize_shift,
    parse_seed_line,
    save_graph,
    validate_sample,
)

SEEDS_PATH = "data/seeds.tsv"


def _sample(source="a tool list", target="a shared inventory", shift=ShiftType.ENABLE,
            pillar=Pillar.WHAT, level=50, origin="seed"):
    return TransformationSample(
        pillar=pillar, level=level, source_text=source, shift=shift,
        target_text=target, origin=origin,
    )


class TestShiftType:
    def test_four_relations(self):
        assert [s.value for s in ShiftType] == ["enable", "imply", "support", "derived-from"]

    def test_normalize_accepts_variants(self):
        assert normalize_shift("Enable") is ShiftType.ENABLE
        assert normalize_shift("derived_from") is ShiftType.DERIVED_FROM
        assert normalize_shift(" derived-from ") is ShiftType.DERIVED_FROM

    def test_normalize_rejects_unknown(self):
        with pytest.raises(SchemaError):
            normalize_shift("extends")
        with pytest.raises(SchemaError):
            normalize_shift(3)


class TestSeeds:
    def test_parse_line(self):
        s = parse_seed_line("how\t75\tsource text\tenable\ttarget text")
        assert s.pillar is Pillar.HOW
        assert s.level == 75
        assert s.shift is ShiftType.ENABLE
        assert s.origin == "seed"

    def test_parse_wrong_arity(self):
        with pytest.raises(SchemaError):
            parse_seed_line("how\t75\tonly four\tfields")

    def test_bundled_seed_file(self):
        seeds = load_seeds(SEEDS_PATH)
        assert len(seeds) == 24
        by_pillar = ingest_seeds(seeds)
        assert set(by_pillar) == {Pillar.WHAT, Pillar.HOW, Pillar.VALUE}
        assert all(len(v) == 8 for v in by_pillar.values())

    def test_ingest_idempotent(self):
        seeds = load_seeds(SEEDS_PATH)
        once = ingest_seeds(seeds)
        twice = ingest_seeds(seeds + seeds)
        for pillar in once:
            assert [s.triple() for s in once[pillar]] == [s.triple() for s in twice[pillar]]

    def test_validate_sample_rejects_bad_rows(self):
        base = {"pillar": "what", "level": 25, "source": "a", "shift": "enable", "target": "b"}
        for key, bad in (("pillar", "why"), ("level", 26), ("shift", "extends"),
                         ("source", ""), ("target", "  ")):
            row = dict(base)
            row[key] = bad
            with pytest.raises(SchemaError):
                validate_sample(row)


class TestExpandCorpus:
    def _seeds(self):
        return [s for s in load_seeds(SEEDS_PATH) if s.pillar is Pillar.HOW]

    def test_target_zero(self):
        backend = MockBackend()
        out = expand_corpus(Pillar.HOW, self._seeds(), 0, backend)
        assert out == []
        assert backend.calls == []

    def test_reaches_target_in_batches(self):
        backend = MockBackend(seed=2)
        out = expand_corpus(Pillar.HOW, self._seeds(), 120, backend)
        assert len(out) == 120
        assert len(backend.calls) == 3  # 50 + 50 + 20
        samples = [s for s in out if isinstance(s, TransformationSample)]
        assert samples and all(s.origin == "expanded" for s in samples)
        assert all(s.pillar is Pillar.HOW for s in samples)

    def test_consecutive_failures_stall(self):
        backend = MockBackend()
        backend.add_fixture("corpus_expander", "not a json array at all")
        with pytest.raises(ExpansionStalled):
            expand_corpus(Pillar.HOW, self._seeds(), 100, backend)
        assert len(backend.calls) == EXPANSION_FAILURE_LIMIT

    def test_failure_counter_resets_on_success(self):
        backend = MockBackend(seed=1)
        good = backend._fallback_expander("pillar = how\nbatch_size = 50", b"\x01" * 32)
        backend.add_fixture("corpus_expander", ["bad", "bad", good, "bad", "bad", good])
        out = expand_corpus(Pillar.HOW, self._seeds(), 100, backend)
        assert len(out) == 100

    def test_requires_seeds(self):
        with pytest.raises(EmptyCorpus):
            expand_corpus(Pillar.HOW, [], 10, MockBackend())

    def test_invalid_rows_kept_raw_for_filter(self):
        backend = MockBackend()
        backend.add_fixture(
            "corpus_expander",
            '[{"pillar": "how", "level": 26, "source": "a", "shift": "enable", "target": "b"}]',
        )
        out = expand_corpus(Pillar.HOW, self._seeds(), 1, backend)
        assert len(out) == 1
        assert isinstance(out[0], dict)


class TestDedupFilter:
    def test_exact_dup(self):
        a = _sample()
        kept, report = dedup_filter([a, a])
        assert len(kept) == 1
        assert report.exact_dup == 1
        assert report.kept == 1

    def test_normalized_dup(self):
        a = _sample(source="Share  Tools", target="a shared inventory")
        b = _sample(source="share tools", target="A SHARED  INVENTORY")
        kept, report = dedup_filter([a, b])
        assert len(kept) == 1
        assert report.exact_dup == 1

    def test_self_loop(self):
        s = _sample(source="same text", target="same text")
        kept, report = dedup_filter([s])
        assert kept == []
        assert report.self_loop == 1

    def test_self_loop_normalized(self):
        s = _sample(source="Same Text", target="same  text")
        _, report = dedup_filter([s])
        assert report.self_loop == 1

    def test_schema_invalid_raw_rows(self):
        rows = [
            {"pillar": "how", "level": 26, "source": "a", "shift": "enable", "target": "b"},
            {"pillar": "how", "level": 25, "source": "a", "shift": "enable", "target": "b"},
        ]
        kept, report = dedup_filter(rows)
        assert report.schema_invalid == 1
        assert len(kept) == 1

    def test_near_dup_rejected(self):
        embedder = HashingEmbedder(dim=256)
        a = _sample(source="community garden plots for every block",
                    target="shared growing space within walking distance")
        # Identical text pair with a different shift: same embedding, cosine 1.
        b = TransformationSample(
            pillar=a.pillar, level=a.level, source_text=a.source_text,
            shift=ShiftType.IMPLY, target_text=a.target_text, origin="expanded",
        )
        kept, report = dedup_filter([a, b], embedder=embedder)
        assert len(kept) == 1
        assert report.near_dup == 1

    def test_rerun_is_identity(self):
        backend = MockBackend(seed=3)
        seeds = [s for s in load_seeds(SEEDS_PATH) if s.pillar is Pillar.WHAT]
        raw = expand_corpus(Pillar.WHAT, seeds, 200, backend)
        kept, _ = dedup_filter(raw)
        again, report = dedup_filter(kept)
        assert [s.triple() for s in again] == [s.triple() for s in kept]
        assert report.exact_dup == 0
        assert report.near_dup == 0
        assert report.schema_invalid == 0


class TestBuildGraph:
    def test_counts(self):
        samples = [
            _sample(source="t1", target="t2"),
            _sample(source="t2", target="t3", shift=ShiftType.IMPLY),
            _sample(source="t1", target="t4", shift=ShiftType.SUPPORT),
        ]
        g = build_graph(samples, Pillar.WHAT)
        assert g.node_count == 4
        assert g.edge_count == 3
        assert g.texts[0] == "t1"

    def test_empty(self):
        with pytest.raises(EmptyCorpus):
            build_graph([], Pillar.WHAT)

    def test_pillar_mismatch(self):
        with pytest.raises(PillarMismatch):
            build_graph([_sample(pillar=Pillar.HOW)], Pillar.WHAT)

    def test_edges_carry_level(self):
        g = build_graph([_sample(level=75)], Pillar.WHAT)
        assert g.edges[0][3] == 75

    def test_deterministic_and_idempotent(self):
        samples = [_sample(source=f"s{i}", target=f"t{i}") for i in range(5)]
        g1 = build_graph(samples, Pillar.WHAT)
        g2 = build_graph(samples, Pillar.WHAT)
        assert g1.texts == g2.texts
        assert g1.edges == g2.edges
        assert np.array_equal(g1.embeddings, g2.embeddings)

    def test_check_graph_rejects_corruption(self):
        g = build_graph([_sample()], Pillar.WHAT)
        bad = PrototypeGraph(
            pillar=g.pillar, texts=g.texts, embeddings=g.embeddings,
            edges=((0, ShiftType.ENABLE, 5, 25),),
        )
        from whvcanvas.protograph import GraphCorrupt
        with pytest.raises(GraphCorrupt):
            check_graph(bad)


class TestFindAnchor:
    def _graph(self, n=50):
        samples = [
            _sample(source=f"idea about topic number {i}",
                    target=f"a reframed idea about topic number {i}")
            for i in range(n // 2)
        ]
        return build_graph(samples, Pillar.WHAT)

    def test_exact_text_is_anchor(self):
        g = self._graph()
        hit = find_anchor(g.texts[3], g)
        assert hit is not None
        node, sim = hit
        assert node == 3
        assert sim == pytest.approx(1.0, abs=1e-9)

    def test_matches_exhaustive_scan(self):
        g = self._graph(50)
        embedder = HashingEmbedder()
        query = "a fresh idea about topic number 7"
        qv = embedder.embed(query).vector
        from whvcanvas.embedding import cosine
        sims = [cosine(qv, g.embeddings[i]) for i in range(g.node_count)]
        expected = int(np.argmax(sims))
        hit = find_anchor(query, g, embedder=embedder, threshold=0.0)
        assert hit is not None
        assert hit[0] == expected
        assert hit[1] == pytest.approx(max(sims), abs=1e-12)

    def test_below_threshold_is_no_anchor(self):
        g = self._graph()
        hit = find_anchor("zq xv wy unrelated nonsense tokens", g, threshold=0.99)
        assert hit is None

    def test_empty_graph(self):
        g = build_graph([_sample()], Pillar.WHAT)
        empty = PrototypeGraph(pillar=g.pillar, texts=(), embeddings=np.zeros((0, g.dim)),
                               edges=())
        with pytest.raises(EmptyGraph):
            find_anchor("anything", empty)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        seeds = [s for s in load_seeds(SEEDS_PATH) if s.pillar is Pillar.VALUE]
        kept, report = dedup_filter(seeds)
        g = build_graph(kept, Pillar.VALUE)
        d = str(tmp_path / "value")
        save_graph(g, d, report=report)
        loaded = load_graph(d)
        assert loaded.pillar is g.pillar
        assert loaded.texts == g.texts
        assert loaded.edges == g.edges
        assert np.array_equal(loaded.embeddings, g.embeddings)

    def test_manifest_mismatch_detected(self, tmp_path):
        import json
        import os

        g = build_graph([_sample()], Pillar.WHAT)
        d = str(tmp_path / "what")
        save_graph(g, d)
        manifest_path = os.path.join(d, "manifest.json")
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        manifest["edge_count"] = 99
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh)
        from whvcanvas.protograph import GraphCorrupt
        with pytest.raises(GraphCorrupt):
            load_graph(d)


class TestRetentionScale:
    def test_thousand_rows_with_planted_near_dups(self):
        # 920 distinct rows plus 80 byte-level copies of kept rows; the copies
        # fall to the exact-dup class and retention stays above 900.
        embedder = HashingEmbedder(dim=256)
        rows = []
        for i in range(920):
            rows.append(_sample(
                source=f"distinct concept {i} about neighborhood systems",
                target=f"an elaborated concept {i} for shared infrastructure",
            ))
        for i in range(80):
            rows.append(rows[i * 7])
        kept, report = dedup_filter(rows, embedder=embedder)
        assert len(kept) >= 900
        assert report.exact_dup + report.near_dup == 80
