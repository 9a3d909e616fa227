from __future__ import annotations

import json

import pytest

from whvcanvas.llm import (
    BackendUnavailable,
    MalformedJson,
    MissingKey,
    MockBackend,
    NotAnArray,
    NotAnObject,
    OutputTooLong,
    SchemaRetryExhausted,
    UnexpectedKey,
    bindings_fingerprint,
    generate,
    generate_structured,
    parse_json_array,
    parse_json_object,
    render_prompt,
    request_for,
)
from whvcanvas.llm.gateway import GenerationRequest, TransientBackendError
from whvcanvas.llm.templates import (
    REQUIRED_BINDINGS,
    TEMPLATE_IDS,
    MissingBinding,
    UnknownTemplate,
    default_catalogue,
)


def _sample_bindings(template_id: str) -> dict:
    values = {
        "raw": "An app for seasonal recipes",
        "pillar": "how",
        "level": 50,
        "node_context": "Title: Meals / Content: plan weekly meals",
        "seed_text": "Suggest recipes from pantry photos",
        "topk_prototypes": ["proto one", "proto two"],
        "shift_type": "enable",
        "operator": "Op_WH",
        "insights": ["insight a", "insight b"],
        "mode": "Brainstorm",
        "fragments": ["frag a", "frag b"],
        "primary_theme": "Sustainability",
        "weighted_themes": ["Sustainability w=0.62", "Health w=0.38"],
        "original_node": "Title: Meals / Content: plan weekly meals",
        "member_titles": ["one", "two"],
        "seed_examples": ["a | enable | b"],
        "batch_size": 50,
    }
    return {k: values[k] for k in REQUIRED_BINDINGS[template_id]}


class TestTemplates:
    def test_catalogue_complete(self):
        assert set(TEMPLATE_IDS) == {
            "extractor", "rewriter", "merge_nodes", "merge_fragments",
            "steering", "cluster_label", "shift_classifier", "corpus_expander",
        }

    def test_every_template_renders(self):
        for tid in TEMPLATE_IDS:
            text = render_prompt(tid, _sample_bindings(tid))
            assert "[" + "]" not in text
            assert len(text) > 50

    def test_no_unresolved_placeholders_after_render(self):
        import re
        for tid in TEMPLATE_IDS:
            text = render_prompt(tid, _sample_bindings(tid))
            leftovers = re.findall(r"\[([a-z][a-z0-9_]*)\]", text)
            assert leftovers == [], (tid, leftovers)

    def test_unknown_template(self):
        with pytest.raises(UnknownTemplate):
            render_prompt("nope", {})

    def test_missing_binding(self):
        with pytest.raises(MissingBinding):
            render_prompt("extractor", {})

    def test_extra_bindings_ignored(self):
        text = render_prompt("extractor", {"raw": "x", "unused": "y"})
        assert "x" in text

    def test_value_containing_placeholder_not_resubstituted(self):
        # A malicious or accidental "[raw]" inside a binding value must
        # survive verbatim, not trigger a second substitution.
        text = render_prompt("cluster_label", {"member_titles": ["[member_titles]", "b"]})
        assert "- [member_titles]" in text

    def test_list_rendering(self):
        text = render_prompt("cluster_label", {"member_titles": ["alpha", "beta"]})
        assert "- alpha\n- beta" in text

    def test_empty_list_rendering(self):
        text = render_prompt("cluster_label", {"member_titles": []})
        assert "- (none)" in text

    def test_distinct_bindings_render_distinct_prompts(self):
        a = render_prompt("extractor", {"raw": "idea one"})
        b = render_prompt("extractor", {"raw": "idea two"})
        assert a != b

    def test_catalogue_placeholder_sets_match_contract(self):
        cat = default_catalogue()
        for tid in TEMPLATE_IDS:
            tpl = cat.get(tid)
            assert tpl.placeholders() == REQUIRED_BINDINGS[tid]


class TestParsing:
    def test_array_happy(self):
        assert parse_json_array('[1, 2]') == [1, 2]

    def test_array_with_prose_and_fences(self):
        text = 'Sure thing:\n```json\n[{"a": 1}]\n```\nHope that helps.'
        assert parse_json_array(text) == [{"a": 1}]

    def test_array_missing(self):
        with pytest.raises(NotAnArray):
            parse_json_array('{"a": 1}')

    def test_array_malformed(self):
        with pytest.raises(MalformedJson):
            parse_json_array('[1, 2,]')

    def test_object_happy(self):
        out = parse_json_object('{"title": "t", "content": "c"}')
        assert out == {"title": "t", "content": "c"}

    def test_object_missing_key(self):
        with pytest.raises(MissingKey):
            parse_json_object('{"title": "t"}')

    def test_object_unexpected_key(self):
        with pytest.raises(UnexpectedKey):
            parse_json_object('{"title": "t", "content": "c", "mood": "?"}')

    def test_object_not_an_object(self):
        with pytest.raises(NotAnObject):
            parse_json_object('[1]')


class TestGenerate:
    def test_mock_deterministic(self):
        req = request_for("extractor", {"raw": "solar powered library"})
        out1 = generate(MockBackend(seed=11), req)
        out2 = generate(MockBackend(seed=11), req)
        assert out1 == out2
        assert generate(MockBackend(seed=12), req) != out1

    def test_retry_then_success(self):
        backend = MockBackend(seed=0, fail_times=1)
        req = request_for("cluster_label", {"member_titles": ["a"]}, retry_budget=1)
        out = generate(backend, req)
        assert out
        assert len(backend.calls) == 2

    def test_retries_exhausted(self):
        backend = MockBackend(seed=0, fail_times=5)
        req = request_for("cluster_label", {"member_titles": ["a"]}, retry_budget=1)
        with pytest.raises(BackendUnavailable):
            generate(backend, req)
        assert len(backend.calls) == 2

    def test_zero_budget_fails_on_single_transient(self):
        backend = MockBackend(seed=0, fail_times=1)
        req = request_for("cluster_label", {"member_titles": ["a"]}, retry_budget=0)
        with pytest.raises(BackendUnavailable):
            generate(backend, req)

    def test_output_too_long(self):
        backend = MockBackend(seed=0)
        backend.add_fixture("cluster_label", "word " * 50)
        req = request_for("cluster_label", {"member_titles": ["a"]})
        req = GenerationRequest(
            prompt=req.prompt, temperature=req.temperature, max_output_tokens=10,
            retry_budget=0, tag=req.tag, fingerprint=req.fingerprint,
        )
        with pytest.raises(OutputTooLong):
            generate(backend, req)

    def test_request_validation(self):
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", temperature=-0.1)
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", retry_budget=-1)

    def test_default_temperatures(self):
        assert request_for("extractor", {"raw": "x"}).temperature == 0.0
        assert request_for("shift_classifier", _sample_bindings("shift_classifier")).temperature == 0.0
        assert request_for("rewriter", _sample_bindings("rewriter")).temperature == 0.7


class TestFixtures:
    def test_exact_fixture_beats_default(self):
        backend = MockBackend()
        bindings = {"member_titles": ["a", "b"]}
        backend.add_fixture("cluster_label", "Default Label")
        backend.add_fixture("cluster_label", "Exact Label", bindings=bindings)
        req = request_for("cluster_label", bindings)
        assert generate(backend, req) == "Exact Label"
        other = request_for("cluster_label", {"member_titles": ["z"]})
        assert generate(backend, other) == "Default Label"

    def test_substring_fixture(self):
        backend = MockBackend()
        backend.add_fixture("rewriter", "pinned rewrite", when_contains="pantry photos")
        req = request_for("rewriter", _sample_bindings("rewriter"))
        assert generate(backend, req) == "pinned rewrite"

    def test_sequence_fixture_sticks_at_last(self):
        backend = MockBackend()
        backend.add_fixture("cluster_label", ["first", "second"])
        req = request_for("cluster_label", {"member_titles": ["a"]})
        assert generate(backend, req) == "first"
        assert generate(backend, req) == "second"
        assert generate(backend, req) == "second"

    def test_fingerprint_stable_and_order_insensitive(self):
        a = bindings_fingerprint({"x": "1", "y": [2, 3]})
        b = bindings_fingerprint({"y": [2, 3], "x": "1"})
        assert a == b
        assert len(a) == 16
        assert a != bindings_fingerprint({"x": "1", "y": [2, 4]})


class TestStructured:
    def test_parse_success_first_try(self):
        backend = MockBackend()
        backend.add_fixture("steering", '{"title": "T", "content": "C"}')
        out = generate_structured(
            backend, "steering", _sample_bindings("steering"),
            parse=lambda t: parse_json_object(t),
        )
        assert out == {"title": "T", "content": "C"}
        assert len(backend.calls) == 1

    def test_corrective_retry_recovers(self):
        backend = MockBackend()
        backend.add_fixture("steering", ['not json at all', '{"title": "T", "content": "C"}'])
        out = generate_structured(
            backend, "steering", _sample_bindings("steering"),
            parse=lambda t: parse_json_object(t),
        )
        assert out == {"title": "T", "content": "C"}
        assert len(backend.calls) == 2
        assert "previous response was invalid" in backend.calls[1].prompt

    def test_schema_retry_exhausted(self):
        backend = MockBackend()
        backend.add_fixture("steering", "never json")
        with pytest.raises(SchemaRetryExhausted) as exc_info:
            generate_structured(
                backend, "steering", _sample_bindings("steering"),
                parse=lambda t: parse_json_object(t), schema_retries=1,
            )
        assert len(backend.calls) == 2
        assert exc_info.value.payload()["error"] == "schema_error"

    def test_mock_fallback_extractor_is_schema_valid(self):
        backend = MockBackend(seed=5)
        rows = generate_structured(
            backend, "extractor", {"raw": "community tool library"},
            parse=parse_json_array,
        )
        assert len(rows) == 12
        seen = {(r["level"], r["pillar"]) for r in rows}
        assert len(seen) == 12

    def test_mock_fallback_steering_is_schema_valid(self):
        backend = MockBackend(seed=5)
        out = generate_structured(
            backend, "steering", _sample_bindings("steering"),
            parse=lambda t: parse_json_object(t),
        )
        assert set(out) == {"title", "content"}


class TestErrorPayloads:
    def test_payload_shape(self):
        err = BackendUnavailable("backend down")
        assert err.payload() == {"error": "backend_unavailable", "detail": "backend down"}
