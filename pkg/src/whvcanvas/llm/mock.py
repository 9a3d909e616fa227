"""Seeded deterministic mock backend.

Resolution order per request: exact (tag, bindings-fingerprint) fixture,
then substring-matched fixtures, then a tag-level default, then a synthetic
fallback that echoes a schema-conformant response derived from a seeded hash
of the prompt.  Identical (seed, prompt) always yields identical output.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Mapping, Optional, Union

from ..core import LEVELS, PILLAR_ORDER
from .gateway import GenerationRequest, TransientBackendError, bindings_fingerprint
from .templates import BindingValue

_WORDS = (
    "signal", "rhythm", "archive", "ritual", "threshold", "mosaic", "current",
    "lattice", "compass", "garden", "echo", "horizon", "loom", "prism", "relay",
    "atlas", "harbor", "kernel", "orbit", "tide",
)

_SHIFTS = ("enable", "imply", "support", "derived-from")

FixtureValue = Union[str, list]


class MockBackend:
    name = "mock"
    deterministic = True

    def __init__(self, seed: int = 0, fail_times: int = 0):
        self.seed = seed
        self.fail_times = fail_times
        self._exact: dict[tuple[str, str], FixtureValue] = {}
        self._contains: list[tuple[str, str, FixtureValue]] = []
        self._defaults: dict[str, FixtureValue] = {}
        self.calls: list[GenerationRequest] = []

    # -- fixture wiring ----------------------------------------------------

    def add_fixture(
        self,
        tag: str,
        response: FixtureValue,
        bindings: Optional[Mapping[str, BindingValue]] = None,
        when_contains: Optional[str] = None,
    ) -> None:
        """Register a canned response for a template.

        ``bindings`` keys the fixture to one exact rendering; ``when_contains``
        matches any prompt containing the substring; neither makes it the
        tag-level default.  A list response is consumed one item per call,
        sticking at the last item.
        """
        if bindings is not None:
            self._exact[(tag, bindings_fingerprint(bindings))] = response
        elif when_contains is not None:
            self._contains.append((tag, when_contains, response))
        else:
            self._defaults[tag] = response

    def _pop(self, value: FixtureValue) -> str:
        if isinstance(value, list):
            return str(value.pop(0)) if len(value) > 1 else str(value[0])
        return str(value)

    # -- backend contract ----------------------------------------------------

    def complete(self, request: GenerationRequest) -> str:
        self.calls.append(request)
        if self.fail_times > 0:
            self.fail_times -= 1
            raise TransientBackendError("injected transient failure")

        key = (request.tag, request.fingerprint)
        if key in self._exact:
            return self._pop(self._exact[key])
        for tag, needle, value in self._contains:
            if tag == request.tag and needle in request.prompt:
                return self._pop(value)
        if request.tag in self._defaults:
            return self._pop(self._defaults[request.tag])
        return self._fallback(request)

    # -- synthetic fallbacks ---------------------------------------------------

    def _digest(self, prompt: str) -> bytes:
        return hashlib.sha256(f"{self.seed}:{prompt}".encode("utf-8")).digest()

    def _words(self, digest: bytes, n: int, salt: int = 0) -> list[str]:
        out = []
        for i in range(n):
            out.append(_WORDS[digest[(salt + i) % len(digest)] % len(_WORDS)])
        return out

    def _fallback(self, request: GenerationRequest) -> str:
        digest = self._digest(request.prompt)
        tag = request.tag
        if tag == "extractor":
            return self._fallback_extractor(digest)
        if tag == "rewriter":
            seed_text = _field(request.prompt, "seed_text")
            w1, w2 = self._words(digest, 2)
            head = seed_text.split()[0] if seed_text else w1
            return f"{head} recast as a {w1}-{w2} transition"
        if tag == "shift_classifier":
            return _SHIFTS[digest[0] % 4]
        if tag in ("merge_nodes", "merge_fragments"):
            w1, w2, w3 = self._words(digest, 3)
            return f"A {w1} {w2} that turns shared {w3} into one design direction."
        if tag == "steering":
            w1, w2 = self._words(digest, 2)
            primary = _field(request.prompt, "primary_theme") or w1
            return json.dumps({
                "title": f"{primary} {w2}".strip(),
                "content": f"The idea re-centered on {primary}, expressed through a {w1} {w2}.",
            })
        if tag == "cluster_label":
            w1, w2 = self._words(digest, 2)
            return f"{w1.capitalize()} {w2.capitalize()}"
        if tag == "corpus_expander":
            return self._fallback_expander(request.prompt, digest)
        # Untemplated generation: echo a short deterministic sentence.
        w1, w2 = self._words(digest, 2)
        return f"{w1} {w2} {digest[:4].hex()}"

    def _fallback_extractor(self, digest: bytes) -> str:
        records = []
        i = 0
        for level in LEVELS:
            for pillar in PILLAR_ORDER:
                w1 = _WORDS[digest[i % len(digest)] % len(_WORDS)]
                w2 = _WORDS[digest[(i + 7) % len(digest)] % len(_WORDS)]
                records.append({
                    "level": level,
                    "pillar": pillar.value,
                    "title": f"{w1} {pillar.value[0]}{level}",
                    "content": f"A {w1} {w2} {pillar.value} statement at level {level}.",
                })
                i += 1
        return json.dumps(records)

    def _fallback_expander(self, prompt: str, digest: bytes) -> str:
        pillar = _field(prompt, "pillar") or "what"
        try:
            batch_size = int(_field(prompt, "batch_size") or "50")
        except ValueError:
            batch_size = 50
        records = []
        for i in range(batch_size):
            w1 = _WORDS[(digest[i % len(digest)] + i) % len(_WORDS)]
            w2 = _WORDS[(digest[(i + 3) % len(digest)] + 2 * i + 1) % len(_WORDS)]
            level = LEVELS[digest[(i + 5) % len(digest)] % 4]
            shift = _SHIFTS[digest[(i + 9) % len(digest)] % 4]
            suffix = hashlib.sha256(digest + i.to_bytes(4, "big")).hexdigest()[:6]
            records.append({
                "pillar": pillar,
                "level": level,
                "source": f"a {w1} {pillar} sketch {suffix}",
                "shift": shift,
                "target": f"a {w2} {pillar} reframing {suffix}",
            })
        return json.dumps(records)


def _field(prompt: str, name: str) -> str:
    match = re.search(rf"^\s*{name} = (.*)$", prompt, flags=re.MULTILINE)
    return match.group(1).strip() if match else ""
