"""Strict parsing of model output into JSON values.

Models wrap JSON in code fences or prose; the rule here is mechanical: drop
everything before the first opening bracket and after the last closing
bracket, then parse strictly.  No other repair is attempted.
"""

from __future__ import annotations

import json

from ..errors import WhvError


class NotAnArray(WhvError):
    code = "not_an_array"

    def __init__(self, detail: str = "output contains no JSON array"):
        super().__init__(detail)


class NotAnObject(WhvError):
    code = "not_an_object"

    def __init__(self, detail: str = "output contains no JSON object"):
        super().__init__(detail)


class MalformedJson(WhvError):
    code = "malformed_json"

    def __init__(self, position: int, detail: str = ""):
        super().__init__(detail or f"malformed JSON at position {position}")
        self.position = position


class MissingKey(WhvError):
    code = "missing_key"

    def __init__(self, name: str):
        super().__init__(f"object is missing key {name!r}")
        self.name = name


class UnexpectedKey(WhvError):
    code = "unexpected_key"

    def __init__(self, name: str):
        super().__init__(f"object has unexpected key {name!r}")
        self.name = name


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        first_break = text.find("\n")
        if first_break != -1:
            text = text[first_break + 1 :]
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def parse_json_array(text: str) -> list:
    """Parse a JSON array, stripping code fences and surrounding prose."""
    cleaned = _strip_fences(text)
    start = cleaned.find("[")
    end = cleaned.rfind("]")
    if start == -1 or end == -1 or end < start:
        raise NotAnArray()
    snippet = cleaned[start : end + 1]
    try:
        value = json.loads(snippet)
    except json.JSONDecodeError as exc:
        raise MalformedJson(exc.pos, f"malformed JSON array: {exc.msg} at position {exc.pos}") from None
    if not isinstance(value, list):
        raise NotAnArray("top-level JSON value is not an array")
    return value


def parse_json_object(text: str, required_keys: tuple[str, ...] = ("title", "content")) -> dict:
    """Parse a JSON object with exactly ``required_keys``, same stripping rule."""
    cleaned = _strip_fences(text)
    start = cleaned.find("{")
    end = cleaned.rfind("}")
    if start == -1 or end == -1 or end < start:
        raise NotAnObject()
    snippet = cleaned[start : end + 1]
    try:
        value = json.loads(snippet)
    except json.JSONDecodeError as exc:
        raise MalformedJson(exc.pos, f"malformed JSON object: {exc.msg} at position {exc.pos}") from None
    if not isinstance(value, dict):
        raise NotAnObject("top-level JSON value is not an object")
    for key in required_keys:
        if key not in value:
            raise MissingKey(key)
    for key in value:
        if key not in required_keys:
            raise UnexpectedKey(key)
    return value
