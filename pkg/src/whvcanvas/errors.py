"""Shared error base for all canvas subsystems.

Every domain error carries a stable string ``code`` so the REST layer can map
it to a wire payload without string-matching exception messages.
"""

from __future__ import annotations


class WhvError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "error"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.code)
        self.detail = detail or self.code

    def payload(self) -> dict:
        return {"error": self.code, "detail": self.detail}
