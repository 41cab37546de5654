"""Shared helpers for delimited output."""

from __future__ import annotations


def fmt(value) -> str:
    """Shortest round-trip decimal for a float-like value.

    Plain-float repr is deterministic for identical doubles, which the
    byte-identical-output guarantees rely on.
    """
    return repr(float(value))
