"""Explicit markers for non-finite results.

Solvers never encode an infinite value as a large float; they return one of
these members instead, so callers can branch on ``value is MINUS_INF``.
"""
from enum import Enum


class Marker(Enum):
    DIVERGED = "diverged"
    MINUS_INF = "-inf"
    PLUS_INF = "+inf"
    SATURATED = "saturated"

    def __repr__(self):
        return self.name

    def __str__(self):
        return self.value


DIVERGED = Marker.DIVERGED
MINUS_INF = Marker.MINUS_INF
PLUS_INF = Marker.PLUS_INF
SATURATED = Marker.SATURATED


def is_finite(value):
    return not isinstance(value, Marker)


def as_float(value):
    """Map a value that may be a marker onto IEEE floats (for CSV/plots only)."""
    if value is MINUS_INF:
        return float("-inf")
    if value is PLUS_INF or value is DIVERGED:
        return float("inf")
    return float(value)
