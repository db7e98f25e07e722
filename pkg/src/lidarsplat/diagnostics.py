"""Process-wide diagnostic counters for rare numerical events.

Counters record events that are handled gracefully (degenerate
neighborhoods, zero render denominators, non-finite probe losses, ...) so
callers and tests can assert on how often the fallback paths fired.
"""

from collections import Counter

_COUNTS: Counter = Counter()


def record(event: str, n: int = 1) -> None:
    _COUNTS[event] += n


def count(event: str) -> int:
    return _COUNTS[event]


def snapshot() -> dict:
    return dict(_COUNTS)


def reset() -> None:
    _COUNTS.clear()
