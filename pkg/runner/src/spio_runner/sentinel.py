"""Extract the validation-score sentinel from captured stdout."""

from __future__ import annotations

import re

SENTINEL_PATTERN = re.compile(
    r"^VALIDATION_SCORE:\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$"
)


class AmbiguousScore(Exception):
    """More than one sentinel line was printed."""


def extract_score(stdout_text: str) -> float | None:
    """Return the score if exactly one sentinel line exists, None if zero.

    Raises AmbiguousScore when the sentinel appears more than once.
    """
    matches = [
        SENTINEL_PATTERN.match(line.rstrip("\r"))
        for line in stdout_text.splitlines()
    ]
    values = [float(m.group(1)) for m in matches if m]
    if not values:
        return None
    if len(values) > 1:
        raise AmbiguousScore(f"{len(values)} sentinel lines found")
    return values[0]
