from __future__ import annotations

import math

from Levenshtein import distance
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Iterable, Optional

# minimum similarity, in percent, for a column name to be suggested
SUGGESTION_THRESHOLD = 60


def closest_match(query: str, candidates: Iterable[str]) -> Optional[str]:
    """Returns the candidate most similar to ``query`` by Levenshtein distance,
    or None if nothing is close enough to be a plausible typo."""
    best, best_ratio = None, 0
    for candidate in candidates:
        len_tot = len(query) + len(candidate)
        if not len_tot:
            continue
        ratio = int(((len_tot - distance(query.lower(), candidate.lower())) / len_tot) * 100)
        if ratio > best_ratio:
            best, best_ratio = candidate, ratio
    return best if best_ratio >= SUGGESTION_THRESHOLD else None


def is_probability(value: float, *, open_interval: bool = False) -> bool:
    if not math.isfinite(value):
        return False
    if open_interval:
        return 0 < value < 1
    return 0 <= value <= 1


def is_positive_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value > 0
