import re

from typing import Optional, Sequence

import numpy as np

RANGE_RE = re.compile(r'^(?P<prefix>.*?)(?P<start>\d+)\.\.(?P=prefix)?(?P<stop>\d+)$')


def parse_columns(spec: Optional[str]) -> list[str]:
    """Parses a comma separated column list, expanding ranges like ``z1..z5``
    (or ``z1..5``) to z1, z2, ..., z5."""
    if not spec:
        return []
    columns = []
    for token in (t.strip() for t in spec.split(',')):
        if not token:
            continue
        match = RANGE_RE.match(token)
        if match:
            prefix, start, stop = match['prefix'], int(match['start']), int(match['stop'])
            step = 1 if stop >= start else -1
            columns.extend(f'{prefix}{i}' for i in range(start, stop + step, step))
        else:
            columns.append(token)
    return columns


def parse_int_list(spec: str) -> list[int]:
    """'5, 40,80' -> [5, 40, 80]"""
    return [int(t) for t in re.split(r'[,\s]+', spec.strip()) if t]


def format_vector(values: Sequence[float], precision: int = 6) -> str:
    return '[' + ', '.join(f'{v:.{precision}g}' for v in np.asarray(values, dtype=float).reshape(-1)) + ']'
