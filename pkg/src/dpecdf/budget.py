"""Append-only privacy budget ledger with exact rational arithmetic."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Tuple, Union

from .errors import InvalidParameterError

Number = Union[int, float, Fraction]


def as_fraction(eps: Number) -> Fraction:
    """Exact rational value of ``eps`` (floats convert without rounding)."""
    if isinstance(eps, Fraction):
        return eps
    if isinstance(eps, float) and not math.isfinite(eps):
        raise InvalidParameterError(f"cannot charge a non-finite epsilon {eps}")
    return Fraction(eps)


@dataclass(frozen=True)
class Charge:
    tag: str
    epsilon: Fraction


class BudgetAccount:
    """Sequential-composition ledger.  Entries are never modified or removed."""

    def __init__(self):
        self._entries: List[Charge] = []
        self._lock = threading.Lock()

    def charge(self, tag: str, eps: Number) -> Charge:
        value = as_fraction(eps)
        if value < 0:
            raise InvalidParameterError(f"negative charge {value} for {tag!r}")
        entry = Charge(tag, value)
        with self._lock:
            self._entries.append(entry)
        return entry

    @property
    def ledger(self) -> Tuple[Charge, ...]:
        with self._lock:
            return tuple(self._entries)

    @property
    def total(self) -> Fraction:
        return sum((c.epsilon for c in self.ledger), Fraction(0))

    def __len__(self) -> int:
        return len(self._entries)

    def to_list(self) -> list:
        return [{"tag": c.tag, "epsilon": float(c.epsilon), "exact": str(c.epsilon)} for c in self.ledger]

    def to_json(self) -> str:
        return json.dumps({"ledger": self.to_list(), "total": float(self.total)})
