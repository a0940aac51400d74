"""Input data: CSV ingestion of scored records and synthetic Poisson datasets."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .apps.roc import ScoredDataset
from .errors import DataError, InvalidParameterError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IngestSummary:
    n: int
    positive_fraction: Optional[float]
    n_features: int
    skipped_lines: List[int]

    def format(self) -> str:
        parts = [f"instances: {self.n}"]
        if self.positive_fraction is not None:
            parts.append(f"positive fraction: {self.positive_fraction:.4f}")
        parts.append(f"other columns: {self.n_features}")
        if self.skipped_lines:
            parts.append(f"skipped rows: {len(self.skipped_lines)}")
        return ", ".join(parts)


def ingest_csv(path, score_column: str, label_column: Optional[str] = None, strict: bool = True):
    """Read ``(score, label)`` records from a CSV file with a header row.

    Without ``label_column`` every label is 0 and only the scores matter.
    In strict mode the first malformed row raises; otherwise such rows are
    skipped and reported in the summary.  Returns ``(dataset, summary)``.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in (score_column, label_column) if c is not None and c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        n_features = len(reader.fieldnames) - 1 - (label_column is not None)
        scores, labels, skipped = [], [], []
        for row in reader:
            line = reader.line_num
            try:
                s = float(row[score_column])
                if not np.isfinite(s):
                    raise ValueError("non-finite score")
                y = 0
                if label_column is not None:
                    y = int(float(row[label_column]))
                    if y not in (0, 1):
                        raise ValueError(f"label {row[label_column]!r} is not 0/1")
            except (TypeError, ValueError) as exc:
                if strict:
                    raise DataError(f"{path}, line {line}: {exc}") from None
                log.warning("%s, line %d skipped: %s", path, line, exc)
                skipped.append(line)
                continue
            scores.append(s)
            labels.append(y)
    if not scores:
        raise DataError(f"{path}: no data rows")
    data = ScoredDataset(np.array(scores), np.array(labels))
    summary = IngestSummary(
        data.n, data.positive_fraction if label_column is not None else None, n_features, skipped
    )
    return data, summary


def gen_poisson_dataset(lam: float, n_values: int = 1 << 15, seed: int = 0) -> np.ndarray:
    """Multiset over ``1..n_values`` where each value occurs ``Pois(lam)`` times."""
    if not lam > 0:
        raise InvalidParameterError(f"Poisson rate must be positive, got {lam}")
    if n_values < 1:
        raise InvalidParameterError("need at least one value")
    rng = np.random.default_rng([int(seed), 0x504F4953])
    counts = rng.poisson(lam, size=n_values)
    return np.repeat(np.arange(1, n_values + 1, dtype=float), counts)
