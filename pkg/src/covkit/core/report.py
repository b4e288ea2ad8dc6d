"""Log-density results with a per-factor breakdown."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class CovReport:
    """A log-density together with the factors it was assembled from.

    ``terms`` maps a label to an array (or float) of the same batch shape; the
    value is their sum, taken in insertion order. ``std_error`` is set for
    Monte-Carlo estimates.
    """

    terms: dict[str, np.ndarray] = field(default_factory=dict)
    std_error: np.ndarray | float | None = None
    formula: str = ""

    @property
    def value(self):
        total = None
        for t in self.terms.values():
            total = t if total is None else total + t
        if total is None:
            return 0.0
        return total if np.ndim(total) else float(total)

    def __float__(self):
        return float(self.value)

    def breakdown(self) -> list[tuple[str, object]]:
        return list(self.terms.items())

    def take(self, mask) -> "CovReport":
        """Restrict a batched report to ``mask`` (any numpy index)."""
        terms = {k: np.asarray(v)[mask] if np.ndim(v) else v for k, v in self.terms.items()}
        se = self.std_error
        if se is not None and np.ndim(se):
            se = np.asarray(se)[mask]
        return CovReport(terms, se, self.formula)


def masked_terms(mask, terms: dict, fill=-np.inf) -> dict:
    """Set every term to ``fill`` (first term) / 0 (others) where ``mask`` is false.

    Used to send out-of-support points to ``-inf`` while keeping the breakdown
    summable without ``inf - inf``.
    """
    out = {}
    first = True
    for k, v in terms.items():
        v = np.asarray(v, dtype=float)
        v = np.broadcast_to(v, np.shape(mask)) if np.ndim(mask) else v
        out[k] = np.where(mask, v, fill if first else 0.0)
        first = False
    return out


LogDensity = CovReport
