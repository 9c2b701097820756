"""Apportionment of fractional design weights to integer unit counts.

Given a probability vector over duplicate classes and a target total m,
four classic apportionment schemes produce integer counts summing to m:

* Hamilton (largest remainder): assign floor(m * w_j), then hand the
  leftover seats to the largest fractional remainders.
* Jefferson / Webster / Adams (divisor methods): repeatedly give the next
  seat to the class maximizing m * w_j / alpha(n_j), with alpha(n) = n + 1,
  n + 0.5 and n respectively. Adams seats one copy of every class with
  positive weight first, which also avoids the division by alpha(0) = 0.

Ties are always broken by lowest class id.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .design import DesignState, is_infeasible
from .errors import ConfigError, InfeasibleError

HAMILTON = "hamilton"
JEFFERSON = "jefferson"
WEBSTER = "webster"
ADAMS = "adams"

METHODS = (HAMILTON, JEFFERSON, WEBSTER, ADAMS)

_DIVISORS = {
    JEFFERSON: lambda n: n + 1.0,
    WEBSTER: lambda n: n + 0.5,
    ADAMS: lambda n: float(n),
}


@dataclass(frozen=True)
class WeightedDesign:
    """Normalized weights over duplicate-class ids."""

    class_ids: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.class_ids) != len(self.weights) or not self.class_ids:
            raise ConfigError("need one weight per class id")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ConfigError("class ids must be unique")
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigError("weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise ConfigError("weights must not all be zero")
        object.__setattr__(self, "weights", tuple(w / total))

    @classmethod
    def from_pairs(cls, pairs):
        ids, weights = zip(*pairs)
        return cls(tuple(int(i) for i in ids), tuple(float(x) for x in weights))


def load_weights(path, tol: float = 1e-9) -> WeightedDesign:
    """Read a `class_id,weight` CSV; the raw weights must sum to 1 within tol."""
    pairs = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip().lower() in ("class_id", "class"):
                continue
            if len(row) < 2:
                raise ConfigError(f"{path}: expected 'class_id,weight' rows, got {row!r}")
            pairs.append((int(row[0]), float(row[1])))
    if not pairs:
        raise ConfigError(f"{path}: no weight records found")
    total = sum(w for _, w in pairs)
    if abs(total - 1.0) > tol:
        raise ConfigError(f"{path}: weights sum to {total!r}, expected 1 within {tol}")
    return WeightedDesign.from_pairs(pairs)


def round_weights(w: WeightedDesign, m: int, method: str) -> np.ndarray:
    """Integer counts per class, summing to m, under the given method."""
    if method not in METHODS:
        raise ConfigError(f"unknown rounding method {method!r}")
    if m < 1:
        raise ConfigError("target count m must be >= 1")
    pi = m * np.asarray(w.weights)
    n_classes = pi.size
    order = np.argsort(w.class_ids, kind="stable")  # tie-break by lowest class id
    if method == HAMILTON:
        counts = np.floor(pi).astype(np.int64)
        remainders = pi - counts
        left = m - int(counts.sum())
        # Largest remainders win; equal remainders go to the lowest class id.
        ranked = sorted(range(n_classes), key=lambda j: (-remainders[j], w.class_ids[j]))
        for j in ranked[:left]:
            counts[j] += 1
        return counts

    counts = np.zeros(n_classes, dtype=np.int64)
    positive = pi > 0
    if method == ADAMS:
        n_positive = int(positive.sum())
        if m < n_positive:
            raise ConfigError(
                f"adams requires m >= number of positive-weight classes ({n_positive})"
            )
        counts[positive] = 1
    alpha = _DIVISORS[method]
    while counts.sum() < m:
        best_j = -1
        best_ratio = -np.inf
        for j in order:
            if not positive[j]:
                continue
            ratio = pi[j] / alpha(counts[j])
            if ratio > best_ratio:
                best_ratio = ratio
                best_j = j
        counts[best_j] += 1
    return counts


def materialize_counts(problem, counts_by_class: dict[int, int]) -> list[int]:
    """Turn per-class counts into concrete unit ids (lowest ids first)."""
    ids = []
    for class_id, count in sorted(counts_by_class.items()):
        if count == 0:
            continue
        members = problem.classes[class_id]
        if count > len(members):
            raise InfeasibleError(
                f"class {class_id} holds {len(members)} units, cannot place {count}"
            )
        ids.extend(members[:count])
    return ids


def best_rounded_design(w: WeightedDesign, m: int, problem) -> dict:
    """Evaluate all four rounding methods against the design objective.

    Returns per-method counts and variances plus the best method/design.
    Weights must be indexed by the problem's duplicate-class ids.
    """
    known = set(range(len(problem.classes)))
    given = set(w.class_ids)
    if not given <= known:
        raise ConfigError(
            f"weight file references unknown duplicate classes: {sorted(given - known)}"
        )
    per_method = {}
    best = None
    for method in METHODS:
        try:
            counts = round_weights(w, m, method)
        except ConfigError as exc:
            # Adams needs one seat per positive-weight class; keep comparing
            # the applicable methods.
            per_method[method] = {"error": str(exc)}
            continue
        mapping = {cid: int(k) for cid, k in zip(w.class_ids, counts)}
        ids = materialize_counts(problem, mapping)
        state = DesignState(problem, ids)
        value = state.value()
        per_method[method] = {
            "counts": mapping,
            "value": None if is_infeasible(value) else value,
            "unit_ids": ids,
        }
        if not is_infeasible(value) and (best is None or value < best[1]):
            best = (method, value, ids)
    if best is None:
        raise InfeasibleError("every rounding method produced a degenerate design")
    return {
        "per_method": per_method,
        "best_method": best[0],
        "best_value": best[1],
        "best_unit_ids": best[2],
    }
