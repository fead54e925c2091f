"""Exact cost-sensitive classification over a finite hypothesis class.

A CSC instance assigns each example a cost for predicting -1 and a cost for
predicting +1.  The oracle enumerates the class and returns a minimizer,
breaking ties toward the lowest hypothesis index so results are reproducible.
The weighted-classification transform used by the fairness reduction lives
here too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HypothesisClass, group_index


@dataclass(frozen=True)
class CscRow:
    context: int
    group: int
    cost_neg: float  # cost of predicting -1
    cost_pos: float  # cost of predicting +1


class CscInstance:
    """A list of (example, cost_neg, cost_pos) rows; rows may be empty."""

    def __init__(self, rows):
        rows = tuple(
            r if isinstance(r, CscRow) else CscRow(int(r[0]), int(r[1]), float(r[2]), float(r[3]))
            for r in rows
        )
        for r in rows:
            if not np.isfinite(r.cost_neg) or not np.isfinite(r.cost_pos):
                raise ValueError(f"non-finite cost in row {r!r}")
        self.rows = rows

    def __len__(self):
        return len(self.rows)

    def aggregate(self, num_contexts: int):
        """Sum costs into per-(context, group) cells, shape (K, 2) each.

        The CSC objective is additive over rows, so aggregation preserves
        every hypothesis's total cost.
        """
        cneg = np.zeros((num_contexts, 2))
        cpos = np.zeros((num_contexts, 2))
        for r in self.rows:
            g = group_index(r.group)
            cneg[r.context, g] += r.cost_neg
            cpos[r.context, g] += r.cost_pos
        return cneg, cpos

    def cost_spread(self) -> float:
        """Sum over rows of |cost_neg - cost_pos| (the epsilon scale of FairCSC)."""
        return float(sum(abs(r.cost_neg - r.cost_pos) for r in self.rows))


@dataclass(frozen=True)
class WeightedRow:
    context: int
    group: int
    target_label: int
    weight: float


class WeightedInstance:
    """Importance-weighted binary classification rows; weights are >= 0."""

    def __init__(self, rows):
        rows = tuple(rows)
        for r in rows:
            if r.weight < 0:
                raise ValueError(f"negative weight in row {r!r}")
        self.rows = rows
        self.total_weight = float(sum(r.weight for r in rows))

    def __len__(self):
        return len(self.rows)

    def aggregate(self, num_contexts: int):
        """Weight mass per (context, group, target-label) cell, shape (K, 2, 2)."""
        w = np.zeros((num_contexts, 2, 2))
        for r in self.rows:
            w[r.context, group_index(r.group), (r.target_label + 1) // 2] += r.weight
        return w


def hypothesis_cost_vector(inst: CscInstance, hclass: HypothesisClass) -> np.ndarray:
    """Total CSC cost of every hypothesis, shape (|H|,)."""
    cneg, cpos = inst.aggregate(hclass.num_contexts)
    pred_pos = hclass.prediction_matrix == 1
    return np.where(pred_pos, cpos, cneg).sum(axis=(1, 2))


def exact_csc(inst: CscInstance, hclass: HypothesisClass):
    """Full-enumeration CSC oracle: (argmin hypothesis index, total cost).

    Ties break toward the lowest index; an empty instance returns (0, 0.0).
    """
    if len(inst) == 0:
        return 0, 0.0
    costs = hypothesis_cost_vector(inst, hclass)
    idx = int(np.argmin(costs))
    return idx, float(costs[idx])


def weighted_error_vector(w: WeightedInstance, hclass: HypothesisClass) -> np.ndarray:
    """Total weighted misclassification of every hypothesis, shape (|H|,)."""
    agg = w.aggregate(hclass.num_contexts)  # (K, 2, 2): target -1 then +1
    pred_pos = hclass.prediction_matrix == 1
    # predicting +1 misses the weight targeted at -1, and vice versa
    miss = np.where(pred_pos, agg[:, :, 0], agg[:, :, 1])
    return miss.sum(axis=(1, 2))


def csc_to_weighted(inst: CscInstance) -> WeightedInstance:
    """Turn per-label costs into importance weights and target labels.

    Per row: weight = |cost_neg - cost_pos|, target +1 iff predicting +1 is
    cheaper.  For every hypothesis, csc cost = weighted error + sum of
    per-row minimum costs, so the argmin is preserved.  Zero-weight rows are
    retained so instance sizes stay stable in traces.
    """
    rows = []
    for r in inst.rows:
        target = 1 if r.cost_neg > r.cost_pos else -1
        rows.append(
            WeightedRow(r.context, r.group, target, abs(r.cost_neg - r.cost_pos))
        )
    return WeightedInstance(rows)


def csc_offset(inst: CscInstance) -> float:
    """Sum of per-row min(cost_neg, cost_pos): the affine gap between the CSC
    cost and the weighted error of csc_to_weighted."""
    return float(sum(min(r.cost_neg, r.cost_pos) for r in inst.rows))


class DegenerateWeights(ValueError):
    """All costs tie: the weighted objective is identically zero."""


def normalize_weights(w: WeightedInstance) -> WeightedInstance:
    """Scale weights to sum to 1; the argmin over hypotheses is unchanged."""
    if w.total_weight <= 0:
        raise DegenerateWeights("total weight is zero; every hypothesis is optimal")
    scale = 1.0 / w.total_weight
    return WeightedInstance(
        WeightedRow(r.context, r.group, r.target_label, r.weight * scale)
        for r in w.rows
    )
