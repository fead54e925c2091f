"""Exact and empirical group rates, fairness gaps, losses, and audits.

All rate functions are linear in the mixture weights, so policy-level
quantities are weight-averages of the per-hypothesis quantities.  The exact
variants sum over the tabular domain; the empirical ones over a finite
dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    GROUPS,
    HypothesisClass,
    MixturePolicy,
    RateFunctional,
    TabularDistribution,
    group_index,
)

#: slack absorbed by audits to tolerate floating-point noise in rate sums
AUDIT_TOL = 1e-9


class ZeroConditioningMass(ValueError):
    """Raised when a rate's conditioning event has no probability mass."""


def _true_weights(d: TabularDistribution, f: RateFunctional, g: int):
    """Per-context conditioning weights and the predicted label defining the event."""
    if f is RateFunctional.FALSE_POSITIVE:
        return d.mass[:, g] * (1.0 - d.pos_rate[:, g]), 1
    if f is RateFunctional.FALSE_NEGATIVE:
        return d.mass[:, g] * d.pos_rate[:, g], -1
    if f is RateFunctional.POSITIVE_RATE:
        return d.mass[:, g].copy(), 1
    raise ValueError(f"unknown functional {f!r}")


def _empirical_weights(s: Dataset, f: RateFunctional, g: int):
    if f is RateFunctional.FALSE_POSITIVE:
        return s.counts[:, g, 0].astype(float), 1
    if f is RateFunctional.FALSE_NEGATIVE:
        return s.counts[:, g, 1].astype(float), -1
    if f is RateFunctional.POSITIVE_RATE:
        return s.counts[:, g, :].sum(axis=1).astype(float), 1
    raise ValueError(f"unknown functional {f!r}")


def _mix_rate(pi: MixturePolicy, weights, event_label: int, j: int, f) -> float:
    total = weights.sum()
    if total <= 0:
        raise ZeroConditioningMass(
            f"conditioning event for {f.value} rate of group {j:+d} has zero mass"
        )
    g = group_index(j)
    pos = pi.positive_table()[:, g]
    event_prob = pos if event_label == 1 else 1.0 - pos
    return float((weights * event_prob).sum() / total)


def rate(
    pi: MixturePolicy,
    d: TabularDistribution,
    f: RateFunctional,
    j: int,
) -> float:
    """Exact conditional rate of the mixture on group j under d."""
    weights, event_label = _true_weights(d, f, group_index(j))
    return _mix_rate(pi, weights, event_label, j, f)


def empirical_rate(pi: MixturePolicy, s: Dataset, f: RateFunctional, j: int) -> float:
    weights, event_label = _empirical_weights(s, f, group_index(j))
    return _mix_rate(pi, weights, event_label, j, f)


def delta_rate(pi: MixturePolicy, d: TabularDistribution, f: RateFunctional) -> float:
    """rate on group +1 minus rate on group -1; linear in policy weights."""
    return rate(pi, d, f, 1) - rate(pi, d, f, -1)


def empirical_delta_rate(pi: MixturePolicy, s: Dataset, f: RateFunctional) -> float:
    return empirical_rate(pi, s, f, 1) - empirical_rate(pi, s, f, -1)


def hypothesis_gap_vector(
    hclass: HypothesisClass, s: Dataset, f: RateFunctional
) -> np.ndarray:
    """Empirical delta rate of every hypothesis at once, shape (|H|,).

    Policy gaps are weight-averages of these entries; the FairCSC machinery
    leans on this vector heavily.
    """
    out = np.empty(len(hclass))
    per_group = []
    for a in GROUPS:
        g = group_index(a)
        weights, event_label = _empirical_weights(s, f, g)
        total = weights.sum()
        if total <= 0:
            raise ZeroConditioningMass(
                f"conditioning event for {f.value} rate of group {a:+d} is empty"
            )
        event = (
            (hclass.prediction_matrix[:, :, g] == event_label).astype(float)
        )  # (|H|, K)
        per_group.append(event @ weights / total)
    out = per_group[1] - per_group[0]
    return out


def true_gap_vector(
    hclass: HypothesisClass, d: TabularDistribution, f: RateFunctional
) -> np.ndarray:
    """Exact delta rate of every hypothesis under d, shape (|H|,)."""
    per_group = []
    for a in GROUPS:
        g = group_index(a)
        weights, event_label = _true_weights(d, f, g)
        total = weights.sum()
        if total <= 0:
            raise ZeroConditioningMass(
                f"conditioning event for {f.value} rate of group {a:+d} has zero mass"
            )
        event = (hclass.prediction_matrix[:, :, g] == event_label).astype(float)
        per_group.append(event @ weights / total)
    return per_group[1] - per_group[0]


def hypothesis_loss_vector(
    hclass: HypothesisClass, d: TabularDistribution
) -> np.ndarray:
    """Exact expected 0-1 loss of every hypothesis under d, shape (|H|,)."""
    # loss contribution of cell (x, g): mass * (1 - pos) if predicting +1 else mass * pos
    pred_pos = hclass.prediction_matrix == 1  # (|H|, K, 2)
    cell_pos = d.mass * (1.0 - d.pos_rate)  # cost of predicting +1
    cell_neg = d.mass * d.pos_rate  # cost of predicting -1
    return np.where(pred_pos, cell_pos, cell_neg).sum(axis=(1, 2))


def true_policy_loss(pi: MixturePolicy, d: TabularDistribution) -> float:
    """Exact expected 0-1 loss of the mixture; linear in weights."""
    losses = hypothesis_loss_vector(pi.hclass, d)
    return float(sum(w * losses[i] for i, w in pi.atoms))


def cumulative_regret(trajectory_losses, benchmark_per_round: float) -> float:
    """Pseudo-regret: exact per-round expected losses minus the fair benchmark.

    ``trajectory_losses`` holds the deployed policies' exact expected losses,
    not realized losses, matching the expectation-based regret definition.
    """
    losses = list(trajectory_losses)
    return float(sum(losses) - len(losses) * benchmark_per_round)


@dataclass(frozen=True)
class FairnessAuditRecord:
    round: int
    true_gap: float
    threshold: float
    violated: bool


def audit_fairness(
    trajectory_policies,
    d: TabularDistribution,
    threshold: float,
    f: RateFunctional = RateFunctional.FALSE_POSITIVE,
    start_round: int = 1,
) -> list[FairnessAuditRecord]:
    """Exact per-round fairness audit of a deployed-policy trajectory.

    A record is violated iff |true gap| exceeds threshold beyond the audit
    tolerance.  A replication fails if any record is violated.
    """
    records = []
    gap_cache: dict[object, float] = {}
    gaps = None
    for offset, pi in enumerate(trajectory_policies):
        key = pi.canonical_key()
        g = gap_cache.get(key)
        if g is None:
            if gaps is None:
                gaps = true_gap_vector(pi.hclass, d, f)
            g = float(sum(w * gaps[i] for i, w in pi.atoms))
            gap_cache[key] = g
        records.append(
            FairnessAuditRecord(
                round=start_round + offset,
                true_gap=g,
                threshold=threshold,
                violated=abs(g) > threshold + AUDIT_TOL,
            )
        )
    return records


def write_audit_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "true_gap", "threshold", "violated"])
        for r in records:
            writer.writerow([r.round, repr(r.true_gap), repr(r.threshold), int(r.violated)])
