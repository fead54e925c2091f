"""Benchmark instances, baselines, and brute-force reference solvers.

The two-point lower-bound family: a pair of distributions over four contexts
and two groups that agree everywhere except the positive rates of two cells
in group +1, together with the four-classifier family {minus, plus, h1, h2}
(extended with the mandatory group-identity classifiers).  On d1 the best
0-fair policy is h2 with loss 0.25 - 2 gamma, h1 is cheaper-looking but has
gap 4 gamma, and the two distributions are KL-close (O(gamma^2)), which is
what makes the family a hard test for any per-round-fair learner.

brute_force_best_fair is the ground-truth solver used to validate the
oracle pipeline; it is an independent implementation (direct enumeration of
singles and pairs over the class), deliberately sharing no code with the
fairness oracle's own shrinking step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    GROUPS,
    Hypothesis,
    HypothesisClass,
    MixturePolicy,
    RateFunctional,
    TabularDistribution,
    constant_hypothesis,
    group_identity_hypothesis,
)
from .fair_csc import concentration_radius
from .metrics import hypothesis_gap_vector, hypothesis_loss_vector, true_gap_vector


@dataclass(frozen=True)
class LowerBoundPair:
    d1: TabularDistribution
    d2: TabularDistribution
    hclass: HypothesisClass
    gamma: float


def lowerbound_pair(gamma: float) -> LowerBoundPair:
    """The hard two-distribution instance, exactly as tabulated.

    Eight cells of mass 1/8; group -1 positive rates
    (0.5+4g, 0.5-4g, 1, 0) under both distributions; group +1 rates are the
    mirror image (0.5-4g, 0.5+4g, 1, 0) under d1 and identical to group -1
    under d2.  gamma must lie in (0, 1/16) so every table entry is interior.
    """
    if not 0 < gamma < 1 / 16:
        raise ValueError(f"gamma must be in (0, 1/16), got {gamma!r}")
    mass = np.full((4, 2), 1.0 / 8.0)
    col_base = [0.5 + 4 * gamma, 0.5 - 4 * gamma, 1.0, 0.0]
    col_mirror = [0.5 - 4 * gamma, 0.5 + 4 * gamma, 1.0, 0.0]
    pos1 = np.column_stack([col_base, col_mirror])
    pos2 = np.column_stack([col_base, col_base])
    d1 = TabularDistribution(mass, pos1)
    d2 = TabularDistribution(mass, pos2)

    h1_col = [1, -1, 1, -1]
    h2_plus_col = [-1, 1, 1, -1]
    h1 = Hypothesis(np.column_stack([h1_col, h1_col]).astype(np.int8), tag="h1")
    h2 = Hypothesis(np.column_stack([h1_col, h2_plus_col]).astype(np.int8), tag="h2")
    hclass = HypothesisClass(
        [
            constant_hypothesis(4, -1),
            constant_hypothesis(4, 1),
            h1,
            h2,
            group_identity_hypothesis(4, 1),
            group_identity_hypothesis(4, -1),
        ],
        num_contexts=4,
    )
    return LowerBoundPair(d1, d2, hclass, gamma)


def kl_divergence(d1: TabularDistribution, d2: TabularDistribution) -> float:
    """KL(d1 || d2) in nats for distributions sharing an arrival table.

    Sums mass-weighted Bernoulli divergences of the conditional label
    probabilities; raises if the arrival tables differ or if d2 puts zero
    mass on a label d1 can produce.
    """
    if not np.array_equal(d1.mass, d2.mass):
        raise ValueError("kl_divergence requires identical arrival mass tables")
    total = 0.0
    for x in range(d1.num_contexts):
        for g in (0, 1):
            m = d1.mass[x, g]
            if m == 0:
                continue
            p, q = d1.pos_rate[x, g], d2.pos_rate[x, g]
            for p_ev, q_ev in ((p, q), (1.0 - p, 1.0 - q)):
                if p_ev == 0:
                    continue
                if q_ev == 0:
                    raise ValueError(
                        f"absolute continuity violated at cell ({x}, "
                        f"{GROUPS[g]:+d}): p={p!r} vs q={q!r}"
                    )
                total += m * p_ev * math.log(p_ev / q_ev)
    return total


def _loss_and_gap_vectors(source, hclass: HypothesisClass, f: RateFunctional):
    """Per-hypothesis (loss, gap) against either an exact distribution or a
    finite dataset."""
    if isinstance(source, TabularDistribution):
        return hypothesis_loss_vector(hclass, source), true_gap_vector(
            hclass, source, f
        )
    if isinstance(source, Dataset):
        n = len(source)
        if n == 0:
            raise ValueError("empty dataset")
        pred_pos = hclass.prediction_matrix == 1
        miss = np.where(pred_pos, source.counts[:, :, 0], source.counts[:, :, 1])
        loss = miss.sum(axis=(1, 2)) / n
        return loss, hypothesis_gap_vector(hclass, source, f)
    raise TypeError(f"expected TabularDistribution or Dataset, got {type(source)!r}")


def brute_force_best_fair(
    source,
    hclass: HypothesisClass,
    gamma: float,
    f: RateFunctional = RateFunctional.FALSE_POSITIVE,
):
    """Exhaustive reference solver: the loss-minimal gamma-fair mixture with
    support at most 2, by enumerating every single and every pair.

    The gap of a pair mixture is affine in the mixing weight, so feasibility
    is a closed weight interval and the affine loss is minimized at one of
    its endpoints.  Ties break toward the lexicographically smallest pair.
    Returns (policy, loss).
    """
    loss_vec, gap_vec = _loss_and_gap_vectors(source, hclass, f)
    n = len(hclass)
    tol = 1e-12
    best_loss = math.inf
    best_atoms = None
    best_pair = None

    def consider(atoms, loss, pair):
        nonlocal best_loss, best_atoms, best_pair
        if loss < best_loss - tol or (
            loss <= best_loss + tol and (best_pair is None or pair < best_pair)
        ):
            best_loss = min(best_loss, loss)
            best_atoms = atoms
            best_pair = pair

    for i in range(n):
        if abs(gap_vec[i]) <= gamma + tol:
            consider([(i, 1.0)], float(loss_vec[i]), (i, i))
    for i in range(n):
        for j in range(i + 1, n):
            gi, gj = float(gap_vec[i]), float(gap_vec[j])
            dg = gi - gj
            if abs(dg) <= tol:
                if abs(gj) > gamma + tol:
                    continue
                lo, hi = 0.0, 1.0
            else:
                # weight v on i: need -gamma <= v*gi + (1-v)*gj <= gamma
                b1 = (gamma - gj) / dg
                b2 = (-gamma - gj) / dg
                lo = max(0.0, min(b1, b2))
                hi = min(1.0, max(b1, b2))
                if lo > hi + tol:
                    continue
                lo, hi = min(lo, 1.0), max(hi, 0.0)
            for v in (lo, hi):
                loss = v * float(loss_vec[i]) + (1.0 - v) * float(loss_vec[j])
                atoms = [(k, w) for k, w in ((i, v), (j, 1.0 - v)) if w > 0]
                consider(atoms, loss, (i, j))
    if best_atoms is None:
        raise RuntimeError("no feasible policy; the constant classifiers are 0-fair")
    return MixturePolicy(hclass, best_atoms), best_loss


def explore_then_exploit(
    d: TabularDistribution,
    hclass: HypothesisClass,
    T: int,
    gamma: float,
    delta: float,
    rng: np.random.Generator,
):
    """Baseline: predict +1 for ceil(T^(2/3)) rounds, then commit to the
    empirically best (gamma + beta)-fair policy for the rest.

    Returns (trajectory, exploration_data); the trajectory lists
    (round, deployed MixturePolicy) exactly like the main learner's, so the
    same auditing and regret accounting applies.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    t_explore = min(math.ceil(T ** (2.0 / 3.0)), T)
    contexts, groups, labels = d.sample_n(rng, t_explore)
    exploration_data = Dataset.from_arrays(contexts, groups, labels, d.num_contexts)
    plus_pm = MixturePolicy.point_mass(hclass, hclass.plus_index)
    trajectory = [(r, plus_pm) for r in range(1, t_explore + 1)]
    if t_explore < T:
        beta = concentration_radius(exploration_data, len(hclass), delta)
        commit, _ = brute_force_best_fair(exploration_data, hclass, gamma + beta)
        trajectory.extend((r, commit) for r in range(t_explore + 1, T + 1))
    return trajectory, exploration_data


def random_tabular(
    num_contexts: int,
    num_hypotheses: int,
    seed: int,
    min_negative_mass: float = 0.05,
    max_tries: int = 1000,
):
    """Seeded random instance: a distribution with at least min_negative_mass
    of negative examples in each group, and a deduplicated class of uniform
    random tables with the four special classifiers appended."""
    if num_contexts < 1:
        raise ValueError("num_contexts must be >= 1")
    if min_negative_mass <= 0:
        raise ValueError("min_negative_mass must be positive")
    rng = np.random.default_rng(seed)
    d = None
    for _ in range(max_tries):
        mass = rng.random((num_contexts, 2))
        mass /= mass.sum()
        pos_rate = rng.random((num_contexts, 2))
        neg = (mass * (1.0 - pos_rate)).sum(axis=0)
        if np.all(neg >= min_negative_mass):
            d = TabularDistribution(mass, pos_rate)
            break
    if d is None:
        raise RuntimeError(
            f"could not sample a distribution with negative mass >= "
            f"{min_negative_mass!r} per group in {max_tries} tries"
        )
    specials = [
        constant_hypothesis(num_contexts, -1),
        constant_hypothesis(num_contexts, 1),
        group_identity_hypothesis(num_contexts, 1),
        group_identity_hypothesis(num_contexts, -1),
    ]
    special_keys = {h.key() for h in specials}
    randoms: list[Hypothesis] = []
    seen = set(special_keys)
    tries = 0
    while len(randoms) + len(specials) < max(num_hypotheses, len(specials)):
        tries += 1
        if tries > max_tries * max(num_hypotheses, 1):
            raise RuntimeError("could not sample enough distinct hypotheses")
        table = rng.choice(np.array([-1, 1], dtype=np.int8), size=(num_contexts, 2))
        key = table.tobytes()
        if key in seen:
            continue
        seen.add(key)
        randoms.append(Hypothesis(table))
    return d, HypothesisClass(randoms + specials, num_contexts)
