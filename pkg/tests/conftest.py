"""Shared fixtures: canonical instances and reusable sampling helpers."""

import numpy as np
import pytest

from fairtaste import (
    Dataset,
    HypothesisClass,
    TabularDistribution,
    constant_hypothesis,
    group_identity_hypothesis,
    lowerbound_pair,
)


@pytest.fixture(scope="session")
def pair05():
    """Lower-bound pair at gamma = 0.05 (the workhorse instance)."""
    return lowerbound_pair(0.05)


@pytest.fixture(scope="session")
def pair01():
    return lowerbound_pair(0.01)


@pytest.fixture(scope="session")
def specials_class():
    """Just the four mandatory classifiers over two contexts."""
    return HypothesisClass(
        [
            constant_hypothesis(2, -1),
            constant_hypothesis(2, 1),
            group_identity_hypothesis(2, 1),
            group_identity_hypothesis(2, -1),
        ],
        num_contexts=2,
    )


@pytest.fixture(scope="session")
def balanced_d2():
    """Uniform two-context distribution with label rate 1/2 everywhere."""
    return TabularDistribution(np.full((2, 2), 0.25), np.full((2, 2), 0.5))


def policy_net(hclass, gap_vec, gamma_hat, per_pair=8):
    """Enumerated net of support-<=2 policies with |empirical gap| <= gamma_hat.

    All fair singletons, plus a weight grid over the feasible interval of
    every pair (the gap is affine in the pair weight, so the feasible
    weights form a closed interval computed exactly).
    """
    from fairtaste import MixturePolicy

    tol = 1e-12
    net = []
    n = len(hclass)
    for i in range(n):
        if abs(gap_vec[i]) <= gamma_hat + tol:
            net.append(MixturePolicy.point_mass(hclass, i))
    for i in range(n):
        for j in range(i + 1, n):
            gi, gj = float(gap_vec[i]), float(gap_vec[j])
            dg = gi - gj
            if abs(dg) <= tol:
                if abs(gj) > gamma_hat + tol:
                    continue
                lo, hi = 0.0, 1.0
            else:
                b1 = (gamma_hat - gj) / dg
                b2 = (-gamma_hat - gj) / dg
                lo = max(0.0, min(b1, b2))
                hi = min(1.0, max(b1, b2))
                if lo > hi + tol:
                    continue
            for v in np.linspace(lo, hi, per_pair):
                v = float(v)
                if v <= 0.0:
                    continue
                if v >= 1.0:
                    continue
                net.append(MixturePolicy(hclass, [(i, v), (j, 1.0 - v)]))
    return net


def dataset_from_distribution(d, copies=1):
    """Enumerate a distribution's support into a Dataset with exact
    proportions, assuming every cell probability is a multiple of 1/n for
    some small n (true for the lower-bound tables with rational gamma)."""
    contexts, groups, labels = [], [], []
    # find a common denominator for the cell masses and label rates
    denom = 400 * copies
    for x in range(d.num_contexts):
        for g, a in enumerate((-1, 1)):
            cell = d.mass[x, g] * denom
            pos = cell * d.pos_rate[x, g]
            n_pos = round(pos)
            n_cell = round(cell)
            assert abs(cell - n_cell) < 1e-6 and abs(pos - n_pos) < 1e-6, (
                "distribution not exactly enumerable at this denominator"
            )
            contexts += [x] * n_cell
            groups += [a] * n_cell
            labels += [1] * n_pos + [-1] * (n_cell - n_pos)
    return Dataset.from_arrays(contexts, groups, labels, d.num_contexts)
