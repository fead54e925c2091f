"""Domain types: hypotheses, distributions, policies, datasets, serialization."""

import numpy as np
import pytest

from fairtaste import (
    Dataset,
    Example,
    Hypothesis,
    HypothesisClass,
    MixturePolicy,
    TabularDistribution,
    constant_hypothesis,
    group_identity_hypothesis,
    instance_from_text,
    instance_to_text,
    load_instance,
    policy_sample,
    predict,
    random_tabular,
    save_instance,
)


# ---------------------------------------------------------------------------
# predict and the special classifiers
# ---------------------------------------------------------------------------

def test_constant_classifiers_predict_their_label():
    plus = constant_hypothesis(3, 1)
    minus = constant_hypothesis(3, -1)
    for x in range(3):
        for a in (-1, 1):
            assert predict(plus, x, a) == 1
            assert predict(minus, x, a) == -1


def test_group_identity_classifiers():
    plus_a = group_identity_hypothesis(3, 1)
    minus_a = group_identity_hypothesis(3, -1)
    for x in range(3):
        assert predict(plus_a, x, -1) == -1
        assert predict(plus_a, x, 1) == 1
        assert predict(minus_a, x, -1) == 1
        assert predict(minus_a, x, 1) == -1


def test_predict_bounds_error():
    h = constant_hypothesis(2, 1)
    with pytest.raises((IndexError, ValueError)):
        predict(h, 5, 1)


def test_example_validation():
    Example(0, 1, -1)
    with pytest.raises(ValueError):
        Example(0, 0, 1)  # bad group
    with pytest.raises(ValueError):
        Example(0, 1, 2)  # bad label


# ---------------------------------------------------------------------------
# TabularDistribution
# ---------------------------------------------------------------------------

def test_distribution_mass_must_sum_to_one():
    with pytest.raises(ValueError):
        TabularDistribution(np.full((2, 2), 0.3), np.full((2, 2), 0.5))


def test_distribution_pos_rate_bounds():
    with pytest.raises(ValueError):
        TabularDistribution(np.full((2, 2), 0.25), np.full((2, 2), 1.5))


def test_distribution_requires_negative_mass_per_group():
    # all labels positive: no negative examples in either group
    with pytest.raises(ValueError):
        TabularDistribution(np.full((2, 2), 0.25), np.ones((2, 2)))
    # negatives only in group -1
    pos = np.array([[0.5, 1.0], [0.5, 1.0]])
    with pytest.raises(ValueError):
        TabularDistribution(np.full((2, 2), 0.25), pos)


def test_near_point_mass_sampling():
    # the constructor requires negative mass in both groups, so a literal
    # point mass with pos_rate 1 is inadmissible; concentrate nearly all
    # mass on one deterministic-label cell instead
    mass = np.array([[0.01, 0.97], [0.01, 0.01]])
    pos = np.array([[0.5, 1.0], [0.5, 0.5]])
    d = TabularDistribution(mass, pos)
    rng = np.random.default_rng(0)
    seen_cell = 0
    for _ in range(200):
        ex = d.sample(rng)
        if (ex.context, ex.group) == (0, 1):
            seen_cell += 1
            assert ex.label == 1  # pos_rate 1 on this cell
    assert seen_cell > 150


def test_pos_rate_zero_labels_all_negative():
    d = TabularDistribution(np.full((2, 2), 0.25), np.zeros((2, 2)))
    rng = np.random.default_rng(1)
    _, _, labels = d.sample_n(rng, 1000)
    assert np.all(labels == -1)


def test_sample_reproducible():
    d = TabularDistribution(np.full((2, 2), 0.25), np.full((2, 2), 0.5))
    a = d.sample_n(np.random.default_rng(7), 100)
    b = d.sample_n(np.random.default_rng(7), 100)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_lowerbound_cell_frequency_monte_carlo(pair05):
    # Pr[x=3, a=-1, y=+1] = mass * pos_rate = 1/8 * 0 = 0 for x=3;
    # use x=2 where pos_rate is 1: Pr = 1/8.
    n = 10**6
    ctx, grp, lab = pair05.d1.sample_n(np.random.default_rng(3), n)
    hits = np.sum((ctx == 2) & (grp == -1) & (lab == 1))
    p = 1.0 / 8.0
    sigma = np.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) <= 3 * sigma


# ---------------------------------------------------------------------------
# Hypothesis / HypothesisClass
# ---------------------------------------------------------------------------

def test_hypothesis_equality_is_structural():
    h1 = constant_hypothesis(2, 1, tag="a")
    h2 = constant_hypothesis(2, 1, tag="b")
    assert h1 == h2 and hash(h1) == hash(h2)


def test_class_requires_special_classifiers():
    with pytest.raises(ValueError):
        HypothesisClass([constant_hypothesis(2, 1)], num_contexts=2)


def test_class_rejects_duplicates(specials_class):
    hs = list(specials_class) if hasattr(specials_class, "__iter__") else [
        specials_class[i] for i in range(len(specials_class))
    ]
    hs = [specials_class[i] for i in range(len(specials_class))]
    with pytest.raises(ValueError):
        HypothesisClass(hs + [constant_hypothesis(2, 1)], num_contexts=2)


def test_special_indices(specials_class):
    assert specials_class[specials_class.minus_index].predictions[0, 0] == -1
    assert specials_class[specials_class.plus_index].predictions[0, 0] == 1
    pa = specials_class[specials_class.plus_a_index]
    assert pa.predictions[0, 0] == -1 and pa.predictions[0, 1] == 1
    ma = specials_class[specials_class.minus_a_index]
    assert ma.predictions[0, 0] == 1 and ma.predictions[0, 1] == -1


def test_prediction_matrix_shape(specials_class):
    m = specials_class.prediction_matrix
    assert m.shape == (4, 2, 2)
    assert set(np.unique(m)) <= {-1, 1}


# ---------------------------------------------------------------------------
# MixturePolicy / policy_sample
# ---------------------------------------------------------------------------

def test_policy_weights_must_sum_to_one(specials_class):
    with pytest.raises(ValueError):
        MixturePolicy(specials_class, [(0, 0.5), (1, 0.2)])


def test_policy_rejects_duplicate_indices(specials_class):
    with pytest.raises(ValueError):
        MixturePolicy(specials_class, [(0, 0.5), (0, 0.5)])


def test_policy_rejects_negative_weight(specials_class):
    with pytest.raises(ValueError):
        MixturePolicy(specials_class, [(0, 1.2), (1, -0.2)])


def test_point_mass_sample(specials_class):
    pi = MixturePolicy.point_mass(specials_class, 2)
    rng = np.random.default_rng(0)
    assert all(policy_sample(pi, rng) == 2 for _ in range(50))


def test_policy_sample_frequencies(specials_class):
    pi = MixturePolicy(specials_class, [(0, 0.5), (3, 0.5)])
    rng = np.random.default_rng(11)
    n = 10**6
    draws = np.array([policy_sample(pi, rng) for _ in range(n)])
    freq = np.mean(draws == 0)
    sigma = np.sqrt(0.25 / n)
    assert abs(freq - 0.5) <= 3 * sigma
    assert set(np.unique(draws)) == {0, 3}


def test_zero_weight_atom_never_sampled(specials_class):
    pi = MixturePolicy(specials_class, [(1, 1.0), (2, 0.0)])
    rng = np.random.default_rng(5)
    assert all(policy_sample(pi, rng) == 1 for _ in range(200))


def test_prob_positive_mixes_linearly(specials_class):
    pi = MixturePolicy(specials_class, [(specials_class.plus_index, 0.3),
                                        (specials_class.minus_index, 0.7)])
    assert pi.prob_positive(0, 1) == pytest.approx(0.3, abs=1e-15)
    assert pi.prob_action(0, 1, -1) == pytest.approx(0.7, abs=1e-15)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

def test_dataset_counts():
    s = Dataset.from_arrays([0, 0, 1], [-1, 1, 1], [-1, 1, -1], 2)
    assert len(s) == 3
    assert s.negative_count(-1) == 1
    assert s.negative_count(1) == 1
    assert s.positive_count(1) == 1
    assert s.group_count(1) == 2


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def test_text_round_trip(tmp_path):
    d, hclass = random_tabular(3, 7, seed=42)
    text = instance_to_text(d, hclass)
    d2, h2 = instance_from_text(text)
    assert d2 == d
    assert h2 == hclass
    path = tmp_path / "inst.txt"
    save_instance(path, d, hclass)
    d3, h3 = load_instance(path)
    assert d3 == d and h3 == hclass
    # bit-exact: a second serialization is byte-identical
    assert instance_to_text(d3, h3) == text
