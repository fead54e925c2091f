"""The fairness-constrained CSC oracle: saddle point, shrinking, guarantees."""

import math

import numpy as np
import pytest

from fairtaste import (
    CscInstance,
    DualVector,
    FairCscConfig,
    MixturePolicy,
    RateFunctional,
    concentration_radius,
    fair_csc_oracle,
    random_tabular,
    saddle_point,
    shrink_support,
)
from fairtaste.csc import (
    CscRow,
    csc_offset,
    csc_to_weighted,
    exact_csc,
    hypothesis_cost_vector,
    normalize_weights,
    weighted_error_vector,
)
from fairtaste.fair_csc import (
    ZERO_DUAL,
    best_response_dual,
    best_response_policy,
    fair_csc_oracle_detailed,
    lagrangian,
    saddle_call_budget,
)
from fairtaste.metrics import empirical_delta_rate, hypothesis_gap_vector

from conftest import dataset_from_distribution
from test_csc import random_instance

FP = RateFunctional.FALSE_POSITIVE


def random_dataset(rng, num_contexts, n=40):
    """Sampled dataset guaranteed to have negatives in both groups."""
    while True:
        ctx = rng.integers(num_contexts, size=n)
        grp = rng.choice((-1, 1), size=n)
        lab = rng.choice((-1, 1), size=n)
        from fairtaste import Dataset

        s = Dataset.from_arrays(ctx, grp, lab, num_contexts)
        if s.negative_count(-1) > 0 and s.negative_count(1) > 0:
            return s


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_requires_nu_below_half_gamma():
    FairCscConfig(gamma=0.2, nu=0.05)
    with pytest.raises(ValueError):
        FairCscConfig(gamma=0.2, nu=0.15)
    # without tightening the restriction is waived
    FairCscConfig(gamma=0.2, nu=0.15, tighten=False)


def test_config_rejects_negative_gamma():
    with pytest.raises(ValueError):
        FairCscConfig(gamma=-0.1, nu=0.01)


def test_dual_vector_validation():
    DualVector(1.0, 0.5)
    with pytest.raises(ValueError):
        DualVector(-0.1, 0.0)
    assert DualVector(1.5, 0.5).l1 == pytest.approx(2.0)
    assert DualVector(1.5, 0.5).tau == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# lagrangian
# ---------------------------------------------------------------------------

def test_lagrangian_zero_dual_is_weighted_error(specials_class):
    rng = np.random.default_rng(0)
    s = random_dataset(rng, 2)
    w = normalize_weights(csc_to_weighted(random_instance(specials_class, rng,
                                                          num_contexts=2)))
    errs = weighted_error_vector(w, specials_class)
    for i in range(len(specials_class)):
        pi = MixturePolicy.point_mass(specials_class, i)
        assert lagrangian(pi, ZERO_DUAL, w, s, gamma=0.1) == pytest.approx(
            errs[i], abs=1e-12
        )


def test_lagrangian_direct_formula(specials_class):
    rng = np.random.default_rng(1)
    s = random_dataset(rng, 2)
    w = normalize_weights(csc_to_weighted(random_instance(specials_class, rng,
                                                          num_contexts=2)))
    lam = DualVector(0.7, 0.3)
    gamma = 0.05
    pi = MixturePolicy(specials_class, [(0, 0.4), (2, 0.6)])
    gap = empirical_delta_rate(pi, s, FP)
    err = float(
        0.4 * weighted_error_vector(w, specials_class)[0]
        + 0.6 * weighted_error_vector(w, specials_class)[2]
    )
    direct = err + 0.7 * (gap - gamma) + 0.3 * (-gap - gamma)
    assert lagrangian(pi, lam, w, s, gamma) == pytest.approx(direct, abs=1e-12)


def test_lagrangian_penalty_vanishes_at_active_constraint(specials_class):
    # a policy whose empirical gap is exactly +gamma makes the plus-side
    # penalty zero for any lambda_plus (and the minus side strictly negative)
    rng = np.random.default_rng(2)
    s = random_dataset(rng, 2)
    gaps = hypothesis_gap_vector(specials_class, s, FP)
    i, j = specials_class.plus_a_index, specials_class.minus_index
    if gaps[i] == 0:
        pytest.skip("degenerate draw: accept-group-plus has no positives logged")
    gamma = float(gaps[i]) / 2
    v = gamma / float(gaps[i])  # weight making the mixed gap exactly gamma
    pi = MixturePolicy(specials_class, [(i, v), (j, 1 - v)])
    w = normalize_weights(csc_to_weighted(random_instance(specials_class, rng,
                                                          num_contexts=2)))
    base = lagrangian(pi, ZERO_DUAL, w, s, gamma)
    for lp in (0.5, 1.0, 2.0):
        assert lagrangian(pi, DualVector(lp, 0.0), w, s, gamma) == pytest.approx(
            base, abs=1e-12
        )


# ---------------------------------------------------------------------------
# best responses
# ---------------------------------------------------------------------------

def test_best_response_policy_zero_dual_is_error_argmin(specials_class):
    rng = np.random.default_rng(3)
    s = random_dataset(rng, 2)
    for _ in range(10):
        w = csc_to_weighted(random_instance(specials_class, rng, num_contexts=2))
        errs = weighted_error_vector(w, specials_class)
        idx = best_response_policy(ZERO_DUAL, w, s, specials_class)
        assert errs[idx] == pytest.approx(errs.min(), abs=1e-12)


def test_best_response_policy_minimizes_lagrangian(specials_class):
    rng = np.random.default_rng(4)
    for _ in range(20):
        s = random_dataset(rng, 2)
        w = normalize_weights(
            csc_to_weighted(random_instance(specials_class, rng, num_contexts=2))
        )
        lam = DualVector(float(rng.random()), float(rng.random()))
        idx = best_response_policy(lam, w, s, specials_class)
        vals = [
            lagrangian(MixturePolicy.point_mass(specials_class, i), lam, w, s, 0.1)
            for i in range(len(specials_class))
        ]
        assert vals[idx] <= min(vals) + 1e-9


def test_best_response_policy_pure_penalty(specials_class):
    # objective weights zero: the response minimizes the dual-weighted gap
    rng = np.random.default_rng(5)
    s = random_dataset(rng, 2)
    gaps = hypothesis_gap_vector(specials_class, s, FP)
    from fairtaste.csc import WeightedInstance, WeightedRow

    w = WeightedInstance([WeightedRow(0, 1, 1, 0.0)])
    idx = best_response_policy(DualVector(2.0, 0.0), w, s, specials_class)
    assert gaps[idx] == pytest.approx(gaps.min(), abs=1e-12)


def test_best_response_dual_vertices(specials_class, pair05):
    s = dataset_from_distribution(pair05.d1)
    h1 = MixturePolicy.point_mass(pair05.hclass, 2)  # gap 4*gamma = 0.2
    assert best_response_dual(h1, s, gamma=0.3, dual_bound=2.0) == ZERO_DUAL
    d = best_response_dual(h1, s, gamma=0.1, dual_bound=2.0)
    assert (d.lambda_plus, d.lambda_minus) == (2.0, 0.0)
    # mirrored violation
    neg = MixturePolicy.point_mass(pair05.hclass, pair05.hclass.minus_a_index)
    gap = empirical_delta_rate(neg, s, FP)
    assert gap < 0
    d = best_response_dual(neg, s, gamma=abs(gap) / 2, dual_bound=2.0)
    assert (d.lambda_plus, d.lambda_minus) == (0.0, 2.0)


# ---------------------------------------------------------------------------
# saddle_point
# ---------------------------------------------------------------------------

def test_saddle_unconstrained_feasible(specials_class):
    # costs favoring minus, which is exactly fair: the constraint never binds
    rng = np.random.default_rng(6)
    s = random_dataset(rng, 2)
    inst = CscInstance([CscRow(0, 1, 0.0, 1.0), CscRow(1, -1, 0.0, 1.0)])
    w = normalize_weights(csc_to_weighted(inst))
    cfg = FairCscConfig(gamma=0.2, nu=0.05)
    res = saddle_point(w, s, specials_class, cfg)
    assert res.certified and not res.degenerate
    errs = weighted_error_vector(w, specials_class)
    err = sum(v * errs[i] for i, v in res.policy.atoms)
    assert err <= errs.min() + cfg.nu + 1e-12


def test_saddle_inequalities_post_hoc(pair05):
    # verify both saddle inequalities directly over all dual vertices and
    # every hypothesis, independently of the solver's own certificate
    s = dataset_from_distribution(pair05.d1)
    inst = CscInstance(
        [CscRow(e.context, e.group, float(e.label == 1), float(e.label == -1))
         for e in s.examples]
    )
    w = normalize_weights(csc_to_weighted(inst))
    cfg = FairCscConfig(gamma=0.1, nu=0.02, tighten=False)
    res = saddle_point(w, s, pair05.hclass, cfg)
    assert res.certified
    nu = cfg.nu
    B = cfg.dual_bound
    lam_hat = res.dual
    l_hat = lagrangian(res.policy, lam_hat, w, s, cfg.gamma)
    for lam in (ZERO_DUAL, DualVector(B, 0.0), DualVector(0.0, B)):
        assert lagrangian(res.policy, lam, w, s, cfg.gamma) <= l_hat + nu + 1e-9
    for i in range(len(pair05.hclass)):
        pi = MixturePolicy.point_mass(pair05.hclass, i)
        assert lagrangian(pi, lam_hat, w, s, cfg.gamma) >= l_hat - nu - 1e-9


def test_saddle_degenerate_weights(specials_class):
    rng = np.random.default_rng(7)
    s = random_dataset(rng, 2)
    from fairtaste.csc import WeightedInstance

    res = saddle_point(WeightedInstance([]), s, specials_class,
                       FairCscConfig(gamma=0.1, nu=0.01))
    assert res.degenerate and res.certified
    assert res.oracle_calls == 0


def test_saddle_call_budget_respected(pair05):
    s = dataset_from_distribution(pair05.d1)
    rng = np.random.default_rng(8)
    for _ in range(10):
        inst = random_instance(pair05.hclass, rng, n_rows=12, num_contexts=4)
        w = csc_to_weighted(inst)
        if w.total_weight <= 0:
            continue
        w = normalize_weights(w)
        cfg = FairCscConfig(gamma=0.15, nu=0.01)
        res = saddle_point(w, s, pair05.hclass, cfg)
        assert res.oracle_calls <= res.call_budget
        assert res.call_budget <= saddle_call_budget(cfg, cfg.gamma)


# ---------------------------------------------------------------------------
# shrink_support
# ---------------------------------------------------------------------------

def test_shrink_support_identity_on_singletons(specials_class):
    rng = np.random.default_rng(9)
    s = random_dataset(rng, 2)
    w = normalize_weights(
        csc_to_weighted(random_instance(specials_class, rng, num_contexts=2))
    )
    pi = MixturePolicy.point_mass(specials_class, 1)
    assert shrink_support(pi, w, s, gamma=1.0) == pi


def test_shrink_support_three_atoms(pair05):
    s = dataset_from_distribution(pair05.d1)
    rng = np.random.default_rng(10)
    gamma = 0.25
    for _ in range(20):
        inst = random_instance(pair05.hclass, rng, n_rows=10, num_contexts=4)
        w = csc_to_weighted(inst)
        if w.total_weight <= 0:
            continue
        w = normalize_weights(w)
        pi = MixturePolicy(
            pair05.hclass,
            [(pair05.hclass.plus_index, 1 / 3),
             (pair05.hclass.minus_index, 1 / 3),
             (3, 1 / 3)],
        )
        if abs(empirical_delta_rate(pi, s, FP)) > gamma:
            continue
        errs = weighted_error_vector(w, pair05.hclass)
        cost_in = sum(v * errs[i] for i, v in pi.atoms)
        out = shrink_support(pi, w, s, gamma)
        assert len(out.support) <= 2
        cost_out = sum(v * errs[i] for i, v in out.atoms)
        assert cost_out <= cost_in + 1e-9
        assert abs(empirical_delta_rate(out, s, FP)) <= gamma + 1e-9


# ---------------------------------------------------------------------------
# fair_csc_oracle pipeline
# ---------------------------------------------------------------------------

def test_oracle_vacuous_gamma_matches_unconstrained(pair05):
    s = dataset_from_distribution(pair05.d1)
    rng = np.random.default_rng(11)
    for _ in range(10):
        inst = random_instance(pair05.hclass, rng, n_rows=10, num_contexts=4)
        w = csc_to_weighted(inst)
        if w.total_weight <= 0:
            continue
        cfg = FairCscConfig(gamma=1.0, nu=0.01)
        pi = fair_csc_oracle(inst, s, pair05.hclass, cfg)
        costs = hypothesis_cost_vector(inst, pair05.hclass)
        cost = sum(v * costs[i] for i, v in pi.atoms)
        eps = 4 * cfg.nu * inst.cost_spread()
        _, best = exact_csc(inst, pair05.hclass)
        assert cost <= best + eps + 1e-9


def test_oracle_selects_h2_on_lowerbound(pair05):
    # 0-1 costs over the enumerated support of d1; h2 is the best fair policy
    s = dataset_from_distribution(pair05.d1)
    inst = CscInstance(
        [CscRow(e.context, e.group, float(e.label == 1), float(e.label == -1))
         for e in s.examples]
    )
    cfg = FairCscConfig(gamma=0.02, nu=0.004)
    pi = fair_csc_oracle(inst, s, pair05.hclass, cfg)
    weights = dict(pi.atoms)
    assert weights.get(3, 0.0) > 0.9  # essentially all mass on h2


def test_oracle_sweep_random_instances(pair05):
    # smaller version of the acceptance sweep, with per-call diagnostics
    rng = np.random.default_rng(12)
    checked = 0
    for trial in range(40):
        K = int(rng.integers(2, 5))
        M = int(rng.integers(5, 10))
        d, hclass = random_tabular(K, M, seed=1000 + trial)
        s = random_dataset(rng, K, n=30)
        inst = random_instance(hclass, rng, n_rows=int(rng.integers(3, 20)),
                               num_contexts=K)
        gamma = float(rng.uniform(0.05, 0.4))
        cfg = FairCscConfig(gamma=gamma, nu=0.01 * gamma)
        res = fair_csc_oracle_detailed(inst, s, hclass, cfg)
        pi = res.policy
        assert len(pi.support) <= 2
        assert abs(empirical_delta_rate(pi, s, FP)) <= gamma + 1e-9
        costs = hypothesis_cost_vector(inst, hclass)
        cost = sum(v * costs[i] for i, v in pi.atoms)
        # brute-force fair optimum computed directly on the raw CSC costs
        gaps = hypothesis_gap_vector(hclass, s, FP)
        opt = _brute_fair_csc_opt(costs, gaps, gamma)
        eps = 4 * cfg.nu * inst.cost_spread()
        assert cost <= opt + eps + 1e-9
        assert res.oracle_calls <= res.call_budget
        checked += 1
    assert checked == 40


def _brute_fair_csc_opt(costs, gaps, gamma, tol=1e-12):
    """Independent reference optimum: best fair single or pair on raw costs."""
    best = math.inf
    n = len(costs)
    for i in range(n):
        if abs(gaps[i]) <= gamma + tol:
            best = min(best, costs[i])
    for i in range(n):
        for j in range(i + 1, n):
            dg = gaps[i] - gaps[j]
            if abs(dg) <= tol:
                if abs(gaps[j]) > gamma + tol:
                    continue
                lo, hi = 0.0, 1.0
            else:
                b1 = (gamma - gaps[j]) / dg
                b2 = (-gamma - gaps[j]) / dg
                lo = max(0.0, min(b1, b2))
                hi = min(1.0, max(b1, b2))
                if lo > hi + tol:
                    continue
            for v in (lo, hi):
                best = min(best, v * costs[i] + (1 - v) * costs[j])
    return best


def test_tightening_monotonicity(pair05):
    # the fair optimum degrades by at most 2*nu*(normalized scale) when the
    # constraint is tightened from gamma to gamma - 2*nu, provided +-a (gap
    # +-1 on the constraint set) are available to re-mix toward feasibility
    s = dataset_from_distribution(pair05.d1)
    gaps = hypothesis_gap_vector(pair05.hclass, s, FP)
    rng = np.random.default_rng(13)
    for _ in range(20):
        inst = random_instance(pair05.hclass, rng, n_rows=10, num_contexts=4)
        w = csc_to_weighted(inst)
        if w.total_weight <= 0:
            continue
        errs = weighted_error_vector(normalize_weights(w), pair05.hclass)
        gamma, nu = 0.2, 0.04
        loose = _brute_fair_csc_opt(errs, gaps, gamma)
        tight = _brute_fair_csc_opt(errs, gaps, gamma - 2 * nu)
        assert tight <= loose + 2 * nu + 1e-9


# ---------------------------------------------------------------------------
# concentration_radius
# ---------------------------------------------------------------------------

def test_beta_scaling(pair05):
    s1 = dataset_from_distribution(pair05.d1)
    s2 = dataset_from_distribution(pair05.d1, copies=2)
    b1 = concentration_radius(s1, 6, 0.05)
    b2 = concentration_radius(s2, 6, 0.05)
    assert b2 == pytest.approx(b1 / math.sqrt(2), rel=1e-9)
    assert b1 > 0


def test_beta_formula(pair05):
    s = dataset_from_distribution(pair05.d1)
    delta, H = 0.05, 6
    expected = sum(
        math.sqrt(math.log(8 * H / delta) / (2 * s.negative_count(j)))
        for j in (-1, 1)
    )
    assert concentration_radius(s, H, delta) == pytest.approx(expected, abs=1e-12)


def test_beta_requires_negatives():
    from fairtaste import Dataset

    s = Dataset.from_arrays([0, 0], [-1, 1], [1, 1], 1)
    with pytest.raises(ValueError):
        concentration_radius(s, 4, 0.05)
