"""FairCSC: cost-sensitive classification under an equalized-rate constraint.

The oracle minimizes a CSC objective over mixtures of hypotheses subject to
an empirical fairness constraint |delta rate| <= gamma, via Lagrangian
saddle-point dynamics over an exact CSC oracle: an exponentiated-gradient
dual player against exact best-response primal plays.  The objective and the
constraint may be defined on different datasets.  The returned mixture is
shrunk to support size at most 2 by exhaustive pair enumeration (the fairness
constraint and the cost are both affine in a pair's mixing weight, so each
pair's optimum sits at an endpoint of its feasible interval).

Rather than running the dual dynamics for the full worst-case iteration
budget, the saddle property of candidate solutions is verified directly at
geometrically spaced checkpoints (both sides of the saddle condition reduce
to vertex checks, since the Lagrangian is bilinear); iteration stops at the
first certified candidate.  The worst-case budget derived from the standard
exponentiated-gradient regret bound still caps the loop, so the number of
CSC-oracle calls stays O(1/nu^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Dataset, HypothesisClass, MixturePolicy, RateFunctional
from .csc import (
    CscInstance,
    CscRow,
    DegenerateWeights,
    WeightedInstance,
    csc_to_weighted,
    exact_csc,
    normalize_weights,
    weighted_error_vector,
)
from .metrics import hypothesis_gap_vector

_FEAS_TOL = 1e-12
_CERT_TOL = 1e-12

#: leading constant of the worst-case iteration budget ceil(C * (B(1+gamma))^2 / nu^2),
#: from the anytime exponentiated-gradient regret bound over the 3-point dual simplex
SADDLE_BUDGET_CONSTANT = 4.0 * math.log(3.0)


@dataclass(frozen=True)
class FairCscConfig:
    """Parameters of one FairCSC solve."""

    gamma: float
    nu: float
    dual_bound: float = 2.0
    functional: RateFunctional = RateFunctional.FALSE_POSITIVE
    tighten: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma!r}")
        if self.nu <= 0:
            raise ValueError(f"nu must be > 0, got {self.nu!r}")
        if self.dual_bound <= 0:
            raise ValueError(f"dual_bound must be > 0, got {self.dual_bound!r}")
        if self.tighten and not self.nu < self.gamma / 2:
            raise ValueError(
                f"tightened solves need nu < gamma/2 (nu={self.nu!r}, gamma={self.gamma!r})"
            )


@dataclass(frozen=True)
class DualVector:
    """Multipliers for the two one-sided constraints delta <= gamma, -delta <= gamma."""

    lambda_plus: float
    lambda_minus: float

    def __post_init__(self):
        if self.lambda_plus < 0 or self.lambda_minus < 0:
            raise ValueError("dual multipliers must be nonnegative")

    @property
    def l1(self) -> float:
        return self.lambda_plus + self.lambda_minus

    @property
    def tau(self) -> float:
        """Signed net multiplier on the gap."""
        return self.lambda_plus - self.lambda_minus


ZERO_DUAL = DualVector(0.0, 0.0)


@dataclass
class SaddleResult:
    policy: MixturePolicy
    dual: DualVector
    iterations: int
    oracle_calls: int
    certified: bool = True
    degenerate: bool = False
    call_budget: int = 0


def saddle_call_budget(cfg: FairCscConfig, gamma: float | None = None) -> int:
    """Worst-case CSC-call budget of one saddle-point solve (documented C/nu^2)."""
    g = cfg.gamma if gamma is None else gamma
    payoff_bound = cfg.dual_bound * (1.0 + g)
    n_max = math.ceil(SADDLE_BUDGET_CONSTANT * payoff_bound**2 / cfg.nu**2)
    n_max = max(n_max, 1)
    # one certification call per geometric checkpoint, plus slack
    return n_max + 2 * (int(math.log2(n_max)) + 2) + 4


def _policy_stats(atoms, err_vec, gap_vec):
    err = sum(w * err_vec[i] for i, w in atoms)
    gap = sum(w * gap_vec[i] for i, w in atoms)
    return float(err), float(gap)


def lagrangian(
    pi: MixturePolicy,
    lam: DualVector,
    w: WeightedInstance,
    constraint_data: Dataset,
    gamma: float,
    functional: RateFunctional = RateFunctional.FALSE_POSITIVE,
) -> float:
    """Weighted error plus the two one-sided fairness penalties.

    The cost objective (w) and the fairness constraint (constraint_data) are
    deliberately allowed to come from different datasets.
    """
    err_vec = weighted_error_vector(w, pi.hclass)
    gap_vec = hypothesis_gap_vector(pi.hclass, constraint_data, functional)
    err, gap = _policy_stats(pi.atoms, err_vec, gap_vec)
    return (
        err
        + lam.lambda_plus * (gap - gamma)
        + lam.lambda_minus * (-gap - gamma)
    )


def _constraint_cost_table(s: Dataset, functional: RateFunctional, hclass):
    """Per-cell coefficients c[x, g] with delta(h) = sum_cell c * 1[pred = e].

    Returns (coef, event_label).
    """
    from .metrics import _empirical_weights  # shared conditioning logic

    coef = np.zeros((s.num_contexts, 2))
    event_label = None
    for g, sign in ((0, -1.0), (1, 1.0)):
        weights, event_label = _empirical_weights(s, functional, g)
        total = weights.sum()
        if total <= 0:
            raise ValueError(
                f"constraint data has empty conditioning event for group column {g}"
            )
        coef[:, g] = sign * weights / total
    return coef, event_label


def best_response_policy(
    lam: DualVector,
    w: WeightedInstance,
    constraint_data: Dataset,
    hclass: HypothesisClass,
    functional: RateFunctional = RateFunctional.FALSE_POSITIVE,
) -> int:
    """The primal player's exact best response: one CSC-oracle call.

    Builds a CSC instance whose per-row costs combine the weighted
    misclassification costs with the dual-weighted per-example contributions
    to the empirical rate gap, then minimizes by enumeration.
    """
    rows = [
        CscRow(
            r.context,
            r.group,
            cost_neg=r.weight if r.target_label == 1 else 0.0,
            cost_pos=r.weight if r.target_label == -1 else 0.0,
        )
        for r in w.rows
    ]
    tau = lam.tau
    coef, event_label = _constraint_cost_table(constraint_data, functional, hclass)
    groups = (-1, 1)
    for x in range(constraint_data.num_contexts):
        for g in (0, 1):
            c = tau * coef[x, g]
            if c == 0.0:
                continue
            if event_label == 1:
                rows.append(CscRow(x, groups[g], 0.0, c))
            else:
                rows.append(CscRow(x, groups[g], c, 0.0))
    idx, _ = exact_csc(CscInstance(rows), hclass)
    return idx


def best_response_dual(
    pi: MixturePolicy,
    constraint_data: Dataset,
    gamma: float,
    dual_bound: float,
    functional: RateFunctional = RateFunctional.FALSE_POSITIVE,
) -> DualVector:
    """Exact linear maximization over the l1 ball: all mass on the most
    violated one-sided constraint, or zero if the policy is feasible."""
    from .metrics import empirical_delta_rate

    gap = empirical_delta_rate(pi, constraint_data, functional)
    viol_plus = gap - gamma
    viol_minus = -gap - gamma
    best = max(viol_plus, viol_minus)
    if best <= 0:
        return ZERO_DUAL
    if viol_plus >= viol_minus:
        return DualVector(dual_bound, 0.0)
    return DualVector(0.0, dual_bound)


def _best_fair_mixture(err_vec, gap_vec, indices, gamma):
    """Best mixture of support <= 2 over the given hypothesis indices subject
    to |gap| <= gamma.  Both the gap and the cost are affine in a pair's
    mixing weight, so each pair is optimized in closed form at an endpoint of
    its feasible weight interval.

    Returns (atoms, cost) or (None, inf) when no single or pair is feasible.
    Ties break toward the lexicographically smallest (index, index) pair.
    """
    best_cost = math.inf
    best_atoms = None
    best_pair = None
    indices = sorted(set(indices))

    def consider(atoms, cost, pair):
        nonlocal best_cost, best_atoms, best_pair
        if cost < best_cost - _FEAS_TOL or (
            cost <= best_cost + _FEAS_TOL and (best_pair is None or pair < best_pair)
        ):
            if cost < best_cost:
                best_cost = cost
            best_atoms = atoms
            best_pair = pair

    for i in indices:
        if abs(gap_vec[i]) <= gamma + _FEAS_TOL:
            consider([(i, 1.0)], float(err_vec[i]), (i, i))
    for ii, i in enumerate(indices):
        for j in indices[ii + 1 :]:
            gi, gj = float(gap_vec[i]), float(gap_vec[j])
            # weight v on i: gap(v) = v*gi + (1-v)*gj within [-gamma, gamma]
            lo, hi = 0.0, 1.0
            dg = gi - gj
            if abs(dg) <= _FEAS_TOL:
                if abs(gj) > gamma + _FEAS_TOL:
                    continue
            else:
                b1 = (gamma - gj) / dg
                b2 = (-gamma - gj) / dg
                lo = max(lo, min(b1, b2))
                hi = min(hi, max(b1, b2))
                if lo > hi + _FEAS_TOL:
                    continue
                lo = min(max(lo, 0.0), 1.0)
                hi = min(max(hi, 0.0), 1.0)
            for v in (lo, hi):
                cost = v * float(err_vec[i]) + (1.0 - v) * float(err_vec[j])
                atoms = [(i, v), (j, 1.0 - v)]
                atoms = [(k, wt) for k, wt in atoms if wt > 0.0]
                consider(atoms, cost, (i, j))
    return best_atoms, best_cost


def _envelope_dual(err_vec, gap_vec, indices, gamma, dual_bound):
    """Exact maximizer of g(tau) = min_h (err + tau*gap) - gamma*|tau| over
    tau in [-B, B], searched over the breakpoints of the piecewise-linear
    concave envelope.  Returns the signed tau."""
    indices = list(indices)
    cand = {0.0, dual_bound, -dual_bound}
    for ii, i in enumerate(indices):
        for j in indices[ii + 1 :]:
            dg = float(gap_vec[i] - gap_vec[j])
            if dg == 0.0:
                continue
            t = float(err_vec[j] - err_vec[i]) / dg
            if -dual_bound <= t <= dual_bound:
                cand.add(t)

    def g(tau):
        vals = [float(err_vec[k]) + tau * float(gap_vec[k]) for k in indices]
        return min(vals) - gamma * abs(tau)

    # prefer smaller |tau| among ties so feasible problems keep a zero dual
    return max(sorted(cand, key=abs), key=g)


def saddle_point(
    w: WeightedInstance,
    constraint_data: Dataset,
    hclass: HypothesisClass,
    cfg: FairCscConfig,
    gamma: float | None = None,
    gap_vec=None,
    trace=None,
) -> SaddleResult:
    """Find a nu-approximate saddle point of the restricted Lagrangian.

    ``gamma`` overrides cfg.gamma (used by the tightening pipeline);
    ``gap_vec`` may carry a precomputed per-hypothesis empirical gap vector;
    ``trace`` is an optional writable text stream receiving one CSV line per
    dual iteration.
    """
    gamma = cfg.gamma if gamma is None else gamma
    B = cfg.dual_bound
    nu = cfg.nu
    if w.total_weight <= 0:
        return SaddleResult(
            policy=MixturePolicy.point_mass(hclass, hclass.plus_index),
            dual=ZERO_DUAL,
            iterations=0,
            oracle_calls=0,
            certified=True,
            degenerate=True,
            call_budget=saddle_call_budget(cfg, gamma),
        )
    err_vec = weighted_error_vector(w, hclass)
    if gap_vec is None:
        gap_vec = hypothesis_gap_vector(hclass, constraint_data, cfg.functional)

    payoff_bound = B * (1.0 + gamma)
    n_max = max(1, math.ceil(SADDLE_BUDGET_CONSTANT * payoff_bound**2 / nu**2))
    budget = saddle_call_budget(cfg, gamma)
    ln3 = math.log(3.0)

    if trace is not None:
        trace.write("iteration,lambda_plus,lambda_minus,best_response_index,lagrangian\n")

    cum_payoff = np.zeros(3)
    br_counts: dict[int, int] = {}
    lam_sum = np.zeros(2)
    oracle_calls = 0
    checkpoint = 1
    t = 0

    def certify(atoms, tau_hat, calls):
        """Check both saddle inequalities at the vertices; bilinearity makes
        vertex checks sufficient.  Returns (ok, extra_oracle_calls)."""
        lam_hat = (max(tau_hat, 0.0), max(-tau_hat, 0.0))
        err_p, gap_p = _policy_stats(atoms, err_vec, gap_vec)
        l_hat = err_p + tau_hat * gap_p - gamma * (lam_hat[0] + lam_hat[1])
        # dual side: max over lambda in {0, (B,0), (0,B)}
        dual_max = max(
            err_p,
            err_p + B * (gap_p - gamma),
            err_p + B * (-gap_p - gamma),
        )
        if dual_max > l_hat + nu + _CERT_TOL:
            return False, 0
        # primal side: min over all hypotheses (one CSC-oracle call)
        primal_min = float(np.min(err_vec + tau_hat * gap_vec)) - gamma * (
            lam_hat[0] + lam_hat[1]
        )
        if primal_min < l_hat - nu - _CERT_TOL:
            return False, 1
        return True, 1

    while t < n_max:
        t += 1
        eta = math.sqrt(ln3 / (payoff_bound**2 * t)) if payoff_bound > 0 else 1.0
        z = eta * cum_payoff
        z -= z.max()
        theta = np.exp(z)
        theta /= theta.sum()
        lam_plus = B * theta[0]
        lam_minus = B * theta[1]
        tau = lam_plus - lam_minus
        scores = err_vec + tau * gap_vec
        br = int(np.argmin(scores))
        oracle_calls += 1
        br_counts[br] = br_counts.get(br, 0) + 1
        lam_sum += (lam_plus, lam_minus)
        g_br = float(gap_vec[br])
        cum_payoff += (B * (g_br - gamma), B * (-g_br - gamma), 0.0)
        if trace is not None:
            l_val = float(scores[br]) - gamma * (lam_plus + lam_minus)
            trace.write(f"{t},{lam_plus!r},{lam_minus!r},{br},{l_val!r}\n")

        if t == checkpoint or t == n_max:
            checkpoint *= 2
            seen = sorted(br_counts)
            # candidate 1: exact optimum over the hull of best responses seen,
            # paired with the envelope dual over the same set
            atoms_r, _ = _best_fair_mixture(err_vec, gap_vec, seen, gamma)
            if atoms_r is not None:
                tau_r = _envelope_dual(err_vec, gap_vec, seen, gamma, B)
                ok, extra = certify(atoms_r, tau_r, oracle_calls)
                oracle_calls += extra
                if ok:
                    policy = MixturePolicy(hclass, atoms_r)
                    dual = DualVector(max(tau_r, 0.0), max(-tau_r, 0.0))
                    return SaddleResult(policy, dual, t, oracle_calls, True, False, budget)
            # candidate 2: averaged iterates
            atoms_a = [(i, c / t) for i, c in sorted(br_counts.items())]
            tau_a = float(lam_sum[0] - lam_sum[1]) / t
            ok, extra = certify(atoms_a, tau_a, oracle_calls)
            oracle_calls += extra
            if ok:
                policy = MixturePolicy(hclass, atoms_a)
                lam_avg = lam_sum / t
                dual = DualVector(float(lam_avg[0]), float(lam_avg[1]))
                return SaddleResult(policy, dual, t, oracle_calls, True, False, budget)

    # budget exhausted: the regret bound certifies the averaged iterates
    atoms_a = [(i, c / t) for i, c in sorted(br_counts.items())]
    lam_avg = lam_sum / t
    policy = MixturePolicy(hclass, atoms_a)
    dual = DualVector(float(lam_avg[0]), float(lam_avg[1]))
    assert oracle_calls <= budget
    return SaddleResult(policy, dual, t, oracle_calls, False, False, budget)


def shrink_support(
    pi: MixturePolicy,
    w: WeightedInstance,
    constraint_data: Dataset,
    gamma: float,
    functional: RateFunctional = RateFunctional.FALSE_POSITIVE,
    gap_vec=None,
) -> MixturePolicy:
    """Reduce a feasible mixture to support <= 2 without raising its cost or
    its fairness gap, by enumerating singles and pairs within its support."""
    if len(pi.support) <= 1:
        return pi
    err_vec = weighted_error_vector(w, pi.hclass)
    if gap_vec is None:
        gap_vec = hypothesis_gap_vector(pi.hclass, constraint_data, functional)
    atoms, _ = _best_fair_mixture(err_vec, gap_vec, pi.support, gamma)
    if atoms is None:
        raise RuntimeError(
            "no feasible single or pair inside a feasible policy's support; "
            "this indicates an internal error"
        )
    return MixturePolicy(pi.hclass, atoms)


def fair_csc_oracle_detailed(
    inst: CscInstance,
    constraint_data: Dataset,
    hclass: HypothesisClass,
    cfg: FairCscConfig,
    gap_vec=None,
    trace=None,
) -> SaddleResult:
    """Full pipeline with diagnostics: transform costs, normalize, tighten,
    solve the saddle point, shrink the support."""
    weighted = csc_to_weighted(inst)
    try:
        normalized = normalize_weights(weighted)
    except DegenerateWeights:
        return SaddleResult(
            policy=MixturePolicy.point_mass(hclass, hclass.plus_index),
            dual=ZERO_DUAL,
            iterations=0,
            oracle_calls=0,
            certified=True,
            degenerate=True,
            call_budget=saddle_call_budget(cfg),
        )
    gamma_solve = cfg.gamma - 2 * cfg.nu if cfg.tighten else cfg.gamma
    result = saddle_point(
        normalized, constraint_data, hclass, cfg, gamma=gamma_solve,
        gap_vec=gap_vec, trace=trace,
    )
    # a certified nu-saddle at the (possibly tightened) level gamma_solve has
    # gap at most gamma_solve + 2*nu
    shrink_level = gamma_solve + 2 * cfg.nu
    result.policy = shrink_support(
        result.policy, normalized, constraint_data, shrink_level,
        functional=cfg.functional, gap_vec=gap_vec,
    )
    return result


def fair_csc_oracle(
    inst: CscInstance,
    constraint_data: Dataset,
    hclass: HypothesisClass,
    cfg: FairCscConfig,
    gap_vec=None,
    trace=None,
) -> MixturePolicy:
    """The FairCSC oracle: an approximately cost-minimal, empirically fair
    mixture with support size at most 2.

    In tightened mode (the default) the output satisfies the gamma constraint
    exactly, at an extra cost of at most 4*nu*sum_j|cost_neg_j - cost_pos_j|
    over the constrained optimum.
    """
    return fair_csc_oracle_detailed(
        inst, constraint_data, hclass, cfg, gap_vec=gap_vec, trace=trace
    ).policy


def concentration_radius(s: Dataset, num_hypotheses: int, delta: float) -> float:
    """Uniform half-width beta for empirical vs. true delta-FPR over a class.

    Two-sided Hoeffding with a union bound over the 2*|H| group-conditional
    rates: beta = sum_j sqrt(ln(8|H|/delta) / (2 n_j)) with n_j the count of
    (a=j, y=-1) examples.  With probability 1-delta every hypothesis's true
    gap is within beta of its empirical gap.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta!r}")
    if num_hypotheses < 1:
        raise ValueError("need at least one hypothesis")
    log_term = math.log(8 * num_hypotheses / delta)
    beta = 0.0
    for j in (-1, 1):
        n_j = s.negative_count(j)
        if n_j == 0:
            raise ValueError(f"no negative examples for group {j:+d}")
        beta += math.sqrt(log_term / (2 * n_j))
    return beta
