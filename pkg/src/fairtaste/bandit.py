"""Two-phase online learner for apple-tasting feedback under a fairness cap.

Phase 1 deploys the constant +1 classifier to collect fully labeled
exploration data, from which the empirical fairness constraint and its
concentration radius beta are built.  Phase 2 runs an oracle-efficient
contextual-bandit scheme: every deployed distribution over policies is the
solution of a low-variance feasibility program, found by coordinate descent
whose only access to the policy class is the FairCSC oracle, so every atom
of every deployed distribution is an empirically fair support-<=2 mixture.

Losses use the apple-tasting -> bandit transform (0, 1, 0.5 entries), which
is computable from observable feedback alone and preserves the 0-1 argmin up
to a policy-independent shift.  Off-policy values are estimated by inverse
propensity scoring against the recorded smoothed probabilities.

Conventions the source paper trail leaves open, fixed here:
  - the IPS history contains phase-2 rounds only (a flag can fold the
    exploration rounds in as propensity-1 records);
  - the round index inside mu_t and Lambda_t counts phase-2 rounds, starting
    at 1 on the first post-exploration round;
  - the feasibility program (rescale test, V, S, potential) is evaluated on
    the sub-distribution Q as built; leftover mass goes to the anchor policy
    only in the returned object.  Padding only raises smoothed probabilities,
    so the variance guarantees transfer to the deployed distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Dataset,
    HypothesisClass,
    MixturePolicy,
    RateFunctional,
    TabularDistribution,
    group_index,
    policy_sample,
)
from .csc import CscInstance, CscRow
from .fair_csc import FairCscConfig, concentration_radius, fair_csc_oracle_detailed
from .metrics import hypothesis_gap_vector

#: the 4(e-2) constant of the variance-bonus denominators
B_DENOM_CONSTANT = 4.0 * (math.e - 2.0)

_LOSS_VALUES = (0.0, 0.5, 1.0)
_EPS = 1e-12


def apple_to_bandit_loss(action: int, label_if_observed: int | None = None) -> float:
    """Transformed loss of the taken action, from observable feedback only.

    Predicting +1 reveals the label and costs 0 (label +1) or 1 (label -1);
    predicting -1 reveals nothing and costs 0.5 regardless.
    """
    if action == 1:
        if label_if_observed is None:
            raise ValueError("action +1 observes the label; none supplied")
        if label_if_observed == 1:
            return 0.0
        if label_if_observed == -1:
            return 1.0
        raise ValueError(f"bad label {label_if_observed!r}")
    if action == -1:
        if label_if_observed is not None:
            raise ValueError("action -1 observes no label")
        return 0.5
    raise ValueError(f"bad action {action!r}")


@dataclass(frozen=True)
class RoundRecord:
    """One logged phase-2 interaction."""

    round: int
    context: int
    group: int
    action: int
    propensity: float
    observed_bandit_loss: float
    raw_label_observed: int | None = None

    def __post_init__(self):
        if self.action not in (-1, 1):
            raise ValueError(f"bad action {self.action!r}")
        if not 0 < self.propensity <= 1:
            raise ValueError(f"propensity must be in (0, 1], got {self.propensity!r}")
        if self.observed_bandit_loss not in _LOSS_VALUES:
            raise ValueError(
                f"transformed loss must be one of {_LOSS_VALUES}, "
                f"got {self.observed_bandit_loss!r}"
            )
        if (self.raw_label_observed is not None) != (self.action == 1):
            raise ValueError("label must be recorded iff the action was +1")


class History:
    """Ordered log of phase-2 rounds, strictly increasing round numbers."""

    def __init__(self, records=()):
        self.records: list[RoundRecord] = []
        for r in records:
            self.append(r)

    def append(self, record: RoundRecord) -> None:
        if self.records and record.round <= self.records[-1].round:
            raise ValueError(
                f"round {record.round} does not follow {self.records[-1].round}"
            )
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


class QWeights:
    """A sub-distribution over fair policies plus an anchor for leftover mass.

    ``atoms`` hold (policy, weight) with nonnegative weights summing to at
    most 1 (up to float noise); at deployment the remaining ``leftover`` mass
    goes to ``anchor``.  Solver diagnostics ride along as plain attributes.
    """

    def __init__(self, atoms, anchor: MixturePolicy):
        atoms = [(pi, float(w)) for pi, w in atoms]
        for _, w in atoms:
            if w < 0:
                raise ValueError(f"negative atom weight {w!r}")
        total = sum(w for _, w in atoms)
        if total > 1 + 1e-9:
            raise ValueError(f"atom weights sum to {total!r} > 1")
        self.atoms = tuple(atoms)
        self.anchor = anchor
        self.total_weight = total
        self.iterations = 0
        self.oracle_calls = 0
        self.potential_drops: list[float] = []

    @property
    def leftover(self) -> float:
        return max(0.0, 1.0 - self.total_weight)

    def positive_table(self, include_anchor: bool = True) -> np.ndarray:
        """Sum of weight * Pr[pi = +1] per cell (not mu-smoothed)."""
        K = self.anchor.hclass.num_contexts
        pos = np.zeros((K, 2))
        for pi, w in self.atoms:
            if w > 0:
                pos += w * pi.positive_table()
        if include_anchor and self.leftover > 0:
            pos += self.leftover * self.anchor.positive_table()
        return pos

    def deployed_mixture(self, mu_t: float) -> MixturePolicy:
        """The smoothed distribution actually played, as one hypothesis mixture:
        mu on each constant classifier, (1 - 2 mu) on the anchor-filled Q."""
        hclass = self.anchor.hclass
        weights: dict[int, float] = {}

        def add(pi, w):
            for i, wi in pi.atoms:
                if w * wi > 0:
                    weights[i] = weights.get(i, 0.0) + w * wi

        for pi, w in self.atoms:
            add(pi, (1.0 - 2.0 * mu_t) * w)
        add(self.anchor, (1.0 - 2.0 * mu_t) * self.leftover)
        weights[hclass.plus_index] = weights.get(hclass.plus_index, 0.0) + mu_t
        weights[hclass.minus_index] = weights.get(hclass.minus_index, 0.0) + mu_t
        total = sum(weights.values())
        return MixturePolicy(
            hclass, [(i, w / total) for i, w in sorted(weights.items())]
        )


@dataclass(frozen=True)
class Schedule:
    """All knobs of one run of the learner."""

    T: int
    T0: int
    gamma: float
    delta: float
    nu: float
    eta: float
    alpha: float = 0.25
    mu_floor_constant: float = 0.1
    mu_max: float = 0.25
    epoch_mode: str = "every_round"
    theory_constants: bool = False
    fold_exploration: bool = False
    warm_start: bool = False
    debug_checks: bool = False

    def __post_init__(self):
        if not 1 <= self.T0 <= self.T:
            raise ValueError(f"need 1 <= T0 <= T, got T0={self.T0}, T={self.T}")
        if not 0.25 <= self.alpha <= 0.5:
            raise ValueError(f"alpha must be in [0.25, 0.5], got {self.alpha!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.nu <= 0 or self.eta <= 0:
            raise ValueError("nu and eta must be positive")
        if not 0 < self.mu_max <= 0.5:
            raise ValueError("mu_max must be in (0, 0.5]")
        if self.mu_floor_constant <= 0:
            raise ValueError("mu_floor_constant must be positive")
        if self.epoch_mode not in ("every_round", "doubling"):
            raise ValueError(f"unknown epoch_mode {self.epoch_mode!r}")


def make_schedule(
    T: int,
    gamma: float,
    delta: float,
    num_hypotheses: int,
    alpha: float | None = None,
    c_t0: float = 1.0,
    **overrides,
) -> Schedule:
    """Standard parameterization: nu = 1/T, eta = 1/T^2, and
    T0 = ceil(c_t0 * sqrt(T ln(|H|/delta))), or ceil(T^(2 alpha)) when an
    explicit exploration exponent is requested."""
    if alpha is None:
        t0 = math.ceil(c_t0 * math.sqrt(T * math.log(num_hypotheses / delta)))
        alpha = 0.25
    else:
        t0 = math.ceil(T ** (2 * alpha))
    t0 = min(max(t0, 1), T)
    params = dict(
        T=T, T0=t0, gamma=gamma, delta=delta, nu=1.0 / T, eta=1.0 / T**2,
        alpha=alpha,
    )
    params.update(overrides)
    return Schedule(**params)


def mu_schedule(t_phase2: int, schedule: Schedule, H_size: int) -> float:
    """Exploration floor mu_t = min(c * ln(net * T / delta)/sqrt(t), mu_max),
    with the net size |H|^2/eta of the discretized policy class; c is 3.2 in
    theory-constants mode."""
    if t_phase2 < 1:
        raise ValueError("phase-2 round index starts at 1")
    net_size = math.ceil(H_size**2 / schedule.eta)
    c = 3.2 if schedule.theory_constants else schedule.mu_floor_constant
    raw = c * math.log(net_size * schedule.T / schedule.delta) / math.sqrt(t_phase2)
    return min(raw, schedule.mu_max)


# ---------------------------------------------------------------------------
# IPS machinery
# ---------------------------------------------------------------------------

class _Aggregates:
    """Sufficient statistics of a history for O(1)-per-round IPS work.

    n[x, g] counts arrivals; A[x, g, c] accumulates loss/propensity for
    rounds whose taken action maps to column c ((action+1)//2).  Every IPS
    quantity used by the solver is a linear functional of these tables.
    """

    def __init__(self, num_contexts: int):
        self.t = 0
        self.n = np.zeros((num_contexts, 2))
        self.A = np.zeros((num_contexts, 2, 2))

    def add(self, context, group, action, loss, propensity) -> None:
        self.t += 1
        g = group_index(group)
        self.n[context, g] += 1
        self.A[context, g, (action + 1) // 2] += loss / propensity

    @classmethod
    def from_history(cls, h: History, num_contexts: int) -> "_Aggregates":
        agg = cls(num_contexts)
        for r in h:
            agg.add(r.context, r.group, r.action, r.observed_bandit_loss, r.propensity)
        return agg

    def ips_vector(self, hclass: HypothesisClass) -> np.ndarray:
        """IPS loss estimate of every hypothesis, shape (|H|,)."""
        pred_pos = hclass.prediction_matrix == 1
        return np.where(pred_pos, self.A[:, :, 1], self.A[:, :, 0]).sum(
            axis=(1, 2)
        ) / self.t


def _mix(vec: np.ndarray, pi: MixturePolicy) -> float:
    return float(sum(w * vec[i] for i, w in pi.atoms))


def ips_loss(pi: MixturePolicy, h: History) -> float:
    """Inverse-propensity estimate of pi's transformed loss on the history."""
    if len(h) == 0:
        raise ValueError("IPS estimate needs a nonempty history")
    total = 0.0
    for r in h:
        total += r.observed_bandit_loss * pi.prob_action(
            r.context, r.group, r.action
        ) / r.propensity
    return total / len(h)


def approx_best_policy(
    h: History,
    constraint_data: Dataset,
    hclass: HypothesisClass,
    cfg: FairCscConfig,
    gap_vec=None,
) -> MixturePolicy:
    """FairCSC solve of the IPS objective: the anchor policy pi_0.

    The CSC instance charges row s's recorded action its importance-weighted
    loss l_s/(t p_s) and the other label nothing.  cfg.nu is shrunk so the
    oracle's additive error is at most nu over these (unnormalized) costs.
    """
    rows = []
    spread = 0.0
    t = len(h)
    for r in h:
        c = r.observed_bandit_loss / (t * r.propensity)
        spread += c
        if r.action == 1:
            rows.append(CscRow(r.context, r.group, 0.0, c))
        else:
            rows.append(CscRow(r.context, r.group, c, 0.0))
    if spread > 0:
        cfg = replace(cfg, nu=min(cfg.nu, cfg.nu / (4.0 * spread)))
    return fair_csc_oracle_detailed(
        CscInstance(rows), constraint_data, hclass, cfg, gap_vec=gap_vec
    ).policy


def regret_and_bonus(
    pi: MixturePolicy, pi0: MixturePolicy, h: History, mu_t: float, T: int
):
    """(clamped IPS regret to the anchor, its variance-budget bonus)."""
    if not 0 < mu_t <= 0.5:
        raise ValueError(f"mu_t must be in (0, 0.5], got {mu_t!r}")
    reg = max(ips_loss(pi, h) - ips_loss(pi0, h), 0.0)
    return reg, reg / (B_DENOM_CONSTANT * mu_t * math.log(T))


def smoothed_prob(Q: QWeights, x: int, a: int, yhat: int, mu_t: float) -> float:
    """Deployed probability of predicting yhat at (x, a):
    mu + (1 - 2 mu) * anchor-filled mixture probability."""
    g = group_index(a)
    p_pos = float(Q.positive_table(include_anchor=True)[x, g])
    mixture = p_pos if yhat == 1 else Q.total_weight + Q.leftover - p_pos
    return mu_t + (1.0 - 2.0 * mu_t) * mixture


def variance_stats(
    Q: QWeights, pi: MixturePolicy, h: History, mu_t: float, b_tilde: float = 0.0
):
    """(V, S, D_tilde) of pi against the program's sub-distribution Q.

    Expectations run over the logged contexts; pi's randomness enters through
    its per-cell positive probabilities.  Q is used unpadded (no anchor
    fill), matching the feasibility program; padding only raises smoothed
    probabilities, so deployed-variance bounds follow a fortiori.
    """
    if len(h) == 0:
        raise ValueError("variance estimates need a nonempty history")
    agg = _Aggregates.from_history(h, pi.hclass.num_contexts)
    qpos, qneg = _smoothed_tables(Q, mu_t)
    ppos = pi.positive_table()
    freq = agg.n / agg.t
    V = float((freq * (ppos / qpos + (1.0 - ppos) / qneg)).sum())
    S = float((freq * (ppos / qpos**2 + (1.0 - ppos) / qneg**2)).sum())
    return V, S, V - (4.0 + b_tilde)


def _smoothed_tables(Q: QWeights, mu_t: float):
    """Per-cell smoothed probabilities (positive, negative) of the unpadded Q."""
    pos = Q.positive_table(include_anchor=False)
    qpos = mu_t + (1.0 - 2.0 * mu_t) * pos
    qneg = mu_t + (1.0 - 2.0 * mu_t) * (Q.total_weight - pos)
    return qpos, qneg


# ---------------------------------------------------------------------------
# The feasibility program
# ---------------------------------------------------------------------------

class CoordinateDescentError(RuntimeError):
    """The iteration safety cap was exceeded: treated as a bug, not a path."""


class _CdEngine:
    """One coordinate-descent solve over aggregated history statistics."""

    def __init__(self, agg, constraint_data, hclass, schedule, mu_t,
                 gamma_hat, gap_vec, pi0):
        self.agg = agg
        self.constraint_data = constraint_data
        self.hclass = hclass
        self.sched = schedule
        self.mu = mu_t
        self.gamma_hat = gamma_hat
        self.gap_vec = gap_vec
        self.pi0 = pi0
        self.lnT = math.log(schedule.T)
        self.b_denom = B_DENOM_CONSTANT * mu_t * self.lnT
        self.lam_t = schedule.nu / (B_DENOM_CONSTANT * mu_t**2 * self.lnT)
        self.pred_pos = hclass.prediction_matrix == 1
        self.ihat = agg.ips_vector(hclass)
        self.l0 = _mix(self.ihat, pi0)
        self.freq = agg.n / agg.t
        self.oracle_calls = 0

    def bonus(self, pi: MixturePolicy) -> float:
        return max(_mix(self.ihat, pi) - self.l0, 0.0) / self.b_denom

    def amo(self, qpos, qneg):
        """One approximate-argmax-violation call, realized through FairCSC.

        Maximizing V - b_tilde (the clamp linearized, constants dropped) is a
        CSC minimization with per-cell costs
          -n/(t Q^mu(yhat)) + A[yhat]/(t b_denom).
        The per-call nu is shrunk so the oracle's additive error stays below
        Lambda_t in these units.
        """
        t = self.agg.t
        cpos = -self.freq / qpos + self.agg.A[:, :, 1] / (t * self.b_denom)
        cneg = -self.freq / qneg + self.agg.A[:, :, 0] / (t * self.b_denom)
        rows = []
        for x in range(self.hclass.num_contexts):
            for a in (-1, 1):
                g = group_index(a)
                rows.append(CscRow(x, a, float(cneg[x, g]), float(cpos[x, g])))
        inst = CscInstance(rows)
        spread = inst.cost_spread()
        nu_call = (
            self.lam_t / (4.0 * spread) if spread > 0 else self.sched.nu
        )
        cfg = FairCscConfig(
            gamma=self.gamma_hat, nu=min(nu_call, 0.49 * self.gamma_hat)
        )
        result = fair_csc_oracle_detailed(
            inst, self.constraint_data, self.hclass, cfg, gap_vec=self.gap_vec
        )
        self.oracle_calls += result.oracle_calls
        return result.policy

    def potential(self, qpos, qneg, int_b) -> float:
        """Phi(Q): smoothed relative entropy to uniform plus the bonus mass."""
        re = (
            0.5 * np.log(0.5 / qpos) + qpos - 0.5
            + 0.5 * np.log(0.5 / qneg) + qneg - 0.5
        )
        return float((self.freq * re).sum()) / (1.0 - 2.0 * self.mu) + int_b / 4.0

    def solve(self, warm_start: QWeights | None = None) -> QWeights:
        mu = self.mu
        sched = self.sched
        K = self.hclass.num_contexts
        # atom state: canonical key -> [policy, weight, pos_table, bonus]
        atoms: dict = {}
        qmix = np.zeros((K, 2))
        mass = 0.0
        int_b = 0.0
        if warm_start is not None:
            for pi, w in warm_start.atoms:
                if w <= 0:
                    continue
                key = pi.canonical_key()
                b = self.bonus(pi)  # bonuses are stale across rounds: recompute
                atoms[key] = [pi, w, pi.positive_table(), b]
                qmix += w * atoms[key][2]
                mass += w
                int_b += w * b
        cap = math.ceil(16.0 * (4.0 / mu**2) * math.log(1.0 / mu)) + 8
        iterations = 0
        drops: list[float] = []
        just_rescaled = False
        while True:
            iterations += 1
            if iterations > cap:
                raise CoordinateDescentError(
                    f"coordinate descent exceeded {cap} iterations "
                    f"(t={self.agg.t}, mu={mu!r}, mass={mass!r}, "
                    f"atoms={len(atoms)}, int_b={int_b!r})"
                )
            integral = 4.0 * mass + int_b
            if integral > 4.0 + _EPS:
                assert not just_rescaled, "two rescale steps in a row"
                c = 4.0 / integral
                if sched.debug_checks:
                    before = self.potential(
                        *self._tables(qmix, mass), int_b
                    )
                for state in atoms.values():
                    state[1] *= c
                qmix *= c
                mass *= c
                int_b *= c
                if sched.debug_checks:
                    after = self.potential(*self._tables(qmix, mass), int_b)
                    assert after <= before + 1e-9, "rescale raised the potential"
                just_rescaled = True
                continue
            qpos, qneg = self._tables(qmix, mass)
            pi = self.amo(qpos, qneg)
            b_pi = self.bonus(pi)
            ppos = pi.positive_table()
            V = float((self.freq * (ppos / qpos + (1.0 - ppos) / qneg)).sum())
            S = float(
                (self.freq * (ppos / qpos**2 + (1.0 - ppos) / qneg**2)).sum()
            )
            D = V - (4.0 + b_pi)
            if D <= 0:
                break
            alpha = (V + D) / (2.0 * (1.0 - 2.0 * mu) * S)
            gap = _mix(np.asarray(self.gap_vec), pi)
            assert abs(gap) <= self.gamma_hat + 1e-9, (
                "unfair atom reached the weight update"
            )
            if sched.debug_checks:
                before = self.potential(qpos, qneg, int_b)
            key = pi.canonical_key()
            state = atoms.get(key)
            if state is None:
                state = [pi, 0.0, ppos, b_pi]
                atoms[key] = state
            state[1] += alpha
            qmix += alpha * state[2]
            mass += alpha
            int_b += alpha * state[3]
            just_rescaled = False
            if sched.debug_checks:
                after = self.potential(*self._tables(qmix, mass), int_b)
                drops.append(before - after)
                # guaranteed decrease mu/(4(1-2mu)) per update: the decrease
                # is at least alpha/2, and alpha >= mu/(2(1-2mu)) via
                # S <= V/mu.  (This mu-scaled constant, not a mu-free one, is
                # also what the documented O(ln(1/mu)/mu^2) iteration cap
                # presumes.)
                assert before - after >= mu / (4.0 * (1.0 - 2.0 * mu)) - 1e-9, (
                    "weight update decreased the potential too little"
                )
        out = QWeights(
            [(s[0], s[1]) for s in atoms.values() if s[1] > 0], anchor=self.pi0
        )
        out.iterations = iterations
        out.oracle_calls = self.oracle_calls
        out.potential_drops = drops
        return out

    def _tables(self, qmix, mass):
        qpos = self.mu + (1.0 - 2.0 * self.mu) * qmix
        qneg = self.mu + (1.0 - 2.0 * self.mu) * (mass - qmix)
        return qpos, qneg


def coordinate_descent(
    h: History,
    constraint_data: Dataset,
    hclass: HypothesisClass,
    schedule: Schedule,
    mu_t: float,
    warm_start: QWeights | None = None,
    pi0: MixturePolicy | None = None,
    gamma_hat: float | None = None,
    gap_vec=None,
) -> QWeights:
    """Solve the per-round feasibility program from a raw history.

    With an empty history the program is trivial: all mass on the anchor.
    ``gamma_hat`` defaults to schedule.gamma + beta(constraint_data).
    """
    if not 0 < mu_t < 0.5:
        raise ValueError(f"mu_t must be in (0, 0.5), got {mu_t!r}")
    if gamma_hat is None:
        beta = concentration_radius(constraint_data, len(hclass), schedule.delta)
        gamma_hat = schedule.gamma + beta
    if gap_vec is None:
        gap_vec = hypothesis_gap_vector(
            hclass, constraint_data, RateFunctional.FALSE_POSITIVE
        )
    agg = _Aggregates.from_history(h, hclass.num_contexts)
    if pi0 is None:
        pi0 = _solve_anchor(agg, constraint_data, hclass, schedule, gamma_hat, gap_vec)
    if agg.t == 0:
        return QWeights([], anchor=pi0)
    engine = _CdEngine(
        agg, constraint_data, hclass, schedule, mu_t, gamma_hat, gap_vec, pi0
    )
    return engine.solve(warm_start)


def _solve_anchor(agg, constraint_data, hclass, schedule, gamma_hat, gap_vec):
    """pi_0: the FairCSC minimizer of the aggregated IPS objective."""
    rows = []
    if agg.t > 0:
        for x in range(hclass.num_contexts):
            for a in (-1, 1):
                g = group_index(a)
                rows.append(
                    CscRow(
                        x, a,
                        float(agg.A[x, g, 0] / agg.t),
                        float(agg.A[x, g, 1] / agg.t),
                    )
                )
    inst = CscInstance(rows)
    spread = inst.cost_spread()
    nu = schedule.nu / (4.0 * spread) if spread > 0 else schedule.nu
    cfg = FairCscConfig(gamma=gamma_hat, nu=min(nu, 0.49 * gamma_hat))
    return fair_csc_oracle_detailed(
        inst, constraint_data, hclass, cfg, gap_vec=gap_vec
    ).policy


# ---------------------------------------------------------------------------
# The full two-phase run
# ---------------------------------------------------------------------------

def run(
    d: TabularDistribution,
    hclass: HypothesisClass,
    schedule: Schedule,
    rng: np.random.Generator,
    on_round=None,
):
    """Simulate one full run; returns (trajectory, history, exploration_data).

    ``trajectory`` lists (round, deployed MixturePolicy) for every round; the
    deployed object in phase 2 is the full smoothed mixture, which is what
    fairness audits measure.  ``on_round`` is an optional callback receiving
    a dict of per-round diagnostics (trace plumbing).
    """
    K = d.num_contexts
    plus_pm = MixturePolicy.point_mass(hclass, hclass.plus_index)
    trajectory = []
    history = History()
    agg = _Aggregates(K)

    # phase 1: deploy +1, observe every label
    contexts, groups, labels = d.sample_n(rng, schedule.T0)
    exploration_data = Dataset.from_arrays(contexts, groups, labels, K)
    for r in range(1, schedule.T0 + 1):
        trajectory.append((r, plus_pm))
        if on_round is not None:
            loss = apple_to_bandit_loss(1, int(labels[r - 1]))
            on_round(
                dict(round=r, phase=1, mu_t=0.0, num_Q_atoms=0,
                     cd_iterations=0, oracle_calls=0, action=1,
                     propensity=1.0, bandit_loss=loss)
            )
    if schedule.fold_exploration:
        for r in range(1, schedule.T0 + 1):
            x, a, y = int(contexts[r - 1]), int(groups[r - 1]), int(labels[r - 1])
            loss = apple_to_bandit_loss(1, y)
            agg.add(x, a, 1, loss, 1.0)
            history.append(RoundRecord(r, x, a, 1, 1.0, loss, y))

    beta = concentration_radius(exploration_data, len(hclass), schedule.delta)
    gamma_hat = schedule.gamma + beta
    gap_vec = hypothesis_gap_vector(
        hclass, exploration_data, RateFunctional.FALSE_POSITIVE
    )

    q: QWeights | None = None
    mu_used = 0.0
    deployed: MixturePolicy | None = None
    prev_q: QWeights | None = None
    for tp in range(1, schedule.T - schedule.T0 + 1):
        r = schedule.T0 + tp
        solve = (
            schedule.epoch_mode == "every_round"
            or tp == 1
            or (tp & (tp - 1)) == 0  # powers of two
        )
        if solve:
            mu_used = mu_schedule(tp, schedule, len(hclass))
            pi0 = _solve_anchor(
                agg, exploration_data, hclass, schedule, gamma_hat, gap_vec
            )
            if agg.t == 0:
                q = QWeights([], anchor=pi0)
            else:
                engine = _CdEngine(
                    agg, exploration_data, hclass, schedule, mu_used,
                    gamma_hat, gap_vec, pi0,
                )
                q = engine.solve(prev_q if schedule.warm_start else None)
            prev_q = q
            deployed = q.deployed_mixture(mu_used)
        example = d.sample(rng)
        h_idx = policy_sample(deployed, rng)
        action = int(
            hclass.prediction_matrix[h_idx, example.context,
                                     group_index(example.group)]
        )
        propensity = deployed.prob_action(example.context, example.group, action)
        label = example.label if action == 1 else None
        loss = apple_to_bandit_loss(action, label)
        record = RoundRecord(
            round=r, context=example.context, group=example.group,
            action=action, propensity=propensity,
            observed_bandit_loss=loss, raw_label_observed=label,
        )
        history.append(record)
        agg.add(example.context, example.group, action, loss, propensity)
        trajectory.append((r, deployed))
        if on_round is not None:
            on_round(
                dict(round=r, phase=2, mu_t=mu_used,
                     num_Q_atoms=len(q.atoms),
                     cd_iterations=q.iterations if solve else 0,
                     oracle_calls=q.oracle_calls if solve else 0,
                     action=action, propensity=propensity, bandit_loss=loss)
            )
    return trajectory, history, exploration_data
