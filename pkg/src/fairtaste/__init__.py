"""Online fair classification under apple-tasting (partial) feedback.

A tabular simulator for the oracle-efficient two-phase learner that deploys,
at every round, a mixture of classifiers certified to approximately equalize
false positive rates across two protected groups, while keeping sublinear
regret to the best fair policy.  Everything is exact on the tabular domain,
so fairness and regret can be audited against the true distribution.
"""

from .core import (
    Dataset,
    Example,
    Hypothesis,
    HypothesisClass,
    MixturePolicy,
    RateFunctional,
    TabularDistribution,
    constant_hypothesis,
    group_identity_hypothesis,
    instance_from_text,
    instance_to_text,
    load_instance,
    policy_sample,
    predict,
    save_instance,
)
from .metrics import (
    audit_fairness,
    cumulative_regret,
    delta_rate,
    empirical_delta_rate,
    empirical_rate,
    rate,
    true_policy_loss,
    write_audit_csv,
)
from .csc import CscInstance, CscRow, WeightedInstance, WeightedRow, exact_csc
from .fair_csc import (
    DualVector,
    FairCscConfig,
    SaddleResult,
    concentration_radius,
    fair_csc_oracle,
    saddle_point,
    shrink_support,
)
from .bandit import (
    History,
    QWeights,
    RoundRecord,
    Schedule,
    apple_to_bandit_loss,
    approx_best_policy,
    coordinate_descent,
    ips_loss,
    make_schedule,
    mu_schedule,
    regret_and_bonus,
    run,
    smoothed_prob,
    variance_stats,
)
from .instances import (
    LowerBoundPair,
    brute_force_best_fair,
    explore_then_exploit,
    kl_divergence,
    lowerbound_pair,
    random_tabular,
)
from .cli import (
    ExperimentConfig,
    build_instance,
    main,
    parse_config_file,
    regret_slope,
    run_experiment,
)

__version__ = "0.1.0"
