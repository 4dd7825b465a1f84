"""Off-policy evaluation for finite MDPs with linear function approximation."""

from .errors import (
    AbsoluteContinuity,
    ContractionHypothesisFailed,
    DivergentSeries,
    InvalidInput,
    OpeLabError,
    PerturbationTooLarge,
    SingularCovariance,
    SingularSigma,
    StationaryAmbiguous,
)
from .mdp import (
    ExactValueTables,
    InitialDistribution,
    Policy,
    RewardNoise,
    TabularMdp,
    TransitionDataset,
    ValidationReport,
    Violation,
    concat_datasets,
    discounted_exact_value,
    empirical_mdp,
    exact_policy_value,
    exact_q_functions,
    load_initial_distribution,
    load_mdp,
    load_policy,
    sample_episodes,
    save_json,
    state_action_occupancies,
    state_occupancies,
    transition_matrix,
    validate_mdp,
    validate_initial_distribution,
    validate_policy,
)
from .features import (
    ClosureResidual,
    FeatureMap,
    PolicyFeatures,
    build_tabular_features,
    closure_residual,
    initial_feature_vector,
    load_features,
    policy_average_features,
    save_features,
)
from .estimators import (
    DiscountedValue,
    FittedEmbedding,
    LinearOPE,
    ValueEstimate,
    cme_value,
    discounted_value,
    dualdice_value,
    fit_embeddings,
    fqi_regression_value,
    mis_weights,
)
from .uncertainty import (
    ConfidenceReport,
    OmegaEstimate,
    confidence_bound,
    default_omega,
    discounted_confidence_bound,
)
from .diagnostics import (
    BoundBreakdown,
    ContractionReport,
    MismatchTerms,
    OccupancyKind,
    OccupancyMeasure,
    PopulationProfile,
    behavior_average_occupancy,
    contraction_check,
    feature_expectations,
    marginal_occupancy,
    mismatch_terms,
    pearson_chi_square,
    population_profile,
    restricted_chi_square,
    stationary_distribution,
    target_weighted_occupancy,
    theoretical_bound_rhs,
)
from .hard_instances import (
    HardInstance,
    LikelihoodRatio,
    PerturbationSpec,
    likelihood_ratio,
    min_next_state_mass,
    optimal_perturbation_direction,
    perturb_instance,
    perturbation_delta,
    perturbation_spec,
    two_state_instance,
    value_level_sets,
)
from .instances import (
    Instance,
    build_builtin,
    four_state_instance,
    hard_four_state_instance,
    random_features,
    random_instance,
    random_mdp,
    random_policy,
    two_state_as_instance,
)

__version__ = "0.1.0"
