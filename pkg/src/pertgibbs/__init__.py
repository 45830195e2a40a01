"""Exact and Monte Carlo tools for perturbed Gibbs samplers on finite factor graphs."""
from .errors import (
    BudgetExceededError,
    ConditioningError,
    ConvergenceError,
    DimensionError,
    DomainError,
    PertGibbsError,
    ReferenceMeasureError,
    StructureError,
    SubsampleError,
)
from .measures import (
    HELLINGER,
    TV,
    ConfigurationSpace,
    DenseDistribution,
    LabelIndex,
    Metric,
    StochasticKernel,
    conditional_marginal,
    hellinger_distance,
    kernel_distance,
    l2_distance,
    l2_perturbation_bound,
    marginal,
    mixing_time,
    stationary_distribution,
    subadditivity_gap,
    tv_distance,
    worst_pair_tv_bound,
)
from .factor_graph import (
    Factor,
    FactorGraph,
    FactorizationStructure,
    dependency_sets,
    gibbs_measure,
    graph_ball,
    validate_factorization,
)
from .gibbs import gibbs_kernel, gibbs_step, restricted_kernel
from .coupling import coupling_tail, decay_estimate, greedy_coupled_step
from .pseudo_marginal import (
    AugmentedState,
    LikelihoodFactor,
    ObservationSet,
    alternating_kernel,
    alternating_step,
    estimate_log_likelihood,
    exact_targets,
    perturbation_sup,
)

__version__ = "0.1.0"
