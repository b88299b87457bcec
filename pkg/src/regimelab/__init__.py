"""Numerical laboratory for regime-switching diffusions under
perturbation of the switching chain's generator.

Simulates exactly-coupled chain and diffusion pairs, evaluates the
spectral stability bounds, and estimates transport distances between the
perturbed and unperturbed laws.
"""

from . import bounds, errors, girsanov, metrics, models, ratematrix, rng, sde, skorokhod
from .bounds import (
    BoundReport,
    bounded_time_factor,
    optimize_parameters,
    psi,
    theorem1_bound,
    theorem1_bound_bounded,
    theorem2_bound,
)
from .girsanov import (
    ReferenceModel,
    SingularLogDrift,
    check_reference,
    novikov_check,
    ou_reference,
    rn_weight,
    simulate_reference,
    singular_drift,
    theorem3_decay_experiment,
    wbl_upper_estimate,
    weighted_pair_batch,
)
from .metrics import (
    DictionaryEntry,
    DistanceEstimate,
    default_dictionary,
    jackknife_se_mean,
    w2_coupled_upper,
    w2_exact_1d,
    wbl_dictionary_lower,
)
from .models import make_model
from .ratematrix import (
    RateMatrix,
    block_split,
    c1_estimate,
    c2_estimate,
    embed_reduced,
    eta,
    feynman_kac,
    invariant_measure,
    l1_distance,
    l1_norm,
    spectral_gap,
    spectral_summary,
    tilt,
    transition_matrix,
    validate,
)
from .sde import (
    SwitchingCoefficients,
    TrajectoryPair,
    fit_loglog_slope,
    lemma1_bound,
    second_moment_guard,
    simulate_pair,
    simulate_pair_batch,
    spot_check_hypotheses,
    strong_error_curve,
)
from .skorokhod import (
    CoupledChainBatch,
    CoupledChainPath,
    IntervalPartition,
    PoissonClock,
    build_partition,
    coupling_generator,
    default_clock_rate,
    expected_mismatch_integral_exact,
    mark_target,
    mismatch_occupation,
    mismatch_probability_exact,
    required_clock_rate,
    simulate_clock,
    simulate_coupled,
    simulate_coupled_batch,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "CoupledChainBatch",
    "CoupledChainPath",
    "DictionaryEntry",
    "DistanceEstimate",
    "IntervalPartition",
    "PoissonClock",
    "RateMatrix",
    "ReferenceModel",
    "SingularLogDrift",
    "SwitchingCoefficients",
    "TrajectoryPair",
    "block_split",
    "bounded_time_factor",
    "bounds",
    "build_partition",
    "c1_estimate",
    "c2_estimate",
    "check_reference",
    "coupling_generator",
    "default_clock_rate",
    "default_dictionary",
    "embed_reduced",
    "errors",
    "eta",
    "expected_mismatch_integral_exact",
    "feynman_kac",
    "fit_loglog_slope",
    "girsanov",
    "invariant_measure",
    "jackknife_se_mean",
    "l1_distance",
    "l1_norm",
    "lemma1_bound",
    "make_model",
    "mark_target",
    "metrics",
    "mismatch_occupation",
    "mismatch_probability_exact",
    "models",
    "novikov_check",
    "optimize_parameters",
    "ou_reference",
    "psi",
    "ratematrix",
    "required_clock_rate",
    "rn_weight",
    "rng",
    "sde",
    "second_moment_guard",
    "simulate_clock",
    "simulate_coupled",
    "simulate_coupled_batch",
    "simulate_pair",
    "simulate_pair_batch",
    "simulate_reference",
    "singular_drift",
    "skorokhod",
    "spectral_gap",
    "spectral_summary",
    "spot_check_hypotheses",
    "strong_error_curve",
    "theorem1_bound",
    "theorem1_bound_bounded",
    "theorem2_bound",
    "theorem3_decay_experiment",
    "tilt",
    "transition_matrix",
    "validate",
    "w2_coupled_upper",
    "w2_exact_1d",
    "wbl_dictionary_lower",
    "wbl_upper_estimate",
    "weighted_pair_batch",
]
