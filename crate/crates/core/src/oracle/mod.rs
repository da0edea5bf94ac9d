//! Conditional and expectation-level oracles on finite distributions.

mod expectation;
pub mod montecarlo;
mod pointwise;

pub use expectation::{
    check_bound_conditional, check_bound_expectation, check_bound_expectation_grid, class_errors,
    expected_best_numeric, generalization_error, minimizability_gap, theorem_losses, ClassErrors, ConditionalReport,
    ExpectationReport, HypothesisGrid, Infimum, BOUND_SLACK,
};
pub use pointwise::{
    best_conditional_error_surrogate, best_conditional_error_topk, cardinality_regret_by_enumeration,
    conditional_error, conditional_regret, enumerate_best_topk, minimize, topk_regret_by_ranks, NumericOptimum,
    OptimizerConfig, PointLoss, SCORE_BOX,
};
