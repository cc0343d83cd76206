//! Complementarity analytics over paired human and AI judgments.

pub mod bias;
pub mod complementarity;
pub mod delegation;
pub mod overreliance;
pub mod stats;

pub use bias::{option_one_bias, PositionalBias};
pub use complementarity::{
    agreement_quadrants, oracle_bound, outcomes, select_low_confidence_subset, OracleReport, OracleRow, Outcome,
    QuadrantCounts, SubsetCandidate, SubsetFractions,
};
pub use delegation::{delegation_stats, load_decompositions, DelegationRecord, DelegationReport, Subtask};
pub use overreliance::{overreliance_report, HumanObservation, OverrelianceReport, ResamplingOptions};
pub use stats::{accuracy, bootstrap_ci, bootstrap_diff_ci, permutation_test, two_proportion_ztest, ZTest};
