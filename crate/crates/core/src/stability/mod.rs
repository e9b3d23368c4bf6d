//! Linearized stability analysis of SGD, SAM and mSAM around a minimum at the
//! origin.
//!
//! An ensemble holds per-example Hessians `H_i`. A minibatch `S` split into
//! shards `S_j` induces the one-step matrix `J_S` of `w <- (I − eta J_S) w`:
//! `H_S` for SGD, `H_S + rho H_S²` for SAM (unnormalized ascent), and
//! `H_S + rho H_S² + (rho/m) Σ_j (H_{S_j} − H_S)²` for mSAM. The moments
//! `J* = E[J_S]` and `Σ = E[(J_S − J*)²]` drive the second-moment dynamics
//! `E[(I − eta J_S)²] = (I − eta J*)² + eta² Σ`, whose stability this module
//! classifies.

mod classify;
mod dynamics;
mod ensemble;
mod moments;
mod ordering;
mod record;

pub use classify::{
    classify_matrices, classify_stability, common_beta, estimate_beta, stability_alpha, BetaFit, StabilityReport,
    Verdict, EDGE_TOL,
};
pub use dynamics::{
    expected_sq_norms, simulate_dynamics, DynamicsOutcome, Trajectory, DECAY_FACTOR, DIVERGENCE_FACTOR,
};
pub use ensemble::{
    binomial, combinations, equal_partition_count, equal_partitions, sample_ensemble, EnsembleKind, HessianEnsemble,
    ENSEMBLE_TOL,
};
pub use moments::{
    compute_moments, j_minibatch, minibatch_matrices, MomentSet, MomentStdError, SamplingMode, SamplingScheme,
    ENUMERATION_BUDGET,
};
pub use ordering::{edge_scales, log_grid, ordering_check, ordering_from_moments, EdgeReport, OrderingReport, PSD_TOL};
pub use record::{matrix_from_rows, matrix_rows, verify_document, MomentRecord, PerMethod, StabilityDocument};
