//! Numerical dynamic programming for Markov decision problems whose
//! rewards may be unbounded.
//!
//! The approach: scale value functions by a positive weight so the scaled
//! problem is bounded, and iterate the scaled Bellman operator. Instead of
//! the classical scalar contraction modulus, contraction is governed by a
//! nonnegative coefficient matrix indexed by the exogenous Markov states;
//! the iteration converges exactly when that matrix has spectral radius
//! below 1, a strictly weaker requirement than the usual uniform row-sum
//! condition. The [`spectral`] module certifies radii with two-sided
//! bounds, [`vmetric`] implements the componentwise weighted distances,
//! [`mdp`] hosts the abstract model and the solver with a certified
//! a-posteriori stopping rule, and [`savings`] instantiates everything for
//! an optimal savings problem with unbounded utility.

// `!(x > 0.0)` is used to reject NaN along with nonpositive values; the
// un-negated form would silently accept NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod mdp;
pub mod savings;
pub mod spectral;
pub mod vmetric;

pub use error::{Error, Result};
pub use mdp::{
    bellman_apply, build_b, compute_tilde_beta, extract_policy, perov_solve, scaled_bellman_apply,
    verify_blackwell, verify_perov_inequality, AdditiveMdp, ClampCounter, PerovSolution, Policy,
    SolveReport, ValueFunction,
};
pub use savings::{
    build_savings_mdp, choose_weight_offset, classify_problem, crra_zero_income_oracle,
    crra_zero_income_oracle_with_shares, plan_value_vt, Classification, SavingsParams, Utility,
};
pub use spectral::{
    check_uniform_condition, neumann_apply, operator_sup_norm, spectral_radius, MarkovChain,
    NonnegativeMatrix, SpectralCertificate, SpectralVerdict,
};
pub use vmetric::{sup_collapse, vector_distance, weighted_norm, VectorDistance, WeightFunction};
