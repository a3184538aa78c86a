//! Variable importance for correlated features.
//!
//! This crate measures how much each feature contributes to a fitted
//! regression model, with particular care for what happens when features
//! are correlated. It provides three importance measures:
//!
//! * coefficient importance for linear models ([`importance::ols_importance`]),
//! * marginal permutation importance ([`importance::permutation_importance`]),
//! * conditional predictive impact via Gaussian knockoffs ([`importance::cpi`]).
//!
//! Knockoff-based measures stop distinguishing a feature from its correlated
//! partner once the pairwise correlation passes 0.5: the self-correlation of
//! an equicorrelated knockoff is exactly `max(0, 2*rho - 1)`
//! ([`knockoffs::theoretical_self_corr`]). The [`harness`] module runs a
//! scenario-by-correlation simulation grid that makes this visible in
//! importance scores and rankings, and the `vi-sim` binary exposes it on the
//! command line.
//!
//! ```
//! use vi_sim::datagen::{generate_dataset, Scenario, ScenarioSpec};
//! use vi_sim::importance::ols_importance;
//! use vi_sim::models::fit_ols;
//! use vi_sim::rng::RngStream;
//!
//! let spec = ScenarioSpec::new(Scenario::S1, 0.0);
//! let data = generate_dataset(&spec, 500, &RngStream::from_seed(7)).unwrap();
//! let model = fit_ols(&data.x, &data.y).unwrap();
//! let report = ols_importance(&model, &data.feature_names, false).unwrap();
//! assert_eq!(report.features.len(), 10);
//! ```

pub mod cli;
pub mod datagen;
pub mod harness;
pub mod importance;
pub mod knockoffs;
pub mod models;
pub mod numerics;
pub mod rng;
pub mod stats;

#[cfg(doctest)]
mod book;
