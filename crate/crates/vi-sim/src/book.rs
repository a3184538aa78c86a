//! Runs every Rust snippet in the guide as a doc-test, so the book and the
//! API can never drift apart.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/getting-started.md")]
mod getting_started {}

#[doc = include_str!("../../../book/src/importance-measures.md")]
mod importance_measures {}

#[doc = include_str!("../../../book/src/gaussian-knockoffs.md")]
mod gaussian_knockoffs {}

#[doc = include_str!("../../../book/src/correlation-threshold.md")]
mod correlation_threshold {}

#[doc = include_str!("../../../book/src/simulation-harness.md")]
mod simulation_harness {}

#[doc = include_str!("../../../book/src/cli-reference.md")]
mod cli_reference {}
