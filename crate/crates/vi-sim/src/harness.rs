//! Simulation harness.
//!
//! Runs a factorial sweep over scenarios, feature correlations, and
//! importance methods, many replicates per cell, and aggregates the results.
//! Every replicate derives its randomness from the master seed through
//! labeled substreams, so results are byte-identical across runs and across
//! thread counts, and each (scenario, correlation, replicate) cell shares
//! one dataset across methods.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::datagen::{generate_dataset, Dataset, Scenario, ScenarioSpec};
use crate::importance::{cpi, ols_importance, permutation_importance, Evaluation, ImportanceReport};
use crate::knockoffs::{
    estimate_gaussian, grouped_equi_s, knockoff_params, knockoff_params_with_s, sample_knockoffs,
    theoretical_self_corr, GaussianModel, KnockoffError, DEFAULT_GROUP_THRESHOLD,
};
use crate::models::{fit_forest, fit_ols, ForestConfig};
use crate::numerics::{Matrix, SymMatrix};
use crate::rng::RngStream;
use crate::stats::pearson;

/// Significance level behind every rejection rate in summaries.
pub const REJECTION_ALPHA: f64 = 0.05;

/// Substream label reserved for dataset generation within a replicate.
const SUB_DATA: u64 = 0;
/// Labels within one method's stream.
const SUB_MODEL: u64 = 0;
const SUB_MEASURE: u64 = 1;
const SUB_SPLIT: u64 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown method '{0}': expected lm, perm-rf, cpi-lm, cpi-rf")]
    UnknownMethod(String),
    #[error(transparent)]
    Knockoff(#[from] KnockoffError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One importance pipeline.
///
/// * `Lm`: regression coefficients on the full data.
/// * `PermRf`: shuffle-based importance from a forest, scored out of bag.
/// * `CpiLm`: knockoff swaps against a regression, scored on a holdout
///   split.
/// * `CpiRf`: knockoff swaps against a forest, scored out of bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Lm,
    PermRf,
    CpiLm,
    CpiRf,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::Lm,
        MethodKind::PermRf,
        MethodKind::CpiLm,
        MethodKind::CpiRf,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Lm => "lm",
            MethodKind::PermRf => "perm-rf",
            MethodKind::CpiLm => "cpi-lm",
            MethodKind::CpiRf => "cpi-rf",
        }
    }

    /// Fixed per-method stream label, independent of which methods a run
    /// requests, so adding a method never changes another method's draws.
    fn stream_label(self) -> u64 {
        match self {
            MethodKind::Lm => 1,
            MethodKind::PermRf => 2,
            MethodKind::CpiLm => 3,
            MethodKind::CpiRf => 4,
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MethodKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| HarnessError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    pub rho_grid: Vec<f64>,
    pub n: usize,
    pub replicates: usize,
    pub methods: Vec<MethodKind>,
    pub master_seed: u64,
    pub forest: ForestConfig,
    /// Fraction of rows used for training when a method needs a holdout
    /// split; the rest score the loss contrasts.
    pub split_fraction: f64,
    /// Shuffles per feature for permutation importance.
    pub n_perms: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.scenarios.is_empty() {
            return fail("no scenarios requested".into());
        }
        if self.methods.is_empty() {
            return fail("no methods requested".into());
        }
        if self.rho_grid.is_empty() {
            return fail("correlation grid is empty".into());
        }
        for &rho in &self.rho_grid {
            if !rho.is_finite() || !(0.0..1.0).contains(&rho) {
                return fail(format!("correlation {rho} outside [0, 1)"));
            }
        }
        let mut sorted = self.rho_grid.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return fail("correlation grid has duplicate values".into());
        }
        if self.n < 30 {
            return fail(format!("need at least 30 rows per dataset, got {}", self.n));
        }
        if self.replicates == 0 {
            return fail("need at least one replicate".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return fail(format!(
                "split fraction {} outside (0, 1)",
                self.split_fraction
            ));
        }
        if self.n_perms == 0 {
            return fail("need at least one shuffle per feature".into());
        }
        Ok(())
    }
}

/// One feature's result in one replicate, or one failed replicate.
///
/// Success rows carry a feature name and all measure fields the method
/// supports; a failed replicate collapses to a single row with only `error`
/// set.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: Scenario,
    pub rho: f64,
    /// 1-based replicate number.
    pub replicate: usize,
    pub method: MethodKind,
    pub feature: String,
    /// Position of the feature in the dataset, for ordering; `usize::MAX`
    /// on failure rows.
    pub feature_index: usize,
    pub importance: Option<f64>,
    pub std_err: Option<f64>,
    pub p_value: Option<f64>,
    pub rank: Option<f64>,
    pub error: Option<String>,
}

/// Per-cell aggregate over successful replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub rho: f64,
    pub method: MethodKind,
    pub feature: String,
    pub mean_importance: f64,
    pub mean_rank: f64,
    /// Share of replicates with `p <` [`REJECTION_ALPHA`]; absent for
    /// methods without p-values.
    pub rejection_rate: Option<f64>,
    pub n_reps: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

fn report_to_rows(
    scenario: Scenario,
    rho: f64,
    replicate: usize,
    method: MethodKind,
    report: &ImportanceReport,
) -> Vec<ResultRow> {
    report
        .features
        .iter()
        .enumerate()
        .map(|(idx, f)| ResultRow {
            scenario,
            rho,
            replicate,
            method,
            feature: f.name.clone(),
            feature_index: idx,
            importance: Some(f.importance),
            std_err: f.std_err,
            p_value: f.p_value,
            rank: Some(f.rank),
            error: None,
        })
        .collect()
}

fn failure_row(
    scenario: Scenario,
    rho: f64,
    replicate: usize,
    method: MethodKind,
    error: String,
) -> ResultRow {
    ResultRow {
        scenario,
        rho,
        replicate,
        method,
        feature: String::new(),
        feature_index: usize::MAX,
        importance: None,
        std_err: None,
        p_value: None,
        rank: None,
        error: Some(error),
    }
}

fn knockoff_params_for(x: &Matrix) -> Result<crate::knockoffs::KnockoffParams, KnockoffError> {
    let gauss = estimate_gaussian(x)?;
    let s = grouped_equi_s(&gauss.cov, DEFAULT_GROUP_THRESHOLD)?;
    knockoff_params_with_s(&gauss, &s)
}

fn run_method(
    data: &Dataset,
    method: MethodKind,
    config: &ExperimentConfig,
    stream: &RngStream,
) -> Result<ImportanceReport, String> {
    let names = &data.feature_names;
    match method {
        MethodKind::Lm => {
            let model = fit_ols(&data.x, &data.y).map_err(|e| e.to_string())?;
            ols_importance(&model, names, false).map_err(|e| e.to_string())
        }
        MethodKind::PermRf => {
            let forest = fit_forest(&data.x, &data.y, &config.forest, &stream.substream(SUB_MODEL))
                .map_err(|e| e.to_string())?;
            let eval = Evaluation::out_of_bag(&forest, &data.x, &data.y);
            permutation_importance(&eval, names, config.n_perms, &stream.substream(SUB_MEASURE))
                .map_err(|e| e.to_string())
        }
        MethodKind::CpiLm => {
            let n = data.n_rows();
            let n_train = ((n as f64) * config.split_fraction).floor() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream.substream(SUB_SPLIT).rng());
            let mut train_rows = order[..n_train].to_vec();
            let mut test_rows = order[n_train..].to_vec();
            train_rows.sort_unstable();
            test_rows.sort_unstable();
            let train = data.subset(&train_rows);
            let test = data.subset(&test_rows);

            let model = fit_ols(&train.x, &train.y).map_err(|e| e.to_string())?;
            let params = knockoff_params_for(&train.x).map_err(|e| e.to_string())?;
            let eval = Evaluation::holdout(&model, &test.x, &test.y);
            cpi(&eval, &params, names, &stream.substream(SUB_MEASURE)).map_err(|e| e.to_string())
        }
        MethodKind::CpiRf => {
            let forest = fit_forest(&data.x, &data.y, &config.forest, &stream.substream(SUB_MODEL))
                .map_err(|e| e.to_string())?;
            let params = knockoff_params_for(&data.x).map_err(|e| e.to_string())?;
            let eval = Evaluation::out_of_bag(&forest, &data.x, &data.y);
            cpi(&eval, &params, names, &stream.substream(SUB_MEASURE)).map_err(|e| e.to_string())
        }
    }
}

/// Runs every requested method on one (scenario, correlation, replicate)
/// cell. All methods see the same dataset; failures become tagged rows
/// instead of aborting the sweep.
fn run_replicate(
    config: &ExperimentConfig,
    scenario: Scenario,
    rho_idx: usize,
    replicate_idx: usize,
) -> Vec<ResultRow> {
    let rho = config.rho_grid[rho_idx];
    let replicate = replicate_idx + 1;
    let cell = RngStream::from_seed(config.master_seed)
        .substream(scenario.id() as u64)
        .substream(rho_idx as u64)
        .substream(replicate_idx as u64);

    let spec = ScenarioSpec::new(scenario, rho);
    let data = match generate_dataset(&spec, config.n, &cell.substream(SUB_DATA)) {
        Ok(d) => d,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| failure_row(scenario, rho, replicate, m, e.to_string()))
                .collect();
        }
    };

    let mut rows = Vec::new();
    for &method in &config.methods {
        let stream = cell.substream(method.stream_label());
        match run_method(&data, method, config, &stream) {
            Ok(report) => rows.extend(report_to_rows(scenario, rho, replicate, method, &report)),
            Err(e) => rows.push(failure_row(scenario, rho, replicate, method, e)),
        }
    }
    rows
}

fn sort_rows(rows: &mut [ResultRow], rho_index: impl Fn(f64) -> usize) {
    rows.sort_by(|a, b| {
        (a.scenario.id(), rho_index(a.rho), a.method.stream_label(), a.feature_index, a.replicate)
            .cmp(&(
                b.scenario.id(),
                rho_index(b.rho),
                b.method.stream_label(),
                b.feature_index,
                b.replicate,
            ))
    });
}

/// Aggregates sorted result rows into one summary row per
/// (scenario, correlation, method, feature), averaging over successful
/// replicates in ascending replicate order.
fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let first = &rows[i];
        let mut j = i;
        while j < rows.len() {
            let r = &rows[j];
            let same = r.scenario == first.scenario
                && r.rho == first.rho
                && r.method == first.method
                && r.feature_index == first.feature_index;
            if !same {
                break;
            }
            j += 1;
        }
        if first.error.is_none() {
            let group = &rows[i..j];
            let n = group.len();
            let mean_importance =
                group.iter().map(|r| r.importance.unwrap()).sum::<f64>() / n as f64;
            let mean_rank = group.iter().map(|r| r.rank.unwrap()).sum::<f64>() / n as f64;
            let rejection_rate = if group.iter().all(|r| r.p_value.is_some()) {
                let hits = group.iter().filter(|r| r.p_value.unwrap() < REJECTION_ALPHA).count();
                Some(hits as f64 / n as f64)
            } else {
                None
            };
            out.push(SummaryRow {
                scenario: first.scenario,
                rho: first.rho,
                method: first.method,
                feature: first.feature.clone(),
                mean_importance,
                mean_rank,
                rejection_rate,
                n_reps: n,
            });
        }
        i = j;
    }
    out
}

/// Runs the full sweep in parallel and returns rows in canonical order plus
/// their per-cell aggregates. Output is independent of thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;

    let mut cells = Vec::new();
    for &scenario in &config.scenarios {
        for rho_idx in 0..config.rho_grid.len() {
            for rep in 0..config.replicates {
                cells.push((scenario, rho_idx, rep));
            }
        }
    }

    let mut rows: Vec<ResultRow> = cells
        .par_iter()
        .map(|&(scenario, rho_idx, rep)| run_replicate(config, scenario, rho_idx, rep))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut grid_sorted: Vec<f64> = config.rho_grid.clone();
    grid_sorted.sort_by(f64::total_cmp);
    let rho_index = move |rho: f64| grid_sorted.partition_point(|&g| g < rho);
    sort_rows(&mut rows, rho_index);

    let summary = summarize(&rows);
    Ok(ExperimentOutput { rows, summary })
}

/// Configuration for the knockoff self-correlation sweep.
#[derive(Debug, Clone)]
pub struct ElbowConfig {
    pub rho_grid: Vec<f64>,
    /// Draws per correlation value.
    pub n: usize,
    pub seed: u64,
    /// Estimate the Gaussian model from the draw instead of using the known
    /// one.
    pub estimate: bool,
}

/// One correlation value's empirical and theoretical knockoff
/// self-correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElbowRow {
    pub rho: f64,
    pub empirical_self_corr: f64,
    pub theoretical_self_corr: f64,
    pub n: usize,
}

/// `n` rows of a standard bivariate normal with correlation `rho`.
pub fn gaussian_pair_sample(
    n: usize,
    rho: f64,
    stream: &RngStream,
) -> Result<Matrix, KnockoffError> {
    if !rho.is_finite() || !(0.0..1.0).contains(&rho) {
        return Err(KnockoffError::InvalidRho(rho));
    }
    let mut rng = stream.rng();
    let comp = (1.0 - rho * rho).sqrt();
    let mut x = Matrix::zeros(n, 2);
    for i in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        x.set(i, 0, z1);
        x.set(i, 1, rho * z1 + comp * z2);
    }
    Ok(x)
}

/// Sweeps the correlation grid, drawing a feature pair and its knockoffs at
/// each value and recording how correlated each knockoff stays with its own
/// feature. The theoretical column is the closed form `max(0, 2 rho - 1)`.
pub fn run_elbow(config: &ElbowConfig) -> Result<Vec<ElbowRow>, HarnessError> {
    if config.rho_grid.is_empty() {
        return Err(HarnessError::InvalidConfig("correlation grid is empty".into()));
    }
    if config.n < 30 {
        return Err(HarnessError::InvalidConfig(format!(
            "need at least 30 draws per correlation, got {}",
            config.n
        )));
    }

    let mut out = Vec::with_capacity(config.rho_grid.len());
    for (idx, &rho) in config.rho_grid.iter().enumerate() {
        let stream = RngStream::from_seed(config.seed).substream(idx as u64);
        let x = gaussian_pair_sample(config.n, rho, &stream.substream(0))?;
        let model = if config.estimate {
            estimate_gaussian(&x)?
        } else {
            GaussianModel {
                mean: vec![0.0, 0.0],
                cov: SymMatrix::from_lower(2, |i, j| if i == j { 1.0 } else { rho }),
            }
        };
        let params = knockoff_params(&model)?;
        let x_tilde = sample_knockoffs(&x, &params, &stream.substream(1))?;
        let empirical = pearson(&x.column(0), &x_tilde.column(0))
            .ok_or(KnockoffError::ZeroVariance { feature: 0 })?;
        out.push(ElbowRow {
            rho,
            empirical_self_corr: empirical,
            theoretical_self_corr: theoretical_self_corr(rho)?,
            n: config.n,
        });
    }
    Ok(out)
}

/// Messages for every grid point whose empirical self-correlation strays
/// more than `tol` from the closed form; empty means the sweep confirms it.
pub fn elbow_violations(rows: &[ElbowRow], tol: f64) -> Vec<String> {
    rows.iter()
        .filter(|r| (r.empirical_self_corr - r.theoretical_self_corr).abs() > tol)
        .map(|r| {
            format!(
                "rho {}: empirical self-correlation {} is more than {} from theoretical {}",
                r.rho, r.empirical_self_corr, tol, r.theoretical_self_corr
            )
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Commas and line breaks inside error text would break the row shape.
fn sanitize_field(s: &str) -> String {
    s.replace(['\n', '\r', ','], ";")
}

pub fn write_results_csv<W: Write>(w: &mut W, rows: &[ResultRow]) -> io::Result<()> {
    writeln!(w, "scenario,rho,replicate,method,feature,importance,std_err,p_value,rank,error")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario.id(),
            r.rho,
            r.replicate,
            r.method,
            sanitize_field(&r.feature),
            fmt_opt(r.importance),
            fmt_opt(r.std_err),
            fmt_opt(r.p_value),
            fmt_opt(r.rank),
            r.error.as_deref().map(sanitize_field).unwrap_or_default(),
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(w: &mut W, rows: &[SummaryRow]) -> io::Result<()> {
    writeln!(w, "scenario,rho,method,feature,mean_importance,mean_rank,rejection_rate,n_reps")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.scenario.id(),
            r.rho,
            r.method,
            sanitize_field(&r.feature),
            r.mean_importance,
            r.mean_rank,
            fmt_opt(r.rejection_rate),
            r.n_reps,
        )?;
    }
    Ok(())
}

pub fn write_elbow_csv<W: Write>(w: &mut W, rows: &[ElbowRow]) -> io::Result<()> {
    writeln!(w, "rho,empirical_self_corr,theoretical_self_corr,n")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.rho, r.empirical_self_corr, r.theoretical_self_corr, r.n
        )?;
    }
    Ok(())
}
