//! Synthetic regression data with a correlated feature pair.
//!
//! Features are uniform on `[0, 1]`. The first two are coupled through a
//! Gaussian copula with latent correlation `rho`; the remaining eight are
//! independent. Four scenarios control the regression coefficients and
//! whether the correlated pair is observed directly or only through its
//! per-row mean.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numerics::Matrix;
use crate::rng::RngStream;
use crate::stats::normal_cdf;

/// Number of raw features before any aggregation.
pub const RAW_FEATURES: usize = 10;

/// Default noise standard deviation: variance 0.1.
pub const DEFAULT_NOISE_SD: f64 = 0.316_227_766_016_837_94;

const SUB_COPULA: u64 = 0;
const SUB_NOISE: u64 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum DataGenError {
    /// The latent correlation must lie in `[0, 1)`.
    #[error("invalid correlation {0}: must lie in [0, 1)")]
    InvalidRho(f64),
}

/// The four simulation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    /// All of `x1..x5` carry unit weight; `x6` is null.
    S1,
    /// Like S1 but `x1` is null: its correlated partner `x2` does the work.
    S2,
    /// Like S1 but only the mean of `x1` and `x2` is observed, and the
    /// target depends on the pair only through that mean.
    S3,
    /// Like S2 but only the mean of `x1` and `x2` is observed. The target
    /// still depends on the raw `x2`, so the observed average is an
    /// imperfect stand-in.
    S4,
}

impl Scenario {
    pub fn id(self) -> u8 {
        match self {
            Scenario::S1 => 1,
            Scenario::S2 => 2,
            Scenario::S3 => 3,
            Scenario::S4 => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Scenario> {
        match id {
            1 => Some(Scenario::S1),
            2 => Some(Scenario::S2),
            3 => Some(Scenario::S3),
            4 => Some(Scenario::S4),
            _ => None,
        }
    }

    /// Regression coefficients on the raw ten-feature scale.
    pub fn beta(self) -> [f64; RAW_FEATURES] {
        match self {
            Scenario::S1 | Scenario::S3 => [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.5, 0.8, 1.2, 1.5],
            Scenario::S2 | Scenario::S4 => [0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.5, 0.8, 1.2, 1.5],
        }
    }

    /// Whether the dataset reports `(x1 + x2) / 2` instead of the raw pair.
    pub fn aggregates_first_two(self) -> bool {
        matches!(self, Scenario::S3 | Scenario::S4)
    }
}

/// Everything needed to generate one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub rho: f64,
    pub noise_sd: f64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, rho: f64) -> Self {
        ScenarioSpec { scenario, rho, noise_sd: DEFAULT_NOISE_SD }
    }

    /// Overrides the noise level; zero gives a noiseless target.
    pub fn with_noise_sd(mut self, noise_sd: f64) -> Self {
        assert!(noise_sd >= 0.0 && noise_sd.is_finite(), "noise sd must be finite and nonnegative");
        self.noise_sd = noise_sd;
        self
    }
}

/// A generated dataset: observed features, targets, and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    /// A new dataset holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut x = Matrix::zeros(rows.len(), self.x.cols());
        let mut y = Vec::with_capacity(rows.len());
        for (out, &r) in rows.iter().enumerate() {
            x.row_mut(out).copy_from_slice(self.x.row(r));
            y.push(self.y[r]);
        }
        Dataset { x, y, feature_names: self.feature_names.clone() }
    }

    /// Writes the dataset as CSV: feature columns in order, then `y`.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "{},y", self.feature_names.join(","))?;
        for i in 0..self.n_rows() {
            for v in self.x.row(i) {
                write!(w, "{v},")?;
            }
            writeln!(w, "{}", self.y[i])?;
        }
        Ok(())
    }
}

fn check_rho(rho: f64) -> Result<(), DataGenError> {
    if !(0.0..1.0).contains(&rho) || !rho.is_finite() {
        return Err(DataGenError::InvalidRho(rho));
    }
    Ok(())
}

/// Draws `n` rows of ten uniform features. The first two have latent
/// Gaussian correlation `rho`; all marginals are uniform on `[0, 1]`.
pub fn copula_sample(n: usize, rho: f64, stream: &RngStream) -> Result<Matrix, DataGenError> {
    check_rho(rho)?;
    let mut rng = stream.rng();
    let comp = (1.0 - rho * rho).sqrt();
    let mut out = Matrix::zeros(n, RAW_FEATURES);
    for i in 0..n {
        let z: Vec<f64> = (0..RAW_FEATURES).map(|_| rng.sample(StandardNormal)).collect();
        let row = out.row_mut(i);
        row[0] = normal_cdf(z[0]);
        row[1] = normal_cdf(rho * z[0] + comp * z[1]);
        for j in 2..RAW_FEATURES {
            row[j] = normal_cdf(z[j]);
        }
    }
    Ok(out)
}

/// The noiseless regression function on a raw ten-feature row.
///
/// Scenario S3 replaces the first two unit-weight terms by a single term in
/// their mean; every other scenario applies its coefficients directly.
pub fn scenario_target(spec: &ScenarioSpec, x_row: &[f64]) -> f64 {
    assert_eq!(x_row.len(), RAW_FEATURES, "target expects the raw ten-feature row");
    let beta = spec.scenario.beta();
    match spec.scenario {
        Scenario::S3 => {
            let m = 0.5 * (x_row[0] + x_row[1]);
            m + x_row[2..].iter().zip(&beta[2..]).map(|(x, b)| x * b).sum::<f64>()
        }
        _ => x_row.iter().zip(&beta).map(|(x, b)| x * b).sum(),
    }
}

/// Column names for the observed feature matrix.
pub fn feature_names(scenario: Scenario) -> Vec<String> {
    if scenario.aggregates_first_two() {
        let mut names = vec!["avg_x1_x2".to_string()];
        names.extend((3..=RAW_FEATURES).map(|j| format!("x{j}")));
        names
    } else {
        (1..=RAW_FEATURES).map(|j| format!("x{j}")).collect()
    }
}

/// Replaces the first two columns by their per-row mean.
fn aggregate_pair(raw: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(raw.rows(), raw.cols() - 1);
    for i in 0..raw.rows() {
        let src = raw.row(i);
        let dst = out.row_mut(i);
        dst[0] = 0.5 * (src[0] + src[1]);
        dst[1..].copy_from_slice(&src[2..]);
    }
    out
}

/// Generates a dataset for the scenario: copula features, scenario target,
/// additive Gaussian noise, and aggregation of the correlated pair where the
/// scenario calls for it.
pub fn generate_dataset(
    spec: &ScenarioSpec,
    n: usize,
    stream: &RngStream,
) -> Result<Dataset, DataGenError> {
    let raw = copula_sample(n, spec.rho, &stream.substream(SUB_COPULA))?;
    let mut noise_rng = stream.substream(SUB_NOISE).rng();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eps: f64 = noise_rng.sample(StandardNormal);
            scenario_target(spec, raw.row(i)) + spec.noise_sd * eps
        })
        .collect();
    let x = if spec.scenario.aggregates_first_two() { aggregate_pair(&raw) } else { raw };
    Ok(Dataset { x, y, feature_names: feature_names(spec.scenario) })
}
