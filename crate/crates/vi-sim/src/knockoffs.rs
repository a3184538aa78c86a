//! Second-order Gaussian knockoffs.
//!
//! A knockoff matrix pairs each feature `X_j` with a synthetic `X~_j` such
//! that the joint second moments are
//!
//! ```text
//! G = [ S     S - D ]        S = cov(X),  D = diag(s)
//!     [ S - D   S   ]
//! ```
//!
//! so swapping a feature with its knockoff leaves the covariance structure
//! intact, while `s_j` controls how strongly `X~_j` decouples from `X_j`:
//! `corr(X_j, X~_j) = (var_j - s_j) / var_j`. `G` stays positive
//! semidefinite exactly when `diag(s) <= 2 S`, which caps how much
//! decoupling correlated features admit. For a pair with correlation `rho`
//! the equicorrelated choice hits that cap at `rho = 0.5`:
//! [`theoretical_self_corr`] returns `max(0, 2 rho - 1)`.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numerics::{
    cholesky, min_eigenvalue, solve_spd, Matrix, NumericsError, SymMatrix,
};
use crate::rng::RngStream;
use crate::stats::{pearson, sample_covariance};

/// Diagonal shrinkage steps tried, in order, when a covariance matrix is not
/// positive definite to working precision.
const SHRINKAGE_LADDER: [f64; 5] = [0.0, 1e-8, 1e-6, 1e-4, 1e-2];

/// Smallest acceptable eigenvalue for an estimated covariance.
const MIN_EIG_FLOOR: f64 = 1e-10;

/// Correlation magnitude above which two features share a decoupling group
/// in [`grouped_equi_s`].
pub const DEFAULT_GROUP_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error)]
pub enum KnockoffError {
    /// Covariance stayed short of positive definite through the whole
    /// shrinkage ladder.
    #[error("covariance is degenerate even after diagonal shrinkage")]
    DegenerateCovariance,
    /// A feature column is constant, so correlations are undefined.
    #[error("feature {feature} has zero variance")]
    ZeroVariance { feature: usize },
    /// Correlation outside `[0, 1)`.
    #[error("invalid correlation {0}: must lie in [0, 1)")]
    InvalidRho(f64),
    /// Shape disagreement between inputs.
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// The requested `s` vector does not yield a valid joint covariance.
    #[error("decoupling vector is infeasible: {reason}")]
    InfeasibleS { reason: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// First and second moments of the feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

impl GaussianModel {
    pub fn p(&self) -> usize {
        self.cov.dim()
    }
}

/// Everything needed to draw knockoffs conditional on observed features:
/// `X~ = mean + A (x - mean) + C z` with `A = (S - D) S^{-1}` and
/// `C C' = 2 D - D S^{-1} D`.
#[derive(Debug, Clone)]
pub struct KnockoffParams {
    pub mean: Vec<f64>,
    /// Per-feature decoupling amounts `s_j` on the covariance scale.
    pub s: Vec<f64>,
    /// Conditional coefficient matrix `A`.
    pub cond_coef: Matrix,
    /// Lower-triangular `C` with `C C'` the conditional covariance.
    pub cond_chol: Matrix,
    /// The full `2p x 2p` joint covariance `G`.
    pub joint_cov: SymMatrix,
}

impl KnockoffParams {
    pub fn p(&self) -> usize {
        self.s.len()
    }

    /// Model-implied `corr(X_j, X~_j) = (var_j - s_j) / var_j`.
    pub fn model_self_corr(&self) -> Vec<f64> {
        (0..self.p())
            .map(|j| {
                let v = self.joint_cov.get(j, j);
                (v - self.s[j]) / v
            })
            .collect()
    }
}

/// Diagnostics comparing a drawn knockoff matrix against its target moments.
#[derive(Debug, Clone)]
pub struct KnockoffDiagnostics {
    /// Empirical `corr(X_j, X~_j)` per feature.
    pub per_feature_self_corr: Vec<f64>,
    /// Largest absolute deviation of the empirical `cov(X, X~)` block from
    /// its target `S - D`.
    pub cross_corr_error: f64,
    /// Empirical `corr(X~_1, X~_2)`; `None` with fewer than two features.
    pub knockoff_pair_corr: Option<f64>,
}

/// `(1 - delta) * m + delta * diag(m)`.
fn shrink_toward_diagonal(m: &SymMatrix, delta: f64) -> SymMatrix {
    SymMatrix::from_lower(m.dim(), |i, j| {
        if i == j {
            m.get(i, j)
        } else {
            (1.0 - delta) * m.get(i, j)
        }
    })
}

/// Estimates feature means and covariance, shrinking the covariance toward
/// its diagonal by the smallest ladder step that makes it positive definite.
pub fn estimate_gaussian(x: &Matrix) -> Result<GaussianModel, KnockoffError> {
    let n = x.rows();
    let p = x.cols();
    assert!(n >= 2, "need at least two rows to estimate a covariance");
    assert!(p >= 1, "need at least one feature");

    let mean: Vec<f64> = (0..p).map(|j| x.column(j).iter().sum::<f64>() / n as f64).collect();
    let cov = SymMatrix::from_lower(p, |i, j| {
        (0..n).map(|k| (x.get(k, i) - mean[i]) * (x.get(k, j) - mean[j])).sum::<f64>()
            / (n - 1) as f64
    });
    for j in 0..p {
        if cov.get(j, j) <= 0.0 {
            return Err(KnockoffError::ZeroVariance { feature: j });
        }
    }

    for delta in SHRINKAGE_LADDER {
        let cand = shrink_toward_diagonal(&cov, delta);
        if min_eigenvalue(&cand)? >= MIN_EIG_FLOOR {
            return Ok(GaussianModel { mean, cov: cand });
        }
    }
    Err(KnockoffError::DegenerateCovariance)
}

fn correlation_scale(cov: &SymMatrix) -> Result<SymMatrix, KnockoffError> {
    let p = cov.dim();
    for j in 0..p {
        if cov.get(j, j) <= 0.0 {
            return Err(KnockoffError::ZeroVariance { feature: j });
        }
    }
    Ok(SymMatrix::from_lower(p, |i, j| {
        if i == j {
            1.0
        } else {
            cov.get(i, j) / (cov.get(i, i) * cov.get(j, j)).sqrt()
        }
    }))
}

/// Equicorrelated decoupling: one scalar for every feature.
///
/// On the correlation scale, `s_corr = min(2 lambda_min, 1)`; each feature
/// then gets `s_j = s_corr * var_j`. For a correlated pair this caps at
/// `min(2 (1 - rho), 1)`, which is what produces the knockoff correlation
/// elbow at `rho = 0.5`.
pub fn equi_s(cov: &SymMatrix) -> Result<Vec<f64>, KnockoffError> {
    let corr = correlation_scale(cov)?;
    let lambda = min_eigenvalue(&corr)?;
    if lambda <= 0.0 {
        return Err(KnockoffError::DegenerateCovariance);
    }
    let s_corr = (2.0 * lambda).min(1.0);
    Ok((0..cov.dim()).map(|j| s_corr * cov.get(j, j)).collect())
}

/// Connected components of the graph joining features whose correlation
/// magnitude reaches `threshold`.
fn correlation_groups(corr: &SymMatrix, threshold: f64) -> Vec<Vec<usize>> {
    let p = corr.dim();
    let mut group_of = vec![usize::MAX; p];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for start in 0..p {
        if group_of[start] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut members = vec![start];
        group_of[start] = id;
        let mut frontier = vec![start];
        while let Some(i) = frontier.pop() {
            for j in 0..p {
                if j != i && group_of[j] == usize::MAX && corr.get(i, j).abs() >= threshold {
                    group_of[j] = id;
                    members.push(j);
                    frontier.push(j);
                }
            }
        }
        members.sort_unstable();
        groups.push(members);
    }
    groups
}

/// Equicorrelated decoupling applied within correlated groups.
///
/// Features are partitioned into connected components of the correlation
/// graph at `threshold`; each component gets its own equicorrelated scalar.
/// Features uncorrelated with everything keep `s_corr = 1` (a fully
/// decoupled knockoff) instead of inheriting the shrinkage a correlated
/// group elsewhere requires. A final global scaling step restores joint
/// feasibility when weak cross-group correlations push `2 S - diag(s)`
/// slightly indefinite.
pub fn grouped_equi_s(cov: &SymMatrix, threshold: f64) -> Result<Vec<f64>, KnockoffError> {
    assert!(threshold > 0.0, "group threshold must be positive");
    let p = cov.dim();
    let corr = correlation_scale(cov)?;
    let mut s_corr = vec![0.0; p];
    for group in correlation_groups(&corr, threshold) {
        let sub = SymMatrix::from_lower(group.len(), |a, b| corr.get(group[a], group[b]));
        let lambda = min_eigenvalue(&sub)?;
        if lambda <= 0.0 {
            return Err(KnockoffError::DegenerateCovariance);
        }
        let sc = (2.0 * lambda).min(1.0);
        for &j in &group {
            s_corr[j] = sc;
        }
    }

    // Cross-group correlations below the threshold are ignored above, so the
    // combined choice can be marginally infeasible. Scale all of s back by
    // the largest factor keeping 2 Corr - diag(s) positive semidefinite.
    // Groups alone sit exactly on the boundary (eigenvalue zero), which is
    // fine; only a genuinely negative eigenvalue triggers the repair.
    let feas_floor = -1e-9;
    let min_eig_for = |gamma: f64| -> Result<f64, KnockoffError> {
        let m = SymMatrix::from_lower(p, |i, j| {
            2.0 * corr.get(i, j) - if i == j { gamma * s_corr[i] } else { 0.0 }
        });
        Ok(min_eigenvalue(&m)?)
    };
    if min_eig_for(1.0)? < feas_floor {
        let mut lo = 0.0;
        let mut hi = 1.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if min_eig_for(mid)? >= feas_floor {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for v in &mut s_corr {
            *v *= lo;
        }
    }

    Ok((0..p).map(|j| s_corr[j] * cov.get(j, j)).collect())
}

/// Builds sampling parameters with the equicorrelated decoupling of
/// [`equi_s`].
pub fn knockoff_params(model: &GaussianModel) -> Result<KnockoffParams, KnockoffError> {
    let s = equi_s(&model.cov)?;
    knockoff_params_with_s(model, &s)
}

/// Builds sampling parameters for an explicit decoupling vector `s`.
///
/// `s` must be all zero (knockoffs equal the features exactly) or strictly
/// positive with `s_j <= var_j`.
pub fn knockoff_params_with_s(
    model: &GaussianModel,
    s: &[f64],
) -> Result<KnockoffParams, KnockoffError> {
    let p = model.p();
    if s.len() != p {
        return Err(KnockoffError::DimensionMismatch { expected: p, got: s.len() });
    }
    assert_eq!(model.mean.len(), p, "mean length must match covariance dimension");
    for (j, &sj) in s.iter().enumerate() {
        let var = model.cov.get(j, j);
        if !(0.0..=var * (1.0 + 1e-12)).contains(&sj) {
            return Err(KnockoffError::InfeasibleS {
                reason: format!("s[{j}] = {sj} outside [0, var_{j} = {var}]"),
            });
        }
    }

    let sigma = &model.cov;
    let joint_cov = assemble_joint(sigma, s);

    // Degenerate override: s = 0 keeps the knockoff identical to the feature.
    if s.iter().all(|&v| v == 0.0) {
        let mut cond_coef = Matrix::zeros(p, p);
        for j in 0..p {
            cond_coef.set(j, j, 1.0);
        }
        return Ok(KnockoffParams {
            mean: model.mean.clone(),
            s: s.to_vec(),
            cond_coef,
            cond_chol: Matrix::zeros(p, p),
            joint_cov,
        });
    }

    // Identity covariance with full decoupling: the conditional law is the
    // marginal law, exactly.
    let sigma_minus_s_is_zero = (0..p).all(|i| {
        (0..p).all(|j| {
            let want = if i == j { s[i] } else { 0.0 };
            sigma.get(i, j) == want
        })
    });
    if sigma_minus_s_is_zero {
        let cond_chol = cholesky(sigma)?.to_matrix();
        return Ok(KnockoffParams {
            mean: model.mean.clone(),
            s: s.to_vec(),
            cond_coef: Matrix::zeros(p, p),
            cond_chol,
            joint_cov,
        });
    }

    // A = (S - D) S^{-1}, computed as (S^{-1} (S - D))' since both are
    // symmetric.
    let diff = SymMatrix::from_lower(p, |i, j| {
        sigma.get(i, j) - if i == j { s[i] } else { 0.0 }
    });
    let m = solve_spd(sigma, &diff.to_matrix())?;
    let cond_coef = m.transpose();

    // Conditional covariance V = 2 D - D S^{-1} D, symmetrized against
    // roundoff before factoring.
    let mut s_mat = Matrix::zeros(p, p);
    for j in 0..p {
        s_mat.set(j, j, s[j]);
    }
    let n_mat = solve_spd(sigma, &s_mat)?;
    let v = SymMatrix::from_lower(p, |i, j| {
        let direct = s[i] * n_mat.get(i, j);
        let mirrored = s[j] * n_mat.get(j, i);
        let two_s = if i == j { 2.0 * s[i] } else { 0.0 };
        two_s - 0.5 * (direct + mirrored)
    });

    // The equicorrelated choice sits exactly on the feasibility boundary for
    // strongly correlated features, leaving V singular; the shrinkage ladder
    // restores a factorable matrix while moving the law by at most one part
    // in a hundred million.
    let mut cond_chol = None;
    for delta in SHRINKAGE_LADDER {
        if let Ok(f) = cholesky(&shrink_toward_diagonal(&v, delta)) {
            cond_chol = Some(f.to_matrix());
            break;
        }
    }
    let cond_chol = cond_chol.ok_or(KnockoffError::DegenerateCovariance)?;

    if min_eigenvalue(&joint_cov)? < -1e-8 {
        return Err(KnockoffError::InfeasibleS {
            reason: "joint covariance is indefinite".to_string(),
        });
    }

    Ok(KnockoffParams { mean: model.mean.clone(), s: s.to_vec(), cond_coef, cond_chol, joint_cov })
}

fn assemble_joint(sigma: &SymMatrix, s: &[f64]) -> SymMatrix {
    let p = sigma.dim();
    SymMatrix::from_lower(2 * p, |i, j| {
        let (bi, ii) = (i >= p, i % p);
        let (bj, jj) = (j >= p, j % p);
        if bi == bj {
            sigma.get(ii, jj)
        } else {
            sigma.get(ii, jj) - if ii == jj { s[ii] } else { 0.0 }
        }
    })
}

/// Draws one knockoff row per input row, conditional on that row.
pub fn sample_knockoffs(
    x: &Matrix,
    params: &KnockoffParams,
    stream: &RngStream,
) -> Result<Matrix, KnockoffError> {
    let p = params.p();
    if x.cols() != p {
        return Err(KnockoffError::DimensionMismatch { expected: p, got: x.cols() });
    }
    if params.s.iter().all(|&v| v == 0.0) {
        return Ok(x.clone());
    }
    let mut rng = stream.rng();
    let mut out = Matrix::zeros(x.rows(), p);
    let mut d = vec![0.0; p];
    let mut z = vec![0.0; p];
    for i in 0..x.rows() {
        let row = x.row(i);
        for j in 0..p {
            d[j] = row[j] - params.mean[j];
            z[j] = rng.sample(StandardNormal);
        }
        let out_row = out.row_mut(i);
        for r in 0..p {
            let drift: f64 = params.cond_coef.row(r).iter().zip(&d).map(|(a, b)| a * b).sum();
            let noise: f64 = (0..=r).map(|k| params.cond_chol.get(r, k) * z[k]).sum();
            out_row[r] = params.mean[r] + drift + noise;
        }
    }
    Ok(out)
}

/// Knockoff self-correlation implied by the equicorrelated construction for
/// a standardized pair with correlation `rho`: `max(0, 2 rho - 1)`.
pub fn theoretical_self_corr(rho: f64) -> Result<f64, KnockoffError> {
    if !(0.0..1.0).contains(&rho) || !rho.is_finite() {
        return Err(KnockoffError::InvalidRho(rho));
    }
    Ok((2.0 * rho - 1.0).max(0.0))
}

/// Empirical checks of a drawn knockoff matrix against the joint target.
pub fn diagnostics(
    x: &Matrix,
    x_tilde: &Matrix,
    params: &KnockoffParams,
) -> Result<KnockoffDiagnostics, KnockoffError> {
    let p = params.p();
    if x.cols() != p {
        return Err(KnockoffError::DimensionMismatch { expected: p, got: x.cols() });
    }
    if x_tilde.cols() != p || x_tilde.rows() != x.rows() {
        return Err(KnockoffError::DimensionMismatch { expected: p, got: x_tilde.cols() });
    }
    assert!(x.rows() >= 2, "diagnostics need at least two rows");

    let x_cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j)).collect();
    let t_cols: Vec<Vec<f64>> = (0..p).map(|j| x_tilde.column(j)).collect();

    let mut per_feature_self_corr = Vec::with_capacity(p);
    for j in 0..p {
        // A zero-s knockoff equals its feature; its correlation is 1 even
        // though pearson sees identical columns.
        match pearson(&x_cols[j], &t_cols[j]) {
            Some(c) => per_feature_self_corr.push(c),
            None => return Err(KnockoffError::ZeroVariance { feature: j }),
        }
    }

    let mut cross_corr_error = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            let emp = sample_covariance(&x_cols[i], &t_cols[j]);
            let want = params.joint_cov.get(i, p + j);
            cross_corr_error = cross_corr_error.max((emp - want).abs());
        }
    }

    let knockoff_pair_corr = if p >= 2 { pearson(&t_cols[0], &t_cols[1]) } else { None };

    Ok(KnockoffDiagnostics { per_feature_self_corr, cross_corr_error, knockoff_pair_corr })
}
