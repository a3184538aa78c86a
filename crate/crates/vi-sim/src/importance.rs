//! Variable importance measures.
//!
//! Three measures share one report shape:
//!
//! * [`ols_importance`] reads importance straight off fitted regression
//!   coefficients.
//! * [`permutation_importance`] scores each feature by the loss increase
//!   when its column is shuffled, breaking the feature's tie to the target
//!   and to every other feature.
//! * [`cpi`] scores each feature by the loss increase when its column is
//!   replaced with a knockoff, which preserves the feature's correlations
//!   with the rest and so isolates its conditional contribution.
//!
//! Loss is always squared error, evaluated on rows the model did not train
//! on: a holdout split, or out-of-bag rows for a bagged forest.

use rand::Rng;
use thiserror::Error;

use crate::knockoffs::{sample_knockoffs, KnockoffError, KnockoffParams};
use crate::models::{ForestModel, ModelError, Predict};
use crate::numerics::Matrix;
use crate::rng::RngStream;
use crate::stats::{mean, sample_sd, student_t_sf};

/// Fewest evaluation rows accepted; loss contrasts on less are noise.
pub const MIN_EVAL_ROWS: usize = 30;

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("need at least {needed} evaluation rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("importance for feature {feature} is not finite")]
    NonFinite { feature: usize },
    #[error("expected {expected} feature names, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Knockoff(#[from] KnockoffError),
}

/// One feature's row in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImportance {
    pub name: String,
    pub importance: f64,
    /// Monte Carlo or paired-contrast standard error, when the measure has
    /// one.
    pub std_err: Option<f64>,
    /// One-sided (loss contrasts) or two-sided (coefficients) p-value, when
    /// the measure has one.
    pub p_value: Option<f64>,
    /// 1 is most important; ties share the average of their positions.
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    /// Which measure produced this: `"ols-coef"`, `"permutation"`, `"cpi"`.
    pub method: String,
    pub features: Vec<FeatureImportance>,
}

impl ImportanceReport {
    pub fn feature(&self, name: &str) -> Option<&FeatureImportance> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn rank_of(&self, name: &str) -> Option<f64> {
        self.feature(name).map(|f| f.rank)
    }
}

/// Competition-free descending ranks: the largest score gets rank 1, exact
/// ties share the average of the positions they span.
pub fn rank_features(scores: &[f64]) -> Result<Vec<f64>, ImportanceError> {
    for (j, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(ImportanceError::NonFinite { feature: j });
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut pos = 0;
    while pos < order.len() {
        let mut end = pos + 1;
        while end < order.len() && scores[order[end]] == scores[order[pos]] {
            end += 1;
        }
        // Positions pos..end are 0-based; their 1-based average.
        let avg = (pos + 1 + end) as f64 / 2.0;
        for &idx in &order[pos..end] {
            ranks[idx] = avg;
        }
        pos = end;
    }
    Ok(ranks)
}

fn build_report(
    method: &str,
    names: &[String],
    importances: Vec<f64>,
    std_errs: Vec<Option<f64>>,
    p_values: Vec<Option<f64>>,
    rank_on: &[f64],
) -> Result<ImportanceReport, ImportanceError> {
    let ranks = rank_features(rank_on)?;
    let features = names
        .iter()
        .zip(importances)
        .zip(std_errs)
        .zip(p_values)
        .zip(ranks)
        .map(|((((name, importance), std_err), p_value), rank)| FeatureImportance {
            name: name.clone(),
            importance,
            std_err,
            p_value,
            rank,
        })
        .collect();
    Ok(ImportanceReport { method: method.to_string(), features })
}

/// Importance as the fitted coefficient itself.
///
/// Ranks descend through signed values by default; `rank_absolute` ranks by
/// magnitude instead, treating large negative effects as important.
pub fn ols_importance(
    model: &crate::models::LinearModel,
    names: &[String],
    rank_absolute: bool,
) -> Result<ImportanceReport, ImportanceError> {
    let p = model.coefficients.len();
    if names.len() != p {
        return Err(ImportanceError::DimensionMismatch { expected: p, got: names.len() });
    }
    let importances = model.coefficients.clone();
    let rank_on: Vec<f64> = if rank_absolute {
        importances.iter().map(|c| c.abs()).collect()
    } else {
        importances.clone()
    };
    let std_errs = model.std_errors.iter().map(|&s| Some(s)).collect();
    let p_values = model.p_values.iter().map(|&p| Some(p)).collect();
    build_report("ols-coef", names, importances, std_errs, p_values, &rank_on)
}

enum Scorer<'a> {
    Full(&'a dyn Predict),
    OutOfBag(&'a ForestModel),
}

/// A model bound to the rows its loss contrasts are computed on.
///
/// [`Evaluation::holdout`] scores every row of a matrix the model never saw;
/// [`Evaluation::out_of_bag`] scores each training row using only the trees
/// that did not draw it.
pub struct Evaluation<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    scorer: Scorer<'a>,
}

impl<'a> Evaluation<'a> {
    pub fn holdout(model: &'a dyn Predict, x: &'a Matrix, y: &'a [f64]) -> Self {
        assert_eq!(x.rows(), y.len(), "row count and target length differ");
        Evaluation { x, y, scorer: Scorer::Full(model) }
    }

    pub fn out_of_bag(forest: &'a ForestModel, x_train: &'a Matrix, y_train: &'a [f64]) -> Self {
        assert_eq!(x_train.rows(), y_train.len(), "row count and target length differ");
        Evaluation { x: x_train, y: y_train, scorer: Scorer::OutOfBag(forest) }
    }

    pub fn x(&self) -> &Matrix {
        self.x
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    /// Rows that receive a prediction (all rows for holdout, rows left out
    /// of at least one bootstrap for out-of-bag).
    fn valid_rows(&self) -> Result<Vec<usize>, ImportanceError> {
        let rows = match &self.scorer {
            Scorer::Full(_) => (0..self.x.rows()).collect::<Vec<_>>(),
            Scorer::OutOfBag(f) => {
                let oob = f.oob_predict(self.x)?;
                (0..self.x.rows()).filter(|&i| oob.valid[i]).collect()
            }
        };
        if rows.len() < MIN_EVAL_ROWS {
            return Err(ImportanceError::TooFewRows { needed: MIN_EVAL_ROWS, got: rows.len() });
        }
        Ok(rows)
    }

    /// Squared-error loss on each of `rows`, predicting from `x`.
    fn losses_on(&self, x: &Matrix, rows: &[usize]) -> Result<Vec<f64>, ImportanceError> {
        let preds = match &self.scorer {
            Scorer::Full(m) => m.predict(x)?,
            Scorer::OutOfBag(f) => f.oob_predict(x)?.values,
        };
        Ok(rows
            .iter()
            .map(|&i| {
                let e = self.y[i] - preds[i];
                e * e
            })
            .collect())
    }
}

/// Loss increase from shuffling each feature column across evaluation rows.
///
/// Each feature gets `n_perms` independent shuffles from its own substream
/// of `stream`; the importance is the mean loss increase over shuffles and
/// the standard error is the spread across shuffles. Shuffling only moves
/// values between rows that actually receive predictions.
pub fn permutation_importance(
    eval: &Evaluation,
    names: &[String],
    n_perms: usize,
    stream: &RngStream,
) -> Result<ImportanceReport, ImportanceError> {
    let p = eval.n_features();
    if names.len() != p {
        return Err(ImportanceError::DimensionMismatch { expected: p, got: names.len() });
    }
    assert!(n_perms >= 1, "need at least one shuffle");

    let rows = eval.valid_rows()?;
    let base = eval.losses_on(eval.x, &rows)?;
    let base_mean = mean(&base);

    let mut work = eval.x.clone();
    let mut importances = Vec::with_capacity(p);
    let mut std_errs = Vec::with_capacity(p);
    for j in 0..p {
        let mut rng = stream.substream(j as u64).rng();
        let original: Vec<f64> = rows.iter().map(|&i| work.get(i, j)).collect();
        let mut deltas = Vec::with_capacity(n_perms);
        let mut values = original.clone();
        for _ in 0..n_perms {
            for k in (1..values.len()).rev() {
                values.swap(k, rng.random_range(0..=k));
            }
            for (&i, &v) in rows.iter().zip(&values) {
                work.set(i, j, v);
            }
            let shuffled = eval.losses_on(&work, &rows)?;
            deltas.push(mean(&shuffled) - base_mean);
        }
        for (&i, &v) in rows.iter().zip(&original) {
            work.set(i, j, v);
        }
        importances.push(mean(&deltas));
        std_errs.push(if n_perms >= 2 {
            Some(sample_sd(&deltas) / (n_perms as f64).sqrt())
        } else {
            None
        });
    }

    let rank_on = importances.clone();
    let p_values = vec![None; p];
    build_report("permutation", names, importances, std_errs, p_values, &rank_on)
}

/// Loss increase from swapping each feature column for its knockoff.
///
/// One knockoff matrix is drawn for the evaluation rows; each feature's
/// column is substituted in turn and the per-row loss differences form a
/// paired contrast. The p-value is the one-sided paired t-test of that
/// contrast against zero, asking whether removing the feature's own signal,
/// while keeping its correlations, costs anything.
pub fn cpi(
    eval: &Evaluation,
    params: &KnockoffParams,
    names: &[String],
    stream: &RngStream,
) -> Result<ImportanceReport, ImportanceError> {
    let p = eval.n_features();
    if names.len() != p {
        return Err(ImportanceError::DimensionMismatch { expected: p, got: names.len() });
    }

    let rows = eval.valid_rows()?;
    let base = eval.losses_on(eval.x, &rows)?;
    let x_tilde = sample_knockoffs(eval.x, params, stream)?;

    let m = rows.len() as f64;
    let mut work = eval.x.clone();
    let mut importances = Vec::with_capacity(p);
    let mut std_errs = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for j in 0..p {
        let original: Vec<f64> = rows.iter().map(|&i| work.get(i, j)).collect();
        for &i in &rows {
            work.set(i, j, x_tilde.get(i, j));
        }
        let swapped = eval.losses_on(&work, &rows)?;
        for (&i, &v) in rows.iter().zip(&original) {
            work.set(i, j, v);
        }

        let deltas: Vec<f64> = swapped.iter().zip(&base).map(|(s, b)| s - b).collect();
        let d_mean = mean(&deltas);
        let d_sd = sample_sd(&deltas);
        importances.push(d_mean);
        std_errs.push(Some(d_sd / m.sqrt()));
        let p_val = if d_sd == 0.0 {
            // Identical losses across the board: no evidence either way
            // unless the mean itself moved.
            if d_mean > 0.0 {
                0.0
            } else {
                1.0
            }
        } else {
            student_t_sf(d_mean / (d_sd / m.sqrt()), m - 1.0)
        };
        p_values.push(Some(p_val));
    }

    let rank_on = importances.clone();
    let p_values: Vec<Option<f64>> = p_values;
    build_report("cpi", names, importances, std_errs, p_values, &rank_on)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knockoffs::{knockoff_params_with_s, GaussianModel};
    use crate::models::{fit_forest, ForestConfig, LinearModel};
    use crate::numerics::SymMatrix;
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;

    fn iid_normal(n: usize, p: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::from_seed(seed).rng();
        let mut x = Matrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                x.set(i, j, rng.sample(StandardNormal));
            }
        }
        x
    }

    /// A linear model with chosen coefficients and no fitting noise.
    fn fixed_linear(coefficients: Vec<f64>) -> LinearModel {
        let p = coefficients.len();
        LinearModel {
            intercept: 0.0,
            coefficients,
            intercept_std_err: 0.0,
            std_errors: vec![0.0; p],
            intercept_p_value: 1.0,
            p_values: vec![0.0; p],
            residual_variance: 0.0,
            dof: 1,
        }
    }

    fn names(p: usize) -> Vec<String> {
        (1..=p).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn ranks_descend_with_average_ties() {
        assert_eq!(rank_features(&[3.0, 1.0, 2.0]).unwrap(), vec![1.0, 3.0, 2.0]);
        assert_eq!(rank_features(&[2.0, 2.0, 1.0]).unwrap(), vec![1.5, 1.5, 3.0]);
        assert_eq!(rank_features(&[5.0, 5.0, 5.0, 5.0]).unwrap(), vec![2.5; 4]);
        assert_eq!(rank_features(&[-1.0, -2.0]).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(
            rank_features(&[1.0, f64::NAN]),
            Err(ImportanceError::NonFinite { feature: 1 })
        ));
    }

    #[test]
    fn ols_report_carries_coefficients_and_inference() {
        let x = iid_normal(200, 2, 7);
        let y: Vec<f64> = (0..200).map(|i| 2.0 * x.get(i, 0) - 3.0 * x.get(i, 1)).collect();
        let model = crate::models::fit_ols(&x, &y).unwrap();
        let report = ols_importance(&model, &names(2), false).unwrap();
        assert_abs_diff_eq!(report.features[0].importance, 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(report.features[1].importance, -3.0, epsilon = 1e-8);
        // Signed ranking puts the positive coefficient first.
        assert_eq!(report.features[0].rank, 1.0);
        assert_eq!(report.features[1].rank, 2.0);
        assert!(report.features[0].p_value.unwrap() < 1e-10);
        assert!(report.features[0].std_err.is_some());

        let by_mag = ols_importance(&model, &names(2), true).unwrap();
        assert_eq!(by_mag.features[0].rank, 2.0);
        assert_eq!(by_mag.features[1].rank, 1.0);

        assert!(matches!(
            ols_importance(&model, &names(3), false),
            Err(ImportanceError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn shuffling_an_unused_feature_scores_exactly_zero() {
        let x = iid_normal(400, 3, 8);
        let y: Vec<f64> = (0..400).map(|i| x.get(i, 0)).collect();
        let model = fixed_linear(vec![1.0, 0.0, 0.0]);
        let eval = Evaluation::holdout(&model, &x, &y);
        let report =
            permutation_importance(&eval, &names(3), 5, &RngStream::from_seed(9)).unwrap();
        assert_eq!(report.features[1].importance, 0.0);
        assert_eq!(report.features[2].importance, 0.0);
        assert_eq!(report.features[1].std_err, Some(0.0));
        assert!(report.features[0].importance > 0.5);
        assert_eq!(report.features[0].rank, 1.0);
    }

    #[test]
    fn shuffle_importance_approximates_twice_the_explained_variance() {
        // With y = x1 exactly, shuffling x1 raises the loss by
        // E[(x - x')^2] = 2 var(x1).
        let x = iid_normal(4000, 2, 10);
        let y: Vec<f64> = (0..4000).map(|i| x.get(i, 0)).collect();
        let model = fixed_linear(vec![1.0, 0.0]);
        let eval = Evaluation::holdout(&model, &x, &y);
        let report =
            permutation_importance(&eval, &names(2), 20, &RngStream::from_seed(11)).unwrap();
        let vi = report.features[0].importance;
        assert!((vi - 2.0).abs() < 0.25, "shuffle importance {vi}, expected near 2");
    }

    #[test]
    fn shuffles_are_deterministic_per_stream() {
        let x = iid_normal(300, 2, 12);
        let y: Vec<f64> = (0..300).map(|i| x.get(i, 0) - x.get(i, 1)).collect();
        let model = fixed_linear(vec![1.0, -1.0]);
        let eval = Evaluation::holdout(&model, &x, &y);
        let a = permutation_importance(&eval, &names(2), 4, &RngStream::from_seed(13)).unwrap();
        let b = permutation_importance(&eval, &names(2), 4, &RngStream::from_seed(13)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_bag_shuffling_finds_the_forest_signal() {
        let x = iid_normal(300, 3, 14);
        let mut rng = RngStream::from_seed(15).rng();
        let y: Vec<f64> = (0..300)
            .map(|i| 3.0 * x.get(i, 0) + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let forest =
            fit_forest(&x, &y, &ForestConfig::default(), &RngStream::from_seed(16)).unwrap();
        let eval = Evaluation::out_of_bag(&forest, &x, &y);
        let report =
            permutation_importance(&eval, &names(3), 5, &RngStream::from_seed(17)).unwrap();
        assert_eq!(report.features[0].rank, 1.0);
        let rank_sum: f64 = report.features.iter().map(|f| f.rank).sum();
        assert_abs_diff_eq!(rank_sum, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn too_few_evaluation_rows_are_rejected() {
        let x = iid_normal(20, 2, 18);
        let y = vec![0.0; 20];
        let model = fixed_linear(vec![1.0, 0.0]);
        let eval = Evaluation::holdout(&model, &x, &y);
        assert!(matches!(
            permutation_importance(&eval, &names(2), 2, &RngStream::from_seed(19)),
            Err(ImportanceError::TooFewRows { needed: MIN_EVAL_ROWS, got: 20 })
        ));
    }

    #[test]
    fn zero_decoupling_makes_every_swap_free() {
        let x = iid_normal(200, 2, 20);
        let y: Vec<f64> = (0..200).map(|i| x.get(i, 0) + x.get(i, 1)).collect();
        let model = fixed_linear(vec![1.0, 1.0]);
        let gauss = GaussianModel { mean: vec![0.0, 0.0], cov: SymMatrix::identity(2) };
        let params = knockoff_params_with_s(&gauss, &[0.0, 0.0]).unwrap();
        let eval = Evaluation::holdout(&model, &x, &y);
        let report = cpi(&eval, &params, &names(2), &RngStream::from_seed(21)).unwrap();
        for f in &report.features {
            assert_eq!(f.importance, 0.0);
            assert_eq!(f.std_err, Some(0.0));
            assert_eq!(f.p_value, Some(1.0));
        }
    }

    #[test]
    fn knockoff_swaps_price_an_informative_feature() {
        // Full decoupling on independent features: swapping x1 for its
        // knockoff costs E[(x - x~)^2] = 2 s = 2, and the paired test is
        // decisive; the unused feature stays near zero with a large p.
        let x = iid_normal(3000, 2, 22);
        let y: Vec<f64> = (0..3000).map(|i| x.get(i, 0)).collect();
        let model = fixed_linear(vec![1.0, 0.0]);
        let gauss = GaussianModel { mean: vec![0.0, 0.0], cov: SymMatrix::identity(2) };
        let params = knockoff_params_with_s(&gauss, &[1.0, 1.0]).unwrap();
        let eval = Evaluation::holdout(&model, &x, &y);
        let report = cpi(&eval, &params, &names(2), &RngStream::from_seed(23)).unwrap();
        let f1 = &report.features[0];
        assert!((f1.importance - 2.0).abs() < 0.3, "swap cost {}", f1.importance);
        assert!(f1.p_value.unwrap() < 1e-6);
        assert_eq!(f1.rank, 1.0);
        let f2 = &report.features[1];
        assert_eq!(f2.importance, 0.0);
        assert_eq!(f2.p_value, Some(1.0));
    }

    #[test]
    fn knockoff_swaps_are_deterministic_per_stream() {
        let x = iid_normal(150, 2, 24);
        let y: Vec<f64> = (0..150).map(|i| x.get(i, 0)).collect();
        let model = fixed_linear(vec![1.0, 0.0]);
        let gauss = GaussianModel { mean: vec![0.0, 0.0], cov: SymMatrix::identity(2) };
        let params = knockoff_params_with_s(&gauss, &[1.0, 1.0]).unwrap();
        let eval = Evaluation::holdout(&model, &x, &y);
        let a = cpi(&eval, &params, &names(2), &RngStream::from_seed(25)).unwrap();
        let b = cpi(&eval, &params, &names(2), &RngStream::from_seed(25)).unwrap();
        assert_eq!(a, b);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn ranks_sum_to_the_triangular_number(
                scores in proptest::collection::vec(-100.0f64..100.0, 1..12)
            ) {
                let ranks = rank_features(&scores).unwrap();
                let p = scores.len() as f64;
                let sum: f64 = ranks.iter().sum();
                prop_assert!((sum - p * (p + 1.0) / 2.0).abs() < 1e-9);
            }
        }
    }
}
