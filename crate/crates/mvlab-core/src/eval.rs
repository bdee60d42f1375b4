//! Held-out evaluation: cross-modal and same-view prediction, per-feature
//! fraction of variance explained, and linear separability (AUC) of the
//! shared latent space.
//!
//! All predictions are deterministic point estimates: posterior means in,
//! decoder means out, prior means (zeros) for private blocks the source
//! modality cannot encode.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{FeatureRole, Matrix, MultimodalDataset};
use crate::dist::poe_combine;
use crate::net::{Modality, Model};
use crate::tensor::Tensor;
use crate::{math, Error, Result};

/// Predict the other modality from `x_source` through the shared latent:
/// z_sh is the prior-fused posterior mean of the source's shared head,
/// the target's private block is zero (prior mean).
pub fn cross_modal_predict(model: &Model, source: Modality, x_source: &Matrix) -> Result<Matrix> {
    let bound = model.bind_const();
    let target = source.other();
    let (_, q_sh) = bound.encode(source, &x_source.to_tensor())?;
    let fused = poe_combine(
        core::slice::from_ref(&q_sh),
        true,
        (x_source.rows(), model.dims().partition.d_sh),
    )?;
    let z_pr = Tensor::zeros(x_source.rows(), model.dims().partition.d_pr(target));
    let (mean, _) = bound.decode(target, &z_pr, fused.mean())?;
    Matrix::new(mean.rows(), mean.cols(), mean.values().to_vec())
}

/// Reconstruct modality m from its own encoding distribution: private and
/// shared posterior means straight into the decoder.
pub fn same_view_predict(model: &Model, m: Modality, x_m: &Matrix) -> Result<Matrix> {
    let bound = model.bind_const();
    let (q_pr, q_sh) = bound.encode(m, &x_m.to_tensor())?;
    let (mean, _) = bound.decode(m, q_pr.mean(), q_sh.mean())?;
    Matrix::new(mean.rows(), mean.cols(), mean.values().to_vec())
}

/// Shared-space embedding of samples with both modalities present: the
/// mean of PoE(prior, q1_sh, q2_sh).
pub fn shared_embedding(model: &Model, x1: &Matrix, x2: &Matrix) -> Result<Matrix> {
    let bound = model.bind_const();
    let (_, q1) = bound.encode(Modality::One, &x1.to_tensor())?;
    let (_, q2) = bound.encode(Modality::Two, &x2.to_tensor())?;
    let fused = poe_combine(&[q1, q2], true, (x1.rows(), model.dims().partition.d_sh))?;
    let mean = fused.mean();
    Matrix::new(mean.rows(), mean.cols(), mean.values().to_vec())
}

/// Per-feature R² = 1 − Σ(y−ŷ)² / Σ(y−ȳ)², with ȳ the test-split column
/// mean. Columns without test variance are reported as `None`.
pub fn r2_per_feature(y_true: &Matrix, y_pred: &Matrix) -> Result<Vec<Option<f64>>> {
    if y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols() {
        return Err(Error::ShapeMismatch {
            op: "r2_per_feature",
            left: (y_true.rows(), y_true.cols()),
            right: (y_pred.rows(), y_pred.cols()),
        });
    }
    if y_true.rows() < 2 {
        return Err(Error::TooFewRows {
            context: "r2_per_feature",
            rows: y_true.rows(),
        });
    }
    let n = y_true.rows() as f64;
    let mut out = Vec::with_capacity(y_true.cols());
    for c in 0..y_true.cols() {
        let mean: f64 = (0..y_true.rows()).map(|r| y_true.get(r, c)).sum::<f64>() / n;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for r in 0..y_true.rows() {
            let t = y_true.get(r, c);
            let d_res = t - y_pred.get(r, c);
            let d_tot = t - mean;
            ss_res += d_res * d_res;
            ss_tot += d_tot * d_tot;
        }
        if ss_tot < 1e-24 {
            out.push(None);
        } else {
            out.push(Some(1.0 - ss_res / ss_tot));
        }
    }
    Ok(out)
}

fn both_classes(y: &[u8]) -> bool {
    y.iter().any(|&v| v == 0) && y.iter().any(|&v| v == 1)
}

/// AUC via the Mann–Whitney rank statistic with midrank tie handling.
pub fn auc_mann_whitney(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::RowCountMismatch {
            what: "auc scores/labels",
            left: scores.len(),
            right: labels.len(),
        });
    }
    if !both_classes(labels) {
        return Err(Error::SingleClassLabels { context: "auc" });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i..=j share the midrank (1-based ranks)
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&v| v == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// L2-regularized logistic separator fit by full-batch gradient descent.
///
/// Minimizes (1/n) Σ softplus(−ỹ·(w·z + b)) + (λ/2)‖w‖² with λ = 1e-2,
/// run to gradient norm < 1e-6 or 10⁴ iterations. Returns (w, b).
pub fn fit_logistic(z: &Matrix, y: &[u8]) -> Result<(Vec<f64>, f64)> {
    const LAMBDA: f64 = 1e-2;
    const TOL: f64 = 1e-6;
    const MAX_ITER: usize = 10_000;
    if z.rows() != y.len() {
        return Err(Error::RowCountMismatch {
            what: "logistic rows/labels",
            left: z.rows(),
            right: y.len(),
        });
    }
    if !both_classes(y) {
        return Err(Error::SingleClassLabels {
            context: "fit_logistic",
        });
    }
    let n = z.rows() as f64;
    let d = z.cols();

    // Lipschitz bound for the step size: (1/4n)·Σ(‖z_i‖²+1) + λ
    let sq_sum: f64 = z.values().iter().map(|v| v * v).sum::<f64>() + z.rows() as f64;
    let lip = sq_sum / (4.0 * n) + LAMBDA;
    let lr = 1.0 / lip;

    let mut w = alloc::vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..MAX_ITER {
        let mut gw = alloc::vec![0.0; d];
        let mut gb = 0.0;
        for r in 0..z.rows() {
            let row = z.row(r);
            let s: f64 = row.iter().zip(&w).map(|(zi, wi)| zi * wi).sum::<f64>() + b;
            // gradient of softplus(−ỹ s) wrt s is −ỹ·σ(−ỹ s) = σ(s) − y
            let g = math::sigmoid(s) - y[r] as f64;
            for (gwi, zi) in gw.iter_mut().zip(row) {
                *gwi += g * zi;
            }
            gb += g;
        }
        let mut norm_sq = 0.0;
        for (gwi, wi) in gw.iter_mut().zip(&w) {
            *gwi = *gwi / n + LAMBDA * wi;
            norm_sq += *gwi * *gwi;
        }
        gb /= n;
        norm_sq += gb * gb;
        if math::sqrt(norm_sq) < TOL {
            break;
        }
        for (wi, gwi) in w.iter_mut().zip(&gw) {
            *wi -= lr * gwi;
        }
        b -= lr * gb;
    }
    Ok((w, b))
}

fn scores_of(z: &Matrix, w: &[f64], b: f64) -> Vec<f64> {
    (0..z.rows())
        .map(|r| z.row(r).iter().zip(w).map(|(zi, wi)| zi * wi).sum::<f64>() + b)
        .collect()
}

/// Fit a linear separator on training latents, report AUC on test scores.
pub fn linear_auc(
    z_train: &Matrix,
    y_train: &[u8],
    z_test: &Matrix,
    y_test: &[u8],
) -> Result<f64> {
    let (w, b) = fit_logistic(z_train, y_train)?;
    auc_mann_whitney(&scores_of(z_test, &w, b), y_test)
}

/// Prediction direction of an evaluation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Predict modality 1 from modality 2.
    Cross1From2,
    /// Predict modality 2 from modality 1.
    Cross2From1,
    SameView1,
    SameView2,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Cross1From2,
        Direction::Cross2From1,
        Direction::SameView1,
        Direction::SameView2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Cross1From2 => "x2_to_x1",
            Direction::Cross2From1 => "x1_to_x2",
            Direction::SameView1 => "same_view_x1",
            Direction::SameView2 => "same_view_x2",
        }
    }

    pub fn is_cross(self) -> bool {
        matches!(self, Direction::Cross1From2 | Direction::Cross2From1)
    }

    /// The modality whose features are being predicted.
    pub fn target(self) -> Modality {
        match self {
            Direction::Cross1From2 | Direction::SameView1 => Modality::One,
            Direction::Cross2From1 | Direction::SameView2 => Modality::Two,
        }
    }
}

/// One per-feature result.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub direction: Direction,
    pub feature: String,
    pub role: FeatureRole,
    pub r2: Option<f64>,
}

/// Full held-out evaluation of one trained model.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// AUC of a refit linear separator on the shared embedding.
    pub auc: Option<f64>,
    /// AUC of the model's own label head on the shared embedding.
    pub label_head_auc: Option<f64>,
    /// Count of features whose test variance was zero (R² undefined).
    pub r2_undefined: usize,
}

/// Median of a value list; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut vals = values.to_vec();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = vals.len() / 2;
    Some(if vals.len() % 2 == 1 {
        vals[mid]
    } else {
        (vals[mid - 1] + vals[mid]) / 2.0
    })
}

impl EvalReport {
    /// Median R² over rows accepted by the predicate; `None` when empty.
    pub fn median_r2_where(&self, keep: impl Fn(&EvalRow) -> bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|row| keep(row))
            .filter_map(|row| row.r2)
            .collect();
        median(&vals)
    }

    /// Median cross-modal R² (both directions pooled) for one role.
    pub fn median_cross_r2(&self, role: FeatureRole) -> Option<f64> {
        self.median_r2_where(|row| row.direction.is_cross() && row.role == role)
    }
}

/// Evaluate a trained model on the test split of its dataset.
pub fn evaluate(model: &Model, ds: &MultimodalDataset) -> Result<EvalReport> {
    let test = ds.test_indices()?;
    let x1_test = ds.x1.select_rows(&test);
    let x2_test = ds.x2.select_rows(&test);

    let mut report = EvalReport::default();
    for direction in Direction::ALL {
        let pred = match direction {
            Direction::Cross1From2 => cross_modal_predict(model, Modality::Two, &x2_test)?,
            Direction::Cross2From1 => cross_modal_predict(model, Modality::One, &x1_test)?,
            Direction::SameView1 => same_view_predict(model, Modality::One, &x1_test)?,
            Direction::SameView2 => same_view_predict(model, Modality::Two, &x2_test)?,
        };
        let target = direction.target();
        let truth = match target {
            Modality::One => &x1_test,
            Modality::Two => &x2_test,
        };
        let r2 = r2_per_feature(truth, &pred)?;
        for ((value, name), role) in r2
            .into_iter()
            .zip(ds.names(target))
            .zip(ds.roles(target))
        {
            if value.is_none() {
                report.r2_undefined += 1;
            }
            report.rows.push(EvalRow {
                direction,
                feature: name.clone(),
                role: *role,
                r2: value,
            });
        }
    }

    if let Some(y) = &ds.y {
        let train = ds.train_indices()?;
        let y_train: Vec<u8> = train.iter().map(|&r| y[r]).collect();
        let y_test: Vec<u8> = test.iter().map(|&r| y[r]).collect();
        if both_classes(&y_train) && both_classes(&y_test) {
            let z_all = shared_embedding(model, &ds.x1, &ds.x2)?;
            let z_train = z_all.select_rows(&train);
            let z_test = z_all.select_rows(&test);
            report.auc = Some(linear_auc(&z_train, &y_train, &z_test, &y_test)?);

            let bound = model.bind_const();
            let logits = bound.label_logit(&z_test.to_tensor())?;
            report.label_head_auc = Some(auc_mann_whitney(logits.values(), &y_test)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_perfect_and_mean_predictions() {
        let truth = Matrix::new(4, 2, alloc::vec![1.0, 5.0, 2.0, 6.0, 3.0, 7.0, 4.0, 8.0]).unwrap();
        let perfect = truth.clone();
        let r2 = r2_per_feature(&truth, &perfect).unwrap();
        assert_eq!(r2, alloc::vec![Some(1.0), Some(1.0)]);

        let mean_pred =
            Matrix::new(4, 2, alloc::vec![2.5, 6.5, 2.5, 6.5, 2.5, 6.5, 2.5, 6.5]).unwrap();
        let r2 = r2_per_feature(&truth, &mean_pred).unwrap();
        assert!((r2[0].unwrap()).abs() < 1e-15);
        assert!((r2[1].unwrap()).abs() < 1e-15);
    }

    #[test]
    fn r2_zero_variance_column_is_undefined() {
        let truth = Matrix::new(3, 1, alloc::vec![2.0, 2.0, 2.0]).unwrap();
        let pred = Matrix::new(3, 1, alloc::vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r2_per_feature(&truth, &pred).unwrap(), alloc::vec![None]);
    }

    #[test]
    fn r2_needs_two_rows() {
        let a = Matrix::new(1, 1, alloc::vec![1.0]).unwrap();
        assert!(matches!(
            r2_per_feature(&a, &a),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn auc_perfectly_separated_is_one() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [0, 0, 1, 1];
        assert_eq!(auc_mann_whitney(&scores, &labels).unwrap(), 1.0);
        assert_eq!(
            auc_mann_whitney(&scores, &[1, 1, 0, 0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn auc_hand_case_with_tie() {
        // scores: pos {3, 2, 2}, neg {1, 2, 0, 0, 1}
        // pairwise: wins + 0.5·ties over 3·5 pairs
        let scores = [3.0, 2.0, 2.0, 1.0, 2.0, 0.0, 0.0, 1.0];
        let labels = [1, 1, 1, 0, 0, 0, 0, 0];
        let mut wins = 0.0;
        for (sp, lp) in scores.iter().zip(&labels) {
            if *lp != 1 {
                continue;
            }
            for (sn, ln) in scores.iter().zip(&labels) {
                if *ln != 0 {
                    continue;
                }
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        let expected = wins / 15.0;
        assert_eq!(auc_mann_whitney(&scores, &labels).unwrap(), expected);
    }

    #[test]
    fn auc_single_class_errors() {
        assert!(matches!(
            auc_mann_whitney(&[0.4, 0.6], &[1, 1]),
            Err(Error::SingleClassLabels { .. })
        ));
    }

    #[test]
    fn logistic_separates_separable_latents() {
        let z = Matrix::new(8, 1, alloc::vec![-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0]).unwrap();
        let y = [0, 0, 0, 0, 1, 1, 1, 1];
        let auc = linear_auc(&z, &y, &z, &y).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn label_independent_scores_give_half() {
        let mut r = crate::rng::stream(400, 0);
        let n = 4000;
        let z = Matrix::new(n, 1, crate::rng::normal_vec(&mut r, n)).unwrap();
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let auc = auc_mann_whitney(&z.column(0), &y).unwrap();
        assert!((auc - 0.5).abs() < 0.03, "auc {auc}");
    }
}
