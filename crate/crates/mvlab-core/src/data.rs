//! Two-modality tabular datasets: feature-role partitioning by label
//! correlation, train/test splitting and train-statistics standardization.
//!
//! File parsing lives in the companion crate; this module works on
//! in-memory matrices.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::net::Modality;
use crate::rng;
use crate::tensor::Tensor;
use crate::{math, Error, Result};

/// Dense row-major matrix (plain data, no tape participation).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Matrix> {
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch {
                rows,
                cols,
                len: values.len(),
            });
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Gather a row subset, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            values.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }

    /// Gather a column subset, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut values = Vec::with_capacity(self.rows * idx.len());
        for r in 0..self.rows {
            let row = self.row(r);
            values.extend(idx.iter().map(|&c| row[c]));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            values,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::constant(self.rows, self.cols, self.values.clone()).expect("consistent dims")
    }

    /// Column means and population standard deviations over given rows.
    pub fn column_stats(&self, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; self.cols];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; self.cols];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(self.row(r)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let sd = var.into_iter().map(|s| math::sqrt(s / n)).collect();
        (mean, sd)
    }

    /// Z-score every column in place using all rows; errors when any
    /// column has (near-)zero variance.
    pub fn zscore_columns(&mut self, context: &'static str) -> Result<()> {
        let all: Vec<usize> = (0..self.rows).collect();
        let (mean, sd) = self.column_stats(&all);
        let degenerate: Vec<usize> = sd
            .iter()
            .enumerate()
            .filter(|(_, s)| **s < 1e-12)
            .map(|(c, _)| c)
            .collect();
        if !degenerate.is_empty() {
            return Err(Error::ZeroVarianceColumns {
                context,
                columns: degenerate,
            });
        }
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = (self.get(r, c) - mean[c]) / sd[c];
                self.set(r, c, v);
            }
        }
        Ok(())
    }
}

/// Feature role relative to the external label or ground-truth latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRole {
    SharedProxy,
    Other,
}

impl FeatureRole {
    pub fn name(self) -> &'static str {
        match self {
            FeatureRole::SharedProxy => "shared-proxy",
            FeatureRole::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Per-modality train-statistics used to standardize both splits.
#[derive(Debug, Clone)]
pub struct Standardization {
    pub mean: [Vec<f64>; 2],
    pub sd: [Vec<f64>; 2],
}

/// Two sample-aligned feature matrices with roles, names, optional
/// binary label and optional split mask.
#[derive(Debug, Clone)]
pub struct MultimodalDataset {
    pub x1: Matrix,
    pub x2: Matrix,
    pub y: Option<Vec<u8>>,
    pub roles1: Vec<FeatureRole>,
    pub roles2: Vec<FeatureRole>,
    pub names1: Vec<String>,
    pub names2: Vec<String>,
    pub split: Option<Vec<Split>>,
    pub standardization: Option<Standardization>,
}

impl MultimodalDataset {
    pub fn new(
        x1: Matrix,
        x2: Matrix,
        y: Option<Vec<u8>>,
        roles1: Vec<FeatureRole>,
        roles2: Vec<FeatureRole>,
        names1: Vec<String>,
        names2: Vec<String>,
    ) -> Result<MultimodalDataset> {
        if x1.rows() != x2.rows() {
            return Err(Error::RowCountMismatch {
                what: "dataset modalities",
                left: x1.rows(),
                right: x2.rows(),
            });
        }
        if let Some(y) = &y {
            if y.len() != x1.rows() {
                return Err(Error::RowCountMismatch {
                    what: "dataset labels",
                    left: x1.rows(),
                    right: y.len(),
                });
            }
        }
        if roles1.len() != x1.cols()
            || roles2.len() != x2.cols()
            || names1.len() != x1.cols()
            || names2.len() != x2.cols()
        {
            return Err(Error::InvalidConfig(String::from(
                "feature roles/names must match column counts",
            )));
        }
        Ok(MultimodalDataset {
            x1,
            x2,
            y,
            roles1,
            roles2,
            names1,
            names2,
            split: None,
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x1.rows()
    }

    pub fn x(&self, m: Modality) -> &Matrix {
        match m {
            Modality::One => &self.x1,
            Modality::Two => &self.x2,
        }
    }

    pub fn roles(&self, m: Modality) -> &[FeatureRole] {
        match m {
            Modality::One => &self.roles1,
            Modality::Two => &self.roles2,
        }
    }

    pub fn names(&self, m: Modality) -> &[String] {
        match m {
            Modality::One => &self.names1,
            Modality::Two => &self.names2,
        }
    }

    fn split_ref(&self) -> Result<&[Split]> {
        self.split
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig(String::from("dataset has no split mask")))
    }

    pub fn train_indices(&self) -> Result<Vec<usize>> {
        Ok(indices_of(self.split_ref()?, Split::Train))
    }

    pub fn test_indices(&self) -> Result<Vec<usize>> {
        Ok(indices_of(self.split_ref()?, Split::Test))
    }

    /// Attach a uniform random split mask derived from `seed`.
    ///
    /// The test set has round(N · test_fraction) samples, at least 1 and
    /// at most N − 1.
    pub fn with_split(mut self, test_fraction: f64, seed: u64) -> Result<MultimodalDataset> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::InvalidConfig(String::from(
                "test_fraction must lie in (0, 1)",
            )));
        }
        let n = self.n();
        if n < 2 {
            return Err(Error::TooFewRows {
                context: "split",
                rows: n,
            });
        }
        let n_test = (libm::round(n as f64 * test_fraction) as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut rng::stream(seed, rng::TAG_SPLIT), &mut order);
        let mut mask = vec![Split::Train; n];
        for &i in order.iter().take(n_test) {
            mask[i] = Split::Test;
        }
        self.split = Some(mask);
        Ok(self)
    }

    /// Z-score every column of both modalities using training-split
    /// statistics; the statistics are stored on the dataset.
    pub fn standardize(mut self, context: &'static str) -> Result<MultimodalDataset> {
        let train = self.train_indices()?;
        let mut means = [Vec::new(), Vec::new()];
        let mut sds = [Vec::new(), Vec::new()];
        for (mi, x) in [&self.x1, &self.x2].into_iter().enumerate() {
            let (mean, sd) = x.column_stats(&train);
            let degenerate: Vec<usize> = sd
                .iter()
                .enumerate()
                .filter(|(_, s)| **s < 1e-12)
                .map(|(c, _)| c)
                .collect();
            if !degenerate.is_empty() {
                return Err(Error::ZeroVarianceColumns {
                    context,
                    columns: degenerate,
                });
            }
            means[mi] = mean;
            sds[mi] = sd;
        }
        for (mi, x) in [&mut self.x1, &mut self.x2].into_iter().enumerate() {
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    let v = (x.get(r, c) - means[mi][c]) / sds[mi][c];
                    x.set(r, c, v);
                }
            }
        }
        self.standardization = Some(Standardization {
            mean: means,
            sd: sds,
        });
        Ok(self)
    }
}

fn indices_of(mask: &[Split], which: Split) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, s)| **s == which)
        .map(|(i, _)| i)
        .collect()
}

/// Split then standardize: the standard preparation for generated data
/// whose feature roles are already known.
pub fn split_and_standardize(
    ds: MultimodalDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<MultimodalDataset> {
    ds.with_split(test_fraction, seed)?
        .standardize("train-split standardization")
}

/// Outcome of label-correlation feature partitioning for one modality.
#[derive(Debug, Clone)]
pub struct PartitionOutcome {
    /// Kept column indices (ascending), length P + Q.
    pub kept: Vec<usize>,
    /// Role per kept column, aligned with `kept`.
    pub roles: Vec<FeatureRole>,
    /// Columns whose correlation was undefined (zero variance).
    pub zero_variance: usize,
}

/// Absolute Pearson correlation of each column with the binary label,
/// computed over `rows` only; zero-variance columns score 0.
fn abs_correlations(x: &Matrix, y: &[u8], rows: &[usize]) -> (Vec<f64>, usize) {
    let n = rows.len() as f64;
    let y_mean = rows.iter().map(|&r| y[r] as f64).sum::<f64>() / n;
    let y_ss: f64 = rows
        .iter()
        .map(|&r| {
            let d = y[r] as f64 - y_mean;
            d * d
        })
        .sum();
    let mut zero_variance = 0;
    let mut out = Vec::with_capacity(x.cols());
    for c in 0..x.cols() {
        let x_mean = rows.iter().map(|&r| x.get(r, c)).sum::<f64>() / n;
        let mut xy = 0.0;
        let mut xx = 0.0;
        for &r in rows {
            let dx = x.get(r, c) - x_mean;
            xy += dx * (y[r] as f64 - y_mean);
            xx += dx * dx;
        }
        if xx < 1e-24 {
            zero_variance += 1;
            out.push(0.0);
        } else {
            out.push(math::abs(xy / math::sqrt(xx * y_ss)));
        }
    }
    (out, zero_variance)
}

/// Order features by |Pearson r| with the label on the training rows;
/// the top P become shared-proxy, the bottom Q become other, the middle
/// is discarded.
///
/// Deterministic tie-break: features are sorted by |r| descending with
/// ties broken by ascending column index; shared-proxy takes the first P
/// of that order and other takes the last Q.
pub fn partition_features(
    x: &Matrix,
    y: &[u8],
    train_rows: &[usize],
    p: usize,
    q: usize,
) -> Result<PartitionOutcome> {
    if p + q == 0 || p + q > x.cols() {
        return Err(Error::InvalidConfig(alloc::format!(
            "partition requires 1 <= P+Q <= {} (got P={p}, Q={q})",
            x.cols()
        )));
    }
    let has_both = train_rows.iter().any(|&r| y[r] == 0) && train_rows.iter().any(|&r| y[r] == 1);
    if !has_both {
        return Err(Error::SingleClassLabels {
            context: "partition_features",
        });
    }
    let (r, zero_variance) = abs_correlations(x, y, train_rows);
    let mut order: Vec<usize> = (0..x.cols()).collect();
    order.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap().then(a.cmp(&b)));

    let mut kept: Vec<(usize, FeatureRole)> = Vec::with_capacity(p + q);
    kept.extend(order[..p].iter().map(|&c| (c, FeatureRole::SharedProxy)));
    kept.extend(
        order[x.cols() - q..]
            .iter()
            .map(|&c| (c, FeatureRole::Other)),
    );
    kept.sort_by_key(|&(c, _)| c);
    Ok(PartitionOutcome {
        kept: kept.iter().map(|&(c, _)| c).collect(),
        roles: kept.iter().map(|&(_, role)| role).collect(),
        zero_variance,
    })
}

/// Report of a two-modality partition (manifest material).
#[derive(Debug, Clone, Copy)]
pub struct PartitionReport {
    pub zero_variance: [usize; 2],
}

/// Apply label-correlation partitioning to both modalities of a split
/// dataset, keeping P_m + Q_m columns each.
pub fn partition_dataset(
    ds: MultimodalDataset,
    p1: usize,
    q1: usize,
    p2: usize,
    q2: usize,
) -> Result<(MultimodalDataset, PartitionReport)> {
    let y = ds
        .y
        .clone()
        .ok_or_else(|| Error::InvalidConfig(String::from("partitioning requires labels")))?;
    let train = ds.train_indices()?;
    let o1 = partition_features(&ds.x1, &y, &train, p1, q1)?;
    let o2 = partition_features(&ds.x2, &y, &train, p2, q2)?;
    let pick_names = |names: &[String], kept: &[usize]| -> Vec<String> {
        kept.iter().map(|&c| names[c].clone()).collect()
    };
    let report = PartitionReport {
        zero_variance: [o1.zero_variance, o2.zero_variance],
    };
    let out = MultimodalDataset {
        x1: ds.x1.select_columns(&o1.kept),
        x2: ds.x2.select_columns(&o2.kept),
        names1: pick_names(&ds.names1, &o1.kept),
        names2: pick_names(&ds.names2, &o2.kept),
        roles1: o1.roles,
        roles2: o2.roles,
        y: Some(y),
        split: ds.split,
        standardization: None,
    };
    Ok((out, report))
}
