//! Principal component analysis of shape-measure vectors.
//!
//! Columns are z-scored with training statistics (population sd) before the
//! SVD, because the measures mix units over several orders of magnitude.
//! Component signs are fixed so that each component's largest-magnitude
//! loading is positive, which makes the fitted model a deterministic function
//! of its input.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

/// Default number of retained components.
pub const DEFAULT_COMPONENTS: usize = 5;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PcaError {
    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("k = {k} must lie in 1..={d}")]
    InvalidK { k: usize, d: usize },
    #[error("non-finite value in the input matrix")]
    NonFinite,
    #[error("expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub feature_mean: Array1<f64>,
    pub feature_sd: Array1<f64>,
    /// `k x d`, orthonormal rows.
    pub components: Array2<f64>,
    /// Variance of each retained component's scores (`sigma^2 / n`).
    pub explained_variance: Array1<f64>,
    pub explained_variance_ratio: Array1<f64>,
    /// Ratios of all `d` directions (zero-padded when `n < d`); sums to 1.
    pub full_variance_ratio: Array1<f64>,
    /// Training score sds used to standardize regression targets.
    pub score_sd: Array1<f64>,
    /// Fewer than `k` nonzero singular values were found.
    pub rank_deficient: bool,
}

impl PcaModel {
    /// Fits `k` components to an `n x d` matrix of z-scored columns.
    pub fn fit(x: ArrayView2<f64>, k: usize) -> Result<Self, PcaError> {
        Self::fit_with(x, k, true)
    }

    /// Like [`PcaModel::fit`]; with `standardize = false` columns are only
    /// centered (`feature_sd` is all ones).
    pub fn fit_with(x: ArrayView2<f64>, k: usize, standardize: bool) -> Result<Self, PcaError> {
        let (n, d) = x.dim();
        if n < 2 {
            return Err(PcaError::TooFewRows(n));
        }
        if k < 1 || k > d {
            return Err(PcaError::InvalidK { k, d });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PcaError::NonFinite);
        }
        let nf = n as f64;
        let mean = x.mean_axis(Axis(0)).expect("n >= 2");
        let mut sd = Array1::zeros(d);
        for c in 0..d {
            let var = x.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / nf;
            if !(var > 0.0) {
                return Err(PcaError::ZeroVarianceColumn(c));
            }
            sd[c] = if standardize { var.sqrt() } else { 1.0 };
        }
        let z = (&x - &mean) / &sd;

        let m = DMatrix::from_fn(n, d, |i, j| z[[i, j]]);
        let svd = m.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let sv = svd.singular_values;

        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

        let total = z.iter().map(|v| v * v).sum::<f64>() / nf;
        let mut full_ratio = Array1::zeros(d);
        for (slot, &i) in order.iter().enumerate() {
            full_ratio[slot] = sv[i] * sv[i] / nf / total;
        }

        let smax = order.first().map(|&i| sv[i]).unwrap_or(0.0);
        let mut components = Array2::zeros((k, d));
        let mut explained_variance = Array1::zeros(k);
        let mut score_sd = Array1::ones(k);
        let mut rank = 0;
        for slot in 0..k.min(order.len()) {
            let i = order[slot];
            let mut row: Vec<f64> = (0..d).map(|j| v_t[(i, j)]).collect();
            let pivot = row
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (j, v)| if v.abs() > best.1 { (j, v.abs()) } else { best })
                .0;
            if row[pivot] < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            for (j, v) in row.into_iter().enumerate() {
                components[[slot, j]] = v;
            }
            let ev = sv[i] * sv[i] / nf;
            explained_variance[slot] = ev;
            if sv[i] > RANK_TOL * smax {
                score_sd[slot] = ev.sqrt();
                rank += 1;
            }
        }
        let rank_deficient = rank < k;
        if rank_deficient {
            log::warn!("PCA: only {rank} of {k} requested components have nonzero variance");
            if k > order.len() {
                // n < k: complete the basis so rows stay orthonormal.
                complete_basis(&mut components, order.len());
            }
        }
        let explained_variance_ratio = explained_variance.mapv(|v| v / total);

        Ok(PcaModel {
            feature_mean: mean,
            feature_sd: sd,
            components,
            explained_variance,
            explained_variance_ratio,
            full_variance_ratio: full_ratio,
            score_sd,
            rank_deficient,
        })
    }

    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    fn check_cols(&self, got: usize, expected: usize) -> Result<(), PcaError> {
        if got != expected {
            return Err(PcaError::ShapeMismatch { expected, got });
        }
        Ok(())
    }

    /// Rows (`n x d`) to scores (`n x k`).
    pub fn transform(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>, PcaError> {
        self.check_cols(rows.ncols(), self.dim())?;
        let z = (&rows - &self.feature_mean) / &self.feature_sd;
        Ok(z.dot(&self.components.t()))
    }

    /// Scores (`n x k`) back to measure rows (`n x d`).
    pub fn inverse_transform(&self, scores: ArrayView2<f64>) -> Result<Array2<f64>, PcaError> {
        self.check_cols(scores.ncols(), self.k())?;
        Ok(scores.dot(&self.components) * &self.feature_sd + &self.feature_mean)
    }

    pub fn standardize_scores(&self, scores: ArrayView2<f64>) -> Array2<f64> {
        &scores / &self.score_sd
    }

    pub fn unstandardize_scores(&self, scores: ArrayView2<f64>) -> Array2<f64> {
        &scores * &self.score_sd
    }

    /// Z-scores measure rows with the training mean/sd (no projection).
    pub fn standardize_rows(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        (&rows - &self.feature_mean) / &self.feature_sd
    }

    pub fn unstandardize_rows(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        &rows * &self.feature_sd + &self.feature_mean
    }

    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_variance_ratio.sum()
    }

    /// CSV export: one row each for the means and sds, then one per component.
    pub fn to_csv(&self, names: &[&str], comment: &str) -> String {
        let mut s = String::new();
        for line in comment.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("row,explained_variance,explained_variance_ratio,score_sd");
        for n in names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        let mut push = |label: String, head: String, vals: &mut dyn Iterator<Item = f64>| {
            let _ = write!(s, "{label},{head}");
            for v in vals {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        };
        push("mean".into(), ",,".into(), &mut self.feature_mean.iter().copied());
        push("sd".into(), ",,".into(), &mut self.feature_sd.iter().copied());
        for (i, row) in self.components.outer_iter().enumerate() {
            push(
                format!("pc{}", i + 1),
                format!(
                    "{:?},{:?},{:?}",
                    self.explained_variance[i], self.explained_variance_ratio[i], self.score_sd[i]
                ),
                &mut row.iter().copied(),
            );
        }
        s
    }
}

/// Fills rows `from..k` with unit vectors orthogonal to the rows above
/// (Gram-Schmidt over the standard basis).
fn complete_basis(c: &mut Array2<f64>, from: usize) {
    let (k, d) = c.dim();
    let mut row = from;
    for e in 0..d {
        if row == k {
            break;
        }
        let mut v = Array1::<f64>::zeros(d);
        v[e] = 1.0;
        for r in 0..row {
            let p = c.row(r).dot(&v);
            v.scaled_add(-p, &c.row(r));
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            c.row_mut(row).assign(&(v / norm));
            row += 1;
        }
    }
}
