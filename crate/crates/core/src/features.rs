//! Model inputs: a fixed-size centered point cloud and the tabular
//! descriptors (streamline count, point count) of the raw bundle.
//!
//! Clouds are centered on their own centroid but never rescaled. The targets
//! (length, volume, ...) depend on absolute scale, so per-sample scale
//! normalization would remove the signal the model has to learn.

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::rng::{domain, keyed_rng};
use crate::tractio::{Bundle, Point3};

/// Default number of sampled points per bundle.
pub const DEFAULT_N_POINTS: usize = 256;

/// Number of tabular descriptors.
pub const TABULAR_DIM: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("column {column} has zero variance over the training rows")]
    ZeroVariance { column: usize },
    #[error("at least 2 rows are required to fit a standardizer, got {0}")]
    TooFewRows(usize),
    #[error("non-finite value in column {column}")]
    NonFinite { column: usize },
}

/// One model sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFeatures {
    /// `n_points` rows of centered xyz in mm.
    pub points: Vec<[f64; 3]>,
    /// Standardized (NoS, NoP).
    pub tabular: [f64; TABULAR_DIM],
    /// Standardized regression target (5 PCA scores or 10 measures).
    pub target: Vec<f64>,
    pub subject_id: String,
    pub cluster_id: String,
}

/// Samples `n` points from all streamline points of the bundle: without
/// replacement when the bundle has at least `n` points, with replacement
/// otherwise. The sampled cloud is then centered on its own centroid.
pub fn sample_points(bundle: &Bundle, n: usize, seed: u64) -> Vec<[f64; 3]> {
    assert!(n >= 1, "sample size must be at least 1");
    let all: Vec<Point3> = bundle.points().copied().collect();
    let mut rng = keyed_rng(seed, &[domain::SAMPLE_POINTS]);
    let picked: Vec<Point3> = if all.len() >= n {
        let mut idx = index::sample(&mut rng, all.len(), n).into_vec();
        // Keep the cloud in file order; the draw only selects.
        idx.sort_unstable();
        idx.into_iter().map(|i| all[i]).collect()
    } else {
        (0..n).map(|_| all[rng.random_range(0..all.len())]).collect()
    };
    let c = Point3::centroid(&picked);
    picked.into_iter().map(|p| (p - c).to_array()).collect()
}

/// (NoS, NoP) of the raw bundle.
pub fn extract_tabular(bundle: &Bundle) -> [f64; TABULAR_DIM] {
    [bundle.n_streamlines() as f64, bundle.n_points() as f64]
}

/// Per-column z-scoring with training-split statistics (population sd).
#[derive(Clone, Debug, PartialEq)]
pub struct TabStandardizer {
    pub mean: [f64; TABULAR_DIM],
    pub sd: [f64; TABULAR_DIM],
}

impl TabStandardizer {
    pub fn fit(rows: &[[f64; TABULAR_DIM]]) -> Result<Self, FeatureError> {
        if rows.len() < 2 {
            return Err(FeatureError::TooFewRows(rows.len()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; TABULAR_DIM];
        let mut sd = [0.0; TABULAR_DIM];
        for c in 0..TABULAR_DIM {
            if rows.iter().any(|r| !r[c].is_finite()) {
                return Err(FeatureError::NonFinite { column: c });
            }
            mean[c] = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            sd[c] = var.sqrt();
            if !(sd[c] > 0.0) {
                return Err(FeatureError::ZeroVariance { column: c });
            }
        }
        Ok(TabStandardizer { mean, sd })
    }

    pub fn apply(&self, row: [f64; TABULAR_DIM]) -> [f64; TABULAR_DIM] {
        std::array::from_fn(|c| (row[c] - self.mean[c]) / self.sd[c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_bundle(n_lines: usize, n_pts: usize) -> Bundle {
        let lines = (0..n_lines)
            .map(|i| {
                (0..n_pts)
                    .map(|j| Point3::new(i as f64, j as f64 * 0.5, (i * j) as f64 * 0.1))
                    .collect()
            })
            .collect();
        Bundle::from_points(lines).unwrap()
    }

    #[test]
    fn downsampled_cloud_is_centered() {
        let b = grid_bundle(3, 10);
        let pts = sample_points(&b, 8, 5);
        assert_eq!(pts.len(), 8);
        for a in 0..3 {
            assert!(pts.iter().map(|p| p[a]).sum::<f64>().abs() < 1e-9);
        }
        // Without replacement: all rows distinct.
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                assert_ne!(pts[i], pts[j]);
            }
        }
    }

    #[test]
    fn upsampled_cloud_draws_from_the_bundle() {
        let b = grid_bundle(3, 10);
        let pts = sample_points(&b, 50, 5);
        assert_eq!(pts.len(), 50);
        // Undo the centering with the known centroid and check membership.
        let raw: Vec<Point3> = b.points().copied().collect();
        let shift = {
            // The centroid is recoverable: any raw point minus its centered image.
            let mut found = None;
            'outer: for r in &raw {
                for p in &pts {
                    let c = Point3::new(r.x - p[0], r.y - p[1], r.z - p[2]);
                    if pts.iter().all(|q| {
                        let g = Point3::new(q[0], q[1], q[2]) + c;
                        raw.iter().any(|o| o.dist(g) < 1e-9)
                    }) {
                        found = Some(c);
                        break 'outer;
                    }
                }
            }
            found
        };
        assert!(shift.is_some(), "sampled multiset is not a subset of the bundle points");
    }

    #[test]
    fn sampling_is_seeded() {
        let b = grid_bundle(5, 20);
        assert_eq!(sample_points(&b, 16, 1), sample_points(&b, 16, 1));
        assert_ne!(sample_points(&b, 16, 1), sample_points(&b, 16, 2));
    }

    #[test]
    fn translation_invariant_after_centering() {
        let b = grid_bundle(4, 12);
        let t = b.translated(Point3::new(13.5, -7.25, 100.0));
        let (p, q) = (sample_points(&b, 20, 9), sample_points(&t, 20, 9));
        for (a, c) in p.iter().zip(&q) {
            for k in 0..3 {
                assert!((a[k] - c[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tabular_counts() {
        let b = grid_bundle(25, 15);
        assert_eq!(extract_tabular(&b), [25.0, 375.0]);
        let _ = sample_points(&b, 8, 0);
        assert_eq!(extract_tabular(&b), [25.0, 375.0]);
        assert_eq!(extract_tabular(&grid_bundle(1, 2)), [1.0, 2.0]);
    }

    #[test]
    fn tabular_ignores_order_and_orientation() {
        let b = grid_bundle(6, 7);
        let mut lines: Vec<_> = b.streamlines().iter().map(|s| s.reversed()).collect();
        lines.reverse();
        assert_eq!(extract_tabular(&b.with_streamlines(lines).unwrap()), extract_tabular(&b));
    }

    #[test]
    fn standardizer_definition() {
        let s = TabStandardizer::fit(&[[10.0, 100.0], [20.0, 200.0]]).unwrap();
        assert_eq!(s.mean, [15.0, 150.0]);
        assert_eq!(s.sd, [5.0, 50.0]);
        assert_eq!(s.apply([10.0, 100.0]), [-1.0, -1.0]);
        assert_eq!(s.apply(s.mean), [0.0, 0.0]);
    }

    #[test]
    fn standardizer_errors() {
        assert_eq!(
            TabStandardizer::fit(&[[10.0, 1.0], [10.0, 2.0]]),
            Err(FeatureError::ZeroVariance { column: 0 })
        );
        assert_eq!(TabStandardizer::fit(&[[1.0, 2.0]]), Err(FeatureError::TooFewRows(1)));
    }
}
