//! Measure prediction from a checkpoint.

use std::time::Instant;

use ndarray::{s, Array2};
use thiserror::Error;

use crate::features::{extract_tabular, sample_points};
use crate::tractio::Bundle;

use super::checkpoint::Checkpoint;
use super::forward::infer;
use super::params::NetworkParams;
use super::NnError;

/// Bundles per single-precision input copy.
const CHUNK: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("{bundles} bundles but {seeds} sampling seeds")]
    SeedCount { bundles: usize, seeds: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Holds an f32 copy of the weights for fast inference and the f64
/// originals for exact comparison.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub checkpoint: Checkpoint,
    params32: NetworkParams<f32>,
    /// Seconds spent in the last [`Predictor::predict`] call.
    pub last_seconds: f64,
}

impl Predictor {
    pub fn new(checkpoint: Checkpoint) -> Self {
        let params32 = checkpoint.params.cast::<f32>();
        Predictor { checkpoint, params32, last_seconds: 0.0 }
    }

    fn inputs(&self, bundles: &[Bundle], seeds: &[u64]) -> Result<(Array2<f64>, Array2<f64>), PredictError> {
        if bundles.len() != seeds.len() {
            return Err(PredictError::SeedCount { bundles: bundles.len(), seeds: seeds.len() });
        }
        let cfg = &self.checkpoint.config;
        let n = cfg.n_points;
        let mut x = Array2::zeros((bundles.len() * n, 3));
        let mut t = Array2::zeros((bundles.len(), 2));
        for (i, (b, &seed)) in bundles.iter().zip(seeds).enumerate() {
            for (j, p) in sample_points(b, n, seed).into_iter().enumerate() {
                for a in 0..3 {
                    x[[i * n + j, a]] = p[a] * cfg.coord_scale;
                }
            }
            let tab = self.checkpoint.tab.apply(extract_tabular(b));
            t[[i, 0]] = tab[0];
            t[[i, 1]] = tab[1];
        }
        Ok((x, t))
    }

    /// Network outputs to the ten measures.
    fn decode(&self, raw: Array2<f64>) -> Array2<f64> {
        let pca = &self.checkpoint.pca;
        if self.checkpoint.config.variant.uses_pca() {
            let scores = pca.unstandardize_scores(raw.view());
            pca.inverse_transform(scores.view()).expect("k columns by construction")
        } else {
            pca.unstandardize_rows(raw.view())
        }
    }

    fn run<T>(&self, params: &NetworkParams<T>, x: &Array2<f64>, t: &Array2<f64>) -> Result<Array2<f64>, NnError>
    where
        T: ndarray::LinalgScalar + num_traits::Float,
    {
        let n = self.checkpoint.config.n_points;
        let cast = |v: f64| T::from(v).expect("float cast");
        let n_bundles = t.nrows();
        let mut out = Array2::zeros((n_bundles, params.out_dim()));
        for start in (0..n_bundles).step_by(CHUNK) {
            let end = (start + CHUNK).min(n_bundles);
            let xs = x.slice(s![start * n..end * n, ..]).mapv(cast);
            let ts = t.slice(s![start..end, ..]).mapv(cast);
            let y = infer(params, xs.view(), n, Some(ts.view()))?;
            out.slice_mut(s![start..end, ..]).assign(&y.mapv(|v| v.to_f64().expect("float")));
        }
        Ok(out)
    }

    /// Predicts the ten measures (`bundles x 10`) with single-precision
    /// arithmetic. `seeds` drive the point sampling of each bundle.
    pub fn predict(&mut self, bundles: &[Bundle], seeds: &[u64]) -> Result<Array2<f64>, PredictError> {
        let start = Instant::now();
        let (x, t) = self.inputs(bundles, seeds)?;
        let raw = self.run(&self.params32, &x, &t)?;
        let out = self.decode(raw);
        self.last_seconds = start.elapsed().as_secs_f64();
        Ok(out)
    }

    /// Same as [`Predictor::predict`] in double precision.
    pub fn predict_f64(&self, bundles: &[Bundle], seeds: &[u64]) -> Result<Array2<f64>, PredictError> {
        let (x, t) = self.inputs(bundles, seeds)?;
        let raw = self.run(&self.checkpoint.params, &x, &t)?;
        Ok(self.decode(raw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::checkpoint::Checkpoint;
    use crate::nn::{TrainConfig, Variant};
    use crate::pca::PcaModel;
    use crate::features::TabStandardizer;
    use crate::tractio::Point3;

    fn bundles() -> Vec<Bundle> {
        (0..5)
            .map(|k| {
                let lines = (0..4 + k)
                    .map(|i| (0..12).map(|j| Point3::new(i as f64, j as f64 * 2.0, (k * j) as f64 * 0.3)).collect())
                    .collect();
                Bundle::from_points(lines).unwrap()
            })
            .collect()
    }

    fn checkpoint(variant: Variant) -> Checkpoint {
        let x = Array2::from_shape_fn((40, 10), |(i, j)| ((i * 13 + j * 7) % 19) as f64 + (i * j) as f64 * 0.02 + 1.0);
        let out = if variant.uses_pca() { 5 } else { 10 };
        Checkpoint {
            config: TrainConfig { variant, n_points: 32, ..TrainConfig::default() },
            config_hash: String::new(),
            pca: PcaModel::fit(x.view(), 5).unwrap(),
            tab: TabStandardizer { mean: [6.0, 72.0], sd: [1.5, 18.0] },
            params: NetworkParams::init(variant, out, 4),
        }
    }

    #[test]
    fn outputs_ten_measures_and_f32_tracks_f64() {
        for v in Variant::ALL {
            let mut p = Predictor::new(checkpoint(v));
            let b = bundles();
            let seeds: Vec<u64> = (0..5).collect();
            let y = p.predict(&b, &seeds).unwrap();
            assert_eq!(y.dim(), (5, 10));
            let y64 = p.predict_f64(&b, &seeds).unwrap();
            let scale = p.checkpoint.pca.feature_sd.clone();
            for i in 0..5 {
                for j in 0..10 {
                    assert!(((y[[i, j]] - y64[[i, j]]) / scale[j]).abs() < 1e-4, "{v}");
                }
            }
        }
    }

    #[test]
    fn chunking_does_not_change_results() {
        let p = Predictor::new(checkpoint(Variant::Full));
        let b: Vec<Bundle> = bundles().into_iter().cycle().take(CHUNK + 7).collect();
        let seeds: Vec<u64> = (0..b.len() as u64).collect();
        let all = p.predict_f64(&b, &seeds).unwrap();
        let last = p.predict_f64(&b[CHUNK + 3..CHUNK + 4], &seeds[CHUNK + 3..CHUNK + 4]).unwrap();
        assert_eq!(all.row(CHUNK + 3), last.row(0));
    }

    #[test]
    fn seed_count_checked() {
        let mut p = Predictor::new(checkpoint(Variant::Pca));
        assert!(matches!(p.predict(&bundles(), &[1, 2]), Err(PredictError::SeedCount { .. })));
    }
}
