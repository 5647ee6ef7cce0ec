//! Paired training loop.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::features::{SampleFeatures, TABULAR_DIM};
use crate::rng::{domain, keyed_rng};

use super::backward::backward;
use super::forward::forward;
use super::loss::paired_loss;
use super::optim::{Adam, AdamConfig, LrSchedule};
use super::params::NetworkParams;
use super::{NnError, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub n_points: usize,
    /// Multiplies point coordinates (mm) at the network input.
    pub coord_scale: f64,
    /// Samples per optimizer step; the two halves form the pairs.
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_pair: f64,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Full,
            n_points: crate::features::DEFAULT_N_POINTS,
            coord_scale: 0.02,
            batch_size: 32,
            epochs: 60,
            lambda_pair: 1.0,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return bad("batch_size must be even and at least 2");
        }
        if self.n_points == 0 {
            return bad("n_points must be positive");
        }
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return bad("coord_scale must be positive");
        }
        if !(self.lambda_pair >= 0.0 && self.lambda_pair.is_finite()) {
            return bad("lambda_pair must be non-negative");
        }
        if !(self.schedule.lr0 > 0.0) || self.schedule.period == 0 || !(self.schedule.gamma > 0.0) {
            return bad("lr0, lr_period and lr_gamma must be positive");
        }
        Ok(())
    }

    /// Flat `key -> value` form, floats printed exactly.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.to_string()),
            ("n_points", self.n_points.to_string()),
            ("coord_scale", format!("{:?}", self.coord_scale)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lambda_pair", format!("{:?}", self.lambda_pair)),
            ("lr0", format!("{:?}", self.schedule.lr0)),
            ("lr_period", self.schedule.period.to_string()),
            ("lr_gamma", format!("{:?}", self.schedule.gamma)),
            ("weight_decay", format!("{:?}", self.adam.weight_decay)),
            ("beta1", format!("{:?}", self.adam.beta1)),
            ("beta2", format!("{:?}", self.adam.beta2)),
            ("eps", format!("{:?}", self.adam.eps)),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Inverse of [`TrainConfig::to_kv`]; missing keys keep their defaults.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self, TrainError> {
        let mut c = TrainConfig::default();
        for (k, v) in kv {
            let err = || TrainError::InvalidConfig(format!("bad value '{v}' for {k}"));
            let f = || v.parse::<f64>().map_err(|_| err());
            let u = || v.parse::<usize>().map_err(|_| err());
            match k.as_str() {
                "variant" => c.variant = v.parse().map_err(TrainError::InvalidConfig)?,
                "n_points" => c.n_points = u()?,
                "coord_scale" => c.coord_scale = f()?,
                "batch_size" => c.batch_size = u()?,
                "epochs" => c.epochs = u()?,
                "lambda_pair" => c.lambda_pair = f()?,
                "lr0" => c.schedule.lr0 = f()?,
                "lr_period" => c.schedule.period = u()?,
                "lr_gamma" => c.schedule.gamma = f()?,
                "weight_decay" => c.adam.weight_decay = f()?,
                "beta1" => c.adam.beta1 = f()?,
                "beta2" => c.adam.beta2 = f()?,
                "eps" => c.adam.eps = f()?,
                "seed" => c.seed = v.parse().map_err(|_| err())?,
                _ => return Err(TrainError::InvalidConfig(format!("unknown key '{k}'"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Samples stacked into matrices: points `(S*N) x 3` (mm), tabular `S x 2`,
/// targets `S x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub n_points: usize,
    pub points: Array2<f64>,
    pub tabular: Array2<f64>,
    pub targets: Array2<f64>,
}

impl SampleSet {
    pub fn from_features(samples: &[SampleFeatures], n_points: usize) -> Result<Self, NnError> {
        let out = samples.first().map_or(0, |s| s.target.len());
        let mut points = Array2::zeros((samples.len() * n_points, 3));
        let mut tabular = Array2::zeros((samples.len(), TABULAR_DIM));
        let mut targets = Array2::zeros((samples.len(), out));
        for (i, s) in samples.iter().enumerate() {
            if s.points.len() != n_points {
                return Err(super::shape_err("sample points", n_points, s.points.len()));
            }
            if s.target.len() != out {
                return Err(super::shape_err("sample target", out, s.target.len()));
            }
            for (j, p) in s.points.iter().enumerate() {
                for a in 0..3 {
                    points[[i * n_points + j, a]] = p[a];
                }
            }
            for c in 0..TABULAR_DIM {
                tabular[[i, c]] = s.tabular[c];
            }
            for c in 0..out {
                targets[[i, c]] = s.target[c];
            }
        }
        Ok(SampleSet { n_points, points, tabular, targets })
    }

    pub fn len(&self) -> usize {
        self.tabular.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn out_dim(&self) -> usize {
        self.targets.ncols()
    }

    /// Rows of the chosen samples, points already scaled.
    pub fn gather(&self, idx: &[usize], coord_scale: f64) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let n = self.n_points;
        let mut x = Array2::zeros((idx.len() * n, 3));
        for (k, &i) in idx.iter().enumerate() {
            let mut dst = x.slice_mut(s![k * n..(k + 1) * n, ..]);
            dst.assign(&self.points.slice(s![i * n..(i + 1) * n, ..]));
            dst *= coord_scale;
        }
        (x, self.tabular.select(Axis(0), idx), self.targets.select(Axis(0), idx))
    }
}

/// The two weight-sharing branches. There is one parameter set; both
/// branches borrow it.
#[derive(Clone, Debug)]
pub struct SiameseNet {
    pub params: NetworkParams<f64>,
}

impl SiameseNet {
    pub fn branches(&self) -> (&NetworkParams<f64>, &NetworkParams<f64>) {
        (&self.params, &self.params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch,step,lr,train_loss,val_loss";

    pub fn csv_row(&self) -> String {
        let val = self.val_loss.map_or("nan".to_string(), |v| format!("{v:.8e}"));
        format!("{},{},{:e},{:.8e},{}", self.epoch, self.step, self.lr, self.train_loss, val)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: SiameseNet,
    pub log: Vec<EpochLog>,
    pub steps: usize,
    pub seconds: f64,
}

/// Loss and gradient of one pair batch: the first half of `idx` is branch
/// A, the second half branch B. Both halves run through the same weights in
/// one stacked pass.
fn pair_batch(
    net: &SiameseNet,
    data: &SampleSet,
    idx: &[usize],
    cfg: &TrainConfig,
    want_grad: bool,
) -> Result<(f64, Option<NetworkParams<f64>>), NnError> {
    let h = idx.len() / 2;
    let (x, t, y) = data.gather(&idx[..2 * h], cfg.coord_scale);
    let tab = net.params.uses_tabular().then(|| t.view());
    let cache = forward(&net.params, x.view(), data.n_points, tab)?;
    let out = &cache.out;
    let l = paired_loss(
        out.slice(s![..h, ..]),
        out.slice(s![h.., ..]),
        y.slice(s![..h, ..]),
        y.slice(s![h.., ..]),
        cfg.lambda_pair,
    )?;
    if !want_grad {
        return Ok((l.value, None));
    }
    let d_out = concatenate(Axis(0), &[l.grad_a.view(), l.grad_b.view()]).expect("same width");
    Ok((l.value, Some(backward(&net.params, &cache, d_out.view())?)))
}

/// Mean paired loss over consecutive batches of `data`, no update.
pub fn evaluate_loss(net: &SiameseNet, data: &SampleSet, cfg: &TrainConfig) -> Result<Option<f64>, NnError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in idx.chunks(cfg.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        sum += pair_batch(net, data, chunk, cfg, false)?.0;
        count += 1;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Trains from a seeded initialization. `on_epoch` sees every log row as it
/// is produced.
pub fn train(
    cfg: &TrainConfig,
    train_set: &SampleSet,
    val_set: Option<&SampleSet>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(TrainError::TooFewSamples(train_set.len()));
    }
    if train_set.n_points != cfg.n_points {
        return Err(NnError::ShapeMismatch {
            what: "training points per sample",
            expected: cfg.n_points.to_string(),
            got: train_set.n_points.to_string(),
        }
        .into());
    }
    let start = Instant::now();
    let mut net = SiameseNet { params: NetworkParams::init(cfg.variant, train_set.out_dim(), cfg.seed) };
    let mut opt = Adam::new(cfg.adam, &net.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = keyed_rng(cfg.seed, &[domain::SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        let mut lr = cfg.schedule.at(step);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (loss, grad) = pair_batch(&net, train_set, chunk, cfg, true)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, step });
            }
            lr = cfg.schedule.at(step);
            opt.step(&mut net.params, &grad.expect("requested"), lr);
            step += 1;
            sum += loss;
            count += 1;
        }
        if !net.params.all_finite() {
            return Err(TrainError::Diverged { epoch, step });
        }
        let val_loss = match val_set {
            Some(v) => evaluate_loss(&net, v, cfg)?,
            None => None,
        };
        let row = EpochLog { epoch, step, lr, train_loss: sum / count.max(1) as f64, val_loss };
        on_epoch(&row);
        log.push(row);
    }
    Ok(TrainOutcome { net, log, steps: step, seconds: start.elapsed().as_secs_f64() })
}
