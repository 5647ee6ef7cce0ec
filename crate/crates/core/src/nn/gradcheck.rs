//! Finite-difference check of the analytic gradients.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{domain, keyed_rng};

use super::backward::backward;
use super::forward::forward;
use super::loss::paired_loss;
use super::params::NetworkParams;
use super::{NnError, Variant};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub probes: usize,
    /// Probes discarded because `+h` or `-h` crossed a ReLU or pooling kink.
    pub redrawn: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

struct Problem {
    x: Array2<f64>,
    tab: Array2<f64>,
    y: Array2<f64>,
    n_points: usize,
    lambda: f64,
}

impl Problem {
    fn eval(&self, p: &NetworkParams<f64>, want_grad: bool) -> Result<(f64, (Vec<bool>, Vec<usize>), Option<NetworkParams<f64>>), NnError> {
        let tab = p.uses_tabular().then(|| self.tab.view());
        let c = forward(p, self.x.view(), self.n_points, tab)?;
        let h = c.batch / 2;
        let l = paired_loss(
            c.out.slice(s![..h, ..]),
            c.out.slice(s![h.., ..]),
            self.y.slice(s![..h, ..]),
            self.y.slice(s![h.., ..]),
            self.lambda,
        )?;
        let g = if want_grad {
            let d = ndarray::concatenate(ndarray::Axis(0), &[l.grad_a.view(), l.grad_b.view()]).expect("same width");
            Some(backward(p, &c, d.view())?)
        } else {
            None
        };
        Ok((l.value, c.pattern(), g))
    }
}

/// Compares analytic and central-difference gradients at `probes` parameter
/// entries of a randomly initialized network on random inputs. Every tensor
/// is probed at least once (when `probes` allows); the rest are uniform.
pub fn gradient_check(
    variant: Variant,
    n_points: usize,
    batch: usize,
    probes: usize,
    seed: u64,
) -> Result<GradcheckReport, NnError> {
    assert!(batch >= 2 && batch % 2 == 0, "batch must be even");
    let mut rng = keyed_rng(seed, &[domain::GRADCHECK]);
    let out_dim = if variant.uses_pca() { 5 } else { 10 };
    let mut normal = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(&mut rng));
    let prob = Problem {
        x: normal(batch * n_points, 3),
        tab: normal(batch, 2),
        y: normal(batch, out_dim),
        n_points,
        lambda: 1.0,
    };
    let mut rng = keyed_rng(seed, &[domain::GRADCHECK, 1]);
    let mut params = NetworkParams::init(variant, out_dim, seed);
    let (_, base_pattern, grads) = prob.eval(&params, true)?;
    let grads = grads.expect("requested");
    let names: Vec<String> = params.tensors().into_iter().map(|t| t.0).collect();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.2.len()).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.2.to_vec()).collect();

    let mut report = GradcheckReport { probes: 0, redrawn: 0, max_rel_err: 0.0, worst: String::new() };
    let max_attempts = 50 * probes.max(1);
    let mut attempts = 0;
    while report.probes < probes && attempts < max_attempts {
        attempts += 1;
        let t = if report.probes < sizes.len() { report.probes } else { rng.random_range(0..sizes.len()) };
        let i = rng.random_range(0..sizes[t]);
        let orig = params.tensors()[t].2[i];
        let mut at = |v: f64| -> Result<(f64, (Vec<bool>, Vec<usize>)), NnError> {
            params.tensors_mut()[t][i] = v;
            let (l, pat, _) = prob.eval(&params, false)?;
            Ok((l, pat))
        };
        let (lp, pp) = at(orig + STEP)?;
        let (lm, pm) = at(orig - STEP)?;
        params.tensors_mut()[t][i] = orig;
        if pp != base_pattern || pm != base_pattern {
            report.redrawn += 1;
            continue;
        }
        let num = (lp - lm) / (2.0 * STEP);
        let a = analytic[t][i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(REL_FLOOR);
        if rel >= report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = format!("{}[{i}]: analytic {a:e}, numeric {num:e}", names[t]);
        }
        report.probes += 1;
    }
    Ok(report)
}
