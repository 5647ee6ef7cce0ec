//! Forward passes: a cached f64 pass for training and a generic inference pass.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, LinalgScalar};
use num_traits::Float;

use super::params::{Dense, NetworkParams};
use super::{shape_err, NnError};

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub batch: usize,
    pub n_points: usize,
    /// `(B*N) x 3` network input.
    pub x: Array2<f64>,
    /// Post-ReLU output of every point layer, `(B*N) x width`.
    pub point_acts: Vec<Array2<f64>>,
    /// Winning point (within its sample) for every pooled channel, `B x 256`.
    pub argmax: Array2<usize>,
    pub tab_in: Option<Array2<f64>>,
    pub tab_acts: Vec<Array2<f64>>,
    /// `B x (256 | 288)`.
    pub head_in: Array2<f64>,
    pub head_hidden: Array2<f64>,
    pub out: Array2<f64>,
}

impl ForwardCache {
    /// ReLU on/off pattern and pooling winners; two caches with the same
    /// pattern lie on the same linear piece of the network.
    pub fn pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let mut on = Vec::new();
        let acts = self.point_acts.iter().chain(&self.tab_acts).chain(std::iter::once(&self.head_hidden));
        for a in acts {
            on.extend(a.iter().map(|&v| v > 0.0));
        }
        (on, self.argmax.iter().copied().collect())
    }
}

fn affine<T: LinalgScalar>(x: &ArrayView2<T>, l: &Dense<T>) -> Array2<T> {
    let mut z = x.dot(&l.w);
    z.zip_mut_with(&l.b, |a, &b| *a = *a + b);
    z
}

fn relu_inplace<T: Float>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Max over each sample's `n` rows, ties to the lowest row.
fn max_pool<T: Float>(a: &Array2<T>, batch: usize, n: usize) -> (Array2<T>, Array2<usize>) {
    let c = a.ncols();
    let mut pooled = Array2::from_elem((batch, c), T::neg_infinity());
    let mut arg = Array2::zeros((batch, c));
    for b in 0..batch {
        let mut best = pooled.row_mut(b);
        let mut idx = arg.row_mut(b);
        for (i, row) in a.slice(s![b * n..(b + 1) * n, ..]).outer_iter().enumerate() {
            for j in 0..c {
                if row[j] > best[j] {
                    best[j] = row[j];
                    idx[j] = i;
                }
            }
        }
    }
    (pooled, arg)
}

fn check_inputs<T>(
    params: &NetworkParams<T>,
    x: &ArrayView2<T>,
    n_points: usize,
    tab: Option<&ArrayView2<T>>,
) -> Result<usize, NnError>
where
    T: LinalgScalar + Float,
{
    if n_points == 0 || x.ncols() != 3 || x.nrows() % n_points != 0 || x.nrows() == 0 {
        return Err(shape_err("point input", format!("(B*{n_points}, 3)"), x.dim()));
    }
    let batch = x.nrows() / n_points;
    if params.uses_tabular() {
        match tab {
            Some(t) if t.dim() == (batch, 2) => {}
            Some(t) => return Err(shape_err("tabular input", (batch, 2), t.dim())),
            None => return Err(shape_err("tabular input", (batch, 2), "none")),
        }
    }
    Ok(batch)
}

fn concat<T: Clone + num_traits::Zero>(a: &Array2<T>, b: Option<&Array2<T>>) -> Array2<T> {
    match b {
        None => a.clone(),
        Some(b) => {
            let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
            out.slice_mut(s![.., ..a.ncols()]).assign(a);
            out.slice_mut(s![.., a.ncols()..]).assign(b);
            out
        }
    }
}

/// Training forward pass over `B` samples of `n_points` rows each. Tabular
/// input is ignored by the point-only variants.
pub fn forward(
    params: &NetworkParams<f64>,
    x: ArrayView2<f64>,
    n_points: usize,
    tab: Option<ArrayView2<f64>>,
) -> Result<ForwardCache, NnError> {
    let batch = check_inputs(params, &x, n_points, tab.as_ref())?;
    let mut point_acts: Vec<Array2<f64>> = Vec::with_capacity(params.point.len());
    for l in &params.point {
        let input = point_acts.last().map_or(x.view(), |a| a.view());
        let mut a = affine(&input, l);
        relu_inplace(&mut a);
        point_acts.push(a);
    }
    let (pooled, argmax) = max_pool(point_acts.last().expect("nonempty stack"), batch, n_points);

    let (tab_in, tab_acts) = match (&params.tab, tab) {
        (Some(layers), Some(t)) => {
            let mut acts: Vec<Array2<f64>> = Vec::new();
            for l in layers {
                let input = acts.last().map_or(t.view(), |a| a.view());
                let mut a = affine(&input, l);
                relu_inplace(&mut a);
                acts.push(a);
            }
            (Some(t.to_owned()), acts)
        }
        _ => (None, Vec::new()),
    };
    let head_in = concat(&pooled, tab_acts.last());
    let mut head_hidden = affine(&head_in.view(), &params.head[0]);
    relu_inplace(&mut head_hidden);
    let out = affine(&head_hidden.view(), &params.head[1]);
    Ok(ForwardCache {
        batch,
        n_points,
        x: x.to_owned(),
        point_acts,
        argmax,
        tab_in,
        tab_acts,
        head_in,
        head_hidden,
        out,
    })
}

/// Inference pass without caches, in any float type.
pub fn infer<T>(
    params: &NetworkParams<T>,
    x: ArrayView2<T>,
    n_points: usize,
    tab: Option<ArrayView2<T>>,
) -> Result<Array2<T>, NnError>
where
    T: LinalgScalar + Float,
{
    let batch = check_inputs(params, &x, n_points, tab.as_ref())?;
    // One sample at a time keeps the widest activation at n_points rows.
    let width = params.point.last().expect("nonempty stack").w.ncols();
    let mut pooled = Array2::zeros((batch, width));
    for b in 0..batch {
        let mut h = x.slice(s![b * n_points..(b + 1) * n_points, ..]).to_owned();
        for l in &params.point {
            h = affine(&h.view(), l);
            relu_inplace(&mut h);
        }
        pooled.row_mut(b).assign(&max_pool(&h, 1, n_points).0.row(0));
    }
    let tab_feat = match (&params.tab, tab) {
        (Some(layers), Some(t)) => {
            let mut g = t.to_owned();
            for l in layers {
                g = affine(&g.view(), l);
                relu_inplace(&mut g);
            }
            Some(g)
        }
        _ => None,
    };
    let head_in = concat(&pooled, tab_feat.as_ref());
    let mut z = affine(&head_in.view(), &params.head[0]);
    relu_inplace(&mut z);
    Ok(affine(&z.view(), &params.head[1]))
}

/// Column sums, the bias gradient of an affine layer.
pub(crate) fn col_sums(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(Axis(0))
}
