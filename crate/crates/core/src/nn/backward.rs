//! Analytic gradients of the network parameters.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis};

use super::forward::{col_sums, ForwardCache};
use super::params::NetworkParams;
use super::{shape_err, NnError};

fn relu_mask(grad: &mut Array2<f64>, act: &ArrayView2<f64>) {
    grad.zip_mut_with(act, |g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Gradient of the loss with respect to every parameter, given `d_out`
/// (`dL/d out`, `B x out`). The result has the same layout as `params`.
pub fn backward(
    params: &NetworkParams<f64>,
    cache: &ForwardCache,
    d_out: ArrayView2<f64>,
) -> Result<NetworkParams<f64>, NnError> {
    if d_out.dim() != cache.out.dim() {
        return Err(shape_err("output gradient", cache.out.dim(), d_out.dim()));
    }
    let mut g = NetworkParams::<f64>::zeros_like(params);

    // Head.
    g.head[1].w = cache.head_hidden.t().dot(&d_out);
    g.head[1].b = d_out.sum_axis(Axis(0));
    let mut dz = d_out.dot(&params.head[1].w.t());
    relu_mask(&mut dz, &cache.head_hidden.view());
    g.head[0].w = cache.head_in.t().dot(&dz);
    g.head[0].b = col_sums(&dz);
    let d_head_in = dz.dot(&params.head[0].w.t());
    let n_pool = cache.point_acts.last().expect("nonempty stack").ncols();

    // Tabular stack.
    if let (Some(layers), Some(t)) = (&params.tab, &cache.tab_in) {
        let gt = g.tab.as_mut().expect("same layout");
        let mut da = d_head_in.slice(s![.., n_pool..]).to_owned();
        for l in (0..layers.len()).rev() {
            relu_mask(&mut da, &cache.tab_acts[l].view());
            let input = if l == 0 { t.view() } else { cache.tab_acts[l - 1].view() };
            gt[l].w = input.t().dot(&da);
            gt[l].b = col_sums(&da);
            if l > 0 {
                da = da.dot(&layers[l].w.t());
            }
        }
    }

    // Point stack: only the rows that won a pooled channel carry gradient.
    let d_pooled = d_head_in.slice(s![.., ..n_pool]);
    let mut rows: Vec<usize> = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    for b in 0..cache.batch {
        for c in 0..n_pool {
            let r = b * cache.n_points + cache.argmax[[b, c]];
            pos.entry(r).or_insert_with(|| {
                rows.push(r);
                rows.len() - 1
            });
        }
    }
    let mut da = Array2::<f64>::zeros((rows.len(), n_pool));
    for b in 0..cache.batch {
        for c in 0..n_pool {
            let r = b * cache.n_points + cache.argmax[[b, c]];
            da[[pos[&r], c]] += d_pooled[[b, c]];
        }
    }
    for l in (0..params.point.len()).rev() {
        let act = cache.point_acts[l].select(Axis(0), &rows);
        relu_mask(&mut da, &act.view());
        let input = if l == 0 { cache.x.select(Axis(0), &rows) } else { cache.point_acts[l - 1].select(Axis(0), &rows) };
        g.point[l].w = input.t().dot(&da);
        g.point[l].b = col_sums(&da);
        if l > 0 {
            da = da.dot(&params.point[l].w.t());
        }
    }
    Ok(g)
}

impl NetworkParams<f64> {
    pub fn zeros_like(other: &NetworkParams<f64>) -> Self {
        let z = |l: &super::Dense<f64>| super::Dense::zeros(l.fan_in(), l.fan_out());
        NetworkParams {
            point: other.point.iter().map(z).collect(),
            tab: other.tab.as_ref().map(|t| t.iter().map(z).collect()),
            head: other.head.iter().map(z).collect(),
        }
    }
}
