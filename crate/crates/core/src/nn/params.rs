//! Parameter containers for the dual-encoder network.

use ndarray::{Array1, Array2, LinalgScalar};
use num_traits::Float;
use rand::Rng;

use crate::rng::{domain, keyed_rng};

use super::Variant;

/// Widths of the per-point shared stack (input first).
pub const POINT_WIDTHS: [usize; 5] = [3, 64, 64, 128, 256];
/// Widths of the tabular stack (input first).
pub const TAB_WIDTHS: [usize; 3] = [2, 16, 32];
/// Hidden width of the prediction head.
pub const HEAD_HIDDEN: usize = 128;

/// Affine layer `y = x W + b`, `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T = f64> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Clone + num_traits::Zero> Dense<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }
}

impl Dense<f64> {
    /// He-uniform on fan-in, zero bias.
    fn he_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
        Dense { w, b: Array1::zeros(fan_out) }
    }
}

impl<T: Copy> Dense<T> {
    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    fn map<U: Copy>(&self, f: impl Fn(T) -> U + Copy) -> Dense<U> {
        Dense { w: self.w.mapv(f), b: self.b.mapv(f) }
    }
}

/// All weights of one Siamese branch. Both branches use the same instance.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T = f64> {
    pub point: Vec<Dense<T>>,
    /// Absent for the point-only variants.
    pub tab: Option<Vec<Dense<T>>>,
    pub head: Vec<Dense<T>>,
}

impl<T: LinalgScalar + Float> NetworkParams<T> {
    pub fn zeros(variant: Variant, out_dim: usize) -> Self {
        let stack = |w: &[usize]| w.windows(2).map(|p| Dense::zeros(p[0], p[1])).collect::<Vec<_>>();
        let head_in = head_input_dim(variant);
        NetworkParams {
            point: stack(&POINT_WIDTHS),
            tab: variant.uses_tabular().then(|| stack(&TAB_WIDTHS)),
            head: vec![Dense::zeros(head_in, HEAD_HIDDEN), Dense::zeros(HEAD_HIDDEN, out_dim)],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.head[1].fan_out()
    }

    pub fn uses_tabular(&self) -> bool {
        self.tab.is_some()
    }

    fn layers(&self) -> impl Iterator<Item = (&'static str, usize, &Dense<T>)> {
        let point = self.point.iter().enumerate().map(|(i, l)| ("point", i, l));
        let tab = self.tab.iter().flatten().enumerate().map(|(i, l)| ("tab", i, l));
        let head = self.head.iter().enumerate().map(|(i, l)| ("head", i, l));
        point.chain(tab).chain(head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.point.iter_mut().chain(self.tab.iter_mut().flatten()).chain(self.head.iter_mut())
    }

    /// Named tensors in a fixed order: `(name, shape, values)`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for (group, i, l) in self.layers() {
            out.push((
                format!("{group}.{i}.weight"),
                vec![l.fan_in(), l.fan_out()],
                l.w.as_slice().expect("standard layout"),
            ));
            out.push((format!("{group}.{i}.bias"), vec![l.fan_out()], l.b.as_slice().expect("contiguous")));
        }
        out
    }

    /// Mutable tensors, same order as [`NetworkParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in self.layers_mut() {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("contiguous"));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: LinalgScalar + Float>(&self) -> NetworkParams<U> {
        let c = |x: T| U::from(x).expect("float cast");
        NetworkParams {
            point: self.point.iter().map(|l| l.map(c)).collect(),
            tab: self.tab.as_ref().map(|t| t.iter().map(|l| l.map(c)).collect()),
            head: self.head.iter().map(|l| l.map(c)).collect(),
        }
    }
}

impl NetworkParams<f64> {
    /// Seeded He-uniform initialization.
    pub fn init(variant: Variant, out_dim: usize, seed: u64) -> Self {
        let mut p = Self::zeros(variant, out_dim);
        let mut rng = keyed_rng(seed, &[domain::INIT]);
        for l in p.layers_mut() {
            *l = Dense::he_uniform(l.fan_in(), l.fan_out(), &mut rng);
        }
        p
    }
}

pub fn head_input_dim(variant: Variant) -> usize {
    let point = POINT_WIDTHS[POINT_WIDTHS.len() - 1];
    if variant.uses_tabular() {
        point + TAB_WIDTHS[TAB_WIDTHS.len() - 1]
    } else {
        point
    }
}
