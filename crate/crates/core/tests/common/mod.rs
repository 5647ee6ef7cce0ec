//! Shared test fixtures and a dense-array reimplementation of the shape
//! measures.
#![allow(dead_code)]

use fibershape::rng::keyed_rng;
use fibershape::tractio::{Bundle, Point3};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

/// Edge of the dense oracle grid.
pub const GRID: usize = 64;

type P = [f64; 3];

fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: P) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn mean(pts: &[P]) -> P {
    let mut acc = [0.0; 3];
    for p in pts {
        for a in 0..3 {
            acc[a] += p[a];
        }
    }
    let n = pts.len() as f64;
    [acc[0] / n, acc[1] / n, acc[2] / n]
}

fn arc(line: &[P]) -> f64 {
    let mut s = 0.0;
    for j in 1..line.len() {
        s += norm(sub(line[j], line[j - 1]));
    }
    s
}

pub fn lines_of(b: &Bundle) -> Vec<Vec<P>> {
    b.streamlines().iter().map(|s| s.points().iter().map(|p| p.to_array()).collect()).collect()
}

/// Dense `GRID^3` occupancy with the origin at the bounding-box minimum.
struct Dense {
    v: f64,
    lo: P,
    dims: [usize; 3],
    cells: Vec<bool>,
}

impl Dense {
    fn cell(&self, p: P) -> [usize; 3] {
        let mut c = [0; 3];
        for a in 0..3 {
            let f = ((p[a] - self.lo[a]) / self.v).floor();
            c[a] = if f <= 0.0 { 0 } else { (f as usize).min(self.dims[a] - 1) };
        }
        c
    }

    fn at(&self, c: [i64; 3]) -> bool {
        if (0..3).any(|a| c[a] < 0 || c[a] >= self.dims[a] as i64) {
            return false;
        }
        self.cells[(c[0] as usize * GRID + c[1] as usize) * GRID + c[2] as usize]
    }

    fn mark(&mut self, p: P) {
        let c = self.cell(p);
        self.cells[(c[0] * GRID + c[1]) * GRID + c[2]] = true;
    }
}

/// The ten measures computed with no sparse structures: alignment by the
/// endpoint-distance rule, a dense boolean grid, and neighbor lookups by
/// direct indexing. Panics if the bundle does not fit the grid.
pub fn dense_measures(lines: &[Vec<P>], v: f64) -> [f64; 10] {
    let mut refi = 0;
    for i in 1..lines.len() {
        if arc(&lines[i]) > arc(&lines[refi]) {
            refi = i;
        }
    }
    let (rf, rl) = (lines[refi][0], *lines[refi].last().unwrap());
    let aligned: Vec<Vec<P>> = lines
        .iter()
        .map(|l| {
            let (f, e) = (l[0], *l.last().unwrap());
            let keep = norm(sub(f, rf)) + norm(sub(e, rl));
            let swap = norm(sub(f, rl)) + norm(sub(e, rf));
            let mut l = l.clone();
            if keep > swap {
                l.reverse();
            }
            l
        })
        .collect();

    let n = aligned.len() as f64;
    let mut total = 0.0;
    for l in &aligned {
        total += arc(l);
    }
    let length = total / n;
    let firsts: Vec<P> = aligned.iter().map(|l| l[0]).collect();
    let lasts: Vec<P> = aligned.iter().map(|l| *l.last().unwrap()).collect();
    let (c1, c2) = (mean(&firsts), mean(&lasts));
    let span = norm(sub(c1, c2));

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in aligned.iter().flatten() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut dims = [0; 3];
    for a in 0..3 {
        dims[a] = ((hi[a] - lo[a]) / v).floor() as usize + 1;
        assert!(dims[a] <= GRID, "bundle does not fit the oracle grid");
    }
    let mut g = Dense { v, lo, dims, cells: vec![false; GRID * GRID * GRID] };
    for l in &aligned {
        for j in 1..l.len() {
            let (a, b) = (l[j - 1], l[j]);
            let d = sub(b, a);
            let steps = ((norm(d) / (0.5 * v)).ceil() as usize).max(1);
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                g.mark([a[0] + d[0] * t, a[1] + d[1] * t, a[2] + d[2] * t]);
            }
        }
    }

    let (mut occupied, mut surface) = (0usize, 0usize);
    for i in 0..dims[0] as i64 {
        for j in 0..dims[1] as i64 {
            for k in 0..dims[2] as i64 {
                if !g.at([i, j, k]) {
                    continue;
                }
                occupied += 1;
                let open = !g.at([i + 1, j, k])
                    || !g.at([i - 1, j, k])
                    || !g.at([i, j + 1, k])
                    || !g.at([i, j - 1, k])
                    || !g.at([i, j, k + 1])
                    || !g.at([i, j, k - 1]);
                if open {
                    surface += 1;
                }
            }
        }
    }
    let distinct = |pts: &[P]| {
        let mut seen = vec![false; GRID * GRID * GRID];
        let mut count = 0;
        for &p in pts {
            let c = g.cell(p);
            let idx = (c[0] * GRID + c[1]) * GRID + c[2];
            if !seen[idx] {
                seen[idx] = true;
                count += 1;
            }
        }
        count
    };
    let radius = |pts: &[P], c: P| {
        let mut s = 0.0;
        for &p in pts {
            s += norm(sub(p, c));
        }
        s / n
    };

    let v2 = v * v;
    let volume = occupied as f64 * v2 * v;
    let diameter = 2.0 * (volume / (std::f64::consts::PI * length)).sqrt();
    let sa = surface as f64 * v2;
    [
        length,
        span,
        length / span,
        length / diameter,
        diameter,
        volume,
        sa,
        radius(&firsts, c1) + radius(&lasts, c2),
        (distinct(&firsts) + distinct(&lasts)) as f64 * v2,
        sa / (std::f64::consts::PI * diameter * length),
    ]
}

/// Random polyline bundle whose bounding box fits `GRID` voxels of `v`.
/// Streamlines are noisy walks along a shared direction so that spans are
/// never degenerate; about half are stored reversed.
pub fn random_bundle(seed: u64, v: f64) -> Bundle {
    let mut rng = keyed_rng(seed, &[0xB0B]);
    let box_mm = (GRID as f64 - 2.0) * v;
    let base = Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    let n_lines = rng.random_range(1..=15);
    let n_pts = rng.random_range(2..=30);
    let step = box_mm * 0.8 / n_pts as f64;
    let lines = (0..n_lines)
        .map(|_| {
            let mut p = [
                rng.random_range(0.0..box_mm * 0.2),
                rng.random_range(0.0..box_mm * 0.2),
                rng.random_range(0.0..box_mm * 0.2),
            ];
            let mut pts = Vec::with_capacity(n_pts);
            for _ in 0..n_pts {
                pts.push(Point3::new(p[0], p[1], p[2]) + base);
                p[0] = (p[0] + step * rng.random_range(0.3..1.0)).min(box_mm);
                p[1] = (p[1] + step * rng.random_range(-0.4..0.6)).clamp(0.0, box_mm);
                p[2] = (p[2] + step * rng.random_range(-0.4..0.6)).clamp(0.0, box_mm);
            }
            if rng.random::<bool>() {
                pts.reverse();
            }
            pts
        })
        .collect();
    Bundle::from_points(lines).unwrap()
}

/// Single straight streamline along z with `n` evenly spaced points.
pub fn straight_line(n: usize, len: f64) -> Bundle {
    let pts = (0..n).map(|i| Point3::new(0.0, 0.0, len * i as f64 / (n - 1) as f64)).collect();
    Bundle::from_points(vec![pts]).unwrap()
}

/// Single semicircle of radius `r` sampled with `n` points.
pub fn semicircle(r: f64, n: usize) -> Bundle {
    let pts = (0..n)
        .map(|i| {
            let t = std::f64::consts::PI * i as f64 / (n - 1) as f64;
            Point3::new(r * t.cos(), r * t.sin(), 0.0)
        })
        .collect();
    Bundle::from_points(vec![pts]).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// `n x 10` rows from three latent factors plus noise of decreasing scale,
/// with column scales spanning several orders of magnitude.
pub fn correlated(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = keyed_rng(seed, &[42]);
    let load: Vec<[f64; 3]> = (0..10).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let scale = [1.0, 10.0, 0.1, 100.0, 3.0, 0.5, 50.0, 2.0, 7.0, 0.02];
    let mut x = Array2::zeros((n, 10));
    for i in 0..n {
        let f: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample::<f64, _>(StandardNormal) * 0.6,
            rng.sample::<f64, _>(StandardNormal) * 0.3,
        ];
        for j in 0..10 {
            let noise = rng.sample::<f64, _>(StandardNormal) * 0.05 * (1.0 + j as f64 * 0.3);
            x[[i, j]] = scale[j] * (load[j][0] * f[0] + load[j][1] * f[1] + load[j][2] * f[2] + noise) + j as f64;
        }
    }
    x
}
