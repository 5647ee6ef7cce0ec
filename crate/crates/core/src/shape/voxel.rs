//! Occupancy-grid rasterization of streamline polylines.

use crate::tractio::{Bundle, Point3};

use super::ShapeError;

const AXIS_BITS: u32 = 21;
const AXIS_MASK: u64 = (1 << AXIS_BITS) - 1;

/// Sparse occupancy grid anchored at the bundle's bounding-box minimum.
///
/// Occupied voxels are stored as packed, sorted, deduplicated keys so that
/// membership is a binary search and iteration order is deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    voxel_size: f64,
    origin: Point3,
    dims: [u64; 3],
    keys: Vec<u64>,
}

impl VoxelGrid {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn dims(&self) -> [u64; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Occupied voxel indices in lexicographic `(i, j, k)` order.
    pub fn occupied(&self) -> impl Iterator<Item = [u64; 3]> + '_ {
        self.keys.iter().map(|&k| unpack(k))
    }

    pub fn contains(&self, idx: [i64; 3]) -> bool {
        if (0..3).any(|a| idx[a] < 0 || idx[a] as u64 >= self.dims[a]) {
            return false;
        }
        self.keys.binary_search(&pack([idx[0] as u64, idx[1] as u64, idx[2] as u64])).is_ok()
    }

    /// Voxel index of a point, clamped into the grid.
    pub fn index_of(&self, p: Point3) -> [u64; 3] {
        index_of(p, self.origin, self.voxel_size, self.dims)
    }

    /// Occupied voxels with at least one unoccupied 6-neighbor. Neighbors
    /// outside the grid count as unoccupied.
    pub fn surface_count(&self) -> usize {
        const NEIGHBORS: [[i64; 3]; 6] =
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
        self.occupied()
            .filter(|v| {
                let v = [v[0] as i64, v[1] as i64, v[2] as i64];
                NEIGHBORS
                    .iter()
                    .any(|d| !self.contains([v[0] + d[0], v[1] + d[1], v[2] + d[2]]))
            })
            .count()
    }

    /// Number of distinct voxels hit by a set of points.
    pub fn distinct_voxels<'a, I: IntoIterator<Item = &'a Point3>>(&self, points: I) -> usize {
        let mut keys: Vec<u64> = points.into_iter().map(|&p| pack(self.index_of(p))).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }
}

fn pack(i: [u64; 3]) -> u64 {
    (i[0] << (2 * AXIS_BITS)) | (i[1] << AXIS_BITS) | i[2]
}

fn unpack(k: u64) -> [u64; 3] {
    [k >> (2 * AXIS_BITS), (k >> AXIS_BITS) & AXIS_MASK, k & AXIS_MASK]
}

fn index_of(p: Point3, origin: Point3, v: f64, dims: [u64; 3]) -> [u64; 3] {
    let rel = [(p.x - origin.x) / v, (p.y - origin.y) / v, (p.z - origin.z) / v];
    let mut out = [0u64; 3];
    for a in 0..3 {
        let f = rel[a].floor();
        out[a] = if f <= 0.0 { 0 } else { (f as u64).min(dims[a] - 1) };
    }
    out
}

/// Number of supersampling intervals for a segment of length `len`: the arc
/// step is at most `v / 2`.
pub fn segment_steps(len: f64, v: f64) -> usize {
    ((len / (0.5 * v)).ceil() as usize).max(1)
}

/// Rasterizes every segment by supersampling at arc step <= `v / 2`,
/// endpoints included, marking `floor((p - origin) / v)` for each sample.
pub fn voxelize(bundle: &Bundle, voxel_size: f64) -> Result<VoxelGrid, ShapeError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(ShapeError::InvalidVoxelSize(voxel_size));
    }
    let total: f64 = bundle.streamlines().iter().map(|s| s.arc_length()).sum();
    if total <= 0.0 {
        return Err(ShapeError::DegenerateBundle);
    }
    let (lo, hi) = bundle.bounds();
    let ext = hi - lo;
    let mut dims = [0u64; 3];
    for (a, e) in ext.to_array().into_iter().enumerate() {
        dims[a] = (e / voxel_size).floor() as u64 + 1;
        if dims[a] > AXIS_MASK {
            return Err(ShapeError::GridTooLarge { extent_mm: e, voxel_size });
        }
    }

    let mut keys = Vec::new();
    for line in bundle.streamlines() {
        for w in line.points().windows(2) {
            let (a, b) = (w[0], w[1]);
            let d = b - a;
            let n = segment_steps(d.norm(), voxel_size);
            for i in 0..=n {
                let t = i as f64 / n as f64;
                keys.push(pack(index_of(a + d * t, lo, voxel_size, dims)));
            }
        }
    }
    keys.sort_unstable();
    keys.dedup();
    Ok(VoxelGrid { voxel_size, origin: lo, dims, keys })
}
