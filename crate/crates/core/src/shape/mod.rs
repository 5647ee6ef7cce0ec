//! Ground-truth bundle shape measures.
//!
//! With streamlines aligned to a common orientation (see
//! [`align_orientations`]), the ten measures are:
//!
//! | measure | definition |
//! |---|---|
//! | length `L` | mean streamline arc length |
//! | span `S` | distance between the mean first point and the mean last point |
//! | curl | `L / S` |
//! | volume `V` | occupied voxels times `v^3` |
//! | diameter `D` | `2 sqrt(V / (pi L))`, the width of a cylinder of length `L` and volume `V` |
//! | elongation | `L / D` |
//! | total surface area `SA` | `v^2` times the occupied voxels with an unoccupied 6-neighbor |
//! | total radius of end regions | `r1 + r2`, mean endpoint distance to the endpoint centroid at each end |
//! | total area of end regions | `A1 + A2`, `v^2` times the distinct voxels hit by each end's endpoints |
//! | irregularity | `SA / (pi D L)` |
//!
//! Length, span and curl do not depend on the voxel size.

mod voxel;

use std::f64::consts::PI;

use thiserror::Error;

use crate::tractio::{Bundle, Point3, Streamline};

pub use voxel::{segment_steps, voxelize, VoxelGrid};

/// Default voxel edge in millimeters.
pub const DEFAULT_VOXEL_SIZE: f64 = 1.0;

/// Spans shorter than this are treated as closed loops.
pub const MIN_SPAN_MM: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("bundle has zero total arc length")]
    DegenerateBundle,
    #[error("span {0:e} mm is below the minimum; first and last endpoints coincide")]
    DegenerateSpan(f64),
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("bounding box extent {extent_mm} mm is too large for voxel size {voxel_size}")]
    GridTooLarge { extent_mm: f64, voxel_size: f64 },
}

/// The ten shape measures of one bundle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeMeasures {
    pub length: f64,
    pub span: f64,
    pub curl: f64,
    pub elongation: f64,
    pub diameter: f64,
    pub volume: f64,
    pub total_surface_area: f64,
    pub total_radius_end_regions: f64,
    pub total_area_end_regions: f64,
    pub irregularity: f64,
}

impl ShapeMeasures {
    pub const COUNT: usize = 10;

    /// Column names, in [`ShapeMeasures::to_array`] order.
    pub const NAMES: [&'static str; 10] = [
        "length",
        "span",
        "curl",
        "elongation",
        "diameter",
        "volume",
        "total_surface_area",
        "total_radius_end_regions",
        "total_area_end_regions",
        "irregularity",
    ];

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.length,
            self.span,
            self.curl,
            self.elongation,
            self.diameter,
            self.volume,
            self.total_surface_area,
            self.total_radius_end_regions,
            self.total_area_end_regions,
            self.irregularity,
        ]
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        ShapeMeasures {
            length: a[0],
            span: a[1],
            curl: a[2],
            elongation: a[3],
            diameter: a[4],
            volume: a[5],
            total_surface_area: a[6],
            total_radius_end_regions: a[7],
            total_area_end_regions: a[8],
            irregularity: a[9],
        }
    }
}

/// Index of the longest streamline; ties go to the lowest index.
fn reference_index(bundle: &Bundle) -> usize {
    let mut best = 0;
    let mut best_len = f64::NEG_INFINITY;
    for (i, s) in bundle.streamlines().iter().enumerate() {
        let len = s.arc_length();
        if len > best_len {
            best = i;
            best_len = len;
        }
    }
    best
}

fn needs_flip(s: &Streamline, ref_first: Point3, ref_last: Point3) -> bool {
    let same = s.first().dist(ref_first) + s.last().dist(ref_last);
    let flipped = s.first().dist(ref_last) + s.last().dist(ref_first);
    same > flipped
}

/// Orients every streamline like the longest one: a streamline is reversed
/// when its endpoints are closer to the reference's endpoints swapped.
/// Idempotent.
pub fn align_orientations(bundle: &Bundle) -> Bundle {
    let r = &bundle.streamlines()[reference_index(bundle)];
    let (rf, rl) = (r.first(), r.last());
    let lines = bundle
        .streamlines()
        .iter()
        .map(|s| if needs_flip(s, rf, rl) { s.reversed() } else { s.clone() })
        .collect();
    bundle.with_streamlines(lines).expect("nonempty by construction")
}

/// Computes the ten measures of a bundle at the given voxel size.
pub fn compute_measures(bundle: &Bundle, voxel_size: f64) -> Result<ShapeMeasures, ShapeError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(ShapeError::InvalidVoxelSize(voxel_size));
    }
    let aligned = align_orientations(bundle);
    let lines = aligned.streamlines();
    let n = lines.len() as f64;

    let total_len: f64 = lines.iter().map(Streamline::arc_length).sum();
    if total_len <= 0.0 {
        return Err(ShapeError::DegenerateBundle);
    }
    let length = total_len / n;

    let firsts: Vec<Point3> = lines.iter().map(Streamline::first).collect();
    let lasts: Vec<Point3> = lines.iter().map(Streamline::last).collect();
    let c1 = Point3::centroid(&firsts);
    let c2 = Point3::centroid(&lasts);
    let span = c1.dist(c2);
    if span < MIN_SPAN_MM {
        return Err(ShapeError::DegenerateSpan(span));
    }

    let grid = voxelize(&aligned, voxel_size)?;
    let v2 = voxel_size * voxel_size;
    let volume = grid.len() as f64 * v2 * voxel_size;
    let diameter = 2.0 * (volume / (PI * length)).sqrt();
    let total_surface_area = grid.surface_count() as f64 * v2;

    let radius = |pts: &[Point3], c: Point3| pts.iter().map(|p| p.dist(c)).sum::<f64>() / n;
    let total_radius_end_regions = radius(&firsts, c1) + radius(&lasts, c2);
    let total_area_end_regions =
        (grid.distinct_voxels(&firsts) + grid.distinct_voxels(&lasts)) as f64 * v2;

    Ok(ShapeMeasures {
        length,
        span,
        curl: length / span,
        elongation: length / diameter,
        diameter,
        volume,
        total_surface_area,
        total_radius_end_regions,
        total_area_end_regions,
        irregularity: total_surface_area / (PI * diameter * length),
    })
}
