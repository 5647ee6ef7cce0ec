//! Synthetic fiber bundles with analytically known centerlines.
//!
//! A bundle is a tube around a centerline (straight, circular arc or helix).
//! Each streamline keeps a fixed radial offset drawn uniformly in the tube's
//! disc, gets per-point Gaussian jitter, is optionally reversed (tractography
//! does not orient streamlines), and the whole bundle is rigidly posed.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::rng::{derive_seed, domain, keyed_rng};
use crate::tractio::{self, Bundle, Point3};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid bundle spec: {0}")]
    InvalidSpec(String),
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Cylinder,
    Arc,
    Helix,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Cylinder, Family::Arc, Family::Helix];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Cylinder => "cylinder",
            Family::Arc => "arc",
            Family::Helix => "helix",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, SynthError> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| SynthError::Manifest(format!("unknown family {s:?}")))
    }
}

/// Centerline geometry, parameterized by arc length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Centerline {
    Straight { length: f64 },
    /// Circular arc of `radius` subtending `angle` radians.
    Arc { radius: f64, angle: f64 },
    /// Helix around the z axis; `pitch` is the rise per full turn.
    Helix { radius: f64, pitch: f64, length: f64 },
}

impl Centerline {
    pub fn family(&self) -> Family {
        match self {
            Centerline::Straight { .. } => Family::Cylinder,
            Centerline::Arc { .. } => Family::Arc,
            Centerline::Helix { .. } => Family::Helix,
        }
    }

    pub fn length(&self) -> f64 {
        match *self {
            Centerline::Straight { length } | Centerline::Helix { length, .. } => length,
            Centerline::Arc { radius, angle } => radius * angle,
        }
    }

    /// Position and an orthonormal normal/binormal pair at arc length `s`.
    fn frame(&self, s: f64) -> (Point3, Point3, Point3) {
        match *self {
            Centerline::Straight { .. } => (
                Point3::new(0.0, 0.0, s),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ),
            Centerline::Arc { radius, .. } => {
                let phi = s / radius;
                let (sin, cos) = phi.sin_cos();
                (
                    Point3::new(radius * cos, radius * sin, 0.0),
                    Point3::new(cos, sin, 0.0),
                    Point3::new(0.0, 0.0, 1.0),
                )
            }
            Centerline::Helix { radius, pitch, .. } => {
                let rise = pitch / (2.0 * PI);
                let speed = (radius * radius + rise * rise).sqrt();
                let t = s / speed;
                let (sin, cos) = t.sin_cos();
                let pos = Point3::new(radius * cos, radius * sin, rise * t);
                let tangent = Point3::new(-radius * sin, radius * cos, rise) / speed;
                let normal = Point3::new(-cos, -sin, 0.0);
                (pos, normal, tangent.cross(normal))
            }
        }
    }
}

/// Rigid transform: rotation (unit quaternion `w, x, y, z`) then translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub quaternion: [f64; 4],
    pub translation: Point3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { quaternion: [1.0, 0.0, 0.0, 0.0], translation: Point3::ZERO };

    /// Uniformly random rotation plus a translation uniform in `[-extent, extent]^3`.
    pub fn random<R: Rng>(rng: &mut R, extent: f64) -> Pose {
        let mut q = [0.0f64; 4];
        loop {
            for c in q.iter_mut() {
                *c = rng.sample(StandardNormal);
            }
            let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 1e-6 {
                q.iter_mut().for_each(|c| *c /= n);
                break;
            }
        }
        let mut t = || rng.random_range(-extent..=extent);
        Pose { quaternion: q, translation: Point3::new(t(), t(), t()) }
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        let [w, x, y, z] = self.quaternion;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let m = self.matrix();
        let a = p.to_array();
        let r = |row: [f64; 3]| row[0] * a[0] + row[1] * a[1] + row[2] * a[2];
        Point3::new(r(m[0]), r(m[1]), r(m[2])) + self.translation
    }
}

/// Full description of one synthetic bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleSpec {
    pub centerline: Centerline,
    pub tube_radius: f64,
    pub n_streamlines: usize,
    pub points_per_streamline: usize,
    pub jitter_sd: f64,
    /// Probability that a streamline is stored reversed.
    pub flip_probability: f64,
    pub pose: Pose,
    pub seed: u64,
}

impl BundleSpec {
    /// Validates the spec. A zero tube radius is accepted as the degenerate
    /// single-centerline tube.
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.tube_radius >= 0.0 && self.tube_radius.is_finite()) {
            return bad(format!("tube_radius {} must be >= 0", self.tube_radius));
        }
        if self.n_streamlines < 1 {
            return bad("n_streamlines must be >= 1".into());
        }
        if self.points_per_streamline < 2 {
            return bad("points_per_streamline must be >= 2".into());
        }
        if !(self.jitter_sd >= 0.0 && self.jitter_sd.is_finite()) {
            return bad(format!("jitter_sd {} must be >= 0", self.jitter_sd));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!("flip_probability {} outside [0, 1]", self.flip_probability));
        }
        match self.centerline {
            Centerline::Straight { length } if !(length > 0.0) => {
                bad(format!("length {length} must be > 0"))
            }
            Centerline::Arc { radius, angle } if !(radius > 0.0 && angle > 0.0 && angle < 2.0 * PI) => {
                bad(format!("arc radius {radius} / angle {angle} out of range"))
            }
            Centerline::Helix { radius, pitch, length }
                if !(radius > 0.0 && pitch > 0.0 && length > 0.0) =>
            {
                bad(format!("helix radius {radius} / pitch {pitch} / length {length} must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Generates the bundle described by `spec`. Fully determined by the spec,
/// including its seed.
pub fn generate_bundle(spec: &BundleSpec) -> Result<Bundle, SynthError> {
    spec.validate()?;
    let len = spec.centerline.length();
    let npts = spec.points_per_streamline;
    let jitter = Normal::new(0.0, spec.jitter_sd).expect("validated sd");
    let mut lines = Vec::with_capacity(spec.n_streamlines);
    for i in 0..spec.n_streamlines {
        let mut rng = keyed_rng(spec.seed, &[domain::SYNTH_STREAMLINE, i as u64]);
        let r = spec.tube_radius * rng.random::<f64>().sqrt();
        let theta = 2.0 * PI * rng.random::<f64>();
        let (u, w) = (r * theta.cos(), r * theta.sin());
        let flip = rng.random::<f64>() < spec.flip_probability;
        let mut pts: Vec<Point3> = (0..npts)
            .map(|j| {
                let s = len * j as f64 / (npts - 1) as f64;
                let (c, n, b) = spec.centerline.frame(s);
                let mut p = c + n * u + b * w;
                if spec.jitter_sd > 0.0 {
                    p = p + Point3::new(
                        jitter.sample(&mut rng),
                        jitter.sample(&mut rng),
                        jitter.sample(&mut rng),
                    );
                }
                spec.pose.apply(p)
            })
            .collect();
        if flip {
            pts.reverse();
        }
        lines.push(pts);
    }
    Bundle::from_points(lines).map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, SynthError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(SynthError::Manifest(format!("unknown split {s:?}"))),
        }
    }
}

/// Closed parameter interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn at(self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) * u
    }

    fn valid(self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Parameters for [`generate_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n_cylinder: usize,
    pub n_arc: usize,
    pub n_helix: usize,
    /// Domain tag per family, used to filter cross-domain splits.
    pub domain_cylinder: String,
    pub domain_arc: String,
    pub domain_helix: String,
    pub length: Range,
    pub arc_radius: Range,
    pub arc_angle: Range,
    pub helix_radius: Range,
    pub helix_pitch: Range,
    pub tube_radius: Range,
    /// Streamlines per mm^2 of tube cross-section.
    pub streamline_density: f64,
    /// Multiplicative spread applied to the density-derived streamline count.
    pub density_factor: Range,
    pub min_streamlines: usize,
    pub point_spacing: f64,
    pub jitter_sd: Range,
    pub flip_probability: f64,
    pub translation_extent: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_cylinder: 200,
            n_arc: 200,
            n_helix: 200,
            domain_cylinder: "A".into(),
            domain_arc: "A".into(),
            domain_helix: "B".into(),
            length: Range::new(40.0, 120.0),
            arc_radius: Range::new(20.0, 60.0),
            arc_angle: Range::new(0.5, 2.5),
            helix_radius: Range::new(2.0, 8.0),
            helix_pitch: Range::new(40.0, 120.0),
            tube_radius: Range::new(1.5, 6.0),
            streamline_density: 1.5,
            density_factor: Range::new(0.6, 1.4),
            min_streamlines: 8,
            point_spacing: 2.0,
            jitter_sd: Range::new(0.1, 0.4),
            flip_probability: 0.5,
            translation_extent: 40.0,
            train_fraction: 0.7,
            val_fraction: 0.15,
            seed: 1,
        }
    }
}

impl DatasetConfig {
    pub fn total(&self) -> usize {
        self.n_cylinder + self.n_arc + self.n_helix
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.total() == 0 {
            return bad("dataset must contain at least one bundle");
        }
        let ranges = [
            self.length,
            self.arc_radius,
            self.arc_angle,
            self.helix_radius,
            self.helix_pitch,
            self.tube_radius,
            self.density_factor,
            self.jitter_sd,
        ];
        if !ranges.iter().all(|r| r.valid()) {
            return bad("parameter ranges must be finite with lo <= hi");
        }
        if self.length.lo <= 0.0 || self.arc_radius.lo <= 0.0 || self.helix_radius.lo <= 0.0 {
            return bad("lengths and radii must be positive");
        }
        if self.arc_angle.lo <= 0.0 || self.arc_angle.hi >= 2.0 * PI {
            return bad("arc angle must lie in (0, 2 pi)");
        }
        if self.tube_radius.lo <= 0.0 || self.helix_pitch.lo <= 0.0 || self.point_spacing <= 0.0 {
            return bad("tube radius, pitch and point spacing must be positive");
        }
        let (t, v) = (self.train_fraction, self.val_fraction);
        if !(t >= 0.0 && v >= 0.0 && t + v <= 1.0 + 1e-12) {
            return bad("split fractions must be non-negative and sum to at most 1");
        }
        Ok(())
    }

    fn domain_of(&self, f: Family) -> &str {
        match f {
            Family::Cylinder => &self.domain_cylinder,
            Family::Arc => &self.domain_arc,
            Family::Helix => &self.domain_helix,
        }
    }
}

/// Radical inverse of `i` in `base` (Halton sequence coordinate).
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let inv = 1.0 / base as f64;
    while i > 0 {
        f *= inv;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const HALTON_BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];

/// Low-discrepancy point for index `i`, randomized by a per-dimension
/// Cranley-Patterson shift.
fn halton_point(i: u64, shifts: &[f64; 6]) -> [f64; 6] {
    std::array::from_fn(|d| (radical_inverse(i + 1, HALTON_BASES[d]) + shifts[d]).fract())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    /// Bundle file path, relative to the manifest's directory.
    pub path: PathBuf,
    pub spec: BundleSpec,
    pub split: Split,
    pub domain: String,
}

impl ManifestRow {
    pub fn family(&self) -> Family {
        self.spec.centerline.family()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

pub const MANIFEST_HEADER: [&str; 22] = [
    "path",
    "family",
    "domain",
    "split",
    "seed",
    "tube_radius",
    "n_streamlines",
    "points_per_streamline",
    "length",
    "arc_radius",
    "arc_angle",
    "helix_radius",
    "helix_pitch",
    "jitter_sd",
    "flip_probability",
    "qw",
    "qx",
    "qy",
    "qz",
    "tx",
    "ty",
    "tz",
];

impl DatasetManifest {
    pub fn filter<'a>(&'a self, pred: impl Fn(&ManifestRow) -> bool + 'a) -> impl Iterator<Item = &'a ManifestRow> + 'a {
        self.rows.iter().filter(move |r| pred(r))
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.rows.iter().filter(|r| r.split == split).count()
    }

    /// Serializes to CSV. `comment` lines (without `#`) are emitted first.
    pub fn to_csv(&self, comment: &str) -> Result<Vec<u8>, SynthError> {
        let mut out = Vec::new();
        for line in comment.lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.rows {
            let s = &r.spec;
            let (length, arc_r, arc_a, hel_r, hel_p) = match s.centerline {
                Centerline::Straight { length } => (length, 0.0, 0.0, 0.0, 0.0),
                Centerline::Arc { radius, angle } => (s.centerline.length(), radius, angle, 0.0, 0.0),
                Centerline::Helix { radius, pitch, length } => (length, 0.0, 0.0, radius, pitch),
            };
            let q = s.pose.quaternion;
            let t = s.pose.translation;
            let path = r.path.to_str().ok_or_else(|| SynthError::Manifest("non-UTF-8 path".into()))?;
            let rec: Vec<String> = vec![
                path.to_string(),
                r.family().to_string(),
                r.domain.clone(),
                r.split.as_str().to_string(),
                s.seed.to_string(),
                f(s.tube_radius),
                s.n_streamlines.to_string(),
                s.points_per_streamline.to_string(),
                f(length),
                f(arc_r),
                f(arc_a),
                f(hel_r),
                f(hel_p),
                f(s.jitter_sd),
                f(s.flip_probability),
                f(q[0]),
                f(q[1]),
                f(q[2]),
                f(q[3]),
                f(t.x),
                f(t.y),
                f(t.z),
            ];
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| SynthError::Manifest(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self, SynthError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SynthError::Manifest(format!("missing column {name:?}")))
        };
        let mut idx = Vec::new();
        for name in MANIFEST_HEADER {
            idx.push(col(name)?);
        }
        let mut rows = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for rec in rdr.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(idx[i]).unwrap_or("");
            let num = |i: usize| -> Result<f64, SynthError> {
                get(i).parse().map_err(|_| {
                    SynthError::Manifest(format!("bad number {:?} in column {}", get(i), MANIFEST_HEADER[i]))
                })
            };
            let int = |i: usize| -> Result<u64, SynthError> {
                get(i).parse().map_err(|_| SynthError::Manifest(format!("bad integer {:?}", get(i))))
            };
            let family: Family = get(1).parse()?;
            let centerline = match family {
                Family::Cylinder => Centerline::Straight { length: num(8)? },
                Family::Arc => Centerline::Arc { radius: num(9)?, angle: num(10)? },
                Family::Helix => Centerline::Helix { radius: num(11)?, pitch: num(12)?, length: num(8)? },
            };
            let spec = BundleSpec {
                centerline,
                tube_radius: num(5)?,
                n_streamlines: int(6)? as usize,
                points_per_streamline: int(7)? as usize,
                jitter_sd: num(13)?,
                flip_probability: num(14)?,
                pose: Pose {
                    quaternion: [num(15)?, num(16)?, num(17)?, num(18)?],
                    translation: Point3::new(num(19)?, num(20)?, num(21)?),
                },
                seed: int(4)?,
            };
            let path = PathBuf::from(get(0));
            if !seen.insert(path.clone()) {
                return Err(SynthError::Manifest(format!("duplicate path {}", path.display())));
            }
            rows.push(ManifestRow { path, spec, split: get(3).parse()?, domain: get(2).to_string() });
        }
        Ok(DatasetManifest { rows })
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_csv(&bytes)
    }
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

/// Draws the bundle specs of a dataset: Halton-distributed parameters per
/// family, streamline counts tied to tube cross-section, and a seeded split
/// assignment with exact `train/val/test` counts.
pub fn plan_dataset(cfg: &DatasetConfig) -> Result<DatasetManifest, SynthError> {
    cfg.validate()?;
    let mut specs: Vec<(BundleSpec, &str)> = Vec::with_capacity(cfg.total());
    let mut index = 0u64;
    for (family, count) in
        [(Family::Cylinder, cfg.n_cylinder), (Family::Arc, cfg.n_arc), (Family::Helix, cfg.n_helix)]
    {
        let mut shift_rng = keyed_rng(cfg.seed, &[domain::SYNTH_PARAMS, family as u64]);
        let shifts: [f64; 6] = std::array::from_fn(|_| shift_rng.random::<f64>());
        for i in 0..count as u64 {
            let u = halton_point(i, &shifts);
            let centerline = match family {
                Family::Cylinder => Centerline::Straight { length: cfg.length.at(u[0]) },
                Family::Arc => Centerline::Arc {
                    radius: cfg.arc_radius.at(u[0]),
                    angle: cfg.arc_angle.at(u[1]),
                },
                Family::Helix => Centerline::Helix {
                    radius: cfg.helix_radius.at(u[1]),
                    pitch: cfg.helix_pitch.at(u[5]),
                    length: cfg.length.at(u[0]),
                },
            };
            let tube_radius = cfg.tube_radius.at(u[2]);
            let area = PI * tube_radius * tube_radius;
            let n_streamlines = ((cfg.streamline_density * area * cfg.density_factor.at(u[3])).round()
                as usize)
                .max(cfg.min_streamlines)
                .max(1);
            let points_per_streamline =
                ((centerline.length() / cfg.point_spacing).round() as usize + 1).max(2);
            let seed = derive_seed(cfg.seed, &[domain::SYNTH_PARAMS, index]);
            let mut pose_rng = keyed_rng(cfg.seed, &[domain::SYNTH_POSE, index]);
            let pose = Pose::random(&mut pose_rng, cfg.translation_extent);
            specs.push((
                BundleSpec {
                    centerline,
                    tube_radius,
                    n_streamlines,
                    points_per_streamline,
                    jitter_sd: cfg.jitter_sd.at(u[4]),
                    flip_probability: cfg.flip_probability,
                    pose,
                    seed,
                },
                cfg.domain_of(family),
            ));
            index += 1;
        }
    }

    let n = specs.len();
    let n_train = (cfg.train_fraction * n as f64).round() as usize;
    let n_val = ((cfg.val_fraction * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = keyed_rng(cfg.seed, &[domain::SYNTH_PARAMS, u64::MAX]);
    // Fisher-Yates with the keyed stream.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut split = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let rows = specs
        .into_iter()
        .enumerate()
        .map(|(i, (spec, dom))| ManifestRow {
            path: PathBuf::from(format!("bundle_{i:05}.fsb")),
            spec,
            split: split[i],
            domain: dom.to_string(),
        })
        .collect();
    Ok(DatasetManifest { rows })
}

/// Plans the dataset, writes each bundle in native format into `out_dir`,
/// and writes `manifest.csv` there. `comment` is embedded in the manifest.
pub fn generate_dataset(
    cfg: &DatasetConfig,
    out_dir: &Path,
    comment: &str,
) -> Result<DatasetManifest, SynthError> {
    let manifest = plan_dataset(cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for row in &manifest.rows {
        let bundle = generate_bundle(&row.spec)?;
        let path = out_dir.join(&row.path);
        fs::write(&path, tractio::write_native(&bundle)).map_err(io_err(&path))?;
    }
    let mpath = out_dir.join("manifest.csv");
    fs::write(&mpath, manifest.to_csv(comment)?).map_err(io_err(&mpath))?;
    Ok(manifest)
}

/// Bundle id used for a manifest row: the file stem.
pub fn bundle_id(row: &ManifestRow) -> String {
    row.path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::compute_measures;

    fn spec(centerline: Centerline) -> BundleSpec {
        BundleSpec {
            centerline,
            tube_radius: 0.0,
            n_streamlines: 1,
            points_per_streamline: 181,
            jitter_sd: 0.0,
            flip_probability: 0.0,
            pose: Pose::IDENTITY,
            seed: 11,
        }
    }

    #[test]
    fn degenerate_cylinder_is_a_straight_line() {
        let b = generate_bundle(&spec(Centerline::Straight { length: 80.0 })).unwrap();
        let m = compute_measures(&b, 1.0).unwrap();
        assert!((m.curl - 1.0).abs() < 1e-9);
        assert!((m.length - 80.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_arc_has_half_pi_curl() {
        let b = generate_bundle(&spec(Centerline::Arc { radius: 50.0, angle: PI })).unwrap();
        let m = compute_measures(&b, 1.0).unwrap();
        assert!((m.curl / (PI / 2.0) - 1.0).abs() < 0.005, "{}", m.curl);
    }

    #[test]
    fn helix_closed_forms() {
        // One turn of radius 10, pitch 30: span = pitch, length = sqrt((2 pi r)^2 + p^2).
        let len = ((2.0 * PI * 10.0f64).powi(2) + 900.0).sqrt();
        let b = generate_bundle(&BundleSpec {
            points_per_streamline: 400,
            ..spec(Centerline::Helix { radius: 10.0, pitch: 30.0, length: len })
        })
        .unwrap();
        let m = compute_measures(&b, 1.0).unwrap();
        assert!((m.length / len - 1.0).abs() < 0.005);
        assert!((m.span / 30.0 - 1.0).abs() < 0.005);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let s = BundleSpec {
            tube_radius: 3.0,
            n_streamlines: 20,
            points_per_streamline: 30,
            jitter_sd: 0.3,
            flip_probability: 0.5,
            pose: Pose::random(&mut keyed_rng(3, &[1]), 20.0),
            ..spec(Centerline::Arc { radius: 30.0, angle: 1.5 })
        };
        let a = generate_bundle(&s).unwrap();
        assert_eq!(a, generate_bundle(&s).unwrap());
        let b = generate_bundle(&BundleSpec { seed: 12, ..s }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let s = spec(Centerline::Straight { length: 10.0 });
        assert!(BundleSpec { n_streamlines: 0, ..s.clone() }.validate().is_err());
        assert!(BundleSpec { points_per_streamline: 1, ..s.clone() }.validate().is_err());
        assert!(BundleSpec { tube_radius: -1.0, ..s.clone() }.validate().is_err());
        assert!(spec(Centerline::Arc { radius: 5.0, angle: 2.0 * PI }).validate().is_err());
    }

    #[test]
    fn pose_is_rigid() {
        let pose = Pose::random(&mut keyed_rng(9, &[]), 10.0);
        let (a, b) = (Point3::new(1.0, 2.0, 3.0), Point3::new(-4.0, 0.5, 2.0));
        assert!((pose.apply(a).dist(pose.apply(b)) - a.dist(b)).abs() < 1e-12);
    }

    #[test]
    fn split_counts_are_exact() {
        let m = plan_dataset(&DatasetConfig::default()).unwrap();
        assert_eq!(m.rows.len(), 600);
        assert_eq!((m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)), (420, 90, 90));
        assert_eq!(m.filter(|r| r.domain == "B").count(), 200);
        assert!(m.filter(|r| r.domain == "B").all(|r| r.family() == Family::Helix));
    }

    #[test]
    fn manifest_csv_round_trip() {
        let cfg = DatasetConfig { n_cylinder: 3, n_arc: 3, n_helix: 3, ..Default::default() };
        let m = plan_dataset(&cfg).unwrap();
        let bytes = m.to_csv("config_hash=abc\nseed=1").unwrap();
        assert!(bytes.starts_with(b"# config_hash=abc\n# seed=1\npath,family,"));
        assert_eq!(DatasetManifest::from_csv(&bytes).unwrap(), m);
    }

    #[test]
    fn radical_inverse_base_two() {
        let v: Vec<f64> = (1..5).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(v, vec![0.5, 0.25, 0.75, 0.125]);
    }
}
