//! Streamline bundle data model and file formats.
//!
//! Two formats are supported:
//!
//! * a subset of the legacy ASCII VTK polydata format (`POINTS` + `LINES`),
//! * a compact little-endian native format (`FSHB`), storing coordinates as
//!   32-bit reals.
//!
//! Coordinates are millimeters in the RAS frame. All computation happens in
//! 64-bit; the native format is a lossy boundary at 32-bit precision.

use std::fmt::Write as _;
use std::ops::{Add, Div, Mul, Sub};

use thiserror::Error;

/// A point in RAS millimeter space.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dist(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Mean of a nonempty set of points, accumulated in order.
    pub fn centroid<'a, I: IntoIterator<Item = &'a Point3>>(points: I) -> Point3 {
        let mut acc = Point3::ZERO;
        let mut n = 0usize;
        for p in points {
            acc = acc + *p;
            n += 1;
        }
        acc / n as f64
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    fn div(self, s: f64) -> Point3 {
        Point3::new(self.x / s, self.y / s, self.z / s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BundleError {
    #[error("bundle has no streamlines")]
    Empty,
    #[error("streamline {index} has {len} point(s), at least 2 are required")]
    ShortStreamline { index: usize, len: usize },
    #[error("streamline {index} contains a non-finite coordinate")]
    NonFinite { index: usize },
}

/// An ordered polyline of at least two points.
#[derive(Clone, Debug, PartialEq)]
pub struct Streamline {
    points: Vec<Point3>,
}

impl Streamline {
    pub fn new(points: Vec<Point3>) -> Result<Self, BundleError> {
        if points.len() < 2 {
            return Err(BundleError::ShortStreamline { index: 0, len: points.len() });
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(BundleError::NonFinite { index: 0 });
        }
        Ok(Streamline { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point3 {
        self.points[0]
    }

    pub fn last(&self) -> Point3 {
        self.points[self.points.len() - 1]
    }

    /// Sum of segment lengths.
    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[1].dist(w[0])).sum()
    }

    pub fn reversed(&self) -> Streamline {
        let mut points = self.points.clone();
        points.reverse();
        Streamline { points }
    }

    pub fn translated(&self, t: Point3) -> Streamline {
        Streamline { points: self.points.iter().map(|&p| p + t).collect() }
    }
}

/// A fiber cluster: streamlines plus identity metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    streamlines: Vec<Streamline>,
    pub subject_id: String,
    pub cluster_id: String,
    pub tract_label: Option<String>,
}

impl Bundle {
    pub fn new(streamlines: Vec<Streamline>) -> Result<Self, BundleError> {
        if streamlines.is_empty() {
            return Err(BundleError::Empty);
        }
        Ok(Bundle {
            streamlines,
            subject_id: String::new(),
            cluster_id: String::new(),
            tract_label: None,
        })
    }

    /// Builds a bundle from raw point lists, validating every streamline.
    pub fn from_points(lines: Vec<Vec<Point3>>) -> Result<Self, BundleError> {
        let streamlines = lines
            .into_iter()
            .enumerate()
            .map(|(index, pts)| {
                Streamline::new(pts).map_err(|e| match e {
                    BundleError::ShortStreamline { len, .. } => {
                        BundleError::ShortStreamline { index, len }
                    }
                    BundleError::NonFinite { .. } => BundleError::NonFinite { index },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Bundle::new(streamlines)
    }

    pub fn with_ids(mut self, subject_id: &str, cluster_id: &str) -> Self {
        self.subject_id = subject_id.to_string();
        self.cluster_id = cluster_id.to_string();
        self
    }

    pub fn streamlines(&self) -> &[Streamline] {
        &self.streamlines
    }

    /// Number of streamlines (NoS).
    pub fn n_streamlines(&self) -> usize {
        self.streamlines.len()
    }

    /// Total number of points across streamlines (NoP).
    pub fn n_points(&self) -> usize {
        self.streamlines.iter().map(Streamline::len).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &Point3> {
        self.streamlines.iter().flat_map(|s| s.points.iter())
    }

    /// Same metadata, new streamline list. The list must be nonempty.
    pub fn with_streamlines(&self, streamlines: Vec<Streamline>) -> Result<Self, BundleError> {
        let mut b = Bundle::new(streamlines)?;
        b.subject_id = self.subject_id.clone();
        b.cluster_id = self.cluster_id.clone();
        b.tract_label = self.tract_label.clone();
        Ok(b)
    }

    pub fn translated(&self, t: Point3) -> Bundle {
        Bundle {
            streamlines: self.streamlines.iter().map(|s| s.translated(t)).collect(),
            subject_id: self.subject_id.clone(),
            cluster_id: self.cluster_id.clone(),
            tract_label: self.tract_label.clone(),
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in self.points() {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        (lo, hi)
    }
}

// ---------------------------------------------------------------------------
// ASCII polydata

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolydataError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("LINES record {record} references point {index}, but only {n_points} points exist")]
    IndexOutOfRange { record: usize, index: u64, n_points: usize },
    #[error("LINES record {record} has {len} point(s), at least 2 are required")]
    ShortStreamline { record: usize, len: u64 },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("invalid number {token:?} in {context}")]
    InvalidNumber { token: String, context: &'static str },
    #[error("LINES declares {declared} list entries but records contain {actual}")]
    SizeMismatch { declared: u64, actual: u64 },
    #[error("invalid bundle: {0}")]
    Invalid(#[from] BundleError),
}

struct Tokens<'a> {
    iter: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn next_token(&mut self, context: &'static str) -> Result<&'a str, PolydataError> {
        self.iter
            .next()
            .ok_or_else(|| PolydataError::TruncatedFile(format!("expected {context}")))
    }

    fn next_u64(&mut self, context: &'static str) -> Result<u64, PolydataError> {
        let tok = self.next_token(context)?;
        tok.parse()
            .map_err(|_| PolydataError::InvalidNumber { token: tok.to_string(), context })
    }

    fn next_f64(&mut self, context: &'static str) -> Result<f64, PolydataError> {
        let tok = self.next_token(context)?;
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(PolydataError::InvalidNumber { token: tok.to_string(), context }),
        }
    }
}

const TITLE_SUBJECT: &str = "subject=";
const TITLE_CLUSTER: &str = "cluster=";
const TITLE_TRACT: &str = "tract=";

fn parse_title(title: &str, bundle: &mut Bundle) {
    let mut structured = false;
    for field in title.split_ascii_whitespace() {
        if let Some(v) = field.strip_prefix(TITLE_SUBJECT) {
            bundle.subject_id = v.to_string();
            structured = true;
        } else if let Some(v) = field.strip_prefix(TITLE_CLUSTER) {
            bundle.cluster_id = v.to_string();
            structured = true;
        } else if let Some(v) = field.strip_prefix(TITLE_TRACT) {
            bundle.tract_label = Some(v.to_string());
            structured = true;
        }
    }
    if !structured {
        bundle.cluster_id = title.trim().to_string();
    }
}

/// Parses the ASCII polydata subset: `POINTS` followed by `LINES`.
///
/// `POLYGONS`, `VERTICES` and `TRIANGLE_STRIPS` cell blocks are skipped, and
/// parsing stops at `POINT_DATA` / `CELL_DATA` (attributes are not read).
/// Arbitrary input yields either a bundle or an error; this never panics.
pub fn parse_polydata(bytes: &[u8]) -> Result<Bundle, PolydataError> {
    let text = String::from_utf8_lossy(bytes);
    let mut lines = text.lines();

    let version = lines.next().ok_or_else(|| PolydataError::TruncatedFile("empty file".into()))?;
    if !version.trim_start().starts_with("# vtk DataFile Version") {
        return Err(PolydataError::MalformedHeader(format!("bad version line {version:?}")));
    }
    let title = lines.next().ok_or_else(|| PolydataError::TruncatedFile("missing title".into()))?;
    let encoding =
        lines.next().ok_or_else(|| PolydataError::TruncatedFile("missing encoding".into()))?;
    if encoding.trim() != "ASCII" {
        return Err(PolydataError::MalformedHeader(format!(
            "unsupported encoding {:?}",
            encoding.trim()
        )));
    }
    let dataset = loop {
        match lines.next() {
            Some(l) if l.trim().is_empty() => continue,
            Some(l) => break l,
            None => return Err(PolydataError::TruncatedFile("missing DATASET".into())),
        }
    };
    let mut ds = dataset.split_ascii_whitespace();
    if ds.next() != Some("DATASET") || ds.next() != Some("POLYDATA") || ds.next().is_some() {
        return Err(PolydataError::MalformedHeader(format!("unsupported dataset {dataset:?}")));
    }

    // Remaining content is whitespace-token driven.
    let rest: String = lines.collect::<Vec<_>>().join("\n");
    let mut toks = Tokens { iter: rest.split_ascii_whitespace() };

    let mut points: Option<Vec<Point3>> = None;
    let mut streamlines: Option<Vec<Vec<Point3>>> = None;

    while let Some(keyword) = toks.iter.next() {
        match keyword {
            "POINTS" => {
                if points.is_some() {
                    return Err(PolydataError::MalformedHeader("duplicate POINTS block".into()));
                }
                let n = toks.next_u64("POINTS count")?;
                let ty = toks.next_token("POINTS data type")?;
                if ty != "float" && ty != "double" {
                    return Err(PolydataError::MalformedHeader(format!(
                        "unsupported POINTS type {ty:?}"
                    )));
                }
                // Cap the preallocation; a bogus count must not allocate.
                let mut pts = Vec::with_capacity((n as usize).min(1 << 20));
                for _ in 0..n {
                    let x = toks.next_f64("POINTS coordinates")?;
                    let y = toks.next_f64("POINTS coordinates")?;
                    let z = toks.next_f64("POINTS coordinates")?;
                    pts.push(Point3::new(x, y, z));
                }
                points = Some(pts);
            }
            "LINES" => {
                if streamlines.is_some() {
                    return Err(PolydataError::MalformedHeader("duplicate LINES block".into()));
                }
                let pts = points.as_ref().ok_or_else(|| {
                    PolydataError::MalformedHeader("LINES before POINTS".into())
                })?;
                let m = toks.next_u64("LINES count")?;
                let size = toks.next_u64("LINES size")?;
                let mut out = Vec::with_capacity((m as usize).min(1 << 20));
                let mut consumed = 0u64;
                for record in 0..m as usize {
                    let k = toks.next_u64("LINES record length")?;
                    if k < 2 {
                        return Err(PolydataError::ShortStreamline { record, len: k });
                    }
                    let mut line = Vec::with_capacity((k as usize).min(1 << 16));
                    for _ in 0..k {
                        let idx = toks.next_u64("LINES point index")?;
                        let p = usize::try_from(idx).ok().and_then(|i| pts.get(i)).ok_or(
                            PolydataError::IndexOutOfRange { record, index: idx, n_points: pts.len() },
                        )?;
                        line.push(*p);
                    }
                    consumed = consumed.saturating_add(k + 1);
                    out.push(line);
                }
                if consumed != size {
                    return Err(PolydataError::SizeMismatch { declared: size, actual: consumed });
                }
                streamlines = Some(out);
            }
            "POLYGONS" | "VERTICES" | "TRIANGLE_STRIPS" => {
                let _m = toks.next_u64("cell count")?;
                let size = toks.next_u64("cell size")?;
                log::warn!("skipping unsupported {keyword} block");
                for _ in 0..size {
                    toks.next_u64("cell entry")?;
                }
            }
            "POINT_DATA" | "CELL_DATA" | "FIELD" | "METADATA" => {
                log::warn!("ignoring {keyword} attributes and everything after them");
                break;
            }
            other => {
                return Err(PolydataError::MalformedHeader(format!("unsupported keyword {other:?}")))
            }
        }
    }

    if points.is_none() {
        return Err(PolydataError::TruncatedFile("missing POINTS block".into()));
    }
    let lines = streamlines.ok_or_else(|| PolydataError::TruncatedFile("missing LINES block".into()))?;
    let mut bundle = Bundle::from_points(lines)?;
    parse_title(title, &mut bundle);
    Ok(bundle)
}

/// Writes a bundle as ASCII polydata. Points are emitted streamline by
/// streamline, so LINES indices are consecutive. Coordinates use the shortest
/// representation that round-trips exactly.
pub fn write_polydata(bundle: &Bundle) -> Vec<u8> {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = write!(s, "{TITLE_SUBJECT}{} {TITLE_CLUSTER}{}", token(&bundle.subject_id), token(&bundle.cluster_id));
    if let Some(t) = &bundle.tract_label {
        let _ = write!(s, " {TITLE_TRACT}{}", token(t));
    }
    s.push_str("\nASCII\nDATASET POLYDATA\n");
    let _ = writeln!(s, "POINTS {} double", bundle.n_points());
    for p in bundle.points() {
        let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    let size: usize = bundle.streamlines().iter().map(|l| l.len() + 1).sum();
    let _ = writeln!(s, "LINES {} {}", bundle.n_streamlines(), size);
    let mut next = 0usize;
    for line in bundle.streamlines() {
        let _ = write!(s, "{}", line.len());
        for _ in 0..line.len() {
            let _ = write!(s, " {next}");
            next += 1;
        }
        s.push('\n');
    }
    s.into_bytes()
}

fn token(s: &str) -> String {
    if s.is_empty() {
        "-".to_string()
    } else {
        s.split_ascii_whitespace().collect::<Vec<_>>().join("_")
    }
}

// ---------------------------------------------------------------------------
// Native binary format

pub const NATIVE_MAGIC: &[u8; 4] = b"FSHB";
pub const NATIVE_VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NativeError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported native format version {0}")]
    BadVersion(u8),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("{0} trailing byte(s) after the last streamline")]
    TrailingBytes(usize),
    #[error("invalid bundle: {0}")]
    Invalid(#[from] BundleError),
}

/// Encodes a bundle: `FSHB`, version byte, u32 NoS, then per streamline a
/// u32 point count and packed `f32` xyz triples, all little-endian.
pub fn write_native(bundle: &Bundle) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + bundle.n_streamlines() * 4 + bundle.n_points() * 12);
    out.extend_from_slice(NATIVE_MAGIC);
    out.push(NATIVE_VERSION);
    out.extend_from_slice(&(bundle.n_streamlines() as u32).to_le_bytes());
    for line in bundle.streamlines() {
        out.extend_from_slice(&(line.len() as u32).to_le_bytes());
        for p in line.points() {
            for c in p.to_array() {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NativeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            NativeError::TruncatedFile(format!(
                "{what}: need {n} byte(s) at offset {}, {} remain",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NativeError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn read_native(bytes: &[u8]) -> Result<Bundle, NativeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != NATIVE_MAGIC {
        return Err(NativeError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = r.take(1, "version")?[0];
    if version != NATIVE_VERSION {
        return Err(NativeError::BadVersion(version));
    }
    let nos = r.u32("streamline count")? as usize;
    let mut lines = Vec::with_capacity(nos.min(r.remaining() / 4));
    for i in 0..nos {
        let count = r.u32("point count")? as usize;
        let nbytes = count.checked_mul(12).ok_or_else(|| {
            NativeError::TruncatedFile(format!("streamline {i} point count overflows"))
        })?;
        let raw = r.take(nbytes, "coordinates")?;
        let pts = raw
            .chunks_exact(12)
            .map(|c| {
                let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]) as f64;
                Point3::new(f(0), f(4), f(8))
            })
            .collect();
        lines.push(pts);
    }
    if r.remaining() != 0 {
        return Err(NativeError::TrailingBytes(r.remaining()));
    }
    Ok(Bundle::from_points(lines)?)
}
