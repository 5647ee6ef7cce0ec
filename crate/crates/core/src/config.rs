//! Sectioned `key = value` run configuration.
//!
//! ```text
//! # comment
//! [train]
//! variant = full
//! epochs = 60
//! ```
//!
//! Every key has a default; unknown sections, unknown keys and repeated keys
//! are errors. The hash of the canonical rendering (all keys, table order)
//! identifies a run and is written into every output file.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::{TrainConfig, Variant};
use crate::rng::{derive_seed, domain};
use crate::synth::DatasetConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key [{section}] {key}")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("unknown key [{section}] {key}")]
    NoSuchKey { section: String, key: String },
    #[error("line {line}: [{section}] {key} given twice")]
    Duplicate { line: usize, section: String, key: String },
    #[error("[{section}] {key}: {msg}")]
    BadValue { section: String, key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: String,
    pub out_dir: String,
    pub synth: DatasetConfig,
    pub voxel_size: f64,
    pub pca_k: usize,
    pub pca_standardize: bool,
    /// Divide PCA-score targets by their training sd.
    pub standardize_targets: bool,
    pub batch_norm: bool,
    pub train: TrainConfig,
    /// Comma-separated domain tags, or `*` for all.
    pub train_domains: String,
    pub test_domains: String,
    /// `test`, or `all` to predict every split of the test domains.
    pub test_splits: String,
    pub bundles_per_subject: usize,
    pub bench_subjects: usize,
    pub gradcheck_probes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data_dir: "data".into(),
            out_dir: "out".into(),
            synth: DatasetConfig::default(),
            voxel_size: crate::shape::DEFAULT_VOXEL_SIZE,
            pca_k: crate::pca::DEFAULT_COMPONENTS,
            pca_standardize: true,
            standardize_targets: true,
            batch_norm: false,
            train: TrainConfig::default(),
            train_domains: "*".into(),
            test_domains: "*".into(),
            test_splits: "test".into(),
            bundles_per_subject: 73,
            bench_subjects: 3,
            gradcheck_probes: 200,
        }
    }
}

trait Value: Sized {
    fn render(&self) -> String;
    fn parse(s: &str) -> Result<Self, String>;
}

macro_rules! int_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|_| format!("expected a non-negative integer, got '{s}'"))
            }
        }
    )*};
}
int_value!(usize, u64);

impl Value for f64 {
    fn render(&self) -> String {
        format!("{self:?}")
    }
    fn parse(s: &str) -> Result<Self, String> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("expected a finite number, got '{s}'")),
        }
    }
}

impl Value for bool {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected true or false, got '{s}'"))
    }
}

impl Value for String {
    fn render(&self) -> String {
        self.clone()
    }
    fn parse(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
}

impl Value for Variant {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> Result<Self, String> {
        s.parse()
    }
}

/// One documented configuration key.
pub struct Key {
    pub section: &'static str,
    pub name: &'static str,
    pub doc: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> Result<(), String>,
}

macro_rules! key {
    ($sec:literal, $name:literal, $ty:ty, $($field:ident).+, $doc:literal) => {
        Key {
            section: $sec,
            name: $name,
            doc: $doc,
            get: |c| Value::render(&c.$($field).+),
            set: |c, v| {
                c.$($field).+ = <$ty as Value>::parse(v)?;
                Ok(())
            },
        }
    };
}

/// All keys, in canonical order.
pub static KEYS: &[Key] = &[
    key!("run", "seed", u64, seed, "master seed; every random stream is derived from it"),
    key!("run", "data_dir", String, data_dir, "dataset directory (bundles, manifest, shapes.csv)"),
    key!("run", "out_dir", String, out_dir, "output directory for models, predictions and reports"),
    key!("synth", "n_cylinder", usize, synth.n_cylinder, "straight tube bundles"),
    key!("synth", "n_arc", usize, synth.n_arc, "circular arc bundles"),
    key!("synth", "n_helix", usize, synth.n_helix, "helical bundles"),
    key!("synth", "domain_cylinder", String, synth.domain_cylinder, "domain tag of straight tubes"),
    key!("synth", "domain_arc", String, synth.domain_arc, "domain tag of arcs"),
    key!("synth", "domain_helix", String, synth.domain_helix, "domain tag of helices"),
    key!("synth", "length_min", f64, synth.length.lo, "centerline length range, mm"),
    key!("synth", "length_max", f64, synth.length.hi, "centerline length range, mm"),
    key!("synth", "arc_radius_min", f64, synth.arc_radius.lo, "arc radius range, mm"),
    key!("synth", "arc_radius_max", f64, synth.arc_radius.hi, "arc radius range, mm"),
    key!("synth", "arc_angle_min", f64, synth.arc_angle.lo, "arc angle range, rad"),
    key!("synth", "arc_angle_max", f64, synth.arc_angle.hi, "arc angle range, rad"),
    key!("synth", "helix_radius_min", f64, synth.helix_radius.lo, "helix radius range, mm"),
    key!("synth", "helix_radius_max", f64, synth.helix_radius.hi, "helix radius range, mm"),
    key!("synth", "helix_pitch_min", f64, synth.helix_pitch.lo, "helix pitch range, mm per turn"),
    key!("synth", "helix_pitch_max", f64, synth.helix_pitch.hi, "helix pitch range, mm per turn"),
    key!("synth", "tube_radius_min", f64, synth.tube_radius.lo, "tube radius range, mm"),
    key!("synth", "tube_radius_max", f64, synth.tube_radius.hi, "tube radius range, mm"),
    key!("synth", "streamline_density", f64, synth.streamline_density, "streamlines per mm^2 of cross-section"),
    key!("synth", "density_factor_min", f64, synth.density_factor.lo, "random factor on the streamline count"),
    key!("synth", "density_factor_max", f64, synth.density_factor.hi, "random factor on the streamline count"),
    key!("synth", "min_streamlines", usize, synth.min_streamlines, "lower bound on streamlines per bundle"),
    key!("synth", "point_spacing", f64, synth.point_spacing, "target spacing of streamline points, mm"),
    key!("synth", "jitter_min", f64, synth.jitter_sd.lo, "per-point gaussian jitter sd range, mm"),
    key!("synth", "jitter_max", f64, synth.jitter_sd.hi, "per-point gaussian jitter sd range, mm"),
    key!("synth", "flip_probability", f64, synth.flip_probability, "chance a streamline is stored reversed"),
    key!("synth", "translation_extent", f64, synth.translation_extent, "random translation per axis in [-e, e], mm"),
    key!("synth", "train_fraction", f64, synth.train_fraction, "share of each family in the train split"),
    key!("synth", "val_fraction", f64, synth.val_fraction, "share of each family in the val split"),
    key!("shape", "voxel_size", f64, voxel_size, "voxel edge, mm"),
    key!("features", "n_points", usize, train.n_points, "points sampled per bundle"),
    key!("features", "coord_scale", f64, train.coord_scale, "factor applied to mm coordinates at the network input"),
    key!("pca", "k", usize, pca_k, "retained components"),
    key!("pca", "standardize", bool, pca_standardize, "z-score measure columns before the decomposition"),
    key!("train", "variant", Variant, train.variant, "vanilla, multimodal, pca or full"),
    key!("train", "batch_size", usize, train.batch_size, "samples per step, even; halves form the pairs"),
    key!("train", "epochs", usize, train.epochs, "passes over the train split"),
    key!("train", "lr0", f64, train.schedule.lr0, "initial learning rate"),
    key!("train", "lr_period", usize, train.schedule.period, "optimizer steps between learning-rate decays"),
    key!("train", "lr_gamma", f64, train.schedule.gamma, "learning-rate decay factor"),
    key!("train", "lambda_pair", f64, train.lambda_pair, "weight of the pairwise difference term"),
    key!("train", "weight_decay", f64, train.adam.weight_decay, "L2 coefficient added to gradients"),
    key!("train", "beta1", f64, train.adam.beta1, "Adam first-moment decay"),
    key!("train", "beta2", f64, train.adam.beta2, "Adam second-moment decay"),
    key!("train", "eps", f64, train.adam.eps, "Adam denominator epsilon"),
    key!("train", "standardize_targets", bool, standardize_targets, "divide PCA-score targets by their training sd"),
    key!("train", "batch_norm", bool, batch_norm, "reserved; must be false"),
    key!("split", "train_domains", String, train_domains, "domains used for training, comma list or *"),
    key!("split", "test_domains", String, test_domains, "domains used for predict/eval, comma list or *"),
    key!("split", "test_splits", String, test_splits, "test, or all for every split of the test domains"),
    key!("bench", "bundles_per_subject", usize, bundles_per_subject, "bundles in one subject-equivalent"),
    key!("bench", "subjects", usize, bench_subjects, "subject-equivalents timed"),
    key!("gradcheck", "probes", usize, gradcheck_probes, "finite-difference probes"),
];

impl RunConfig {
    /// Sets one key from its text form, without revalidating.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let k = KEYS.iter().find(|e| e.section == section && e.name == key).ok_or_else(|| {
            ConfigError::NoSuchKey { section: section.to_string(), key: key.to_string() }
        })?;
        (k.set)(self, value).map_err(|msg| ConfigError::BadValue {
            section: section.to_string(),
            key: key.to_string(),
            msg,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line: line_no, msg: format!("bad section header '{line}'") })?
                    .trim();
                if !KEYS.iter().any(|k| k.section == name) {
                    return Err(ConfigError::Syntax { line: line_no, msg: format!("unknown section [{name}]") });
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: line_no, msg: format!("expected key = value, got '{line}'") })?;
            let (k, v) = (k.trim(), v.trim());
            let sec = section
                .clone()
                .ok_or_else(|| ConfigError::Syntax { line: line_no, msg: "key before any [section]".into() })?;
            let key = KEYS.iter().find(|e| e.section == sec && e.name == k).ok_or_else(|| ConfigError::UnknownKey {
                line: line_no,
                section: sec.clone(),
                key: k.to_string(),
            })?;
            if !seen.insert((sec.clone(), k.to_string())) {
                return Err(ConfigError::Duplicate { line: line_no, section: sec, key: k.to_string() });
            }
            (key.set)(&mut cfg, v).map_err(|msg| ConfigError::BadValue { section: sec, key: k.to_string(), msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.synth.validate().map_err(|e| inv(e.to_string()))?;
        self.train.validate().map_err(|e| inv(e.to_string()))?;
        if !(self.voxel_size > 0.0) {
            return Err(inv("voxel_size must be positive".into()));
        }
        if self.pca_k == 0 || self.pca_k > crate::shape::ShapeMeasures::COUNT {
            return Err(inv("pca k must be between 1 and 10".into()));
        }
        if self.batch_norm {
            return Err(inv("batch_norm is reserved and not supported".into()));
        }
        if self.test_splits != "test" && self.test_splits != "all" {
            return Err(inv(format!("test_splits must be test or all, got '{}'", self.test_splits)));
        }
        if self.bundles_per_subject == 0 || self.bench_subjects == 0 {
            return Err(inv("bench sizes must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its current value, grouped by section.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut current = "";
        for k in KEYS {
            if k.section != current {
                if !current.is_empty() {
                    s.push('\n');
                }
                let _ = writeln!(s, "[{}]", k.section);
                current = k.section;
            }
            let _ = writeln!(s, "{} = {}", k.name, (k.get)(self));
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::render`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Comment block for output files.
    pub fn provenance(&self) -> String {
        format!("config_hash={} seed={}", self.hash(), self.seed)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig { seed: derive_seed(self.seed, &[domain::SYNTH_PARAMS]), ..self.synth.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, &[domain::INIT]), ..self.train.clone() }
    }

    /// Point-sampling seed of a bundle, keyed by its manifest path.
    pub fn sample_seed(&self, bundle_key: &str) -> u64 {
        let h = Sha256::digest(bundle_key.as_bytes());
        let key = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
        derive_seed(self.seed, &[domain::SAMPLE_POINTS, key])
    }

    pub fn data_path(&self, name: &str) -> PathBuf {
        PathBuf::from(&self.data_dir).join(name)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        PathBuf::from(&self.out_dir).join(name)
    }
}

/// `[section] key = default  # doc` for every key.
pub fn key_help() -> String {
    let defaults = RunConfig::default();
    let mut s = String::new();
    for k in KEYS {
        let _ = writeln!(s, "  [{}] {} = {}    {}", k.section, k.name, (k.get)(&defaults), k.doc);
    }
    s
}

/// Whether `domain` is selected by a comma list or `*`.
pub fn domain_selected(list: &str, domain: &str) -> bool {
    list.trim() == "*" || list.split(',').any(|d| d.trim() == domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_render_parses_back() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
        assert_eq!(RunConfig::parse("").unwrap(), c);
    }

    #[test]
    fn keys_are_unique() {
        for (i, a) in KEYS.iter().enumerate() {
            for b in &KEYS[i + 1..] {
                assert!(!(a.section == b.section && a.name == b.name), "{} {}", a.section, a.name);
            }
        }
    }

    #[test]
    fn overrides_and_comments() {
        let c = RunConfig::parse("# x\n[train]\nvariant = vanilla # ablate\nepochs=5\n\n[features]\nn_points = 64\n").unwrap();
        assert_eq!(c.train.variant, Variant::Vanilla);
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.n_points, 64);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn errors() {
        assert!(matches!(RunConfig::parse("[train]\nmomentum = 0.9"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(RunConfig::parse("[nope]"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("epochs = 3"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(RunConfig::parse("[train]\nepochs = 3\nepochs = 4"), Err(ConfigError::Duplicate { .. })));
        assert!(matches!(RunConfig::parse("[train]\nepochs = -3"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("[train]\nbatch_size = 7"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("[train]\nbatch_norm = true"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("[shape]\nvoxel_size = nan"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn help_lists_every_key() {
        let h = key_help();
        for k in KEYS {
            assert!(h.contains(&format!("[{}] {} = ", k.section, k.name)));
        }
        assert!(h.contains("[train] epochs = 60"));
    }

    #[test]
    fn derived_seeds_differ_by_purpose() {
        let c = RunConfig::default();
        assert_ne!(c.dataset_config().seed, c.train_config().seed);
        assert_ne!(c.sample_seed("a.fsb"), c.sample_seed("b.fsb"));
        assert_eq!(c.sample_seed("a.fsb"), c.sample_seed("a.fsb"));
    }

    #[test]
    fn domain_lists() {
        assert!(domain_selected("*", "B"));
        assert!(domain_selected("A, B", "B"));
        assert!(!domain_selected("A", "B"));
    }
}
