//! End-to-end commands over a [`RunConfig`]: dataset synthesis, ground-truth
//! shapes, PCA, training, prediction, evaluation, gradient check and timing.
//!
//! Files (all CSVs start with `#` provenance lines):
//!
//! | command | writes |
//! |---|---|
//! | synth | `data_dir/bundle_*.fsb`, `data_dir/manifest.csv` |
//! | shape | `data_dir/shapes.csv` |
//! | pca | `out_dir/pca.csv` |
//! | train | `out_dir/model_<variant>.ckpt`, `out_dir/train_log_<variant>.csv` |
//! | predict | `out_dir/predictions_<variant>.csv` |
//! | eval | `out_dir/eval_<variant>.csv` |
//! | ablation | all of the above per variant, `out_dir/ablation_{pearson_r,nmse}.csv` |
//! | gradcheck | `out_dir/gradcheck.csv` |
//! | bench | `out_dir/bench.csv` |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::config::{domain_selected, ConfigError, RunConfig};
use crate::features::{extract_tabular, sample_points, FeatureError, SampleFeatures, TabStandardizer};
use crate::metrics::{ablation_table, evaluate, EvalReport, MetricsError};
use crate::nn::{
    gradient_check, train, Checkpoint, CheckpointError, EpochLog, NnError, PredictError, Predictor, SampleSet,
    TrainError, Variant,
};
use crate::pca::{PcaError, PcaModel};
use crate::shape::{compute_measures, ShapeError, ShapeMeasures};
use crate::synth::{generate_dataset, DatasetManifest, ManifestRow, Split, SynthError};
use crate::tractio::{read_native, Bundle, NativeError};

/// Gradient-check pass threshold on the max relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Bundle { path: String, source: NativeError },
    #[error("{path}: {source}")]
    Shape { path: String, source: ShapeError },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("gradient check failed: max relative error {max_rel_err:e} >= {tolerance:e} ({worst})")]
    GradcheckFailed { max_rel_err: f64, tolerance: f64, worst: String },
}

impl PipelineError {
    /// 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Train(TrainError::InvalidConfig(_)) => 2,
            PipelineError::Train(TrainError::Diverged { .. }) => 4,
            PipelineError::Nn(NnError::NonFinite(_)) => 4,
            PipelineError::GradcheckFailed { .. } => 4,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn header(cfg: &RunConfig, what: &str) -> String {
    format!("# fibershape {what}\n# {}\n", cfg.provenance())
}

pub fn run_synth(cfg: &RunConfig) -> Result<DatasetManifest, PipelineError> {
    let dir = PathBuf::from(&cfg.data_dir);
    let comment = format!("fibershape manifest\n{}", cfg.provenance());
    Ok(generate_dataset(&cfg.dataset_config(), &dir, &comment)?)
}

pub fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest, PipelineError> {
    let path = cfg.data_path("manifest.csv");
    if !path.exists() {
        return Err(PipelineError::Data(format!("{}: not found (run synth first)", path.display())));
    }
    Ok(DatasetManifest::load(&path)?)
}

pub fn load_bundle(cfg: &RunConfig, row: &ManifestRow) -> Result<Bundle, PipelineError> {
    let path = PathBuf::from(&cfg.data_dir).join(&row.path);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    read_native(&bytes).map_err(|source| PipelineError::Bundle { path: path.display().to_string(), source })
}

/// Ground-truth measures of one manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeRow {
    pub path: String,
    pub family: String,
    pub domain: String,
    pub split: Split,
    pub measures: [f64; 10],
}

fn shapes_csv(cfg: &RunConfig, rows: &[ShapeRow]) -> String {
    let mut s = header(cfg, "ground-truth shape measures");
    let _ = writeln!(s, "# voxel_size={:?}", cfg.voxel_size);
    s.push_str("path,family,domain,split");
    for n in ShapeMeasures::NAMES {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{},{}", r.path, r.family, r.domain, r.split.as_str());
        for v in r.measures {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    s
}

pub fn run_shape(cfg: &RunConfig) -> Result<Vec<ShapeRow>, PipelineError> {
    let manifest = load_manifest(cfg)?;
    let mut rows = Vec::with_capacity(manifest.rows.len());
    for row in &manifest.rows {
        let bundle = load_bundle(cfg, row)?;
        let m = compute_measures(&bundle, cfg.voxel_size)
            .map_err(|source| PipelineError::Shape { path: row.path.display().to_string(), source })?;
        rows.push(ShapeRow {
            path: row.path.display().to_string(),
            family: row.family().to_string(),
            domain: row.domain.clone(),
            split: row.split,
            measures: m.to_array(),
        });
    }
    write_file(&cfg.data_path("shapes.csv"), shapes_csv(cfg, &rows))?;
    Ok(rows)
}

pub fn read_shapes(path: &Path) -> Result<Vec<ShapeRow>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Data(format!("{}: not found (run shape first)", path.display())));
    }
    let bad = |m: String| PipelineError::Data(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 4 + ShapeMeasures::COUNT {
            return Err(bad(format!("expected {} fields, got {}", 4 + ShapeMeasures::COUNT, rec.len())));
        }
        let mut measures = [0.0; 10];
        for (j, m) in measures.iter_mut().enumerate() {
            *m = rec[4 + j].parse().map_err(|_| bad(format!("bad number '{}'", &rec[4 + j])))?;
        }
        out.push(ShapeRow {
            path: rec[0].to_string(),
            family: rec[1].to_string(),
            domain: rec[2].to_string(),
            split: rec[3].parse().map_err(|e: SynthError| bad(e.to_string()))?,
            measures,
        });
    }
    Ok(out)
}

fn measure_matrix(rows: &[&ShapeRow]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), ShapeMeasures::COUNT), |(i, j)| rows[i].measures[j])
}

fn select<'a>(shapes: &'a [ShapeRow], split: Split, domains: &str) -> Vec<&'a ShapeRow> {
    shapes.iter().filter(|r| r.split == split && domain_selected(domains, &r.domain)).collect()
}

fn test_rows<'a>(cfg: &RunConfig, shapes: &'a [ShapeRow]) -> Vec<&'a ShapeRow> {
    shapes
        .iter()
        .filter(|r| (cfg.test_splits == "all" || r.split == Split::Test) && domain_selected(&cfg.test_domains, &r.domain))
        .collect()
}

fn fit_pca(cfg: &RunConfig, train_rows: &[&ShapeRow]) -> Result<PcaModel, PipelineError> {
    let mut pca = PcaModel::fit_with(measure_matrix(train_rows).view(), cfg.pca_k, cfg.pca_standardize)?;
    if pca.rank_deficient {
        log::warn!("training measures have rank below k = {}; unit score sd used for null directions", cfg.pca_k);
    }
    if !cfg.standardize_targets {
        pca.score_sd = Array1::ones(pca.k());
    }
    Ok(pca)
}

pub fn run_pca(cfg: &RunConfig) -> Result<PcaModel, PipelineError> {
    let shapes = read_shapes(&cfg.data_path("shapes.csv"))?;
    let train_rows = select(&shapes, Split::Train, &cfg.train_domains);
    let pca = fit_pca(cfg, &train_rows)?;
    let comment = format!("fibershape pca\n{}\ntrain_rows={}", cfg.provenance(), train_rows.len());
    write_file(&cfg.out_path("pca.csv"), pca.to_csv(&ShapeMeasures::NAMES, &comment))?;
    Ok(pca)
}

fn bundles_for(cfg: &RunConfig, rows: &[&ShapeRow]) -> Result<Vec<Bundle>, PipelineError> {
    rows.iter()
        .map(|r| {
            let path = PathBuf::from(&cfg.data_dir).join(&r.path);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            read_native(&bytes).map_err(|source| PipelineError::Bundle { path: path.display().to_string(), source })
        })
        .collect()
}

fn targets(variant: Variant, pca: &PcaModel, rows: &[&ShapeRow]) -> Result<Array2<f64>, PipelineError> {
    let m = measure_matrix(rows);
    Ok(if variant.uses_pca() {
        pca.standardize_scores(pca.transform(m.view())?.view())
    } else {
        pca.standardize_rows(m.view())
    })
}

fn sample_set(
    cfg: &RunConfig,
    variant: Variant,
    pca: &PcaModel,
    tab: &TabStandardizer,
    rows: &[&ShapeRow],
    bundles: &[Bundle],
) -> Result<SampleSet, PipelineError> {
    let y = targets(variant, pca, rows)?;
    let samples: Vec<SampleFeatures> = rows
        .iter()
        .zip(bundles)
        .enumerate()
        .map(|(i, (r, b))| SampleFeatures {
            points: sample_points(b, cfg.train.n_points, cfg.sample_seed(&r.path)),
            tabular: tab.apply(extract_tabular(b)),
            target: y.row(i).to_vec(),
            subject_id: b.subject_id.clone(),
            cluster_id: r.path.clone(),
        })
        .collect();
    Ok(SampleSet::from_features(&samples, cfg.train.n_points)?)
}

/// Training result plus where it was written.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub seconds: f64,
    pub checkpoint_path: PathBuf,
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainRun, PipelineError> {
    let variant = cfg.train.variant;
    let shapes = read_shapes(&cfg.data_path("shapes.csv"))?;
    let train_rows = select(&shapes, Split::Train, &cfg.train_domains);
    let val_rows = select(&shapes, Split::Val, &cfg.train_domains);
    if train_rows.len() < 2 {
        return Err(PipelineError::Data(format!("train split has {} rows", train_rows.len())));
    }
    let pca = fit_pca(cfg, &train_rows)?;
    let train_bundles = bundles_for(cfg, &train_rows)?;
    let tab_rows: Vec<[f64; 2]> = train_bundles.iter().map(extract_tabular).collect();
    let tab = TabStandardizer::fit(&tab_rows)?;
    let train_set = sample_set(cfg, variant, &pca, &tab, &train_rows, &train_bundles)?;
    let val_set = if val_rows.is_empty() {
        None
    } else {
        let b = bundles_for(cfg, &val_rows)?;
        Some(sample_set(cfg, variant, &pca, &tab, &val_rows, &b)?)
    };

    let tcfg = cfg.train_config();
    let outcome = train(&tcfg, &train_set, val_set.as_ref(), |row| {
        log::info!(
            "epoch {} step {} lr {:e} train {:.5} val {}",
            row.epoch,
            row.step,
            row.lr,
            row.train_loss,
            row.val_loss.map_or("-".to_string(), |v| format!("{v:.5}"))
        );
    })?;
    let checkpoint = Checkpoint { config: tcfg, config_hash: cfg.hash(), pca, tab, params: outcome.net.params };
    let checkpoint_path = cfg.out_path(&format!("model_{variant}.ckpt"));
    write_file(&checkpoint_path, checkpoint.to_bytes())?;
    let mut log_csv = header(cfg, "training log");
    let _ = writeln!(log_csv, "# variant={variant}");
    log_csv.push_str(EpochLog::HEADER);
    log_csv.push('\n');
    for row in &outcome.log {
        log_csv.push_str(&row.csv_row());
        log_csv.push('\n');
    }
    write_file(&cfg.out_path(&format!("train_log_{variant}.csv")), log_csv)?;
    Ok(TrainRun { checkpoint, log: outcome.log, seconds: outcome.seconds, checkpoint_path })
}

pub fn load_checkpoint(cfg: &RunConfig, variant: Variant) -> Result<Checkpoint, PipelineError> {
    let path = cfg.out_path(&format!("model_{variant}.ckpt"));
    if !path.exists() {
        return Err(PipelineError::Data(format!("{}: not found (run train first)", path.display())));
    }
    Ok(Checkpoint::load(&path)?)
}

/// Predictions on the test split, in manifest order.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub paths: Vec<String>,
    pub measures: Array2<f64>,
    pub seconds: f64,
}

pub fn run_predict(cfg: &RunConfig) -> Result<Predictions, PipelineError> {
    let variant = cfg.train.variant;
    let shapes = read_shapes(&cfg.data_path("shapes.csv"))?;
    let rows = test_rows(cfg, &shapes);
    if rows.is_empty() {
        return Err(PipelineError::Data("test split is empty".into()));
    }
    let bundles = bundles_for(cfg, &rows)?;
    let seeds: Vec<u64> = rows.iter().map(|r| cfg.sample_seed(&r.path)).collect();
    let mut predictor = Predictor::new(load_checkpoint(cfg, variant)?);
    let measures = predictor.predict(&bundles, &seeds)?;
    let mut s = header(cfg, "predicted shape measures");
    let _ = writeln!(s, "# variant={variant}");
    s.push_str("path");
    for n in ShapeMeasures::NAMES {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&r.path);
        for v in measures.row(i) {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    write_file(&cfg.out_path(&format!("predictions_{variant}.csv")), s)?;
    Ok(Predictions { paths: rows.iter().map(|r| r.path.clone()).collect(), measures, seconds: predictor.last_seconds })
}

fn read_predictions(path: &Path) -> Result<(Vec<String>, Array2<f64>), PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Data(format!("{}: not found (run predict first)", path.display())));
    }
    let bad = |m: String| PipelineError::Data(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| bad(e.to_string()))?;
    let (mut paths, mut vals) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 1 + ShapeMeasures::COUNT {
            return Err(bad(format!("expected {} fields, got {}", 1 + ShapeMeasures::COUNT, rec.len())));
        }
        paths.push(rec[0].to_string());
        for j in 1..rec.len() {
            vals.push(rec[j].parse::<f64>().map_err(|_| bad(format!("bad number '{}'", &rec[j])))?);
        }
    }
    let n = paths.len();
    Ok((paths, Array2::from_shape_vec((n, ShapeMeasures::COUNT), vals).expect("sized")))
}

pub fn run_eval(cfg: &RunConfig) -> Result<EvalReport, PipelineError> {
    let variant = cfg.train.variant;
    let shapes = read_shapes(&cfg.data_path("shapes.csv"))?;
    let (paths, pred) = read_predictions(&cfg.out_path(&format!("predictions_{variant}.csv")))?;
    let mut gt = Array2::zeros(pred.dim());
    for (i, p) in paths.iter().enumerate() {
        let row = shapes
            .iter()
            .find(|r| &r.path == p)
            .ok_or_else(|| PipelineError::Data(format!("prediction for unknown bundle {p}")))?;
        gt.row_mut(i).assign(&Array1::from(row.measures.to_vec()));
    }
    let report = evaluate(pred.view(), gt.view(), &ShapeMeasures::NAMES, variant.as_str())?;
    let comment = format!("fibershape evaluation\n{}", cfg.provenance());
    write_file(&cfg.out_path(&format!("eval_{variant}.csv")), report.to_csv(&comment))?;
    Ok(report)
}

/// Train, predict and evaluate one variant.
pub fn run_variant(cfg: &RunConfig, variant: Variant) -> Result<EvalReport, PipelineError> {
    let mut c = cfg.clone();
    c.train.variant = variant;
    run_train(&c)?;
    run_predict(&c)?;
    run_eval(&c)
}

/// All four variants on one config; writes the two comparison tables.
pub fn run_ablation(cfg: &RunConfig) -> Result<Vec<EvalReport>, PipelineError> {
    let reports = Variant::ALL.iter().map(|&v| run_variant(cfg, v)).collect::<Result<Vec<_>, _>>()?;
    for metric in ["pearson_r", "nmse"] {
        let mut s = header(cfg, &format!("ablation, {metric}"));
        s.push_str(&ablation_table(&reports, metric));
        write_file(&cfg.out_path(&format!("ablation_{metric}.csv")), s)?;
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckRow {
    pub variant: Variant,
    pub probes: usize,
    pub redrawn: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Gradient check of every variant on a reduced network (N = 8, B = 2).
pub fn run_gradcheck(cfg: &RunConfig) -> Result<Vec<GradcheckRow>, PipelineError> {
    let seed = crate::rng::derive_seed(cfg.seed, &[crate::rng::domain::GRADCHECK]);
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let r = gradient_check(v, 8, 2, cfg.gradcheck_probes, seed)?;
        rows.push(GradcheckRow { variant: v, probes: r.probes, redrawn: r.redrawn, max_rel_err: r.max_rel_err, worst: r.worst });
    }
    let mut s = header(cfg, "gradient check");
    s.push_str("variant,probes,redrawn,max_rel_err,pass\n");
    for r in &rows {
        let pass = r.max_rel_err < GRADCHECK_TOLERANCE && r.probes == cfg.gradcheck_probes;
        let _ = writeln!(s, "{},{},{},{:e},{}", r.variant, r.probes, r.redrawn, r.max_rel_err, pass);
    }
    write_file(&cfg.out_path("gradcheck.csv"), s)?;
    if let Some(bad) = rows.iter().find(|r| !(r.max_rel_err < GRADCHECK_TOLERANCE) || r.probes < cfg.gradcheck_probes) {
        return Err(PipelineError::GradcheckFailed {
            max_rel_err: bad.max_rel_err,
            tolerance: GRADCHECK_TOLERANCE,
            worst: format!("{}: {} ({} of {} probes)", bad.variant, bad.worst, bad.probes, cfg.gradcheck_probes),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub subject: usize,
    pub bundles: usize,
    pub oracle_seconds: f64,
    pub predict_seconds: f64,
}

/// Times ground-truth computation and model prediction per subject-equivalent
/// of `bundles_per_subject` bundles drawn from the test domains.
pub fn run_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>, PipelineError> {
    let manifest = load_manifest(cfg)?;
    let pool: Vec<&ManifestRow> =
        manifest.rows.iter().filter(|r| domain_selected(&cfg.test_domains, &r.domain)).collect();
    if pool.is_empty() {
        return Err(PipelineError::Data("no bundles in the test domains".into()));
    }
    let mut predictor = Predictor::new(load_checkpoint(cfg, cfg.train.variant)?);
    let per = cfg.bundles_per_subject;
    let mut rows = Vec::new();
    for subject in 0..cfg.bench_subjects {
        let picked: Vec<&ManifestRow> = (0..per).map(|i| pool[(subject * per + i) % pool.len()]).collect();
        let bundles = picked.iter().map(|r| load_bundle(cfg, r)).collect::<Result<Vec<_>, _>>()?;
        let seeds: Vec<u64> = picked.iter().map(|r| cfg.sample_seed(&r.path.display().to_string())).collect();

        let start = Instant::now();
        for (b, r) in bundles.iter().zip(&picked) {
            compute_measures(b, cfg.voxel_size)
                .map_err(|source| PipelineError::Shape { path: r.path.display().to_string(), source })?;
        }
        let oracle_seconds = start.elapsed().as_secs_f64();
        predictor.predict(&bundles, &seeds)?;
        rows.push(BenchRow { subject, bundles: per, oracle_seconds, predict_seconds: predictor.last_seconds });
    }
    let mut s = header(cfg, "timing per subject-equivalent (wall clock, not reproducible)");
    s.push_str("subject,bundles,oracle_seconds,predict_seconds\n");
    for r in &rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", r.subject, r.bundles, r.oracle_seconds, r.predict_seconds);
    }
    write_file(&cfg.out_path("bench.csv"), s)?;
    Ok(rows)
}
