//! Acceptance suite. Runs every criterion in order on one thread (several
//! are timed) and prints one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{correlated, dense_measures, lines_of, random_bundle, rel, semicircle, straight_line};
use fibershape::config::RunConfig;
use fibershape::features::{SampleFeatures, TabStandardizer};
use fibershape::metrics::{fisher_z, nmse, paired_t, pearson_r, EvalReport};
use fibershape::nn::{forward, gradient_check, infer, paired_loss, train, NetworkParams, SampleSet, TrainConfig, Variant};
use fibershape::pca::PcaModel;
use fibershape::pipeline::{self, GRADCHECK_TOLERANCE};
use fibershape::rng::keyed_rng;
use fibershape::shape::compute_measures;
use fibershape::synth::{generate_bundle, BundleSpec, Centerline, Pose};
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

/// Accumulates sub-checks of one criterion.
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks { failed: Vec::new(), notes: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: String) {
        if ok {
            self.notes.push(what);
        } else {
            self.failed.push(what);
        }
    }
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn c1_analytic_shapes(c: &mut Checks) {
    let start = Instant::now();
    let m = compute_measures(&straight_line(11, 10.0), 1.0).unwrap();
    c.check((m.curl - 1.0).abs() < 1e-9, format!("straight curl {:.3e} off", (m.curl - 1.0).abs()));

    let r = 50.0;
    let m = compute_measures(&semicircle(r, 181), 1.0).unwrap();
    for (name, got, want) in [("length", m.length, PI * r), ("span", m.span, 2.0 * r), ("curl", m.curl, PI / 2.0)] {
        c.check(rel(got, want) < 0.005, format!("semicircle {name} rel err {:.2e} (< 5e-3)", rel(got, want)));
    }

    let spec = BundleSpec {
        centerline: Centerline::Straight { length: 80.0 },
        tube_radius: 4.0,
        n_streamlines: 500,
        points_per_streamline: 81,
        jitter_sd: 0.0,
        flip_probability: 0.0,
        pose: Pose::IDENTITY,
        seed: 1,
    };
    let m = compute_measures(&generate_bundle(&spec).unwrap(), 0.5).unwrap();
    let irr = 1.0 + m.diameter / (2.0 * m.length);
    for (name, got, want, tol) in [
        ("volume", m.volume, PI * 16.0 * 80.0, 0.05),
        ("diameter", m.diameter, 8.0, 0.05),
        ("elongation", m.elongation, 10.0, 0.05),
        ("irregularity", m.irregularity, 1.05, 0.10),
    ] {
        c.check(rel(got, want) < tol, format!("cylinder {name} {got:.4} vs {want:.4} (rel {:.3}, tol {tol})", rel(got, want)));
    }
    c.notes.push(format!("1 + D/(2L) at the measured D, L is {irr:.4}"));
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 10.0, format!("runtime {secs:.2} s (< 10 s)"));
}

fn c2_brute_force(c: &mut Checks) {
    let mut mismatches = 0;
    for seed in 0..20u64 {
        let v = if seed % 2 == 0 { 1.0 } else { 0.5 };
        let b = random_bundle(10_000 + seed, v);
        let got = compute_measures(&b, v).unwrap().to_array();
        let want = dense_measures(&lines_of(&b), v);
        if got.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
    }
    c.check(mismatches == 0, format!("{mismatches} of 20 bundles differ from the dense 64^3 oracle"));
}

fn c3_pca(c: &mut Checks) {
    let x = correlated(600, 7);
    let p = PcaModel::fit(x.view(), 10).unwrap();
    let back = p.inverse_transform(p.transform(x.view()).unwrap().view()).unwrap();
    let rt = max_abs(&(&back - &x));
    c.check(rt < 1e-9, format!("k=10 round trip {rt:.2e} (< 1e-9)"));
    let gram = p.components.dot(&p.components.t()) - Array2::<f64>::eye(10);
    let g = max_abs(&gram);
    c.check(g < 1e-9, format!("orthonormality {g:.2e} (< 1e-9)"));
    let r = &p.explained_variance_ratio;
    let mono = r.windows(2).into_iter().all(|w| w[0] >= w[1]);
    c.check(mono, "ratios non-increasing".into());
    let sum = r.sum();
    c.check((sum - 1.0).abs() < 1e-12, format!("ratios sum to 1 ({:.1e})", (sum - 1.0).abs()));
    let again = PcaModel::fit(x.view(), 10).unwrap();
    c.check(again.components == p.components, "refit gives identical signed components".into());
    let mut rev = x.clone();
    rev.invert_axis(ndarray::Axis(0));
    let q = PcaModel::fit(rev.view(), 10).unwrap();
    let min_dot = (0..10)
        .map(|k| (0..10).map(|j| p.components[[k, j]] * q.components[[k, j]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    c.check(min_dot > 1.0 - 1e-9, format!("row-reversed refit keeps signs (min dot {min_dot:.12})"));
}

fn c4_gradcheck(c: &mut Checks) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for v in Variant::ALL {
        let r = gradient_check(v, 8, 2, 200, 20_240_601).unwrap();
        probes += r.probes;
        c.check(r.probes >= 100, format!("{v}: {} probes", r.probes));
        worst = worst.max(r.max_rel_err);
    }
    c.check(worst < GRADCHECK_TOLERANCE, format!("max rel err {worst:.2e} over {probes} probes (< 1e-4)"));
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 60.0, format!("runtime {secs:.2} s (< 60 s)"));
}

fn toy_set(samples: usize, n: usize, out: usize) -> SampleSet {
    let mut rng = keyed_rng(3, &[3]);
    let feats: Vec<SampleFeatures> = (0..samples)
        .map(|i| SampleFeatures {
            points: (0..n).map(|_| [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)]).collect(),
            tabular: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            target: (0..out).map(|_| rng.random_range(-1.0..1.0)).collect(),
            subject_id: String::new(),
            cluster_id: i.to_string(),
        })
        .collect();
    SampleSet::from_features(&feats, n).unwrap()
}

fn c5_architecture(c: &mut Checks) {
    let mut rng = keyed_rng(5, &[5]);
    let mut exact = true;
    for v in Variant::ALL {
        let out = if v.uses_pca() { 5 } else { 10 };
        let params = NetworkParams::init(v, out, 11);
        let (b, n) = (3, 50);
        let x = Array2::from_shape_fn((b * n, 3), |_| rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_fn((b, 2), |_| rng.random_range(-1.0..1.0));
        let mut px = x.clone();
        for s in 0..b {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            for (dst, &src) in perm.iter().enumerate() {
                px.row_mut(s * n + dst).assign(&x.row(s * n + src));
            }
        }
        exact &= infer(&params, x.view(), n, Some(t.view())).unwrap() == infer(&params, px.view(), n, Some(t.view())).unwrap();
        exact &= forward(&params, x.view(), n, Some(t.view())).unwrap().out == forward(&params, px.view(), n, Some(t.view())).unwrap().out;
    }
    c.check(exact, "point permutation leaves every variant's output bit-identical".into());

    let data = toy_set(12, 16, 5);
    let cfg = TrainConfig { n_points: 16, batch_size: 4, epochs: 2, ..TrainConfig::default() };
    let run = train(&cfg, &data, None, |_| {}).unwrap();
    let (a, b) = run.net.branches();
    let (x, t, _) = data.gather(&[2, 9, 2, 4], cfg.coord_scale);
    let out = forward(a, x.view(), 16, Some(t.view())).unwrap().out;
    c.check(
        std::ptr::eq(a, b) && out.row(0) == out.row(2),
        format!("after {} steps both branches are one parameter set with equal outputs", run.steps),
    );

    let y = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 * 0.1 - 1.0);
    let zero = paired_loss(y.slice(s![..2, ..]), y.slice(s![2.., ..]), y.slice(s![..2, ..]), y.slice(s![2.., ..]), 1.0).unwrap();
    let grad_max = max_abs(&zero.grad_a).max(max_abs(&zero.grad_b));
    c.check(zero.value == 0.0 && grad_max < 1e-12, format!("loss {} and max grad {grad_max:.1e} at pred = gt", zero.value));

    let p = y.mapv(|v| v * 0.7 + 0.2);
    let l0 = paired_loss(p.slice(s![..2, ..]), p.slice(s![2.., ..]), y.slice(s![..2, ..]), y.slice(s![2.., ..]), 0.0).unwrap();
    let mse = |a: ndarray::ArrayView2<f64>, b: ndarray::ArrayView2<f64>| (&a - &b).mapv(|v| v * v).mean().unwrap();
    let want = 0.5 * (mse(p.slice(s![..2, ..]), y.slice(s![..2, ..])) + mse(p.slice(s![2.., ..]), y.slice(s![2.., ..])));
    c.check((l0.value - want).abs() < 1e-12, format!("lambda = 0 reduction error {:.1e}", (l0.value - want).abs()));
}

fn report_line(r: &EvalReport) -> String {
    let (rm, rs) = r.mean_r();
    let (em, es) = r.mean_nmse();
    format!("{}: r {rm:.3}±{rs:.3}, nMSE {em:.3}±{es:.3}", r.variant)
}

fn c6_end_to_end(c: &mut Checks, cfg: &RunConfig) {
    let start = Instant::now();
    let manifest = pipeline::run_synth(cfg).unwrap();
    let counts: Vec<usize> = [fibershape::synth::Split::Train, fibershape::synth::Split::Val, fibershape::synth::Split::Test]
        .iter()
        .map(|&s| manifest.count(s))
        .collect();
    c.check(counts == [420, 90, 90], format!("splits {counts:?}"));
    pipeline::run_shape(cfg).unwrap();
    pipeline::run_pca(cfg).unwrap();
    let t = pipeline::run_train(cfg).unwrap();
    pipeline::run_predict(cfg).unwrap();
    let r = pipeline::run_eval(cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (rm, _) = r.mean_r();
    let (em, _) = r.mean_nmse();
    c.check(r.variant == "full", format!("{} on {} test bundles", report_line(&r), r.n_bundles));
    c.check(rm >= 0.8, format!("mean r {rm:.3} (>= 0.8)"));
    c.check(em <= 0.15, format!("mean nMSE {em:.3} (<= 0.15)"));
    c.check(secs <= 600.0, format!("wall time {secs:.1} s, training {:.1} s (<= 600 s)", t.seconds));
}

fn c7_ablation(c: &mut Checks, cfg: &RunConfig) -> Vec<EvalReport> {
    let reports = pipeline::run_ablation(cfg).unwrap();
    for r in &reports {
        c.notes.push(report_line(r));
    }
    for metric in ["pearson_r", "nmse"] {
        let text = fs::read_to_string(cfg.out_path(&format!("ablation_{metric}.csv"))).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        let ok = rows.first() == Some(&"measure,vanilla,multimodal,pca,full")
            && rows.len() == 12
            && rows.last().is_some_and(|l| l.starts_with("average,"));
        c.check(ok, format!("ablation_{metric}.csv has the 4-column table layout"));
    }
    let mean = |v: &str| reports.iter().find(|r| r.variant == v).unwrap().mean_r().0;
    let (full, vanilla) = (mean("full"), mean("vanilla"));
    c.check(full >= vanilla, format!("full r {full:.3} >= vanilla r {vanilla:.3}"));
    reports
}

fn c8_cross_domain(c: &mut Checks, base: &RunConfig, root: &Path) {
    let mut cfg = base.clone();
    cfg.out_dir = root.join("cross").display().to_string();
    cfg.set("split", "train_domains", "A").unwrap();
    cfg.set("split", "test_domains", "B").unwrap();
    cfg.set("split", "test_splits", "all").unwrap();
    cfg.validate().unwrap();
    pipeline::run_pca(&cfg).unwrap();
    pipeline::run_train(&cfg).unwrap();
    let p = pipeline::run_predict(&cfg).unwrap();
    let r = pipeline::run_eval(&cfg).unwrap();
    let helices = p.paths.len();
    c.check(helices == 200, format!("{helices} held-out helix bundles scored"));
    let (rm, _) = r.mean_r();
    c.notes.push(report_line(&r));
    c.check(rm >= 0.6, format!("mean r {rm:.3} on family B (>= 0.6)"));
}

fn c9_timing(c: &mut Checks, cfg: &RunConfig) {
    let rows = pipeline::run_bench(cfg).unwrap();
    let worst_pred = rows.iter().map(|r| r.predict_seconds).fold(0.0, f64::max);
    let worst_oracle = rows.iter().map(|r| r.oracle_seconds).fold(0.0, f64::max);
    c.check(
        worst_pred < 0.1,
        format!("prediction {worst_pred:.4} s per {} bundles (< 0.1 s, worst of {})", cfg.bundles_per_subject, rows.len()),
    );
    c.check(worst_oracle <= 1.0, format!("oracle {worst_oracle:.4} s per subject at v = {} (<= 1.0 s)", cfg.voxel_size));
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c10_metrics_determinism(c: &mut Checks, root: &Path) {
    let r = pearson_r(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap();
    c.check((r - 0.8).abs() < 1e-12, format!("pearson {r}"));
    let e = nmse(&[1., 2., 3.], &[0., 1., 2.]).unwrap();
    c.check((e - 1.5).abs() < 1e-12, format!("nmse {e}"));
    let z = fisher_z(0.5).unwrap();
    c.check((z - 0.549306).abs() < 1e-6 && (z - 0.5 * 3f64.ln()).abs() < 1e-12, format!("fisher z {z:.9}"));
    let t = paired_t(&[1., 2., 3.], &[0., 0., 0.]).unwrap();
    // Two-sided tail with 2 dof in closed form: 1 - |t| / sqrt(t^2 + 2).
    let p2 = 1.0 - t.t.abs() / (t.t * t.t + 2.0).sqrt();
    c.check(
        (t.t - 3.4641).abs() < 1e-4 && t.dof == 2.0 && (t.p - p2).abs() < 1e-10 && (t.p - 0.0742).abs() < 1e-4,
        format!("paired t {:.4}, dof {}, p {:.6}", t.t, t.dof, t.p),
    );

    let dir = root.join("determinism");
    let mut cfg = RunConfig::default();
    cfg.data_dir = dir.join("data").display().to_string();
    cfg.out_dir = dir.join("out").display().to_string();
    for (s, k, v) in [
        ("synth", "n_cylinder", "20"),
        ("synth", "n_arc", "20"),
        ("synth", "n_helix", "20"),
        ("features", "n_points", "64"),
        ("train", "epochs", "3"),
        ("train", "batch_size", "8"),
    ] {
        cfg.set(s, k, v).unwrap();
    }
    let run = |cfg: &RunConfig| {
        if dir.exists() {
            fs::remove_dir_all(&dir).unwrap();
        }
        pipeline::run_synth(cfg).unwrap();
        pipeline::run_shape(cfg).unwrap();
        pipeline::run_pca(cfg).unwrap();
        pipeline::run_train(cfg).unwrap();
        pipeline::run_predict(cfg).unwrap();
        pipeline::run_eval(cfg).unwrap();
        snapshot(&dir)
    };
    let a = run(&cfg);
    let b = run(&cfg);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    c.check(
        a.len() == b.len() && differing.is_empty() && a.keys().any(|k| k.ends_with(".ckpt")),
        format!("rerun byte-identical over {} files (checkpoint, CSV reports, bundles); differing: {differing:?}", a.len()),
    );
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut cfg = RunConfig::default();
    cfg.data_dir = root.path().join("data").display().to_string();
    cfg.out_dir = root.path().join("out").display().to_string();

    type Criterion<'a> = (&'a str, Box<dyn Fn(&mut Checks) + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("analytic shape oracle", Box::new(c1_analytic_shapes)),
        ("brute-force equivalence", Box::new(c2_brute_force)),
        ("PCA suite", Box::new(c3_pca)),
        ("gradient check", Box::new(c4_gradcheck)),
        ("architecture invariants", Box::new(c5_architecture)),
        ("end-to-end desk-scale experiment", Box::new(|c: &mut Checks| c6_end_to_end(c, &cfg))),
        ("ablation ordering", Box::new(|c: &mut Checks| {
            c7_ablation(c, &cfg);
        })),
        ("cross-domain robustness", Box::new(|c: &mut Checks| c8_cross_domain(c, &cfg, root.path()))),
        ("timing", Box::new(|c: &mut Checks| c9_timing(c, &cfg))),
        ("metrics unit suite and determinism", Box::new(|c: &mut Checks| c10_metrics_determinism(c, root.path()))),
    ];

    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let mut c = Checks::new();
        let start = Instant::now();
        run(&mut c);
        let secs = start.elapsed().as_secs_f64();
        let pass = c.failed.is_empty();
        failures += usize::from(!pass);
        println!("criterion {:>2} {} {name} ({secs:.1} s)", i + 1, if pass { "PASS" } else { "FAIL" });
        for f in &c.failed {
            println!("      failed: {f}");
        }
        for n in &c.notes {
            println!("      ok:     {n}");
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
