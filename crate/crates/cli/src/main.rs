use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fibershape::config::{key_help, ConfigError, RunConfig};
use fibershape::metrics::EvalReport;
use fibershape::pipeline::{self, PipelineError};

#[derive(Parser, Debug)]
#[command(name = "fibershape", version, about = "Bundle shape measures: ground truth, model training and prediction")]
#[command(after_help = after_help())]
struct Cli {
    /// Run configuration file (sectioned key = value).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic bundles and their manifest.
    Synth,
    /// Compute ground-truth measures for every bundle.
    Shape,
    /// Fit the measure PCA on the train split and export it.
    Pca,
    /// Train the configured variant.
    Train,
    /// Predict measures for the test bundles.
    Predict,
    /// Score predictions against ground truth.
    Eval,
    /// Train, predict and evaluate all four variants.
    Ablation,
    /// Finite-difference check of the network gradients.
    Gradcheck,
    /// Time ground truth and prediction per subject-equivalent.
    Bench,
    /// synth, shape, pca, train, predict and eval in sequence.
    Run,
    /// Print the effective configuration.
    Config,
}

fn after_help() -> String {
    format!("Configuration keys and defaults:\n{}", key_help())
}

fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let bad = || ConfigError::Invalid(format!("override '{o}' is not SECTION.KEY=VALUE"));
        let (path, value) = o.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        cfg.set(section, key, value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(r: &EvalReport) {
    println!("{:<28} {:>9} {:>9}", "measure", "pearson_r", "nmse");
    for ((m, p), e) in r.measures.iter().zip(&r.pearson_r).zip(&r.nmse) {
        println!("{m:<28} {p:>9.4} {e:>9.4}");
    }
    let (rm, rs) = r.mean_r();
    let (em, es) = r.mean_nmse();
    println!("{:<28} {:>9} {:>9}", "average", format!("{rm:.3}±{rs:.3}"), format!("{em:.3}±{es:.3}"));
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), PipelineError> {
    match cli.command {
        Command::Synth => {
            let m = pipeline::run_synth(cfg)?;
            println!("wrote {} bundles to {}", m.rows.len(), cfg.data_dir);
        }
        Command::Shape => {
            let rows = pipeline::run_shape(cfg)?;
            println!("wrote {} rows to {}", rows.len(), cfg.data_path("shapes.csv").display());
        }
        Command::Pca => {
            let p = pipeline::run_pca(cfg)?;
            println!("k = {}, cumulative explained variance {:.4}", p.k(), p.cumulative_ratio());
            for (i, r) in p.explained_variance_ratio.iter().enumerate() {
                println!("  PC{} {:.4}", i + 1, r);
            }
        }
        Command::Train => {
            let t = pipeline::run_train(cfg)?;
            let last = t.log.last().map(|l| l.csv_row()).unwrap_or_default();
            println!("trained {} in {:.1} s; last epoch {}", cfg.train.variant, t.seconds, last);
            println!("checkpoint {}", t.checkpoint_path.display());
        }
        Command::Predict => {
            let p = pipeline::run_predict(cfg)?;
            println!("predicted {} bundles in {:.4} s", p.paths.len(), p.seconds);
        }
        Command::Eval => print_report(&pipeline::run_eval(cfg)?),
        Command::Ablation => {
            for r in pipeline::run_ablation(cfg)? {
                println!("\n[{}]", r.variant);
                print_report(&r);
            }
        }
        Command::Gradcheck => {
            let rows = pipeline::run_gradcheck(cfg)?;
            for r in rows {
                println!("{}: {} probes ({} redrawn), max relative error {:e}", r.variant, r.probes, r.redrawn, r.max_rel_err);
            }
            println!("PASS");
        }
        Command::Bench => {
            println!("{:>7} {:>8} {:>12} {:>12}", "subject", "bundles", "oracle_s", "predict_s");
            for r in pipeline::run_bench(cfg)? {
                println!("{:>7} {:>8} {:>12.4} {:>12.4}", r.subject, r.bundles, r.oracle_seconds, r.predict_seconds);
            }
        }
        Command::Run => {
            pipeline::run_synth(cfg)?;
            pipeline::run_shape(cfg)?;
            pipeline::run_pca(cfg)?;
            pipeline::run_train(cfg)?;
            pipeline::run_predict(cfg)?;
            print_report(&pipeline::run_eval(cfg)?);
        }
        Command::Config => {
            print!("# config_hash={}\n{}", cfg.hash(), cfg.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
