//! `sgcox`: simulate, fit, evaluate and run synthetic experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sigmoid_cox::elbo::ModelState;
use sigmoid_cox::error::Error;
use sigmoid_cox::experiment::{self, DataSource, ExperimentConfig};
use sigmoid_cox::io::{self, Sidecar};
use sigmoid_cox::sim::Synthetic;
use sigmoid_cox::{metrics, selftest, training};

#[derive(Parser)]
#[command(name = "sgcox", version, about = "Sigmoidal Gaussian Cox process intensity estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one synthetic dataset and write it as CSV plus a JSON sidecar.
    Simulate {
        #[arg(long)]
        setting: Synthetic,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path; the sidecar goes next to it with a `.json` extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the variational posterior to an event CSV.
    Fit {
        #[arg(long)]
        events: PathBuf,
        /// Experiment config JSON; only kernel, inducing and train are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Synthetic setting whose kernel defaults apply. Read from the
        /// sidecar when absent.
        #[arg(long)]
        setting: Option<Synthetic>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fitted state on held-out events.
    Evaluate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Synthetic setting to use as ground truth for the L2 distance.
        #[arg(long, alias = "setting")]
        truth: Option<Synthetic>,
        /// Experiment config JSON; only the metrics block is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training event count. Defaults to the `fit_summary.json` next to
        /// the state file.
        #[arg(long)]
        n_train: Option<u64>,
        /// Directory for `report.json`. Printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the multi-seed pipeline and write the result tables.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the data source with a synthetic setting.
        #[arg(long)]
        setting: Option<Synthetic>,
    },
    /// Quick invariant checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Written by `fit` next to the state so `evaluate` knows the training size.
#[derive(Debug, Serialize, Deserialize)]
struct FitSummary {
    n_train: u64,
    iterations_run: usize,
    stopped_early: bool,
    final_elbo: Option<f64>,
    seed: u64,
    setting: Option<String>,
    config_hash: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Data(_) | Error::Parse { .. } | Error::DomainMismatch(_) | Error::Io { .. } | Error::Json { .. } => 3,
        Error::SingularMatrix { .. } | Error::NonFiniteGradient { .. } | Error::NonFiniteObjective | Error::ResourceGuard(_) => 4,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let cfg: ExperimentConfig = io::read_json(p).map_err(|e| match e {
                Error::Json { path, source } => Error::Config(format!("{}: {source}", path.display())),
                other => other,
            })?;
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn simulate(setting: Synthetic, seed: u64, out: &Path) -> Result<(), Error> {
    let events = experiment::simulate(setting, seed)?;
    io::write_events_csv(out, &events)?;
    let side = Sidecar {
        domain: setting.domain(),
        count: events.len(),
        setting: Some(setting.id().to_string()),
        seed: Some(seed),
        true_integral: Some(experiment::true_integral(setting)),
    };
    io::write_json(&io::sidecar_path(out), &side)?;
    log::info!("wrote {} events to {}", events.len(), out.display());
    Ok(())
}

fn fit(events: &Path, config: Option<&Path>, seed: Option<u64>, setting: Option<Synthetic>, out: &Path) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let (events, side) = io::read_events_with_sidecar(events)?;
    if events.is_empty() {
        return Err(Error::Data("event file has no events; fitting needs at least one".into()));
    }
    let setting = match setting {
        Some(s) => Some(s),
        None => side.setting.as_deref().and_then(|s| s.parse().ok()),
    };
    let resolved = cfg.resolve_for(side.domain.clone(), setting)?;
    let mut train = resolved.train.clone();
    if let Some(s) = seed {
        train.seed = s;
    }
    let trace = training::fit(&events, &resolved.domain, resolved.kernel, resolved.inducing, &train)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    io::write_json(&out.join("state.json"), &trace.state)?;
    io::write_trace_csv(&out.join("trace.csv"), &trace)?;
    let summary = FitSummary {
        n_train: events.len() as u64,
        iterations_run: trace.rows.len(),
        stopped_early: trace.stopped_early,
        final_elbo: trace.rows.last().map(|r| r.elbo),
        seed: train.seed,
        setting: setting.map(|s| s.id().to_string()),
        config_hash: cfg.hash(),
    };
    io::write_json(&out.join("fit_summary.json"), &summary)?;
    log::info!("fit {} events in {} iterations", summary.n_train, summary.iterations_run);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    state: &Path,
    events: &Path,
    truth: Option<Synthetic>,
    config: Option<&Path>,
    seed: u64,
    n_train: Option<u64>,
    out: Option<&Path>,
) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let model: ModelState = io::read_json(state)?;
    let (test, side) = io::read_events_with_sidecar(events)?;
    if side.domain != model.domain {
        return Err(Error::DomainMismatch(format!(
            "{} covers {:?} but the state was fitted on {:?}",
            events.display(),
            side.domain,
            model.domain
        )));
    }
    let n_train = match n_train {
        Some(n) => n,
        None => {
            let path = state.with_file_name("fit_summary.json");
            if !path.exists() {
                return Err(Error::Config(format!("--n-train not given and {} does not exist", path.display())));
            }
            io::read_json::<FitSummary>(&path)?.n_train
        }
    };
    let truth_fn = truth.map(|s| s.intensity());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = metrics::evaluate(&model, n_train, &test, truth_fn.as_ref(), &cfg.metrics, &mut rng)?;
    match out {
        Some(dir) => io::write_json(&dir.join("report.json"), &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    Ok(())
}

fn run_experiment(config: Option<&Path>, out: &Path, jobs: Option<usize>, seed: Option<u64>, setting: Option<Synthetic>) -> Result<(), Error> {
    let mut cfg = load_config(config)?;
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(s) = setting {
        cfg.data = DataSource::Synthetic(s);
    }
    let (bundle, curve) = experiment::run_experiment(&cfg)?;
    experiment::write_bundle(out, &bundle, curve.as_ref())?;
    let agg = &bundle.aggregate;
    for (name, m) in &agg.metrics {
        println!("{name:>8}: {:.3} ({:.3})", m.mean, m.sd);
    }
    println!(
        "{} of {} training seeds completed in {:.1}s, results in {}",
        agg.completed_train_seeds,
        cfg.train_seeds,
        bundle.timing.total_seconds,
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { setting, seed, out } => simulate(setting, seed, &out),
        Command::Fit {
            events,
            config,
            seed,
            setting,
            out,
        } => fit(&events, config.as_deref(), seed, setting, &out),
        Command::Evaluate {
            state,
            events,
            truth,
            config,
            seed,
            n_train,
            out,
        } => evaluate(&state, &events, truth, config.as_deref(), seed, n_train, out.as_deref()),
        Command::Experiment {
            config,
            out,
            jobs,
            seed,
            setting,
        } => run_experiment(config.as_deref(), &out, jobs, seed, setting),
        Command::Selftest { seed } => {
            let checks = selftest::run(seed);
            let mut failed = 0;
            for c in &checks {
                println!("{} {:<20} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                eprintln!("{failed} check(s) failed");
                return ExitCode::from(4);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
