//! Multi-seed pipeline: simulate training sets, fit each, score it against
//! fresh test sets and aggregate the metrics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use web_time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::BoxDomain;
use crate::elbo::ModelState;
use crate::error::{Error, Result};
use crate::gp::{InducingSet, KernelParams};
use crate::io;
use crate::metrics::{evaluate, CountKind, MetricConfig, MetricReport};
use crate::sim::{sample_thinned, EventLabel, EventSet, Synthetic};
use crate::training::{fit, intensity_posterior, TrainConfig};

/// Kernel used for user-supplied data when none is configured.
pub const CSV_KERNEL: KernelParams = KernelParams {
    lengthscale: 0.3,
    variance: 1.0,
};

/// Seed streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum SeedRole {
    TrainData = 1,
    TestData = 2,
    Fit = 3,
    Metrics = 4,
    Curve = 5,
    Split = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for cell `(train, test)` of one stream: successive splitmix64
/// finalizations of the master seed, the role, and both indices.
pub fn derive_seed(master: u64, role: SeedRole, train: u64, test: u64) -> u64 {
    let mut h = splitmix(master);
    for v in [role as u64, train, test] {
        h = splitmix(h ^ v);
    }
    h
}

pub const SEED_SCHEME: &str = "splitmix64(master, role, train, test)";

/// Events of one synthetic setting for a given seed.
pub fn simulate(setting: Synthetic, seed: u64) -> Result<EventSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kept, _) = sample_thinned(&setting.intensity(), &setting.domain(), &mut rng)?;
    Ok(kept)
}

/// `∫ λ` of a synthetic setting by a fine midpoint rule.
pub fn true_integral(setting: Synthetic) -> f64 {
    let grid = setting.domain().grid(200_000).expect("static grid");
    grid.integrate(|x| setting.value(x[0]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(Synthetic),
    /// Events from a CSV with sidecar. Each training seed draws
    /// `round(train_fraction · N)` events without replacement for training
    /// and keeps the rest as the single test set.
    Csv { path: PathBuf, train_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InducingLayout {
    Grid { per_dim: usize },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Defaults per setting; `(0.3, 1)` for CSV data.
    pub kernel: Option<KernelParams>,
    /// Defaults to a 30-point grid in 1-D and 10 per dimension otherwise.
    pub inducing: Option<InducingLayout>,
    pub train_seeds: usize,
    pub test_per_train: usize,
    pub master_seed: u64,
    /// Defaults to [`TrainConfig::for_dim`].
    pub train: Option<TrainConfig>,
    pub metrics: MetricConfig,
    pub jobs: usize,
    /// Grid size per dimension for the intensity curve export.
    pub curve_per_dim: usize,
    pub curve_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(Synthetic::Two),
            kernel: None,
            inducing: None,
            train_seeds: 10,
            test_per_train: 10,
            master_seed: 0,
            train: None,
            metrics: MetricConfig::default(),
            jobs: 1,
            curve_per_dim: 200,
            curve_draws: 1000,
        }
    }
}

/// Everything needed to run the pipeline, with defaults filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub domain: BoxDomain,
    pub kernel: KernelParams,
    pub inducing: InducingSet,
    pub train: TrainConfig,
    pub truth: Option<Synthetic>,
    pub csv_events: Option<EventSet>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_seeds == 0 || self.test_per_train == 0 {
            return Err(Error::Config("train_seeds and test_per_train must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.curve_per_dim == 0 || self.curve_draws == 0 {
            return Err(Error::Config("curve_per_dim and curve_draws must be positive".into()));
        }
        if let DataSource::Csv { train_fraction, .. } = &self.data {
            if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                return Err(Error::Config("train_fraction must lie strictly between 0 and 1".into()));
            }
        }
        if let Some(k) = &self.kernel {
            KernelParams::new(k.lengthscale, k.variance).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        self.metrics.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let (domain, truth, csv_events) = match &self.data {
            DataSource::Synthetic(s) => (s.domain(), Some(*s), None),
            DataSource::Csv { path, .. } => {
                let (events, side) = io::read_events_with_sidecar(path)?;
                (side.domain, None, Some(events))
            }
        };
        let mut r = self.resolve_for(domain, truth)?;
        r.csv_events = csv_events;
        Ok(r)
    }

    /// Fill in kernel, inducing points and training defaults for a domain
    /// without touching `data`. `truth` only picks the default kernel.
    pub fn resolve_for(&self, domain: BoxDomain, truth: Option<Synthetic>) -> Result<Resolved> {
        self.validate()?;
        let kernel = self.kernel.unwrap_or_else(|| truth.map_or(CSV_KERNEL, |s| s.kernel()));
        let inducing = match &self.inducing {
            Some(InducingLayout::Csv { path }) => {
                let z = io::read_events_csv(path, &domain)?;
                InducingSet::new(z.points().clone())?
            }
            Some(InducingLayout::Grid { per_dim }) => InducingSet::new(domain.grid(*per_dim)?.points)?,
            None => {
                let per_dim = if domain.dim() == 1 { 30 } else { 10 };
                InducingSet::new(domain.grid(per_dim)?.points)?
            }
        };
        let train = self.train.clone().unwrap_or_else(|| TrainConfig::for_dim(domain.dim()));
        Ok(Resolved {
            domain,
            kernel,
            inducing,
            train,
            truth,
            csv_events: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub test_index: usize,
    pub data_seed: u64,
    pub metric_seed: u64,
    pub n_test: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSeedResult {
    pub train_index: usize,
    pub data_seed: u64,
    pub fit_seed: u64,
    pub n_train: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_elbo: Option<f64>,
    pub iterations_run: usize,
    pub cells: Vec<CellResult>,
    /// Cell reports averaged over this seed's test sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    /// Out-of-sample coverage was non-decreasing in the level for every cell.
    pub ec_monotone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    /// Sample mean and (n − 1)-normalized standard deviation, summed in
    /// the given order.
    pub fn of(values: &[f64]) -> MeanSd {
        let n = values.len();
        if n == 0 {
            return MeanSd {
                mean: f64::NAN,
                sd: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub completed_train_seeds: usize,
    pub completed_cells: usize,
    /// `l2`, `ell_test`, `nlpl` over every completed (train, test) cell.
    pub metrics: BTreeMap<String, MeanSd>,
    pub ec: BTreeMap<CountKind, BTreeMap<u32, MeanSd>>,
    pub ec_monotone_all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub version: String,
    pub seed_scheme: String,
    pub form: crate::elbo::SurrogateForm,
    pub path_sampling: crate::metrics::PathSampling,
}

/// Wall-clock measurements, kept apart from everything reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub fit_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub setting: String,
    pub seeds: Vec<TrainSeedResult>,
    pub aggregate: Aggregate,
    pub timing: Timing,
}

pub fn version_string() -> String {
    format!(
        "v{}{}",
        env!("CARGO_PKG_VERSION"),
        option_env!("SGCOX_GIT_REV").map(|r| format!("-g{r}")).unwrap_or_default()
    )
}

fn average_reports(cells: &[CellResult]) -> Option<MetricReport> {
    let first = cells.first()?;
    let n = cells.len() as f64;
    let avg = |f: &dyn Fn(&MetricReport) -> f64| cells.iter().map(|c| f(&c.report)).sum::<f64>() / n;
    let mut ec = BTreeMap::new();
    for (kind, levels) in &first.report.ec {
        let mut m = BTreeMap::new();
        for level in levels.keys() {
            m.insert(*level, avg(&|r| r.ec[kind][level]));
        }
        ec.insert(*kind, m);
    }
    Some(MetricReport {
        l2: first.report.l2.map(|_| avg(&|r| r.l2.unwrap_or(f64::NAN))),
        ell_test: avg(&|r| r.ell_test),
        ell_test_floored: cells.iter().any(|c| c.report.ell_test_floored),
        nlpl: avg(&|r| r.nlpl),
        ec,
        seeds: cells.len(),
        path_sampling: first.report.path_sampling,
    })
}

fn monotone(report: &MetricReport) -> bool {
    report.ec.values().all(|levels| {
        let v: Vec<f64> = levels.values().cloned().collect();
        v.windows(2).all(|w| w[0] <= w[1])
    })
}

/// Seed-tagged training set and its test sets.
type Datasets = (u64, EventSet, Vec<(u64, EventSet)>);

/// Train and test sets for training seed `i`.
fn datasets(config: &ExperimentConfig, resolved: &Resolved, i: usize) -> Result<Datasets> {
    let master = config.master_seed;
    match (&config.data, &resolved.csv_events) {
        (DataSource::Synthetic(s), _) => {
            let seed = derive_seed(master, SeedRole::TrainData, i as u64, 0);
            let train = simulate(*s, seed)?;
            let tests = (0..config.test_per_train)
                .map(|j| {
                    let ts = derive_seed(master, SeedRole::TestData, i as u64, j as u64);
                    simulate(*s, ts).map(|e| (ts, e))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((seed, train, tests))
        }
        (DataSource::Csv { train_fraction, .. }, Some(all)) => {
            let seed = derive_seed(master, SeedRole::Split, i as u64, 0);
            let (train, test) = split_events(all, *train_fraction, seed)?;
            Ok((seed, train, vec![(seed, test)]))
        }
        _ => Err(Error::Config("CSV data source was not loaded".into())),
    }
}

/// Random split with `round(fraction · N)` training events.
pub fn split_events(events: &EventSet, fraction: f64, seed: u64) -> Result<(EventSet, EventSet)> {
    let n = events.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Data(format!("split of {n} events leaves an empty side")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |ids: &[usize]| {
        let d = events.domain().dim();
        let m = DMatrix::from_fn(ids.len(), d, |r, c| events.points()[(ids[r], c)]);
        EventSet::new(m, events.domain().clone(), EventLabel::Observed)
    };
    let mut train_ids = idx[..n_train].to_vec();
    let mut test_ids = idx[n_train..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok((pick(&train_ids)?, pick(&test_ids)?))
}

struct SeedOutcome {
    result: TrainSeedResult,
    state: Option<ModelState>,
    seconds: f64,
}

fn run_seed(config: &ExperimentConfig, resolved: &Resolved, i: usize) -> SeedOutcome {
    let start = Instant::now();
    let fit_seed = derive_seed(config.master_seed, SeedRole::Fit, i as u64, 0);
    let mut result = TrainSeedResult {
        train_index: i,
        data_seed: 0,
        fit_seed,
        n_train: 0,
        error: None,
        final_elbo: None,
        iterations_run: 0,
        cells: Vec::new(),
        report: None,
        ec_monotone: true,
    };
    let mut state = None;
    let outcome = (|| -> Result<()> {
        let (data_seed, train, tests) = datasets(config, resolved, i)?;
        result.data_seed = data_seed;
        result.n_train = train.len();
        let tc = TrainConfig {
            seed: fit_seed,
            ..resolved.train.clone()
        };
        let trace = fit(&train, &resolved.domain, resolved.kernel, resolved.inducing.clone(), &tc)?;
        result.iterations_run = trace.rows.len();
        result.final_elbo = trace.rows.last().map(|r| r.elbo);
        let truth = resolved.truth.map(|s| s.intensity());
        for (j, (test_seed, test)) in tests.iter().enumerate() {
            let metric_seed = derive_seed(config.master_seed, SeedRole::Metrics, i as u64, j as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(metric_seed);
            let report = evaluate(&trace.state, train.len() as u64, test, truth.as_ref(), &config.metrics, &mut rng)?;
            result.ec_monotone &= monotone(&report);
            result.cells.push(CellResult {
                test_index: j,
                data_seed: *test_seed,
                metric_seed,
                n_test: test.len(),
                report,
            });
        }
        result.report = average_reports(&result.cells);
        state = Some(trace.state);
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("training seed {i} failed: {e}");
        result.error = Some(e.to_string());
        result.cells.clear();
        result.report = None;
    }
    SeedOutcome {
        result,
        state,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn aggregate(seeds: &[TrainSeedResult]) -> Aggregate {
    let done: Vec<&TrainSeedResult> = seeds.iter().filter(|s| s.error.is_none()).collect();
    let cells: Vec<&CellResult> = done.iter().flat_map(|s| s.cells.iter()).collect();
    let mut metrics = BTreeMap::new();
    let l2: Vec<f64> = cells.iter().filter_map(|c| c.report.l2).collect();
    if !l2.is_empty() {
        metrics.insert("l2".to_string(), MeanSd::of(&l2));
    }
    let ell: Vec<f64> = cells.iter().map(|c| c.report.ell_test).collect();
    metrics.insert("ell_test".to_string(), MeanSd::of(&ell));
    let nlpl: Vec<f64> = cells.iter().map(|c| c.report.nlpl).collect();
    metrics.insert("nlpl".to_string(), MeanSd::of(&nlpl));
    let mut ec: BTreeMap<CountKind, BTreeMap<u32, MeanSd>> = BTreeMap::new();
    if let Some(first) = cells.first() {
        for (kind, levels) in &first.report.ec {
            let entry = ec.entry(*kind).or_default();
            for level in levels.keys() {
                let v: Vec<f64> = cells.iter().map(|c| c.report.ec[kind][level]).collect();
                entry.insert(*level, MeanSd::of(&v));
            }
        }
    }
    Aggregate {
        completed_train_seeds: done.len(),
        completed_cells: cells.len(),
        metrics,
        ec,
        ec_monotone_all: done.iter().all(|s| s.ec_monotone),
    }
}

/// Posterior summary over a grid: points, mean, sd and (if known) truth.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityCurve {
    pub points: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub truth: Option<Vec<f64>>,
}

pub fn intensity_curve(
    state: &ModelState,
    per_dim: usize,
    draws: usize,
    truth: Option<Synthetic>,
    seed: u64,
) -> Result<IntensityCurve> {
    let grid = state.domain.grid(per_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = intensity_posterior(state, &grid.points, draws, &mut rng)?;
    let p = grid.len();
    let mut mean = Vec::with_capacity(p);
    let mut sd = Vec::with_capacity(p);
    for c in 0..p {
        let col = samples.column(c);
        let m = col.mean();
        mean.push(m);
        sd.push((col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws.max(2) - 1) as f64).sqrt());
    }
    let truth = truth.map(|s| (0..p).map(|i| s.value(grid.points[(i, 0)])).collect());
    Ok(IntensityCurve {
        points: grid.points,
        mean,
        sd,
        truth,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<(ResultBundle, Option<IntensityCurve>)> {
    let start = Instant::now();
    let resolved = config.resolve()?;
    let n = config.train_seeds;
    let slots: Mutex<Vec<Option<SeedOutcome>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = config.jobs.min(n);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let out = run_seed(config, &resolved, i);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(out);
            });
        }
    });
    let outcomes: Vec<SeedOutcome> = slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|o| o.expect("every seed ran"))
        .collect();
    let curve = match outcomes.iter().find_map(|o| o.state.as_ref()) {
        Some(state) => Some(intensity_curve(
            state,
            config.curve_per_dim,
            config.curve_draws,
            resolved.truth,
            derive_seed(config.master_seed, SeedRole::Curve, 0, 0),
        )?),
        None => None,
    };
    let fit_seconds = outcomes.iter().map(|o| o.seconds).collect();
    let seeds: Vec<TrainSeedResult> = outcomes.into_iter().map(|o| o.result).collect();
    let bundle = ResultBundle {
        config: config.clone(),
        provenance: Provenance {
            config_hash: config.hash(),
            version: version_string(),
            seed_scheme: SEED_SCHEME.to_string(),
            form: resolved.train.form,
            path_sampling: crate::metrics::PathSampling::Diagonal,
        },
        setting: match &config.data {
            DataSource::Synthetic(s) => s.id().to_string(),
            DataSource::Csv { path, .. } => path.display().to_string(),
        },
        aggregate: aggregate(&seeds),
        seeds,
        timing: Timing {
            total_seconds: start.elapsed().as_secs_f64(),
            fit_seconds,
        },
    };
    Ok((bundle, curve))
}

fn fmt_opt(v: Option<&MeanSd>) -> [String; 2] {
    match v {
        Some(m) => [m.mean.to_string(), m.sd.to_string()],
        None => [String::new(), String::new()],
    }
}

fn csv_write(path: &Path, rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write `results.json`, `table.csv`, `ec_table.csv` and
/// `intensity_curve.csv` into `dir`.
pub fn write_bundle(dir: &Path, bundle: &ResultBundle, curve: Option<&IntensityCurve>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_json(&dir.join("results.json"), bundle)?;

    let agg = &bundle.aggregate;
    let mut row = vec![bundle.setting.clone(), "stvb".to_string()];
    for m in ["l2", "ell_test", "nlpl"] {
        row.extend(fmt_opt(agg.metrics.get(m)));
    }
    let fits = &bundle.timing.fit_seconds;
    row.push((fits.iter().sum::<f64>() / fits.len().max(1) as f64).to_string());
    row.push(agg.completed_train_seeds.to_string());
    let header = [
        "setting",
        "method",
        "l2_mean",
        "l2_sd",
        "ell_test_mean",
        "ell_test_sd",
        "nlpl_mean",
        "nlpl_sd",
        "cpu_seconds",
        "completed_seeds",
    ];
    csv_write(
        &dir.join("table.csv"),
        vec![header.iter().map(|s| s.to_string()).collect(), row],
    )?;

    let levels: Vec<u32> = bundle.config.metrics.levels.clone();
    let mut ec_rows = vec![{
        let mut h = vec!["kind".to_string()];
        for l in &levels {
            h.push(format!("ci{l}_mean"));
            h.push(format!("ci{l}_sd"));
        }
        h
    }];
    for (kind, by_level) in &agg.ec {
        let mut r = vec![kind.as_str().to_string()];
        for l in &levels {
            r.extend(fmt_opt(by_level.get(l)));
        }
        ec_rows.push(r);
    }
    csv_write(&dir.join("ec_table.csv"), ec_rows)?;

    if let Some(c) = curve {
        let dim = c.points.ncols();
        let mut h: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
        h.extend(["mean".into(), "sd".into()]);
        if c.truth.is_some() {
            h.push("truth".into());
        }
        let mut rows = vec![h];
        for i in 0..c.mean.len() {
            let mut r: Vec<String> = (0..dim).map(|d| c.points[(i, d)].to_string()).collect();
            r.push(c.mean[i].to_string());
            r.push(c.sd[i].to_string());
            if let Some(t) = &c.truth {
                r.push(t[i].to_string());
            }
            rows.push(r);
        }
        csv_write(&dir.join("intensity_curve.csv"), rows)?;
    }
    Ok(())
}
