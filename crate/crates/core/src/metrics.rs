//! Evaluation metrics: ℓ₂ distance, test log-likelihood, NLPL and empirical
//! coverage of count credible intervals.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::IntegrationSet;
use crate::elbo::ModelState;
use crate::error::{Error, Result};
use crate::gp::chol_with_jitter;
use crate::sim::{EventSet, IntensityFn};
use crate::special::{poisson_ln_pmf, sigmoid};

/// Smallest intensity used inside a logarithm.
pub const LOG_FLOOR: f64 = 1e-300;

/// How `f` is drawn across locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathSampling {
    /// Independent draws from the marginal of `q(f)` at each location.
    #[default]
    Diagonal,
    /// One draw from the full covariance of `q(f)` over all locations.
    Joint,
}

/// Joint draws of `λ*` and `λ(x) = λ*σ(f(x))` over quadrature points plus
/// optional extra locations.
#[derive(Debug, Clone)]
pub struct IntensityDraws {
    /// `draws × P` intensities at the quadrature points.
    pub quad: DMatrix<f64>,
    /// `draws × T` intensities at the extra points.
    pub extra: DMatrix<f64>,
    pub weight: f64,
    pub lambda_star: Vec<f64>,
}

impl IntensityDraws {
    pub fn draws(&self) -> usize {
        self.quad.nrows()
    }

    /// `∫λ_s` by the quadrature rule, one entry per draw.
    pub fn integrals(&self) -> Vec<f64> {
        (0..self.draws()).map(|s| self.quad.row(s).sum() * self.weight).collect()
    }
}

pub fn sample_intensity<R: Rng + ?Sized>(
    state: &ModelState,
    quad: &IntegrationSet,
    extra: Option<&DMatrix<f64>>,
    draws: usize,
    sampling: PathSampling,
    rng: &mut R,
) -> Result<IntensityDraws> {
    if draws == 0 {
        return Err(Error::invalid("need at least one intensity draw"));
    }
    let dim = state.domain.dim();
    let p = quad.len();
    let t = extra.map_or(0, |e| e.nrows());
    let mut points = DMatrix::zeros(p + t, dim);
    points.rows_mut(0, p).copy_from(&quad.points);
    if let Some(e) = extra {
        if e.ncols() != dim {
            return Err(Error::DomainMismatch("extra points and state differ in dimension".into()));
        }
        points.rows_mut(p, t).copy_from(e);
    }
    let gp = state.sparse_gp()?;
    let proj = gp.project(&points, &state.q_u);
    let f = match sampling {
        PathSampling::Diagonal => proj.sample_f(draws, rng),
        PathSampling::Joint => {
            let k = gp.kernel().gram(&points, &points);
            let kzx = gp.kernel().gram(gp.inducing().points(), &points);
            let al = &proj.a * &state.q_u.chol;
            let cov = k - &proj.a * kzx + &al * al.transpose();
            let cov = (&cov + cov.transpose()) * 0.5;
            let (chol, _) = chol_with_jitter(&cov)?;
            let l = chol.l();
            let mut out = DMatrix::zeros(draws, p + t);
            for s in 0..draws {
                let eps = DVector::from_fn(p + t, |_, _| rng.sample::<f64, _>(StandardNormal));
                let row = &proj.mean + &l * eps;
                out.row_mut(s).copy_from(&row.transpose());
            }
            out
        }
    };
    let mut lambda_star = Vec::with_capacity(draws);
    let mut lam = f;
    for s in 0..draws {
        let ls = state.q_lambda.sample(rng);
        lambda_star.push(ls);
        lam.row_mut(s).apply(|v| *v = ls * sigmoid(*v));
    }
    Ok(IntensityDraws {
        quad: lam.columns(0, p).into_owned(),
        extra: lam.columns(p, t).into_owned(),
        weight: quad.weight,
        lambda_star,
    })
}

/// `E[λ*]·E[σ(f(x))]` at every quadrature point, from `draws` f samples.
pub fn posterior_mean_intensity<R: Rng + ?Sized>(
    state: &ModelState,
    quad: &IntegrationSet,
    draws: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    let gp = state.sparse_gp()?;
    let proj = gp.project(&quad.points, &state.q_u);
    let f = proj.sample_f(draws, rng);
    let c = state.q_lambda.mean();
    Ok(DVector::from_fn(quad.len(), |i, _| {
        c * f.column(i).iter().map(|v| sigmoid(*v)).sum::<f64>() / draws as f64
    }))
}

/// `∫ (λ(x) − λ̄(x))² dx` by the quadrature rule.
pub fn l2_from_mean(truth: &IntensityFn, quad: &IntegrationSet, mean: &DVector<f64>) -> f64 {
    (0..quad.len())
        .map(|i| (truth.eval(&quad.point(i)) - mean[i]).powi(2))
        .sum::<f64>()
        * quad.weight
}

pub fn l2_distance<R: Rng + ?Sized>(
    truth: &IntensityFn,
    state: &ModelState,
    quad: &IntegrationSet,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let mean = posterior_mean_intensity(state, quad, draws.max(500), rng)?;
    Ok(l2_from_mean(truth, quad, &mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestLogLik {
    pub value: f64,
    /// Some draw had `λ = 0` at a test point and was floored.
    pub floored: bool,
}

/// Mean over draws of `−∫λ_s + Σ_n log λ_s(x_n)`; `draws.extra` holds the
/// test locations.
pub fn test_loglik_from_draws(draws: &IntensityDraws) -> TestLogLik {
    let integrals = draws.integrals();
    let mut floored = false;
    let mut total = 0.0;
    for (s, integral) in integrals.iter().enumerate() {
        let mut ll = -integral;
        for v in draws.extra.row(s).iter() {
            if *v < LOG_FLOOR {
                floored = true;
            }
            ll += v.max(LOG_FLOOR).ln();
        }
        total += ll;
    }
    TestLogLik {
        value: total / integrals.len() as f64,
        floored,
    }
}

pub fn test_loglik<R: Rng + ?Sized>(
    state: &ModelState,
    test_events: &EventSet,
    quad: &IntegrationSet,
    draws: usize,
    rng: &mut R,
) -> Result<TestLogLik> {
    if test_events.domain() != &state.domain {
        return Err(Error::DomainMismatch("test events and state use different domains".into()));
    }
    let d = sample_intensity(state, quad, Some(test_events.points()), draws, PathSampling::Diagonal, rng)?;
    Ok(test_loglik_from_draws(&d))
}

/// `−mean_s log Poisson(n | ∫λ_s)`.
pub fn nlpl_from_integrals(n: u64, integrals: &[f64]) -> f64 {
    -integrals.iter().map(|l| poisson_ln_pmf(n, *l)).sum::<f64>() / integrals.len() as f64
}

pub fn nlpl<R: Rng + ?Sized>(
    state: &ModelState,
    n_train: u64,
    quad: &IntegrationSet,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let d = sample_intensity(state, quad, None, draws, PathSampling::Diagonal, rng)?;
    Ok(nlpl_from_integrals(n_train, &d.integrals()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountKind {
    InSample,
    OutOfSample,
}

impl CountKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CountKind::InSample => "in_sample",
            CountKind::OutOfSample => "out_of_sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDistribution {
    pub samples: Vec<u64>,
    pub kind: CountKind,
}

impl CountDistribution {
    pub fn new(samples: Vec<u64>, kind: CountKind) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("count distribution needs at least one sample"));
        }
        Ok(CountDistribution { samples, kind })
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<u64>() as f64 / self.samples.len() as f64
    }
}

/// Poisson counts at rates `∫ max(λ_s + shift, 0)`, with
/// `shift = (n_test − n_train)/V` when rescaling.
pub fn counts_from_draws<R: Rng + ?Sized>(
    draws: &IntensityDraws,
    volume: f64,
    kind: CountKind,
    rescale: Option<(u64, u64)>,
    rng: &mut R,
) -> Result<CountDistribution> {
    let shift = rescale.map_or(0.0, |(train, test)| (test as f64 - train as f64) / volume);
    let mut samples = Vec::with_capacity(draws.draws());
    for s in 0..draws.draws() {
        let rate = if shift == 0.0 {
            draws.quad.row(s).sum() * draws.weight
        } else {
            draws.quad.row(s).iter().map(|v| (v + shift).max(0.0)).sum::<f64>() * draws.weight
        };
        samples.push(poisson_draw(rate, rng));
    }
    CountDistribution::new(samples, kind)
}

pub(crate) fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map_or(0, |p| p.sample(rng) as u64)
}

pub fn count_distribution<R: Rng + ?Sized>(
    state: &ModelState,
    quad: &IntegrationSet,
    n_samples: usize,
    kind: CountKind,
    rescale: Option<(u64, u64)>,
    rng: &mut R,
) -> Result<CountDistribution> {
    if n_samples < 100 {
        return Err(Error::invalid("count distribution needs at least 100 samples"));
    }
    let d = sample_intensity(state, quad, None, n_samples, PathSampling::Diagonal, rng)?;
    counts_from_draws(&d, state.domain.volume(), kind, rescale, rng)
}

/// Nearest-rank quantile of sorted samples.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// For each level `c` (percent), whether `observed` lies in the central
/// `c%` interval of the samples.
pub fn empirical_coverage(dist: &CountDistribution, observed: u64, levels: &[u32]) -> Result<BTreeMap<u32, f64>> {
    let mut sorted = dist.samples.clone();
    sorted.sort_unstable();
    let mut out = BTreeMap::new();
    for &c in levels {
        if c == 0 || c >= 100 {
            return Err(Error::invalid(format!("coverage level {c}% must lie strictly between 0 and 100")));
        }
        let p = c as f64 / 100.0;
        let lo = nearest_rank(&sorted, (1.0 - p) / 2.0);
        let hi = nearest_rank(&sorted, (1.0 + p) / 2.0);
        out.insert(c, if lo <= observed && observed <= hi { 1.0 } else { 0.0 });
    }
    Ok(out)
}

pub const DEFAULT_LEVELS: [u32; 5] = [10, 20, 30, 40, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Midpoint-grid size per dimension for all integrals.
    pub quad_per_dim: usize,
    pub draws: usize,
    pub count_samples: usize,
    pub levels: Vec<u32>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            quad_per_dim: 200,
            draws: 1000,
            count_samples: 2000,
            levels: DEFAULT_LEVELS.to_vec(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quad_per_dim == 0 || self.draws == 0 {
            return Err(Error::Config("metric quad_per_dim and draws must be positive".into()));
        }
        if self.count_samples < 100 {
            return Err(Error::Config("metric count_samples must be at least 100".into()));
        }
        if self.levels.iter().any(|c| *c == 0 || *c >= 100) {
            return Err(Error::Config("coverage levels must lie strictly between 0 and 100".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l2: Option<f64>,
    pub ell_test: f64,
    pub ell_test_floored: bool,
    pub nlpl: f64,
    /// `kind → level → coverage`.
    pub ec: BTreeMap<CountKind, BTreeMap<u32, f64>>,
    pub seeds: usize,
    pub path_sampling: PathSampling,
}

/// Every metric for one fitted state against one test set.
pub fn evaluate<R: Rng + ?Sized>(
    state: &ModelState,
    n_train: u64,
    test_events: &EventSet,
    truth: Option<&IntensityFn>,
    config: &MetricConfig,
    rng: &mut R,
) -> Result<MetricReport> {
    config.validate()?;
    if test_events.domain() != &state.domain {
        return Err(Error::DomainMismatch("test events and state use different domains".into()));
    }
    let quad = state.domain.grid(config.quad_per_dim)?;
    let l2 = match truth {
        Some(t) => Some(l2_distance(t, state, &quad, config.draws, rng)?),
        None => None,
    };
    let ll = test_loglik(state, test_events, &quad, config.draws, rng)?;
    let nl = nlpl(state, n_train, &quad, config.draws, rng)?;
    let n_test = test_events.len() as u64;
    let d = sample_intensity(state, &quad, None, config.count_samples, PathSampling::Diagonal, rng)?;
    let volume = state.domain.volume();
    let inside = counts_from_draws(&d, volume, CountKind::InSample, None, rng)?;
    let outside = counts_from_draws(&d, volume, CountKind::OutOfSample, Some((n_train, n_test)), rng)?;
    let mut ec = BTreeMap::new();
    ec.insert(CountKind::InSample, empirical_coverage(&inside, n_train, &config.levels)?);
    ec.insert(CountKind::OutOfSample, empirical_coverage(&outside, n_test, &config.levels)?);
    Ok(MetricReport {
        l2,
        ell_test: ll.value,
        ell_test_floored: ll.floored,
        nlpl: nl,
        ec,
        seeds: 1,
        path_sampling: PathSampling::Diagonal,
    })
}
