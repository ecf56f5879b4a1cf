//! Unconstrained parameterization, gradient evaluation and the Adam loop.

use web_time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::elbo::{ElboBreakdown, McConfig, ModelState, SurrogateForm};
use crate::error::{Error, Result};
use crate::gp::{GaussianVar, InducingSet, KernelParams};
use crate::objective::{ElboNoise, Objective, ParamLayout};
use crate::sim::EventSet;
use crate::special::sigmoid;
use crate::variational::{GammaVar, TruncMixture};

/// Log-scale parameters are clamped to this range when unpacked so every
/// vector maps to a valid state.
const LOG_CLAMP: f64 = 300.0;

/// A point in the optimizer's coordinates, see [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    pub values: DVector<f64>,
    pub layout: ParamLayout,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl FlatParams {
    pub fn pack(state: &ModelState) -> Self {
        let layout = ParamLayout::of(state);
        let mut v = DVector::zeros(layout.len());
        let (k, s, d) = (layout.k, layout.s, layout.d);
        v.rows_mut(layout.m(), k).copy_from(&state.q_u.mean);
        let l = &state.q_u.chol;
        for i in 0..k {
            for j in 0..=i {
                v[layout.chol_entry(i, j)] = if i == j { l[(i, i)].ln() } else { l[(i, j)] };
            }
        }
        v[layout.log_alpha()] = state.q_lambda.alpha.ln();
        v[layout.log_beta()] = state.q_lambda.beta.ln();
        let mix = &state.mixture;
        let last = mix.weights[s - 1].ln();
        for c in 0..s - 1 {
            v[layout.weight_logits() + c] = mix.weights[c].ln() - last;
        }
        for c in 0..s {
            for dd in 0..d {
                let frac = (mix.means[(c, dd)] - state.domain.lower()[dd]) / state.domain.side(dd);
                v[layout.mean_logits() + c * d + dd] = logit(frac);
                v[layout.log_stds() + c * d + dd] = mix.stds[(c, dd)].ln();
            }
        }
        FlatParams { values: v, layout }
    }

    /// Rebuild a state, taking the fixed hyperparameters from `template`.
    pub fn unpack(&self, template: &ModelState) -> Result<ModelState> {
        let layout = self.layout;
        if ParamLayout::of(template) != layout || self.values.len() != layout.len() {
            return Err(Error::invalid("parameter vector does not match the template state"));
        }
        if let Some(i) = self.values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { index: i });
        }
        let v = &self.values;
        let (k, s, d) = (layout.k, layout.s, layout.d);
        let ex = |x: f64| x.clamp(-LOG_CLAMP, LOG_CLAMP).exp();
        let mean = v.rows(layout.m(), k).into_owned();
        let chol = DMatrix::from_fn(k, k, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => ex(v[layout.chol_entry(i, i)]),
            std::cmp::Ordering::Greater => v[layout.chol_entry(i, j)],
        });
        let q_u = GaussianVar::new(mean, chol)?;
        let q_lambda = GammaVar::new(ex(v[layout.log_alpha()]), ex(v[layout.log_beta()]))?;
        let mut logits: Vec<f64> = (0..s - 1).map(|c| v[layout.weight_logits() + c]).collect();
        logits.push(0.0);
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logits.iter().map(|x| (x - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let domain = &template.domain;
        let means = DMatrix::from_fn(s, d, |c, dd| {
            domain.lower()[dd] + domain.side(dd) * sigmoid(v[layout.mean_logits() + c * d + dd])
        });
        let stds = DMatrix::from_fn(s, d, |c, dd| ex(v[layout.log_stds() + c * d + dd]));
        let mixture = TruncMixture::new(weights, means, stds, domain.clone())?;
        Ok(ModelState {
            q_u,
            q_lambda,
            mixture,
            ..template.clone()
        })
    }
}

/// Surrogate ELBO and its gradient for one draw of Monte Carlo noise.
pub fn grad_elbo<R: Rng + ?Sized>(
    params: &FlatParams,
    template: &ModelState,
    events: &EventSet,
    mc: &McConfig,
    form: SurrogateForm,
    rng: &mut R,
) -> Result<(ElboBreakdown, DVector<f64>)> {
    let state = params.unpack(template)?;
    let objective = Objective::new(&state, events, form)?;
    let noise = ElboNoise::draw(mc, &objective, state.mixture.components(), rng)?;
    evaluate_checked(&objective, &state, &noise)
}

fn evaluate_checked(
    objective: &Objective,
    state: &ModelState,
    noise: &ElboNoise,
) -> Result<(ElboBreakdown, DVector<f64>)> {
    let eval = objective.evaluate(state, noise, true);
    if !eval.breakdown.total.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let grad = eval.gradient.expect("gradient requested");
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok((eval.breakdown, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    /// Fractions of the run at which the step is multiplied by `decay`.
    pub decay_at: Vec<f64>,
    pub decay: f64,
    pub iterations: usize,
    pub mc: McConfig,
    pub form: SurrogateForm,
    pub components: usize,
    pub seed: u64,
    /// Early stopping compares the mean ELBO of consecutive windows; it is
    /// off unless `tolerance` is set.
    pub window: usize,
    pub tolerance: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step_size: 5e-3,
            decay_at: vec![0.6, 0.85],
            decay: 0.3,
            iterations: 5000,
            mc: McConfig::default(),
            form: SurrogateForm::default(),
            components: 5,
            seed: 0,
            window: 200,
            tolerance: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the iteration budget for the given input dimension.
    pub fn for_dim(dim: usize) -> Self {
        TrainConfig {
            iterations: if dim >= 2 { 8000 } else { 5000 },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("step_size must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::Config("decay must be positive".into()));
        }
        if self.decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("decay_at entries must lie in [0, 1]".into()));
        }
        if self.components == 0 {
            return Err(Error::Config("components must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        self.mc.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn step_at(&self, iter: usize) -> f64 {
        let frac = iter as f64 / self.iterations.max(1) as f64;
        let hits = self.decay_at.iter().filter(|f| frac >= **f).count();
        self.step_size * self.decay.powi(hits as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub elbo: f64,
    pub grad_norm: f64,
    pub seconds: f64,
    /// Number of step halvings needed at this iteration.
    pub retries: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub state: ModelState,
    pub stopped_early: bool,
}

impl TrainTrace {
    pub fn elbo(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.elbo).collect()
    }
}

const MAX_HALVINGS: u32 = 5;

struct Adam {
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: DVector::zeros(n),
            v: DVector::zeros(n),
            t: 0,
        }
    }

    /// Ascent direction for `grad` (the step size is applied by the caller).
    fn direction(&mut self, grad: &DVector<f64>) -> DVector<f64> {
        self.t += 1;
        self.m = &self.m * Self::B1 + grad * (1.0 - Self::B1);
        self.v = &self.v * Self::B2 + grad.component_mul(grad) * (1.0 - Self::B2);
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        DVector::from_fn(grad.len(), |i, _| (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS))
    }
}

/// Fit from the default initial state.
pub fn fit(
    events: &EventSet,
    domain: &BoxDomain,
    kernel: KernelParams,
    inducing: InducingSet,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    if events.is_empty() {
        return Err(Error::Data("cannot fit an empty event set".into()));
    }
    let init = ModelState::initial(domain.clone(), kernel, inducing, events.len(), config.components)?;
    fit_from(events, init, config)
}

/// Adam ascent on the surrogate ELBO with fresh noise every iteration.
///
/// When an iterate gives a non-finite objective the step that produced it is
/// retried with half the step size, at most five times; after that the
/// previous iterate is kept.
pub fn fit_from(events: &EventSet, init: ModelState, config: &TrainConfig) -> Result<TrainTrace> {
    config.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let objective = Objective::new(&init, events, config.form)?;
    let s = init.mixture.components();
    let mut params = FlatParams::pack(&init);
    let mut state = init;
    let mut adam = Adam::new(params.values.len());
    let mut rows = Vec::with_capacity(config.iterations);
    let mut last_step: Option<DVector<f64>> = None;
    let mut stopped_early = false;

    for iter in 0..config.iterations {
        let noise = ElboNoise::draw(&config.mc, &objective, s, &mut rng)?;
        let mut retries = 0;
        let (breakdown, grad) = loop {
            match evaluate_checked(&objective, &state, &noise) {
                Ok(ok) => break ok,
                Err(Error::NonFiniteObjective) | Err(Error::NonFiniteGradient { .. })
                    if last_step.is_some() && retries < MAX_HALVINGS =>
                {
                    retries += 1;
                    let step = last_step.as_mut().expect("checked above");
                    *step *= 0.5;
                    params.values -= &*step;
                    state = params.unpack(&state)?;
                    log::debug!("iteration {iter}: non-finite objective, halving the last step");
                }
                Err(Error::NonFiniteObjective) | Err(Error::NonFiniteGradient { .. }) if last_step.is_some() => {
                    let step = last_step.take().expect("checked above");
                    params.values -= &step;
                    state = params.unpack(&state)?;
                    log::warn!("iteration {iter}: reverting to the previous iterate");
                }
                Err(e) => return Err(e),
            }
        };
        let dir = adam.direction(&grad);
        let step = dir * config.step_at(iter);
        params.values += &step;
        state = params.unpack(&state)?;
        last_step = Some(step);
        rows.push(TraceRow {
            iteration: iter,
            elbo: breakdown.total,
            grad_norm: grad.norm(),
            seconds: start.elapsed().as_secs_f64(),
            retries,
        });
        if let Some(tol) = config.tolerance {
            let w = config.window;
            if rows.len() >= 2 * w && rows.len() % w == 0 {
                let mean = |r: &[TraceRow]| r.iter().map(|x| x.elbo).sum::<f64>() / r.len() as f64;
                let n = rows.len();
                if mean(&rows[n - w..]) - mean(&rows[n - 2 * w..n - w]) < tol {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainTrace {
        rows,
        state,
        stopped_early,
    })
}

/// Draws of `λ(x) = λ*·σ(f(x))` with `f` drawn independently per location
/// from the diagonal of `q(f)`.
pub fn intensity_posterior<R: Rng + ?Sized>(
    state: &ModelState,
    points: &DMatrix<f64>,
    draws: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if points.ncols() != state.domain.dim() {
        return Err(Error::DomainMismatch("points and state differ in dimension".into()));
    }
    let gp = state.sparse_gp()?;
    let proj = gp.project(points, &state.q_u);
    let f = proj.sample_f(draws, rng);
    let mut out = f;
    for r in 0..draws {
        let lambda = state.q_lambda.sample(rng);
        for c in 0..out.ncols() {
            out[(r, c)] = lambda * sigmoid(out[(r, c)]);
        }
    }
    Ok(out)
}

/// Posterior mean of `λ(x)` from `draws` samples.
pub fn intensity_mean<R: Rng + ?Sized>(
    state: &ModelState,
    points: &DMatrix<f64>,
    draws: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let samples = intensity_posterior(state, points, draws, rng)?;
    Ok(DVector::from_fn(points.nrows(), |c, _| samples.column(c).mean()))
}
