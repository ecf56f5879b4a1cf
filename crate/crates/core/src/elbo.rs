//! The surrogate evidence lower bound and its individual terms.
//!
//! The assembled objective is
//!
//! ```text
//! total = const + T1 − T2 + data + T3 − KL_u − KL_λ − T4 − T5
//! const = N (ψ(α) − log β) − V α/β − log N!
//! ```
//!
//! where `T1` and `T3`, `T5` are exact factorizations and `T2`, `T4` are
//! replaced by closed-form surrogates in `U = E[μ(u)]` and
//! `W = E[μ(u) log μ(u)]`; see [`SurrogateForm`].

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::gp::{GaussianVar, InducingSet, KernelParams, SparseGp};
use crate::objective::{ElboNoise, Objective};
use crate::sim::EventSet;
use crate::special::{ln_gamma, log_sigmoid};
use crate::variational::{GammaVar, MuEstimate, TruncMixture};

/// Every free parameter of the variational posterior plus the fixed
/// hyperparameters it is conditioned on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub q_u: GaussianVar,
    pub q_lambda: GammaVar,
    pub mixture: TruncMixture,
    pub kernel: KernelParams,
    pub inducing: InducingSet,
    pub prior_lambda: GammaVar,
    pub domain: BoxDomain,
}

impl ModelState {
    /// Prior-centred starting point: `m = 0`, `L = 0.1·chol(Kzz)` (or `0.1·I`
    /// if that factor is unavailable), `q(λ*)` equal to the prior, and a
    /// uniform-weight mixture spread over the box with stds a quarter of the
    /// side lengths.
    pub fn initial(
        domain: BoxDomain,
        kernel: KernelParams,
        inducing: InducingSet,
        n_events: usize,
        components: usize,
    ) -> Result<Self> {
        if inducing.dim() != domain.dim() {
            return Err(Error::DomainMismatch("inducing inputs and domain differ in dimension".into()));
        }
        let prior_lambda = GammaVar::prior_for(&domain, n_events)?;
        let k = inducing.len();
        let chol = match SparseGp::new(kernel, inducing.clone()) {
            Ok(gp) => gp.kzz_chol().l() * 0.1,
            Err(_) => nalgebra::DMatrix::identity(k, k) * 0.1,
        };
        let q_u = GaussianVar::new(DVector::zeros(k), chol)?;
        let mixture = TruncMixture::spread(&domain, components, 0.25)?;
        Ok(ModelState {
            q_u,
            q_lambda: prior_lambda,
            mixture,
            kernel,
            inducing,
            prior_lambda,
            domain,
        })
    }

    pub fn sparse_gp(&self) -> Result<SparseGp> {
        SparseGp::new(self.kernel, self.inducing.clone())
    }
}

/// How the two factorial-dependent terms are bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateForm {
    /// `T2 ≈ E[η log η] − E[η] = E[λ* log λ*]·U + (α/β)(W − U)` and
    /// `T4 = E[η log η] − E[η] − T2 = 0`, so the `log M!` terms cancel as
    /// they do in the exact objective.
    #[default]
    Consistent,
    /// `T2 = (E[λ* log λ*] + α/β)·W` and
    /// `T4 = (α/β)(W − U) + E[λ* log λ*](U − 1)`, taken literally.
    Literal,
}

/// Monte Carlo sizes for one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub mu_u_samples: usize,
    pub mu_x_points: usize,
    pub t3_pairs: usize,
    pub entropy_samples: usize,
    pub data_draws: usize,
    /// Use a fixed midpoint grid instead of fresh uniform points for `μ(u)`.
    pub fixed_grid: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            mu_u_samples: 5,
            mu_x_points: 1000,
            t3_pairs: 200,
            entropy_samples: 200,
            data_draws: 10,
            fixed_grid: false,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mu_u_samples", self.mu_u_samples),
            ("mu_x_points", self.mu_x_points),
            ("t3_pairs", self.t3_pairs),
            ("entropy_samples", self.entropy_samples),
            ("data_draws", self.data_draws),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("mc.{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub data_term: f64,
    pub t1: f64,
    pub t2_surrogate: f64,
    pub t3: f64,
    pub t4_surrogate: f64,
    pub t5: f64,
    pub kl_u: f64,
    pub kl_lambda: f64,
    pub const_terms: f64,
    pub total: f64,
}

impl ElboBreakdown {
    /// Signed sum of the term fields.
    pub fn assembled(&self) -> f64 {
        self.const_terms + self.t1 - self.t2_surrogate + self.data_term + self.t3
            - self.kl_u
            - self.kl_lambda
            - self.t4_surrogate
            - self.t5
    }
}

/// `N (ψ(α) − log β) − V α/β − log N!`.
pub fn const_terms(q_lambda: &GammaVar, n_events: usize, volume: f64) -> f64 {
    let m = q_lambda.moments();
    n_events as f64 * m.mean_log - volume * m.mean - ln_gamma(n_events as f64 + 1.0)
}

/// `E[λ* log λ*] · U`.
pub fn term_t1(q_lambda: &GammaVar, mu: &MuEstimate) -> f64 {
    q_lambda.moments().mean_x_log * mu.u
}

pub fn term_t2(q_lambda: &GammaVar, mu: &MuEstimate, form: SurrogateForm) -> f64 {
    let m = q_lambda.moments();
    match form {
        SurrogateForm::Literal => (m.mean_x_log + m.mean) * mu.w,
        SurrogateForm::Consistent => m.mean_x_log * mu.u + m.mean * (mu.w - mu.u),
    }
}

/// `(α/β) · U · mean log σ(−f(y))` given the sample mean of `log σ(−f(y))`.
pub fn term_t3(q_lambda: &GammaVar, mu: &MuEstimate, mean_log_sig_neg: f64) -> f64 {
    q_lambda.mean() * mu.u * mean_log_sig_neg
}

pub fn term_t4(q_lambda: &GammaVar, mu: &MuEstimate, form: SurrogateForm) -> f64 {
    let m = q_lambda.moments();
    match form {
        SurrogateForm::Literal => m.mean * (mu.w - mu.u) + m.mean_x_log * (mu.u - 1.0),
        SurrogateForm::Consistent => 0.0,
    }
}

/// `(α/β) · E[log q(y)] · U`.
pub fn term_t5(q_lambda: &GammaVar, mu: &MuEstimate, entropy_mc: f64) -> f64 {
    q_lambda.mean() * entropy_mc * mu.u
}

/// `Σ_n E_q(f)[log σ(f(x_n))]` from `draws[n]` reparameterized samples of
/// `f(x_n)`.
pub fn data_term(f_draws: &[Vec<f64>]) -> f64 {
    f_draws
        .iter()
        .map(|d| d.iter().map(|f| log_sigmoid(*f)).sum::<f64>() / d.len().max(1) as f64)
        .sum()
}

/// Surrogate ELBO with fresh Monte Carlo noise from `rng`.
pub fn elbo<R: Rng + ?Sized>(
    state: &ModelState,
    events: &EventSet,
    mc: &McConfig,
    form: SurrogateForm,
    rng: &mut R,
) -> Result<ElboBreakdown> {
    let objective = Objective::new(state, events, form)?;
    let noise = ElboNoise::draw(mc, &objective, state.mixture.components(), rng)?;
    Ok(objective.evaluate(state, &noise, false).breakdown)
}
