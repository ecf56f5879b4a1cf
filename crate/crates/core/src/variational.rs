//! The non-GP factors of the structured posterior: `q(λ*) = Gamma(α, β)`,
//! the truncated-Gaussian mixture over thinned-event locations, and the
//! Monte Carlo estimators of the thinned-mass functional
//! `μ(u) = ∫ σ(−u(x)) dx`.
//!
//! Inside `μ(u)` the function `u(x)` is the conditional GP mean
//! `Kxz Kzz⁻¹ u` for a draw `u ~ q(u)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::gp::{GaussianVar, SparseGp};
use crate::special::{self, digamma, ln_gamma, log_sum_exp, norm_interval_mass, norm_logpdf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaVar {
    pub alpha: f64,
    pub beta: f64,
}

/// `(E[λ], E[log λ], E[λ log λ])` under a Gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaMoments {
    pub mean: f64,
    pub mean_log: f64,
    pub mean_x_log: f64,
}

impl GammaVar {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "Gamma needs positive shape and rate, got ({alpha}, {beta})"
            )));
        }
        Ok(GammaVar { alpha, beta })
    }

    /// Prior whose mean and standard deviation are twice and once the rate
    /// `n_observed / volume` of a homogeneous process: shape 4 always.
    pub fn prior_for(domain: &BoxDomain, n_observed: usize) -> Result<Self> {
        if n_observed == 0 {
            return Err(Error::invalid("λ* prior needs at least one observed event"));
        }
        let rate = n_observed as f64 / domain.volume();
        let (mean, sd) = (2.0 * rate, rate);
        let shape = (mean / sd).powi(2);
        GammaVar::new(shape, shape / mean)
    }

    pub fn mean(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn moments(&self) -> GammaMoments {
        let mean = self.mean();
        GammaMoments {
            mean,
            mean_log: digamma(self.alpha) - self.beta.ln(),
            mean_x_log: mean * (digamma(self.alpha + 1.0) - self.beta.ln()),
        }
    }

    /// `KL(self || prior)`.
    pub fn kl(&self, prior: &GammaVar) -> f64 {
        let (aq, bq, ap, bp) = (self.alpha, self.beta, prior.alpha, prior.beta);
        (aq - ap) * digamma(aq) - ln_gamma(aq) + ln_gamma(ap) + ap * (bq.ln() - bp.ln())
            + aq * (bp - bq) / bq
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.alpha * self.beta.ln() - ln_gamma(self.alpha) + (self.alpha - 1.0) * x.ln()
            - self.beta * x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = rand_distr::Gamma::new(self.alpha, 1.0 / self.beta).expect("valid Gamma");
        rng.sample(g)
    }
}

/// Uniform draw on the open interval (0, 1).
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Inverse-CDF draw from `N(mu, sd²)` truncated to `[lo, hi]` given a
/// uniform `u` in (0, 1).
pub fn trunc_normal_inverse(mu: f64, sd: f64, lo: f64, hi: f64, u: f64) -> f64 {
    let a = (lo - mu) / sd;
    let b = (hi - mu) / sd;
    let mass = norm_interval_mass(a, b);
    let lower_tail = special::norm_cdf(a);
    let upper_tail = special::norm_cdf(-b);
    let p = lower_tail + u * mass;
    let q = upper_tail + (1.0 - u) * mass;
    let z = special::norm_quantile_pair(p, q);
    (mu + sd * z).clamp(lo, hi)
}

/// Mixture of axis-factorized truncated normals on a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncMixture {
    pub weights: Vec<f64>,
    /// `S × D`.
    pub means: DMatrix<f64>,
    /// `S × D`.
    pub stds: DMatrix<f64>,
    pub domain: BoxDomain,
}

impl TruncMixture {
    pub fn new(weights: Vec<f64>, means: DMatrix<f64>, stds: DMatrix<f64>, domain: BoxDomain) -> Result<Self> {
        let s = weights.len();
        if s == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.shape() != (s, domain.dim()) || stds.shape() != (s, domain.dim()) {
            return Err(Error::invalid("mixture parameter shapes do not match S × D"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mixture weights must lie on the simplex"));
        }
        if stds.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("mixture standard deviations must be positive"));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        Ok(TruncMixture {
            weights,
            means,
            stds,
            domain,
        })
    }

    /// `S` components with means on a regular lattice over the box.
    pub fn spread(domain: &BoxDomain, components: usize, std_fraction: f64) -> Result<Self> {
        if components == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let dim = domain.dim();
        let means = DMatrix::from_fn(components, dim, |s, d| {
            domain.lower()[d] + domain.side(d) * (s as f64 + 0.5) / components as f64
        });
        let stds = DMatrix::from_fn(components, dim, |_, d| std_fraction * domain.side(d));
        TruncMixture::new(
            vec![1.0 / components as f64; components],
            means,
            stds,
            domain.clone(),
        )
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Per-component log normalizer `Σ_d log(σ_d Z_d)`.
    fn log_norm(&self, s: usize) -> f64 {
        (0..self.domain.dim())
            .map(|d| {
                let sd = self.stds[(s, d)];
                let a = (self.domain.lower()[d] - self.means[(s, d)]) / sd;
                let b = (self.domain.upper()[d] - self.means[(s, d)]) / sd;
                sd.ln() + norm_interval_mass(a, b).ln()
            })
            .sum()
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        if !self.domain.contains(x) {
            return Err(Error::invalid(format!("point {x:?} lies outside the domain")));
        }
        Ok(self.logpdf_unchecked(x))
    }

    pub(crate) fn logpdf_unchecked(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|s| {
                let mut t = self.weights[s].ln() - self.log_norm(s);
                for (d, xd) in x.iter().enumerate() {
                    t += norm_logpdf((xd - self.means[(s, d)]) / self.stds[(s, d)]);
                }
                t
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// Draw from component `s` with one uniform per dimension.
    pub fn component_draw(&self, s: usize, uniforms: &[f64]) -> Vec<f64> {
        (0..self.domain.dim())
            .map(|d| {
                trunc_normal_inverse(
                    self.means[(s, d)],
                    self.stds[(s, d)],
                    self.domain.lower()[d],
                    self.domain.upper()[d],
                    uniforms[d],
                )
            })
            .collect()
    }

    /// Ancestral sampling, one point per row.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let dim = self.domain.dim();
        let mut out = DMatrix::zeros(count, dim);
        let mut uniforms = vec![0.0; dim];
        for i in 0..count {
            let pick: f64 = rng.random();
            let mut acc = 0.0;
            let mut s = self.components() - 1;
            for (k, w) in self.weights.iter().enumerate() {
                acc += w;
                if pick < acc && *w > 0.0 {
                    s = k;
                    break;
                }
            }
            while self.weights[s] == 0.0 && s > 0 {
                s -= 1;
            }
            for u in uniforms.iter_mut() {
                *u = open_unit(rng);
            }
            let y = self.component_draw(s, &uniforms);
            for d in 0..dim {
                out[(i, d)] = y[d];
            }
        }
        out
    }
}

/// Monte Carlo estimates of `U = E[μ(u)]` and `W = E[μ(u) log μ(u)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuEstimate {
    pub u: f64,
    pub w: f64,
    pub samples_u: usize,
    pub samples_x: usize,
}

pub(crate) fn x_log_x(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Estimate `U` and `W` with `n_u` draws of `u` and one shared set of
/// `n_x` uniform integration points.
pub fn mu_functionals<R: Rng + ?Sized>(
    q_u: &GaussianVar,
    gp: &SparseGp,
    domain: &BoxDomain,
    n_u: usize,
    n_x: usize,
    rng: &mut R,
) -> Result<MuEstimate> {
    if n_u == 0 {
        return Err(Error::invalid("mu_functionals needs at least one u sample"));
    }
    let xs = domain.sample_uniform(n_x, rng)?;
    let (a, _, _) = gp.conditional(&xs.points);
    let k = gp.num_inducing();
    let (mut u_acc, mut w_acc) = (0.0, 0.0);
    for _ in 0..n_u {
        let eps = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = &q_u.mean + &q_u.chol * eps;
        let ux = &a * u;
        let mu = xs.weight * ux.iter().map(|v| special::sigmoid(-v)).sum::<f64>();
        u_acc += mu;
        w_acc += x_log_x(mu);
    }
    Ok(MuEstimate {
        u: u_acc / n_u as f64,
        w: w_acc / n_u as f64,
        samples_u: n_u,
        samples_x: n_x,
    })
}

/// Expected number of thinned events, `E[λ*] · U`.
pub fn poisson_eta(mu: &MuEstimate, q_lambda: &GammaVar) -> f64 {
    q_lambda.mean() * mu.u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{InducingSet, KernelParams};
    use crate::special::EULER_GAMMA;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> BoxDomain {
        BoxDomain::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn prior_moment_matching() {
        let g = GammaVar::prior_for(&BoxDomain::interval(0.0, 50.0).unwrap(), 100).unwrap();
        assert!((g.alpha - 4.0).abs() < 1e-12 && (g.beta - 1.0).abs() < 1e-12);
        let g = GammaVar::prior_for(&unit(), 2).unwrap();
        assert!((g.alpha - 4.0).abs() < 1e-12 && (g.beta - 1.0).abs() < 1e-12);
        let g = GammaVar::prior_for(&BoxDomain::interval(0.0, 5.0).unwrap(), 33).unwrap();
        assert!((g.alpha - 4.0).abs() < 1e-12);
        assert!((g.mean() - 2.0 * 33.0 / 5.0).abs() < 1e-12);
        assert!(GammaVar::prior_for(&unit(), 0).is_err());
    }

    #[test]
    fn gamma_moment_values() {
        let m = GammaVar::new(1.0, 1.0).unwrap().moments();
        assert_eq!(m.mean, 1.0);
        assert!((m.mean_log + EULER_GAMMA).abs() < 1e-12);
        assert_eq!(GammaVar::new(2.0, 2.0).unwrap().moments().mean, 1.0);
    }

    #[test]
    fn gamma_kl_values() {
        let p = GammaVar::new(1.0, 1.0).unwrap();
        let q = GammaVar::new(2.0, 1.0).unwrap();
        assert!((q.kl(&p) - (1.0 - EULER_GAMMA)).abs() < 1e-12);
        assert!(q.kl(&q).abs() < 1e-14);
        assert!(GammaVar::new(0.0, 1.0).is_err());
    }

    #[test]
    fn mixture_validation() {
        let d = unit();
        let m = DMatrix::from_element(2, 1, 0.5);
        let s = DMatrix::from_element(2, 1, 0.1);
        assert!(TruncMixture::new(vec![0.5, 0.6], m.clone(), s.clone(), d.clone()).is_err());
        assert!(TruncMixture::new(vec![0.5, 0.5], m.clone(), s * -1.0, d.clone()).is_err());
        assert!(TruncMixture::new(vec![1.0], m, DMatrix::from_element(2, 1, 0.1), d).is_err());
    }

    #[test]
    fn degenerate_component_sampling() {
        let mix = TruncMixture::new(
            vec![1.0],
            DMatrix::from_element(1, 1, 0.3),
            DMatrix::from_element(1, 1, 1e-12),
            unit(),
        )
        .unwrap();
        let ys = mix.sample(50, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(ys.iter().all(|y| (y - 0.3).abs() < 1e-9));
    }

    fn wide() -> TruncMixture {
        TruncMixture::new(
            vec![1.0],
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 10.0),
            unit(),
        )
        .unwrap()
    }

    #[test]
    fn wide_component_is_nearly_uniform() {
        let mut ys: Vec<f64> = wide().sample(10_000, &mut ChaCha8Rng::seed_from_u64(4)).iter().copied().collect();
        ys.sort_by(f64::total_cmp);
        let n = ys.len() as f64;
        let ks = ys
            .iter()
            .enumerate()
            .map(|(i, y)| ((i as f64 + 1.0) / n - y).abs().max((y - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS {ks}");
        for x in [0.0, 0.2, 0.77, 1.0] {
            assert!(wide().logpdf(&[x]).unwrap().abs() < 0.01);
        }
        assert!(wide().logpdf(&[1.2]).is_err());
    }

    #[test]
    fn zero_weight_component_is_inert() {
        let single = TruncMixture::new(
            vec![1.0],
            DMatrix::from_element(1, 1, 0.3),
            DMatrix::from_element(1, 1, 0.2),
            unit(),
        )
        .unwrap();
        let pair = TruncMixture::new(
            vec![1.0, 0.0],
            DMatrix::from_vec(2, 1, vec![0.3, 0.9]),
            DMatrix::from_vec(2, 1, vec![0.2, 0.05]),
            unit(),
        )
        .unwrap();
        let a = single.sample(200, &mut ChaCha8Rng::seed_from_u64(8));
        let b = pair.sample(200, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_density_normalizes_1d() {
        let mix = TruncMixture::new(
            vec![0.2, 0.5, 0.3],
            DMatrix::from_vec(3, 1, vec![0.1, 0.5, 0.95]),
            DMatrix::from_vec(3, 1, vec![0.05, 0.3, 0.02]),
            unit(),
        )
        .unwrap();
        let g = unit().grid(10_000).unwrap();
        let total = g.integrate(|x| mix.logpdf(x).unwrap().exp());
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn mixture_density_normalizes_2d() {
        let dom = BoxDomain::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        let mix = TruncMixture::new(
            vec![0.6, 0.4],
            DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 1.5, 0.8]),
            DMatrix::from_row_slice(2, 2, &[0.4, 0.7, 0.2, 0.3]),
            dom.clone(),
        )
        .unwrap();
        let g = dom.grid(300).unwrap();
        let total = g.integrate(|x| mix.logpdf(x).unwrap().exp());
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn symmetric_density() {
        let mix = TruncMixture::new(
            vec![1.0],
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.2),
            unit(),
        )
        .unwrap();
        for d in [0.1, 0.3, 0.5] {
            let l = mix.logpdf(&[0.5 - d]).unwrap();
            let r = mix.logpdf(&[0.5 + d]).unwrap();
            assert!((l - r).abs() < 1e-12);
        }
    }

    fn gp_on(domain_hi: f64, l: f64, k: usize) -> SparseGp {
        let z = DMatrix::from_fn(k, 1, |i, _| domain_hi * (i as f64 + 0.5) / k as f64);
        SparseGp::new(KernelParams::new(l, 1.0).unwrap(), InducingSet::new(z).unwrap()).unwrap()
    }

    #[test]
    fn mu_at_zero_function() {
        let gp = gp_on(1.0, 0.5, 3);
        let q = GaussianVar::new(DVector::zeros(3), DMatrix::identity(3, 3) * 1e-12).unwrap();
        let est = mu_functionals(&q, &gp, &unit(), 5, 400, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((est.u - 0.5).abs() < 1e-9);
        assert!((est.w - 0.5 * 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn mu_vanishes_for_large_u() {
        let gp = gp_on(1.0, 0.5, 3);
        let q = GaussianVar::new(DVector::from_element(3, 200.0), DMatrix::identity(3, 3) * 1e-6).unwrap();
        let est = mu_functionals(&q, &gp, &unit(), 3, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(est.u < 1e-20);
        assert!(est.w.is_finite());
        assert_eq!(poisson_eta(&est, &GammaVar::new(4.0, 1.0).unwrap()), est.u * 4.0);
    }

    #[test]
    fn mu_symmetric_under_prior() {
        let gp = gp_on(1.0, 5.0, 3);
        let est = mu_functionals(&gp.prior(), &gp, &unit(), 4000, 50, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        // Per-sample μ lies in (0,1); its sd is at most 0.5.
        let se = 0.5 / (4000f64).sqrt();
        assert!((est.u - 0.5).abs() < 3.0 * se, "U = {}", est.u);
        assert!(est.u > 0.0 && est.u < 1.0);
    }

    #[test]
    fn eta_product() {
        let est = MuEstimate { u: 25.0, w: 0.0, samples_u: 1, samples_x: 1 };
        assert_eq!(poisson_eta(&est, &GammaVar::new(4.0, 1.0).unwrap()), 100.0);
        let zero = MuEstimate { u: 0.0, ..est };
        assert_eq!(poisson_eta(&zero, &GammaVar::new(4.0, 1.0).unwrap()), 0.0);
    }
}
