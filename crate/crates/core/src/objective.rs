//! Deterministic evaluation of the surrogate ELBO for a fixed draw of Monte
//! Carlo noise, with its gradient with respect to the unconstrained
//! parameters.
//!
//! All expectations are pathwise: `u = m + Lε`, `f = mean + sd·ε`, mixture
//! locations by inverse CDF of fixed uniforms. The mixture expectations are
//! summed over components explicitly (each component gets its own draws),
//! so the weights enter the estimator smoothly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::{BoxDomain, IntegrationSet};
use crate::elbo::{
    const_terms, term_t1, term_t2, term_t3, term_t4, term_t5, ElboBreakdown, McConfig, ModelState,
    SurrogateForm,
};
use crate::error::{Error, Result};
use crate::gp::SparseGp;
use crate::sim::EventSet;
use crate::special::{
    digamma, log_sigmoid, log_sum_exp, norm_cdf, norm_interval_mass, norm_logpdf, norm_quantile_pair,
    sigmoid, trigamma, LN_SQRT_2PI,
};
use crate::variational::{open_unit, x_log_x, GammaVar, MuEstimate};

/// Offsets of each block inside the flat unconstrained parameter vector:
/// `m (K) | L lower triangle, log diagonal (K(K+1)/2) | log α, log β |
/// weight logits (S−1) | mean logits (S·D) | log stds (S·D)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub k: usize,
    pub s: usize,
    pub d: usize,
}

impl ParamLayout {
    pub fn of(state: &ModelState) -> Self {
        ParamLayout {
            k: state.q_u.dim(),
            s: state.mixture.components(),
            d: state.domain.dim(),
        }
    }

    pub fn m(&self) -> usize {
        0
    }

    pub fn chol(&self) -> usize {
        self.k
    }

    /// Index of `L[i][j]` (`j <= i`).
    pub fn chol_entry(&self, i: usize, j: usize) -> usize {
        self.chol() + i * (i + 1) / 2 + j
    }

    pub fn log_alpha(&self) -> usize {
        self.k + self.k * (self.k + 1) / 2
    }

    pub fn log_beta(&self) -> usize {
        self.log_alpha() + 1
    }

    pub fn weight_logits(&self) -> usize {
        self.log_beta() + 1
    }

    pub fn mean_logits(&self) -> usize {
        self.weight_logits() + self.s - 1
    }

    pub fn log_stds(&self) -> usize {
        self.mean_logits() + self.s * self.d
    }

    pub fn len(&self) -> usize {
        self.log_stds() + self.s * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed Monte Carlo noise for one objective evaluation.
#[derive(Debug, Clone)]
pub struct ElboNoise {
    pub xs: IntegrationSet,
    /// `Kxz Kzz⁻¹` at the integration points.
    pub xs_a: DMatrix<f64>,
    /// `n_u × K` standard normals for `u = m + Lε`.
    pub u_eps: DMatrix<f64>,
    /// `N × R` standard normals for the data term.
    pub event_eps: DMatrix<f64>,
    /// Per component: `n × D` uniforms for the T3 locations.
    pub t3_uniforms: Vec<DMatrix<f64>>,
    /// Per component: `n` standard normals for `f` at the T3 locations.
    pub t3_eps: Vec<DVector<f64>>,
    /// Per component: `n × D` uniforms for the entropy locations.
    pub t5_uniforms: Vec<DMatrix<f64>>,
}

impl ElboNoise {
    pub fn draw<R: Rng + ?Sized>(
        mc: &McConfig,
        objective: &Objective,
        components: usize,
        rng: &mut R,
    ) -> Result<Self> {
        mc.validate()?;
        let dim = objective.domain.dim();
        let xs = if mc.fixed_grid {
            let per_dim = (mc.mu_x_points as f64).powf(1.0 / dim as f64).round().max(1.0) as usize;
            objective.domain.grid(per_dim)?
        } else {
            objective.domain.sample_uniform(mc.mu_x_points, rng)?
        };
        let (xs_a, _, _) = objective.gp.conditional(&xs.points);
        let k = objective.gp.num_inducing();
        let mut normal = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u_eps = normal(mc.mu_u_samples, k);
        let event_eps = normal(objective.n_events(), mc.data_draws);
        let n3 = mc.t3_pairs.div_ceil(components);
        let n5 = mc.entropy_samples.div_ceil(components);
        let mut t3_uniforms = Vec::with_capacity(components);
        let mut t3_eps = Vec::with_capacity(components);
        let mut t5_uniforms = Vec::with_capacity(components);
        for _ in 0..components {
            t3_uniforms.push(DMatrix::from_fn(n3, dim, |_, _| open_unit(rng)));
            t3_eps.push(DVector::from_fn(n3, |_, _| rng.sample::<f64, _>(StandardNormal)));
            t5_uniforms.push(DMatrix::from_fn(n5, dim, |_, _| open_unit(rng)));
        }
        Ok(ElboNoise {
            xs,
            xs_a,
            u_eps,
            event_eps,
            t3_uniforms,
            t3_eps,
            t5_uniforms,
        })
    }
}

/// Truncated-normal inverse-CDF draw and its derivatives with respect to
/// the untruncated mean and standard deviation.
fn trunc_normal_reparam(mu: f64, sd: f64, lo: f64, hi: f64, u: f64) -> (f64, f64, f64) {
    let a = (lo - mu) / sd;
    let b = (hi - mu) / sd;
    let mass = norm_interval_mass(a, b);
    let p = norm_cdf(a) + u * mass;
    let q = norm_cdf(-b) + (1.0 - u) * mass;
    let z = norm_quantile_pair(p, q);
    let y = mu + sd * z;
    if !(y > lo && y < hi) {
        return (y.clamp(lo, hi), 0.0, 0.0);
    }
    // φ(a)/φ(z) and φ(b)/φ(z) in log space.
    let ra = (0.5 * (z * z - a * a)).exp();
    let rb = (0.5 * (z * z - b * b)).exp();
    let (wa, wb) = ((1.0 - u) * ra, u * rb);
    let dy_dmu = 1.0 - wa - wb;
    let dy_dsd = z - (if a.is_finite() { wa * a } else { 0.0 }) - (if b.is_finite() { wb * b } else { 0.0 });
    (y, dy_dmu, dy_dsd)
}

/// Per-(component, dimension) truncation constants.
struct TruncConsts {
    log_norm: f64,
    dlogz_dmu: f64,
    dlogz_dsd: f64,
}

fn trunc_consts(mu: f64, sd: f64, lo: f64, hi: f64) -> TruncConsts {
    let a = (lo - mu) / sd;
    let b = (hi - mu) / sd;
    let z = norm_interval_mass(a, b);
    let log_z = z.ln();
    let ra = (norm_logpdf(a) - log_z).exp();
    let rb = (norm_logpdf(b) - log_z).exp();
    TruncConsts {
        log_norm: sd.ln() + log_z,
        dlogz_dmu: (ra - rb) / sd,
        dlogz_dsd: (a * ra - b * rb) / sd,
    }
}

pub struct Evaluation {
    pub breakdown: ElboBreakdown,
    pub mu: MuEstimate,
    pub gradient: Option<DVector<f64>>,
}

/// Everything about the objective that does not change during a fit.
pub struct Objective {
    gp: SparseGp,
    domain: BoxDomain,
    events_a: DMatrix<f64>,
    events_prior_var: DVector<f64>,
    prior_lambda: GammaVar,
    form: SurrogateForm,
}

/// Partial derivatives of `total` with respect to the scalar summaries.
struct Partials {
    u: f64,
    w: f64,
    g3: f64,
    h: f64,
    mean: f64,
    mean_x_log: f64,
    mean_log: f64,
}

impl Objective {
    pub fn new(state: &ModelState, events: &EventSet, form: SurrogateForm) -> Result<Self> {
        if events.domain() != &state.domain {
            return Err(Error::DomainMismatch("events and model state use different domains".into()));
        }
        if events.is_empty() {
            return Err(Error::invalid("the objective needs at least one event"));
        }
        let gp = state.sparse_gp()?;
        let (events_a, events_prior_var, _) = gp.conditional(events.points());
        Ok(Objective {
            gp,
            domain: state.domain.clone(),
            events_a,
            events_prior_var,
            prior_lambda: state.prior_lambda,
            form,
        })
    }

    pub fn gp(&self) -> &SparseGp {
        &self.gp
    }

    pub fn n_events(&self) -> usize {
        self.events_a.nrows()
    }

    pub fn form(&self) -> SurrogateForm {
        self.form
    }

    fn partials(&self, q: &GammaVar, mu: &MuEstimate, g3: f64, h: f64) -> Partials {
        let m = q.moments();
        let (c, e1) = (m.mean, m.mean_x_log);
        let (u, w) = (mu.u, mu.w);
        let n = self.n_events() as f64;
        let v = self.domain.volume();
        match self.form {
            SurrogateForm::Literal => Partials {
                u: c * (g3 + 1.0 - h),
                w: -e1 - 2.0 * c,
                g3: c * u,
                h: -c * u,
                mean: -v - w + u * g3 - (w - u) - h * u,
                mean_x_log: 1.0 - w,
                mean_log: n,
            },
            SurrogateForm::Consistent => Partials {
                u: c * (1.0 + g3 - h),
                w: -c,
                g3: c * u,
                h: -c * u,
                mean: -v - w + u + u * g3 - h * u,
                mean_x_log: 0.0,
                mean_log: n,
            },
        }
    }

    /// Objective value (and gradient with respect to the flat unconstrained
    /// parameters when `want_grad`) for fixed `noise`.
    pub fn evaluate(&self, state: &ModelState, noise: &ElboNoise, want_grad: bool) -> Evaluation {
        let layout = ParamLayout::of(state);
        let k = layout.k;
        let q_u = &state.q_u;
        let l = &q_u.chol;
        let mix = &state.mixture;
        let (s_count, dim) = (layout.s, layout.d);
        let kzz_inv = self.gp.kzz_inv();
        let kernel = self.gp.kernel();
        let z = self.gp.inducing().points();
        let inv_l2 = 1.0 / (kernel.lengthscale * kernel.lengthscale);

        // --- μ(u) functionals ---
        let n_u = noise.u_eps.nrows();
        let mut mus = Vec::with_capacity(n_u);
        let mut us = Vec::with_capacity(n_u);
        let mut sens = Vec::with_capacity(n_u);
        for i in 0..n_u {
            let eps = noise.u_eps.row(i).transpose();
            let u = &q_u.mean + l * &eps;
            let ux = &noise.xs_a * &u;
            let mut acc = 0.0;
            let s_vec = DVector::from_fn(ux.len(), |j, _| {
                let sn = sigmoid(-ux[j]);
                acc += sn;
                sn * (1.0 - sn)
            });
            mus.push(noise.xs.weight * acc);
            us.push(eps);
            sens.push(s_vec);
        }
        let mu = MuEstimate {
            u: mus.iter().sum::<f64>() / n_u as f64,
            w: mus.iter().map(|m| x_log_x(*m)).sum::<f64>() / n_u as f64,
            samples_u: n_u,
            samples_x: noise.xs.len(),
        };

        // --- data term ---
        let n_ev = self.n_events();
        let draws = noise.event_eps.ncols();
        let mut data = 0.0;
        let mut ev_stats = Vec::with_capacity(if want_grad { n_ev } else { 0 });
        for n in 0..n_ev {
            let a = self.events_a.row(n).transpose();
            let mean = a.dot(&q_u.mean);
            let w = l.tr_mul(&a);
            let sd = (self.events_prior_var[n] + w.norm_squared()).sqrt();
            let (mut val, mut gmean, mut gsd) = (0.0, 0.0, 0.0);
            for r in 0..draws {
                let e = noise.event_eps[(n, r)];
                let f = mean + sd * e;
                val += log_sigmoid(f);
                let sn = sigmoid(-f);
                gmean += sn;
                gsd += sn * e;
            }
            let inv = 1.0 / draws as f64;
            data += val * inv;
            if want_grad {
                ev_stats.push((a, gmean * inv, gsd * inv, sd));
            }
        }

        // --- mixture constants ---
        let consts: Vec<Vec<TruncConsts>> = (0..s_count)
            .map(|s| {
                (0..dim)
                    .map(|d| {
                        trunc_consts(
                            mix.means[(s, d)],
                            mix.stds[(s, d)],
                            self.domain.lower()[d],
                            self.domain.upper()[d],
                        )
                    })
                    .collect()
            })
            .collect();

        // --- T3 locations and f values ---
        struct YPoint {
            s: usize,
            y: Vec<f64>,
            dy_dmu: Vec<f64>,
            dy_dsd: Vec<f64>,
        }
        let draw_y = |s: usize, uni: &DMatrix<f64>, i: usize| {
            let mut y = vec![0.0; dim];
            let mut dy_dmu = vec![0.0; dim];
            let mut dy_dsd = vec![0.0; dim];
            for d in 0..dim {
                let (v, dm, ds) = trunc_normal_reparam(
                    mix.means[(s, d)],
                    mix.stds[(s, d)],
                    self.domain.lower()[d],
                    self.domain.upper()[d],
                    uni[(i, d)],
                );
                y[d] = v;
                dy_dmu[d] = dm;
                dy_dsd[d] = ds;
            }
            YPoint { s, y, dy_dmu, dy_dsd }
        };

        let mut t3_points = Vec::new();
        let mut t3_comp_mean = vec![0.0; s_count];
        let mut g3 = 0.0;
        for s in 0..s_count {
            let uni = &noise.t3_uniforms[s];
            let n3 = uni.nrows();
            let mut acc = 0.0;
            for i in 0..n3 {
                let p = draw_y(s, uni, i);
                let kvec = DVector::from_fn(k, |j, _| kernel.eval(&p.y, z.row(j).transpose().as_slice()));
                let a = kzz_inv * &kvec;
                let prior_raw = kernel.variance - kvec.dot(&a);
                let clamped = prior_raw < 0.0;
                let w = l.tr_mul(&a);
                let sd = (prior_raw.max(0.0) + w.norm_squared()).sqrt();
                let e = noise.t3_eps[s][i];
                let f = a.dot(&q_u.mean) + sd * e;
                let g = log_sigmoid(-f);
                acc += g;
                if want_grad {
                    t3_points.push((p, kvec, a, w, sd, e, f, clamped, n3));
                }
            }
            t3_comp_mean[s] = acc / n3 as f64;
            g3 += mix.weights[s] * t3_comp_mean[s];
        }

        // --- entropy term E_q[log q(y)] ---
        let log_q_parts = |y: &[f64]| -> Vec<f64> {
            (0..s_count)
                .map(|s| {
                    let mut t = mix.weights[s].ln();
                    for d in 0..dim {
                        let sd = mix.stds[(s, d)];
                        let tt = (y[d] - mix.means[(s, d)]) / sd;
                        t += -0.5 * tt * tt - LN_SQRT_2PI - consts[s][d].log_norm;
                    }
                    t
                })
                .collect()
        };
        let mut t5_points = Vec::new();
        let mut t5_comp_mean = vec![0.0; s_count];
        let mut h = 0.0;
        for s in 0..s_count {
            let uni = &noise.t5_uniforms[s];
            let n5 = uni.nrows();
            let mut acc = 0.0;
            for i in 0..n5 {
                let p = draw_y(s, uni, i);
                let parts = log_q_parts(&p.y);
                let lq = log_sum_exp(&parts);
                acc += lq;
                if want_grad {
                    let resp: Vec<f64> = parts.iter().map(|v| (v - lq).exp()).collect();
                    t5_points.push((p, resp, n5));
                }
            }
            t5_comp_mean[s] = acc / n5 as f64;
            h += mix.weights[s] * t5_comp_mean[s];
        }

        // --- assembly ---
        let kl_u = self.gp.kl(q_u);
        let q_lambda = &state.q_lambda;
        let kl_lambda = q_lambda.kl(&self.prior_lambda);
        let volume = self.domain.volume();
        let mut b = ElboBreakdown {
            data_term: data,
            t1: term_t1(q_lambda, &mu),
            t2_surrogate: term_t2(q_lambda, &mu, self.form),
            t3: term_t3(q_lambda, &mu, g3),
            t4_surrogate: term_t4(q_lambda, &mu, self.form),
            t5: term_t5(q_lambda, &mu, h),
            kl_u,
            kl_lambda,
            const_terms: const_terms(q_lambda, n_ev, volume),
            total: 0.0,
        };
        b.total = b.assembled();

        if !want_grad {
            return Evaluation {
                breakdown: b,
                mu,
                gradient: None,
            };
        }

        let pd = self.partials(q_lambda, &mu, g3, h);
        let mut grad = DVector::zeros(layout.len());
        let mut g_m = DVector::zeros(k);
        // Gradient w.r.t. the dense factor L.
        let mut g_l = DMatrix::zeros(k, k);
        // Σ gvar · a aᵀ, turned into 2·(Σ)·L at the end.
        let mut var_acc = DMatrix::zeros(k, k);

        // μ(u) block
        for i in 0..n_u {
            let mi = mus[i];
            let dw = if mi > 0.0 { mi.ln() + 1.0 } else { 0.0 };
            let gbar = (pd.u + pd.w * dw) / n_u as f64;
            if gbar == 0.0 {
                continue;
            }
            let g_u = noise.xs_a.tr_mul(&sens[i]) * (-noise.xs.weight * gbar);
            g_m += &g_u;
            g_l.ger(1.0, &g_u, &us[i], 1.0);
        }

        // data block
        for (a, gmean, gsd, sd) in &ev_stats {
            g_m.axpy(*gmean, a, 1.0);
            if *sd > 0.0 {
                var_acc.ger(gsd / (2.0 * sd), a, a, 1.0);
            }
        }

        // mixture gradients in constrained coordinates
        let mut g_pi = vec![0.0; s_count];
        let mut g_mu = DMatrix::zeros(s_count, dim);
        let mut g_sd = DMatrix::zeros(s_count, dim);
        let chain_y = |p: &YPoint, gy: &[f64], g_mu: &mut DMatrix<f64>, g_sd: &mut DMatrix<f64>| {
            for d in 0..dim {
                g_mu[(p.s, d)] += gy[d] * p.dy_dmu[d];
                g_sd[(p.s, d)] += gy[d] * p.dy_dsd[d];
            }
        };

        // T3 block
        let beta_m = kzz_inv * &q_u.mean;
        for s in 0..s_count {
            g_pi[s] += pd.g3 * t3_comp_mean[s];
        }
        for (p, kvec, a, w, sd, e, f, clamped, n3) in &t3_points {
            let adj = pd.g3 * mix.weights[p.s] / *n3 as f64;
            let dg_df = -sigmoid(*f);
            let gmean = adj * dg_df;
            let gsd = gmean * e;
            g_m.axpy(gmean, a, 1.0);
            let gvar = if *sd > 0.0 { gsd / (2.0 * sd) } else { 0.0 };
            var_acc.ger(gvar, a, a, 1.0);
            // d var / d k = 2 Kzz⁻¹ (S a − k), without the −k part when clamped.
            let sa = l * w;
            let mut dvar_dk = kzz_inv * &sa;
            if !clamped {
                dvar_dk -= a;
            }
            let gk = &beta_m * gmean + dvar_dk * (2.0 * gvar);
            let mut gy = vec![0.0; dim];
            for j in 0..k {
                let coef = gk[j] * kvec[j] * inv_l2;
                for d in 0..dim {
                    gy[d] += coef * (z[(j, d)] - p.y[d]);
                }
            }
            chain_y(p, &gy, &mut g_mu, &mut g_sd);
        }

        // T5 block
        for s in 0..s_count {
            g_pi[s] += pd.h * t5_comp_mean[s];
        }
        for (p, resp, n5) in &t5_points {
            let adj = pd.h * mix.weights[p.s] / *n5 as f64;
            let mut gy = vec![0.0; dim];
            for s2 in 0..s_count {
                let r = resp[s2] * adj;
                if r == 0.0 {
                    continue;
                }
                g_pi[s2] += r / mix.weights[s2];
                for d in 0..dim {
                    let sd = mix.stds[(s2, d)];
                    let t = (p.y[d] - mix.means[(s2, d)]) / sd;
                    gy[d] -= r * t / sd;
                    g_mu[(s2, d)] += r * (t / sd - consts[s2][d].dlogz_dmu);
                    g_sd[(s2, d)] += r * ((t * t - 1.0) / sd - consts[s2][d].dlogz_dsd);
                }
            }
            chain_y(p, &gy, &mut g_mu, &mut g_sd);
        }

        // KL(q(u) || p(u)) enters with a minus sign.
        let (kl_m, kl_l) = self.gp.kl_grad(q_u);
        g_m -= kl_m;
        g_l -= kl_l;
        g_l += (&var_acc * l) * 2.0;

        grad.rows_mut(layout.m(), k).copy_from(&g_m);
        for i in 0..k {
            for j in 0..=i {
                let v = if i == j { g_l[(i, i)] * l[(i, i)] } else { g_l[(i, j)] };
                grad[layout.chol_entry(i, j)] = v;
            }
        }

        // Gamma block
        let (alpha, beta) = (q_lambda.alpha, q_lambda.beta);
        let c = alpha / beta;
        let shifted = digamma(alpha + 1.0) - beta.ln();
        let de1_da = shifted / beta + c * trigamma(alpha + 1.0);
        let de1_db = -c * shifted / beta - c / beta;
        let (ap, bp) = (self.prior_lambda.alpha, self.prior_lambda.beta);
        let dkl_da = (alpha - ap) * trigamma(alpha) + bp / beta - 1.0;
        let dkl_db = ap / beta - alpha * bp / (beta * beta);
        let g_alpha = pd.mean / beta + pd.mean_x_log * de1_da + pd.mean_log * trigamma(alpha) - dkl_da;
        let g_beta = -pd.mean * c / beta + pd.mean_x_log * de1_db - pd.mean_log / beta - dkl_db;
        grad[layout.log_alpha()] = g_alpha * alpha;
        grad[layout.log_beta()] = g_beta * beta;

        // Mixture block
        let weighted: f64 = (0..s_count).map(|s| mix.weights[s] * g_pi[s]).sum();
        for s in 0..s_count.saturating_sub(1) {
            grad[layout.weight_logits() + s] = mix.weights[s] * (g_pi[s] - weighted);
        }
        for s in 0..s_count {
            for d in 0..dim {
                let side = self.domain.side(d);
                let frac = (mix.means[(s, d)] - self.domain.lower()[d]) / side;
                grad[layout.mean_logits() + s * dim + d] = g_mu[(s, d)] * side * frac * (1.0 - frac);
                grad[layout.log_stds() + s * dim + d] = g_sd[(s, d)] * mix.stds[(s, d)];
            }
        }

        Evaluation {
            breakdown: b,
            mu,
            gradient: Some(grad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::norm_pdf;

    #[test]
    fn reparam_derivatives_match_finite_differences() {
        let cases = [
            (0.3, 0.2, 0.0, 1.0, 0.37),
            (0.05, 0.5, 0.0, 1.0, 0.9),
            (4.0, 0.01, 0.0, 5.0, 0.02),
            (2.5, 30.0, 0.0, 5.0, 0.6),
        ];
        for (mu, sd, lo, hi, u) in cases {
            let (_, dmu, dsd) = trunc_normal_reparam(mu, sd, lo, hi, u);
            let h = 1e-6;
            let fd_mu = (trunc_normal_reparam(mu + h, sd, lo, hi, u).0
                - trunc_normal_reparam(mu - h, sd, lo, hi, u).0)
                / (2.0 * h);
            let hs = h * sd;
            let fd_sd = (trunc_normal_reparam(mu, sd + hs, lo, hi, u).0
                - trunc_normal_reparam(mu, sd - hs, lo, hi, u).0)
                / (2.0 * hs);
            assert!((dmu - fd_mu).abs() < 1e-5 * (1.0 + fd_mu.abs()), "{mu} {sd}: {dmu} vs {fd_mu}");
            assert!((dsd - fd_sd).abs() < 1e-5 * (1.0 + fd_sd.abs()), "{mu} {sd}: {dsd} vs {fd_sd}");
        }
    }

    #[test]
    fn truncation_constant_derivatives() {
        let (mu, sd, lo, hi) = (0.2, 0.4, 0.0, 1.0);
        let c = trunc_consts(mu, sd, lo, hi);
        let h = 1e-6;
        let ln_z = |m: f64, s: f64| norm_interval_mass((lo - m) / s, (hi - m) / s).ln();
        let fd_mu = (ln_z(mu + h, sd) - ln_z(mu - h, sd)) / (2.0 * h);
        let fd_sd = (ln_z(mu, sd + h) - ln_z(mu, sd - h)) / (2.0 * h);
        assert!((c.dlogz_dmu - fd_mu).abs() < 1e-7);
        assert!((c.dlogz_dsd - fd_sd).abs() < 1e-7);
        assert!(norm_pdf(0.0) > 0.39);
    }
}
