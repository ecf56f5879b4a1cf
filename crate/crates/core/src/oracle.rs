//! Brute-force references used to validate the surrogate objective: a
//! hierarchical Monte Carlo estimate of the exact ELBO and exact Poisson
//! series.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::elbo::ModelState;
use crate::error::{Error, Result};
use crate::metrics::poisson_draw;
use crate::sim::EventSet;
use crate::special::{ln_gamma, log_sigmoid, poisson_ln_pmf, sigmoid, LN_SQRT_2PI};

/// Refuse oracle runs whose expected thinned count exceeds this.
pub const MAX_ORACLE_EVENTS: f64 = 1e4;

/// Log density of `N(mean, chol cholᵀ)` at `x`.
pub fn mvn_ln_pdf(x: &DVector<f64>, mean: &DVector<f64>, chol: &DMatrix<f64>) -> f64 {
    let diff = x - mean;
    let w = chol
        .solve_lower_triangular(&diff)
        .expect("factor with a positive diagonal");
    let log_det: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
    -(x.len() as f64) * LN_SQRT_2PI - log_det - 0.5 * w.norm_squared()
}

/// `E[M log M]` for `M ~ Poisson(η)` by direct summation, plus a bound on
/// the probability mass left out.
pub fn poisson_m_log_m(eta: f64) -> Result<(f64, f64)> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("Poisson mean must be positive, got {eta}")));
    }
    let mut total = 0.0;
    let mut m: u64 = 1;
    loop {
        let p = poisson_ln_pmf(m, eta).exp();
        let mf = m as f64;
        total += p * mf * mf.ln();
        // Past the mode the pmf ratios are below η/(m+1), so the tail is
        // dominated by a geometric series.
        let ratio = eta / (mf + 1.0);
        if ratio < 1.0 {
            let tail = p * ratio / (1.0 - ratio);
            // Successive terms of the sum shrink by η ln(k+1) / (k ln k),
            // which decreases in k, so the remainder is geometric too.
            let term_ratio = eta * (mf + 1.0).ln() / (mf * mf.ln());
            let rest = if term_ratio < 1.0 {
                p * mf * mf.ln() * term_ratio / (1.0 - term_ratio)
            } else {
                f64::INFINITY
            };
            if tail < 1e-12 && rest < 1e-16 * total.max(1.0) {
                return Ok((total, tail));
            }
        }
        m += 1;
        if m > 100_000_000 {
            return Err(Error::ResourceGuard("Poisson series did not converge".into()));
        }
    }
}

/// `E[log M!]` for `M ~ Poisson(η)` by direct summation.
pub fn poisson_log_factorial(eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("Poisson mean must be positive, got {eta}")));
    }
    let mut total = 0.0;
    let mut m: u64 = 2;
    loop {
        let p = poisson_ln_pmf(m, eta).exp();
        total += p * ln_gamma(m as f64 + 1.0);
        let ratio = eta / (m as f64 + 1.0);
        if ratio < 1.0 && p < 1e-14 {
            return Ok(total);
        }
        m += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub mean_thinned: f64,
}

/// Hierarchical Monte Carlo estimate of `E_Q[log p(D, latents) − log Q]`,
/// drawing `λ*`, `u`, `M`, the thinned locations and `f` in turn and scoring
/// each draw with exact log densities (including `log N!` and `log M!`).
///
/// `μ(u)` is integrated on a midpoint grid with `grid_per_dim` points per
/// dimension, and `f` at each location is drawn from `p(f | u)`
/// independently; the objective is linear in per-location terms so this
/// does not change the expectation.
pub fn elbo_mc_oracle<R: Rng + ?Sized>(
    state: &ModelState,
    events: &EventSet,
    n_outer: usize,
    grid_per_dim: usize,
    rng: &mut R,
) -> Result<OracleEstimate> {
    if n_outer < 100 {
        return Err(Error::invalid("the oracle needs at least 100 outer samples"));
    }
    if events.domain() != &state.domain {
        return Err(Error::DomainMismatch("events and state use different domains".into()));
    }
    let volume = state.domain.volume();
    let q_l = &state.q_lambda;
    if q_l.mean() * volume > MAX_ORACLE_EVENTS {
        return Err(Error::ResourceGuard(format!(
            "expected thinned count up to {:.0} exceeds {MAX_ORACLE_EVENTS}",
            q_l.mean() * volume
        )));
    }
    let gp = state.sparse_gp()?;
    let grid = state.domain.grid(grid_per_dim)?;
    let (grid_a, _, _) = gp.conditional(&grid.points);
    let (ev_a, ev_var, _) = gp.conditional(events.points());
    let n = events.len();
    let ln_n_fact = ln_gamma(n as f64 + 1.0);
    let kzz_chol = gp.kzz_chol().l();
    let zero = DVector::zeros(gp.num_inducing());
    let mix = &state.mixture;

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut thinned_total = 0.0;
    for _ in 0..n_outer {
        let lambda = q_l.sample(rng);
        let u = state.q_u.sample(rng);
        let ux = &grid_a * &u;
        let mu = grid.weight * ux.iter().map(|v| sigmoid(-v)).sum::<f64>();
        let eta = lambda * mu;
        let m = poisson_draw(eta, rng);
        thinned_total += m as f64;
        let mf = m as f64;

        let mut v = (n as f64 + mf) * lambda.ln() - lambda * volume - ln_n_fact - ln_gamma(mf + 1.0);
        let ev_mean = &ev_a * &u;
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            v += log_sigmoid(ev_mean[i] + ev_var[i].sqrt() * e);
        }
        if m > 0 {
            let ys = mix.sample(m as usize, rng);
            let (ya, yvar, _) = gp.conditional(&ys);
            let y_mean = &ya * &u;
            for j in 0..m as usize {
                let e: f64 = rng.sample(StandardNormal);
                v += log_sigmoid(-(y_mean[j] + yvar[j].sqrt() * e));
                v -= mix.logpdf_unchecked(ys.row(j).transpose().as_slice());
            }
        }
        v += state.prior_lambda.ln_pdf(lambda) - q_l.ln_pdf(lambda);
        v += mvn_ln_pdf(&u, &zero, &kzz_chol) - mvn_ln_pdf(&u, &state.q_u.mean, &state.q_u.chol);
        v -= poisson_ln_pmf(m, eta);
        sum += v;
        sum_sq += v * v;
    }
    let nf = n_outer as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    Ok(OracleEstimate {
        estimate: mean,
        std_error: (var / nf).sqrt(),
        mean_thinned: thinned_total / nf,
    })
}
