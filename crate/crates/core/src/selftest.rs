//! Fast invariant checks runnable from the command line.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::domain::BoxDomain;
use crate::elbo::{McConfig, ModelState, SurrogateForm};
use crate::gp::{GaussianVar, InducingSet, KernelParams};
use crate::metrics::{empirical_coverage, CountDistribution, CountKind, DEFAULT_LEVELS};
use crate::objective::{ElboNoise, Objective};
use crate::oracle::poisson_m_log_m;
use crate::sim::{sample_thinned, EventLabel, EventSet, Synthetic};
use crate::training::FlatParams;
use crate::variational::{GammaVar, TruncMixture};

/// A random 1-D state on `[0, 10]` with `k` inducing points, `s` mixture
/// components and `n_events` uniform events.
pub fn random_state(rng: &mut ChaCha8Rng, k: usize, s: usize, n_events: usize) -> (ModelState, EventSet) {
    let domain = BoxDomain::interval(0.0, 10.0).expect("static domain");
    let z = DMatrix::from_fn(k, 1, |i, _| 10.0 * (i as f64 + 0.5) / k as f64 + rng.random_range(-0.5..0.5));
    let kernel = KernelParams::new(rng.random_range(1.5..4.0), rng.random_range(0.5..2.0)).expect("positive");
    let mean = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let chol = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.3 + rng.random::<f64>()
        } else if i > j {
            0.3 * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    });
    let mut weights: Vec<f64> = (0..s).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let means = DMatrix::from_fn(s, 1, |_, _| rng.random_range(1.0..9.0));
    let stds = DMatrix::from_fn(s, 1, |_, _| rng.random_range(0.8..4.0));
    let events = DMatrix::from_fn(n_events, 1, |_, _| rng.random_range(0.0..10.0));
    let prior = GammaVar::prior_for(&domain, n_events).expect("positive count");
    let state = ModelState {
        q_u: GaussianVar::new(mean, chol).expect("positive diagonal"),
        q_lambda: GammaVar::new(rng.random_range(2.0..8.0), rng.random_range(2.0..6.0)).expect("positive"),
        mixture: TruncMixture::new(weights, means, stds, domain.clone()).expect("valid mixture"),
        kernel,
        inducing: InducingSet::new(z).expect("distinct points"),
        prior_lambda: prior,
        domain: domain.clone(),
    };
    let events = EventSet::new(events, domain, EventLabel::Observed).expect("inside domain");
    (state, events)
}

/// Largest per-coordinate relative error between the analytic gradient and
/// central differences with step `h`, sharing one noise draw.
pub fn max_fd_error(state: &ModelState, events: &EventSet, form: SurrogateForm, mc: &McConfig, h: f64, rng: &mut ChaCha8Rng) -> f64 {
    let obj = Objective::new(state, events, form).expect("valid state");
    let noise = ElboNoise::draw(mc, &obj, state.mixture.components(), rng).expect("valid config");
    let packed = FlatParams::pack(state);
    let value = |v: &DVector<f64>| {
        let p = FlatParams {
            values: v.clone(),
            layout: packed.layout,
        };
        obj.evaluate(&p.unpack(state).expect("finite"), &noise, false).breakdown.total
    };
    let base = packed.unpack(state).expect("finite");
    let grad = obj.evaluate(&base, &noise, true).gradient.expect("requested");
    let mut worst: f64 = 0.0;
    for i in 0..packed.values.len() {
        let mut up = packed.values.clone();
        up[i] += h;
        let mut dn = packed.values.clone();
        dn[i] -= h;
        let fd = (value(&up) - value(&dn)) / (2.0 * h);
        worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-4));
    }
    worst
}

pub fn small_mc() -> McConfig {
    McConfig {
        mu_u_samples: 3,
        mu_x_points: 50,
        t3_pairs: 20,
        entropy_samples: 20,
        data_draws: 4,
        fixed_grid: false,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn run(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut ok = true;
    for eta in [0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 100.0] {
        let (v, _) = poisson_m_log_m(eta).expect("positive mean");
        ok &= eta * eta.ln() <= v && v <= eta * (eta + 1.0).ln();
    }
    out.push(check("stirling_sandwich", ok, "η log η ≤ E[M log M] ≤ η log(η+1)".into()));

    let g = GammaVar::new(3.0, 0.7).expect("positive");
    let (state, events) = random_state(&mut rng, 3, 2, 8);
    let gp = state.sparse_gp().expect("valid state");
    let kl_u = gp.kl(&gp.prior());
    let kl_g = g.kl(&g);
    out.push(check(
        "kl_identities",
        kl_u.abs() <= 1e-10 && kl_g.abs() <= 1e-10,
        format!("KL(p,p) = {kl_u:.1e}, KL(q,q) = {kl_g:.1e}"),
    ));

    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let (s, e) = random_state(&mut rng, 1 + i % 3, 1 + i % 2, 8);
        worst = worst.max(max_fd_error(&s, &e, SurrogateForm::Consistent, &small_mc(), 1e-4, &mut rng));
    }
    out.push(check("gradient_fd", worst <= 1e-3, format!("max relative error {worst:.2e}")));

    let packed = FlatParams::pack(&state);
    let back = FlatParams::pack(&packed.unpack(&state).expect("finite"));
    let rt = (&back.values - &packed.values).amax() / packed.values.amax().max(1.0);
    out.push(check("pack_round_trip", rt <= 1e-12, format!("relative error {rt:.1e}")));

    let s2 = Synthetic::Two;
    let reps = 2000;
    let mut total = 0.0;
    for _ in 0..reps {
        total += sample_thinned(&s2.intensity(), &s2.domain(), &mut rng).expect("small").0.len() as f64;
    }
    let mean = total / reps as f64;
    let target = crate::experiment::true_integral(s2);
    let se = (target / reps as f64).sqrt();
    out.push(check(
        "thinning_mean",
        (mean - target).abs() <= 3.0 * se,
        format!("mean {mean:.3} vs ∫λ₂ = {target:.3} (3 se = {:.3})", 3.0 * se),
    ));

    let mut mono = true;
    for _ in 0..200 {
        let rate = rng.random_range(1.0..50.0);
        let samples: Vec<u64> = (0..150).map(|_| crate::metrics::poisson_draw(rate, &mut rng)).collect();
        let dist = CountDistribution::new(samples, CountKind::InSample).expect("non-empty");
        let ec = empirical_coverage(&dist, crate::metrics::poisson_draw(rate, &mut rng), &DEFAULT_LEVELS).expect("valid levels");
        let v: Vec<f64> = ec.values().cloned().collect();
        mono &= v.windows(2).all(|w| w[0] <= w[1]);
    }
    out.push(check("coverage_monotone", mono, "nested central intervals".into()));

    let d = BoxDomain::new(vec![0.0, -1.0], vec![2.0, 3.0]).expect("valid box");
    let grid = d.grid(7).expect("small grid");
    let vol = grid.integrate(|_| 1.0);
    out.push(check("quadrature_volume", (vol - 8.0).abs() < 1e-12, format!("∫1 = {vol}")));

    let _ = events;
    out
}
