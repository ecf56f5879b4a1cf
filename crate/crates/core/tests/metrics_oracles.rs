mod common;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sigmoid_cox::domain::BoxDomain;
use sigmoid_cox::elbo::ModelState;
use sigmoid_cox::gp::{GaussianVar, InducingSet, KernelParams};
use sigmoid_cox::metrics::{
    count_distribution, l2_distance, nlpl, sample_intensity, test_loglik, CountKind, PathSampling,
};
use sigmoid_cox::sim::{EventLabel, EventSet, IntensityFn};
use sigmoid_cox::variational::GammaVar;

/// A state whose intensity is `c` everywhere (`f ≈ +40`) or `0` everywhere
/// (`f ≈ −40`), with `λ*` a near point mass at `c`.
fn constant_state(domain: BoxDomain, c: f64, on: bool) -> ModelState {
    let lo = domain.lower()[0];
    let hi = domain.upper()[0];
    let k = 12;
    let z = DMatrix::from_fn(k, 1, |i, _| lo + (hi - lo) * i as f64 / (k - 1) as f64);
    // Small variance keeps q(f) tight between inducing points.
    let kernel = KernelParams::new((hi - lo) / 4.0, 1e-8).unwrap();
    let level = if on { 40.0 } else { -40.0 };
    let q_u = GaussianVar::new(DVector::from_element(k, level), DMatrix::identity(k, k) * 1e-9).unwrap();
    let mut s = ModelState::initial(domain, kernel, InducingSet::new(z).unwrap(), 10, 1).unwrap();
    s.q_u = q_u;
    s.q_lambda = GammaVar::new(1e12, 1e12 / c).unwrap();
    s
}

fn points(xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(xs.len(), 1, xs)
}

#[test]
fn l2_of_matching_constant_is_zero() {
    let d = BoxDomain::interval(0.0, 10.0).unwrap();
    let state = constant_state(d.clone(), 3.0, true);
    let truth = IntensityFn::new("three", 3.0, &d, |_| 3.0).unwrap();
    let quad = d.grid(200).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let l2 = l2_distance(&truth, &state, &quad, 500, &mut rng).unwrap();
    assert!(l2.abs() <= 1e-2, "{l2}");
}

#[test]
fn l2_unit_box() {
    let d = BoxDomain::interval(0.0, 1.0).unwrap();
    let state = constant_state(d.clone(), 2.0, false);
    let truth = IntensityFn::new("one", 1.0, &d, |_| 1.0).unwrap();
    let quad = d.grid(100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let l2 = l2_distance(&truth, &state, &quad, 500, &mut rng).unwrap();
    assert!((l2 - 1.0).abs() <= 1e-6, "{l2}");
}

#[test]
fn test_loglik_of_constant_intensity() {
    let d = BoxDomain::interval(0.0, 1.0).unwrap();
    let quad = d.grid(50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Empty test set: −cV.
    let state = constant_state(d.clone(), 2.5, true);
    let empty = EventSet::empty(d.clone(), EventLabel::Observed);
    let v = test_loglik(&state, &empty, &quad, 100, &mut rng).unwrap().value;
    assert!((v + 2.5).abs() < 1e-5, "{v}");
    // One point: −c + log c, maximal at c = 1.
    let one = EventSet::new(points(&[0.4]), d.clone(), EventLabel::Observed).unwrap();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for c in [0.5, 0.8, 1.0, 1.25, 2.0] {
        let state = constant_state(d.clone(), c, true);
        let v = test_loglik(&state, &one, &quad, 100, &mut rng).unwrap().value;
        assert!((v - (-c + f64::ln(c))).abs() < 1e-5, "c = {c}: {v}");
        if v > best.0 {
            best = (v, c);
        }
    }
    assert_eq!(best.1, 1.0);
    assert!((best.0 + 1.0).abs() < 1e-5);
}

#[test]
fn test_loglik_decomposes_for_deterministic_intensity() {
    let d = BoxDomain::interval(0.0, 4.0).unwrap();
    let c = 1.7;
    let state = constant_state(d.clone(), c, true);
    let quad = d.grid(80).unwrap();
    let xs = [0.1, 0.9, 2.2, 3.95];
    let ev = EventSet::new(points(&xs), d, EventLabel::Observed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = test_loglik(&state, &ev, &quad, 20, &mut rng).unwrap().value;
    let expect = -c * 4.0 + xs.len() as f64 * c.ln();
    assert!((v - expect).abs() < 1e-5, "{v} vs {expect}");
}

#[test]
fn counts_at_rate_one_hundred() {
    let d = BoxDomain::interval(0.0, 10.0).unwrap();
    let state = constant_state(d.clone(), 10.0, true);
    let quad = d.grid(50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let dist = count_distribution(&state, &quad, n, CountKind::InSample, None, &mut rng).unwrap();
    let m = dist.mean();
    assert!((m - 100.0).abs() <= 3.0 * 10.0 / (n as f64).sqrt(), "{m}");
}

#[test]
fn zero_shift_rescale_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (state, _) = common::random_state(&mut rng, 3, 2, 10);
    let quad = state.domain.grid(100).unwrap();
    let a = count_distribution(&state, &quad, 500, CountKind::OutOfSample, None, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = count_distribution(&state, &quad, 500, CountKind::OutOfSample, Some((17, 17)), &mut ChaCha8Rng::seed_from_u64(9))
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn nlpl_is_bounded_by_the_best_poisson_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [0u64, 1, 5, 30] {
        let (state, _) = common::random_state(&mut rng, 3, 2, 10);
        let quad = state.domain.grid(100).unwrap();
        let v = nlpl(&state, n, &quad, 1000, &mut rng).unwrap();
        // −log Poisson(n | n), with 0 log 0 = 0.
        let floor = if n == 0 {
            0.0
        } else {
            let nf = n as f64;
            nf - nf * nf.ln() + (1..=n).map(|k| (k as f64).ln()).sum::<f64>()
        };
        assert!(v >= floor - 1e-9, "n = {n}: {v} < {floor}");
    }
}

#[test]
fn diagonal_paths_match_joint_paths_in_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let (state, _) = common::random_state(&mut rng, 3, 2, 10);
        let quad = state.domain.grid(200).unwrap();
        let draws = 4000;
        let diag = sample_intensity(&state, &quad, None, draws, PathSampling::Diagonal, &mut rng).unwrap();
        let joint = sample_intensity(&state, &quad, None, draws, PathSampling::Joint, &mut rng).unwrap();
        let stats = |xs: Vec<f64>| {
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
        };
        let (md, vd) = stats(diag.integrals());
        let (mj, vj) = stats(joint.integrals());
        let se = ((vd + vj) / draws as f64).sqrt();
        assert!((md - mj).abs() <= 4.0 * se, "means {md} vs {mj} (se {se})");
        // Diagonal paths only drop within-path correlation, so the integral
        // spread can shrink but not grow beyond the λ* contribution.
        assert!(vd <= vj * 1.1 + 1e-9, "diag var {vd} vs joint {vj}");
    }
}
