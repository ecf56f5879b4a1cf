//! Ground-truth simulation of Poisson processes: homogeneous sampling,
//! thinning against an upper bound, superposition, and draws from the
//! sigmoidal Gaussian Cox process itself.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::gp::{chol_with_jitter, KernelParams};
use crate::special::sigmoid;

/// Largest expected candidate count a simulation will attempt.
pub const MAX_EXPECTED_EVENTS: f64 = 1e7;

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A nonnegative intensity with a known upper bound on its domain.
#[derive(Clone)]
pub struct IntensityFn {
    evaluator: Evaluator,
    upper_bound: f64,
    name: String,
}

impl fmt::Debug for IntensityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntensityFn")
            .field("name", &self.name)
            .field("upper_bound", &self.upper_bound)
            .finish()
    }
}

impl IntensityFn {
    /// Builds the intensity and spot-checks `0 <= λ(x) <= upper_bound` on a
    /// lattice of about 10⁴ points of `domain`.
    pub fn new<F>(name: impl Into<String>, upper_bound: f64, domain: &BoxDomain, evaluator: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        if !(upper_bound > 0.0 && upper_bound.is_finite()) {
            return Err(Error::invalid(format!("{name}: upper bound must be positive")));
        }
        let per_dim = (1e4f64.powf(1.0 / domain.dim() as f64)).ceil() as usize;
        let grid = domain.grid(per_dim)?;
        for i in 0..grid.len() {
            let x = grid.point(i);
            let v = evaluator(&x);
            if !(0.0..=upper_bound * (1.0 + 1e-12)).contains(&v) {
                return Err(Error::invalid(format!(
                    "{name}: λ({x:?}) = {v} is outside [0, {upper_bound}]"
                )));
            }
        }
        Ok(IntensityFn {
            evaluator: Arc::new(evaluator),
            upper_bound,
            name,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// The four one-dimensional benchmark intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Synthetic {
    /// `2 exp(−1/15) + exp(−((x − 15)/10)²)` on `[0, 50]`, constant first term.
    #[serde(rename = "1")]
    One,
    /// `2 exp(−x/15) + exp(−((x − 15)/10)²)` on `[0, 50]`.
    #[serde(rename = "1a")]
    OneA,
    /// `5 sin(x²) + 6` on `[0, 5]`.
    #[serde(rename = "2")]
    Two,
    /// Piecewise linear through (0,20), (25,3), (50,1), (75,2.5), (100,3).
    #[serde(rename = "3")]
    Three,
}

const PIECEWISE_KNOTS: [(f64, f64); 5] = [(0.0, 20.0), (25.0, 3.0), (50.0, 1.0), (75.0, 2.5), (100.0, 3.0)];

fn piecewise(x: f64) -> f64 {
    let knots = &PIECEWISE_KNOTS;
    if x <= knots[0].0 {
        return knots[0].1;
    }
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    knots[knots.len() - 1].1
}

impl Synthetic {
    pub const ALL: [Synthetic; 4] = [Synthetic::One, Synthetic::OneA, Synthetic::Two, Synthetic::Three];

    pub fn id(&self) -> &'static str {
        match self {
            Synthetic::One => "1",
            Synthetic::OneA => "1a",
            Synthetic::Two => "2",
            Synthetic::Three => "3",
        }
    }

    pub fn domain(&self) -> BoxDomain {
        let hi = match self {
            Synthetic::One | Synthetic::OneA => 50.0,
            Synthetic::Two => 5.0,
            Synthetic::Three => 100.0,
        };
        BoxDomain::interval(0.0, hi).expect("static domain")
    }

    /// Kernel hyperparameters `(lengthscale, variance)` used for this setting.
    pub fn kernel(&self) -> KernelParams {
        let l = match self {
            Synthetic::One | Synthetic::OneA => 10.0,
            Synthetic::Two => 0.25,
            Synthetic::Three => 15.0,
        };
        KernelParams { lengthscale: l, variance: 1.0 }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Synthetic::One => 2.0 * (-1.0f64 / 15.0).exp() + (-((x - 15.0) / 10.0).powi(2)).exp(),
            Synthetic::OneA => 2.0 * (-x / 15.0).exp() + (-((x - 15.0) / 10.0).powi(2)).exp(),
            Synthetic::Two => 5.0 * (x * x).sin() + 6.0,
            Synthetic::Three => piecewise(x),
        }
    }

    pub fn upper_bound(&self) -> f64 {
        match self {
            Synthetic::One => 2.0 * (-1.0f64 / 15.0).exp() + 1.0,
            Synthetic::OneA => 3.0,
            Synthetic::Two => 11.0,
            Synthetic::Three => 20.0,
        }
    }

    pub fn intensity(&self) -> IntensityFn {
        let s = *self;
        IntensityFn::new(format!("lambda{}", self.id()), self.upper_bound(), &self.domain(), move |x| {
            s.value(x[0])
        })
        .expect("synthetic intensities respect their bounds")
    }
}

impl FromStr for Synthetic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Synthetic::ALL
            .into_iter()
            .find(|v| v.id() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown synthetic setting {s:?} (expected 1, 1a, 2 or 3)")))
    }
}

impl fmt::Display for Synthetic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventLabel {
    Observed,
    Thinned,
    Simulated,
}

/// Events inside a domain, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSet {
    points: DMatrix<f64>,
    domain: BoxDomain,
    pub label: EventLabel,
}

impl EventSet {
    pub fn new(points: DMatrix<f64>, domain: BoxDomain, label: EventLabel) -> Result<Self> {
        if points.ncols() != domain.dim() && points.nrows() > 0 {
            return Err(Error::DomainMismatch(format!(
                "events have {} columns but the domain has {} dimensions",
                points.ncols(),
                domain.dim()
            )));
        }
        let points = if points.nrows() == 0 {
            DMatrix::zeros(0, domain.dim())
        } else {
            points
        };
        for i in 0..points.nrows() {
            let x: Vec<f64> = points.row(i).iter().copied().collect();
            if !domain.contains(&x) {
                return Err(Error::Data(format!("event {i} at {x:?} lies outside the domain")));
            }
        }
        Ok(EventSet { points, domain, label })
    }

    pub fn empty(domain: BoxDomain, label: EventLabel) -> Self {
        EventSet {
            points: DMatrix::zeros(0, domain.dim()),
            domain,
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    fn from_rows(rows: Vec<Vec<f64>>, domain: &BoxDomain, label: EventLabel) -> Self {
        let dim = domain.dim();
        let points = DMatrix::from_fn(rows.len(), dim, |i, d| rows[i][d]);
        EventSet {
            points,
            domain: domain.clone(),
            label,
        }
    }
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !(mean.is_finite()) || mean > MAX_EXPECTED_EVENTS {
        return Err(Error::ResourceGuard(format!(
            "expected count {mean:e} exceeds {MAX_EXPECTED_EVENTS:e}"
        )));
    }
    if mean <= 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(rng.sample::<f64, _>(dist) as u64)
}

fn uniform_rows<R: Rng + ?Sized>(domain: &BoxDomain, n: u64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..domain.dim())
                .map(|d| domain.lower()[d] + domain.side(d) * rng.random::<f64>())
                .collect()
        })
        .collect()
}

/// Homogeneous process: `N ~ Poisson(rate · V)` uniform locations.
pub fn sample_homogeneous<R: Rng + ?Sized>(rate: f64, domain: &BoxDomain, rng: &mut R) -> Result<EventSet> {
    if !(rate > 0.0) {
        return Err(Error::invalid(format!("rate must be positive, got {rate}")));
    }
    let n = poisson_count(rate * domain.volume(), rng)?;
    Ok(EventSet::from_rows(uniform_rows(domain, n, rng), domain, EventLabel::Simulated))
}

/// Thinning of a homogeneous process at the intensity's upper bound; returns
/// `(kept, thinned)`.
pub fn sample_thinned<R: Rng + ?Sized>(
    intensity: &IntensityFn,
    domain: &BoxDomain,
    rng: &mut R,
) -> Result<(EventSet, EventSet)> {
    let candidates = sample_homogeneous(intensity.upper_bound(), domain, rng)?;
    let mut kept = Vec::new();
    let mut thinned = Vec::new();
    for i in 0..candidates.len() {
        let x = candidates.point(i);
        let accept = intensity.eval(&x) / intensity.upper_bound();
        if rng.random::<f64>() < accept {
            kept.push(x);
        } else {
            thinned.push(x);
        }
    }
    Ok((
        EventSet::from_rows(kept, domain, EventLabel::Observed),
        EventSet::from_rows(thinned, domain, EventLabel::Thinned),
    ))
}

/// Union of two event sets on the same domain.
pub fn superpose(a: &EventSet, b: &EventSet) -> Result<EventSet> {
    if a.domain != b.domain {
        return Err(Error::DomainMismatch("cannot superpose events from different domains".into()));
    }
    let dim = a.domain.dim();
    let n = a.len() + b.len();
    let points = DMatrix::from_fn(n, dim, |i, d| {
        if i < a.len() {
            a.points[(i, d)]
        } else {
            b.points[(i - a.len(), d)]
        }
    });
    Ok(EventSet {
        points,
        domain: a.domain.clone(),
        label: EventLabel::Simulated,
    })
}

/// Draw from the sigmoidal Cox process: candidates at rate `λ*`, each kept
/// with probability `σ(f(x))` where `f_sampler` evaluates one function draw
/// at all candidate locations. Returns `(observed, thinned)`.
pub fn sgcp_generate<R, F>(
    lambda_star: f64,
    mut f_sampler: F,
    domain: &BoxDomain,
    rng: &mut R,
) -> Result<(EventSet, EventSet)>
where
    R: Rng + ?Sized,
    F: FnMut(&DMatrix<f64>, &mut R) -> Result<DVector<f64>>,
{
    let candidates = sample_homogeneous(lambda_star, domain, rng)?;
    let f = f_sampler(candidates.points(), rng)?;
    let mut observed = Vec::new();
    let mut thinned = Vec::new();
    for i in 0..candidates.len() {
        let x = candidates.point(i);
        if rng.random::<f64>() < sigmoid(f[i]) {
            observed.push(x);
        } else {
            thinned.push(x);
        }
    }
    Ok((
        EventSet::from_rows(observed, domain, EventLabel::Observed),
        EventSet::from_rows(thinned, domain, EventLabel::Thinned),
    ))
}

/// Joint draw of a zero-mean GP with kernel `kernel` at the rows of `points`.
pub fn gp_prior_draw<R: Rng + ?Sized>(kernel: &KernelParams, points: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if points.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let k = kernel.gram(points, points);
    let (chol, _) = chol_with_jitter(&k)?;
    let eps = DVector::from_fn(points.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(chol.l() * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn synthetic_values() {
        assert_eq!(Synthetic::Two.value(0.0), 6.0);
        assert_eq!(Synthetic::Three.value(0.0), 20.0);
        assert_eq!(Synthetic::Three.value(50.0), 1.0);
        assert!((Synthetic::Three.value(37.5) - 2.0).abs() < 1e-15);
        let peak = 2.0 * (-1.0f64 / 15.0).exp() + 1.0;
        assert!((Synthetic::One.value(15.0) - peak).abs() < 1e-15);
        assert!((peak - 2.871_014).abs() < 1e-6);
        assert!("7".parse::<Synthetic>().is_err());
        assert_eq!("1a".parse::<Synthetic>().unwrap(), Synthetic::OneA);
        for s in Synthetic::ALL {
            let f = s.intensity();
            assert_eq!(f.upper_bound(), s.upper_bound());
        }
    }

    #[test]
    fn bound_violation_is_rejected() {
        let dom = BoxDomain::interval(0.0, 1.0).unwrap();
        assert!(IntensityFn::new("bad", 1.0, &dom, |x| 2.0 * x[0]).is_err());
        assert!(IntensityFn::new("neg", 1.0, &dom, |x| x[0] - 0.5).is_err());
    }

    #[test]
    fn tiny_rate_is_empty() {
        let dom = BoxDomain::interval(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty = (0..100).filter(|_| sample_homogeneous(1e-9, &dom, &mut rng).unwrap().is_empty()).count();
        assert!(empty >= 99);
        assert!(sample_homogeneous(0.0, &dom, &mut rng).is_err());
        assert!(matches!(
            sample_homogeneous(1e8, &dom, &mut rng),
            Err(Error::ResourceGuard(_))
        ));
    }

    #[test]
    fn homogeneous_determinism_and_containment() {
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![2.0, 3.0]).unwrap();
        let a = sample_homogeneous(5.0, &dom, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_homogeneous(5.0, &dom, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!((0..a.len()).all(|i| dom.contains(&a.point(i))));
    }

    #[test]
    fn thinning_at_the_bound_keeps_everything() {
        let dom = BoxDomain::interval(0.0, 10.0).unwrap();
        let flat = IntensityFn::new("flat", 3.0, &dom, |_| 3.0).unwrap();
        let (kept, thinned) = sample_thinned(&flat, &dom, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(thinned.is_empty());
        assert!(!kept.is_empty());
    }

    #[test]
    fn thinning_partitions_candidates() {
        let s = Synthetic::Two;
        let dom = s.domain();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (kept, thinned) = sample_thinned(&s.intensity(), &dom, &mut rng).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(12);
        let candidates = sample_homogeneous(s.upper_bound(), &dom, &mut rng2).unwrap();
        assert_eq!(kept.len() + thinned.len(), candidates.len());
        let mut all: Vec<f64> = superpose(&kept, &thinned).unwrap().points().iter().copied().collect();
        let mut cand: Vec<f64> = candidates.points().iter().copied().collect();
        all.sort_by(f64::total_cmp);
        cand.sort_by(f64::total_cmp);
        assert_eq!(all, cand);
    }

    #[test]
    fn superpose_rules() {
        let dom = BoxDomain::interval(0.0, 10.0).unwrap();
        let x = sample_homogeneous(2.0, &dom, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let empty = EventSet::empty(dom.clone(), EventLabel::Observed);
        let s = superpose(&empty, &x).unwrap();
        assert_eq!(s.points(), x.points());
        assert_eq!(s.label, EventLabel::Simulated);
        let y = sample_homogeneous(1.0, &dom, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(superpose(&x, &y).unwrap().len(), x.len() + y.len());
        let other = EventSet::empty(BoxDomain::interval(0.0, 11.0).unwrap(), EventLabel::Observed);
        assert!(superpose(&x, &other).is_err());
    }

    #[test]
    fn sgcp_infinite_f_keeps_all() {
        let dom = BoxDomain::interval(0.0, 10.0).unwrap();
        let (obs, thin) = sgcp_generate(
            3.0,
            |pts: &DMatrix<f64>, _: &mut ChaCha8Rng| Ok(DVector::from_element(pts.nrows(), f64::INFINITY)),
            &dom,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert!(thin.is_empty());
        assert!(!obs.is_empty());
    }

    #[test]
    fn events_outside_domain_rejected() {
        let dom = BoxDomain::interval(0.0, 1.0).unwrap();
        let pts = DMatrix::from_column_slice(2, 1, &[0.5, 1.5]);
        assert!(matches!(EventSet::new(pts, dom, EventLabel::Observed), Err(Error::Data(_))));
    }
}
