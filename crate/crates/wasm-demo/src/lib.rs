//! Browser demo: simulate a synthetic dataset, fit it, and look at the
//! Poisson `E[M log M]` sandwich. Everything crosses the boundary as JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sigmoid_cox::experiment::{self, DataSource, ExperimentConfig};
use sigmoid_cox::oracle::poisson_m_log_m;
use sigmoid_cox::sim::Synthetic;
use sigmoid_cox::training::TrainConfig;

const CURVE_POINTS: usize = 300;

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub setting: String,
    pub lower: f64,
    pub upper: f64,
    pub events: Vec<f64>,
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub true_integral: f64,
}

#[derive(Debug, Serialize)]
pub struct FitResult {
    pub simulation: Simulation,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub elbo: Vec<f64>,
    pub lambda_star: f64,
}

#[derive(Debug, Serialize)]
pub struct Sandwich {
    pub eta: f64,
    pub lower: f64,
    pub exact: f64,
    pub upper: f64,
}

fn parse(setting: &str) -> Result<Synthetic, String> {
    setting.parse().map_err(|e: sigmoid_cox::error::Error| e.to_string())
}

pub fn simulate_inner(setting: &str, seed: u64) -> Result<Simulation, String> {
    let s = parse(setting)?;
    let events = experiment::simulate(s, seed).map_err(|e| e.to_string())?;
    let domain = s.domain();
    let grid = domain.grid(CURVE_POINTS).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = grid.points.column(0).iter().copied().collect();
    Ok(Simulation {
        setting: s.id().to_string(),
        lower: domain.lower()[0],
        upper: domain.upper()[0],
        events: events.points().column(0).iter().copied().collect(),
        truth: xs.iter().map(|&x| s.value(x)).collect(),
        grid: xs,
        true_integral: experiment::true_integral(s),
    })
}

/// Fit with the default pipeline settings but `iterations` steps, and
/// return the posterior mean intensity with ±1 sd on a grid.
pub fn fit_inner(setting: &str, seed: u64, iterations: usize) -> Result<FitResult, String> {
    let s = parse(setting)?;
    let simulation = simulate_inner(setting, seed)?;
    let events = experiment::simulate(s, seed).map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig {
        data: DataSource::Synthetic(s),
        ..Default::default()
    };
    let resolved = cfg.resolve().map_err(|e| e.to_string())?;
    let train = TrainConfig {
        iterations,
        seed,
        ..resolved.train
    };
    let trace = sigmoid_cox::training::fit(&events, &resolved.domain, resolved.kernel, resolved.inducing, &train)
        .map_err(|e| e.to_string())?;
    let curve = experiment::intensity_curve(&trace.state, CURVE_POINTS, 300, None, seed).map_err(|e| e.to_string())?;
    let step = (trace.rows.len() / 200).max(1);
    Ok(FitResult {
        simulation,
        mean: curve.mean,
        sd: curve.sd,
        elbo: trace.rows.iter().step_by(step).map(|r| r.elbo).collect(),
        lambda_star: trace.state.q_lambda.mean(),
    })
}

pub fn sandwich_inner(eta: f64) -> Result<Sandwich, String> {
    let (exact, _) = poisson_m_log_m(eta).map_err(|e| e.to_string())?;
    Ok(Sandwich {
        eta,
        lower: eta * eta.ln(),
        exact,
        upper: eta * (eta + 1.0).ln(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map(|v| serde_json::to_string(&v).expect("plain data serializes"))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(setting: &str, seed: u32) -> Result<String, JsError> {
    to_js(simulate_inner(setting, seed as u64))
}

#[wasm_bindgen]
pub fn fit(setting: &str, seed: u32, iterations: u32) -> Result<String, JsError> {
    to_js(fit_inner(setting, seed as u64, iterations as usize))
}

#[wasm_bindgen]
pub fn sandwich(eta: f64) -> Result<String, JsError> {
    to_js(sandwich_inner(eta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_matches_setting() {
        let s = simulate_inner("2", 3).unwrap();
        assert_eq!(s.grid.len(), CURVE_POINTS);
        assert!(s.events.iter().all(|&x| (0.0..=5.0).contains(&x)));
        assert!((s.true_integral - 32.64).abs() < 0.01);
    }

    #[test]
    fn unknown_setting_is_an_error() {
        assert!(simulate_inner("7", 0).is_err());
    }

    #[test]
    fn short_fit_gives_positive_curve() {
        let f = fit_inner("1", 2, 50).unwrap();
        assert_eq!(f.mean.len(), CURVE_POINTS);
        assert!(f.mean.iter().zip(&f.sd).all(|(m, s)| *m > 0.0 && *s >= 0.0));
        assert_eq!(f.elbo.len(), 50);
    }

    #[test]
    fn sandwich_orders() {
        for eta in [0.5, 3.0, 40.0] {
            let s = sandwich_inner(eta).unwrap();
            assert!(s.lower <= s.exact && s.exact <= s.upper);
        }
        assert!(sandwich_inner(-1.0).is_err());
    }
}
