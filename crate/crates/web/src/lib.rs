//! Browser bindings for the equilibrium lab: a price fan, a Picard trace and a
//! risk-aversion sweep. Every entry point takes and returns JSON strings, so the
//! same functions are tested natively.

use impact_bsde::bsde::{solve_picard, PicardSettings};
use impact_bsde::norms::{bmo_norm, h_bmo_norm};
use impact_bsde::pricer::price_equilibrium;
use impact_bsde::scenario::{Instance, MarketConfig};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Largest lattice the page may request; keeps the tab responsive.
pub const MAX_DEMO_STEPS: usize = 14;

fn instance(config_json: &str) -> Result<Instance, String> {
    let config: MarketConfig = serde_json::from_str(config_json).map_err(|e| format!("config: {e}"))?;
    if config.num_steps > MAX_DEMO_STEPS {
        return Err(format!("num_steps is capped at {MAX_DEMO_STEPS} in the browser"));
    }
    Instance::from_config(&config).map_err(|e| e.to_string())
}

fn json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// Per-step price distribution of the first stock.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PriceFan {
    pub times: Vec<f64>,
    /// `points[k]` lists `(B, S, R)` at every node of step `k`; identical
    /// `B` values are merged (their prices differ only for path-dependent inputs).
    pub points: Vec<Vec<(f64, f64, f64)>>,
    pub initial_price: f64,
    pub initial_certainty_equivalent: f64,
    pub sigma_bmo: f64,
    pub alpha_bmo: f64,
}

pub fn price_fan_json(config_json: &str) -> Result<String, String> {
    let inst = instance(config_json)?;
    let l = &inst.lattice;
    let s = price_equilibrium(&inst).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    for k in 0..=l.num_steps() {
        let mut step: Vec<(f64, f64, f64)> = (0..l.nodes_at(k))
            .map(|j| (l.brownian(k, j), s.prices.at(k, j)[0], s.certainty_equivalent.value(k, j)))
            .collect();
        step.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        step.dedup_by(|a, b| a.0 == b.0 && (a.1 - b.1).abs() < 1e-12);
        points.push(step);
    }
    json(&PriceFan {
        times: (0..=l.num_steps()).map(|k| l.time(k)).collect(),
        points,
        initial_price: s.initial_price()[0],
        initial_certainty_equivalent: s.initial_certainty_equivalent(),
        sigma_bmo: h_bmo_norm(&s.sigma, l).map_err(|e| e.to_string())?.value,
        alpha_bmo: h_bmo_norm(&s.alpha, l).map_err(|e| e.to_string())?.value,
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PicardTrace {
    pub distances: Vec<Option<f64>>,
    pub ratios: Vec<Option<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub l_bmo: f64,
    pub existence_radius: f64,
    pub kappa: f64,
    pub theta_bound: f64,
}

pub fn picard_trace_json(config_json: &str, max_iter: usize) -> Result<String, String> {
    let inst = instance(config_json)?;
    let settings = PicardSettings {
        max_iter: max_iter.max(1),
        ..PicardSettings::default()
    };
    let out = solve_picard(&inst, &settings).map_err(|e| e.to_string())?;
    let d = out.diagnostics;
    let finite = |v: &f64| v.is_finite().then_some(*v);
    json(&PicardTrace {
        distances: d.distances.iter().map(finite).collect(),
        ratios: d.ratios.iter().map(finite).collect(),
        converged: d.converged,
        iterations: d.iterations,
        l_bmo: d.l_bmo,
        existence_radius: d.existence_radius,
        kappa: d.kappa,
        theta_bound: d.theta_bound,
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepPoint {
    pub risk_aversion: f64,
    /// `a ‖γ‖_∞ ‖Ψ − E[Ψ]‖_bmo`.
    pub product: f64,
    pub initial_price: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn risk_aversion_sweep_json(config_json: &str, from: f64, to: f64, points: usize) -> Result<String, String> {
    let base = instance(config_json)?;
    if !(from > 0.0 && to > 0.0 && from.is_finite() && to.is_finite()) || points == 0 {
        return Err("risk aversion range must be positive and points at least 1".into());
    }
    let l = &base.lattice;
    let psi = bmo_norm(
        &l.conditional_expectation(&base.dividend.centered()).map_err(|e| e.to_string())?,
        l,
    )
    .map_err(|e| e.to_string())?
    .value;
    let settings = PicardSettings {
        max_iter: 60,
        ..PicardSettings::default()
    };
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let a = if points == 1 { from } else { from + (to - from) * i as f64 / (points - 1) as f64 };
        let inst = base.with_risk_aversion(a).map_err(|e| e.to_string())?;
        let s = price_equilibrium(&inst).map_err(|e| e.to_string())?;
        let d = solve_picard(&inst, &settings).map_err(|e| e.to_string())?.diagnostics;
        rows.push(SweepPoint {
            risk_aversion: a,
            product: a * inst.demand_sup() * psi,
            initial_price: s.initial_price()[0],
            converged: d.converged,
            iterations: d.iterations,
        });
    }
    json(&rows)
}

#[wasm_bindgen]
pub fn price_fan(config_json: &str) -> Result<String, JsError> {
    price_fan_json(config_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn picard_trace(config_json: &str, max_iter: usize) -> Result<String, JsError> {
    picard_trace_json(config_json, max_iter).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn risk_aversion_sweep(config_json: &str, from: f64, to: f64, points: usize) -> Result<String, JsError> {
    risk_aversion_sweep_json(config_json, from, to, points).map_err(|e| JsError::new(&e))
}
