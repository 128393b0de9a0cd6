//! The coupled quadratic BSDE for `Y = (aR, aS)` with integrand `ζ = (η, θ)`:
//!
//! ```text
//! aR_t = ∫_t^T ½(|θ·γ|² − η²) ds − ∫_t^T η dB
//! aS_t = aΨ − ∫_t^T θ(η + θ·γ) ds − ∫_t^T θ dB
//! ```
//!
//! written generically as `Y_t = Ξ + ∫_t^T g(ζ_s) ds − ∫_t^T ζ dB` with
//! `Ξ = (0, aΨ)` and generator `g(ζ) = (f_R, −f_S)`, where `(f_R, f_S)` are
//! the integrands returned by [`driver`]. On the lattice the `ds` integral is a
//! left-endpoint sum, so `Y_k = E_k[Y_{k+1}] + g(ζ_k) dt` with `ζ_k` the
//! difference quotient of `Y_{k+1}`.
//!
//! The Picard map `F(ζ)` represents the martingale of `Ξ + Σ_k g(ζ_k) dt`.
//! Because `ζ_j` is `F_j`-measurable, `F(ζ)` on step `k` only sees `ζ` on
//! steps `> k`: the iteration is exact on the last `m` steps after `m`
//! rounds and terminates in at most `N + 1` rounds whenever it stays finite.
//! The interesting diagnostics are therefore the transient ratios.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{AdaptedProcess, Defect, Lattice, Martingale, PredictableProcess, Terminal};
use crate::norms::{bmo_norm, bmo_p_norm, h_bmo_norm, DEFAULT_SWEEP_MAX_STEPS};
use crate::output::{row, sci};
use crate::scenario::Instance;

/// Quadratic-growth constant for `‖γ‖_∞ ≤ 1`.
pub const DEFAULT_THETA_BOUND: f64 = 1.5;

pub const DEFAULT_PICARD_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Integrands of the two equations, `(f_R, f_S)` with
/// `f_R = ((θ·γ)² − η²)/2` and `f_S = θ(η + θ·γ)`.
pub fn driver(eta: f64, theta: &[f64], gamma: &[f64]) -> (f64, Vec<f64>) {
    let tg = dot(theta, gamma);
    let f_r = 0.5 * (tg * tg - eta * eta);
    let f_s = theta.iter().map(|t| t * (eta + tg)).collect();
    (f_r, f_s)
}

/// Generator `g(ζ) = (f_R, −f_S)` for `ζ = (η, θ_1, …, θ_n)`, written into `out`.
pub fn generator(zeta: &[f64], gamma: &[f64], out: &mut [f64]) {
    let eta = zeta[0];
    let theta = &zeta[1..];
    let tg = dot(theta, gamma);
    out[0] = 0.5 * (tg * tg - eta * eta);
    for (o, t) in out[1..].iter_mut().zip(theta) {
        *o = -t * (eta + tg);
    }
}

/// A constant `Θ` with `|g(u) − g(v)| ≤ Θ |u − v| (|u| + |v|)` whenever
/// `|γ| ≤ gamma_sup`.
///
/// `g(u) = Q(u, u)` for a symmetric bilinear `Q`, so `g(u) − g(v) =
/// Q(u − v, u + v)` and any operator bound of `Q` works. With `x = (η, θ)`,
/// `y = (η', θ')` and `G = gamma_sup`: the R-part `½((θ·γ)(θ'·γ) − ηη')` is at
/// most `½ max(1, G²)|x||y|`, and the S-part
/// `−½(θ(η' + θ'·γ) + θ'(η + θ·γ))` is at most `√(1 + G²)|x||y|`. Adding in
/// quadrature gives `√(max(1, G²)²/4 + 1 + G²)`, which is `3/2` at `G = 1`.
pub fn quadratic_growth_bound(gamma_sup: f64) -> f64 {
    let g2 = gamma_sup * gamma_sup;
    (g2.max(1.0).powi(2) / 4.0 + 1.0 + g2).sqrt()
}

/// Demand plus the growth constant used by the diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverParams {
    pub gamma: PredictableProcess,
    pub theta_bound: f64,
}

impl DriverParams {
    pub fn new(gamma: PredictableProcess, theta_bound: f64) -> Result<Self> {
        if !(theta_bound > 0.0 && theta_bound.is_finite()) {
            return Err(Error::invalid("theta_bound", "must be positive and finite"));
        }
        Ok(DriverParams { gamma, theta_bound })
    }

    /// Default `Θ`: the bound above at `max(‖γ‖_∞, 1)`.
    pub fn for_instance(instance: &Instance) -> Self {
        DriverParams {
            gamma: instance.demand.clone(),
            theta_bound: quadratic_growth_bound(instance.demand_sup().max(1.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Explicit,
    Picard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub lattice: Lattice,
    pub risk_aversion: f64,
    pub eta: PredictableProcess,
    pub theta: PredictableProcess,
    pub a_r: AdaptedProcess,
    pub a_s: AdaptedProcess,
    /// Largest defect of the discrete equations.
    pub residual: f64,
    pub method: Method,
}

impl BsdeSolution {
    /// `ζ = (η, θ)`.
    pub fn integrand(&self) -> PredictableProcess {
        self.eta.concat(&self.theta).expect("shapes agree by construction")
    }

    pub fn prices(&self) -> AdaptedProcess {
        self.a_s.scaled(1.0 / self.risk_aversion)
    }

    pub fn certainty_equivalent(&self) -> AdaptedProcess {
        self.a_r.scaled(1.0 / self.risk_aversion)
    }

    /// Largest node gap `|Y − Y'|` over both components.
    pub fn max_gap(&self, other: &BsdeSolution) -> f64 {
        self.a_r
            .max_abs_diff(&other.a_r)
            .max(self.a_s.max_abs_diff(&other.a_s))
            .max(self.eta.max_abs_diff(&other.eta))
            .max(self.theta.max_abs_diff(&other.theta))
    }
}

/// `Ξ = (0, aΨ)`.
pub fn terminal_condition(instance: &Instance) -> Terminal {
    let a = instance.risk_aversion;
    let n = instance.num_stocks();
    Terminal::from_fn(&instance.lattice, 1 + n, |leaf, out| {
        out[0] = 0.0;
        for (o, p) in out[1..].iter_mut().zip(instance.dividend.at(leaf)) {
            *o = a * p;
        }
    })
}

fn split(instance: &Instance, y: AdaptedProcess, zeta: &PredictableProcess, residual: f64, method: Method) -> BsdeSolution {
    let n = instance.num_stocks();
    BsdeSolution {
        lattice: instance.lattice,
        risk_aversion: instance.risk_aversion,
        eta: zeta.components(0..1),
        theta: zeta.components(1..1 + n),
        a_r: y.components(0..1),
        a_s: y.components(1..1 + n),
        residual,
        method,
    }
}

/// One deterministic backward pass.
pub fn solve_explicit(instance: &Instance) -> Result<BsdeSolution> {
    let lattice = &instance.lattice;
    let dim = 1 + instance.num_stocks();
    let xi = terminal_condition(instance);
    let steps = lattice.num_steps();
    let dt = lattice.dt();
    let denom = 2.0 * lattice.sqrt_dt();

    let mut y = AdaptedProcess::zeros(lattice, dim);
    let mut zeta = PredictableProcess::zeros(lattice, dim);
    for leaf in 0..lattice.num_leaves() {
        y.at_mut(steps, leaf).copy_from_slice(xi.at(leaf));
    }
    let mut z = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for k in (0..steps).rev() {
        for j in 0..lattice.nodes_at(k) {
            let (d, u) = Lattice::children(j);
            let (yd, yu) = (y.at(k + 1, d).to_vec(), y.at(k + 1, u).to_vec());
            for c in 0..dim {
                z[c] = (yu[c] - yd[c]) / denom;
            }
            generator(&z, instance.demand.at(k, j), &mut g);
            let out = y.at_mut(k, j);
            for c in 0..dim {
                out[c] = 0.5 * (yu[c] + yd[c]) + g[c] * dt;
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "explicit BSDE recursion".into(),
                    step: k,
                    node: j,
                });
            }
            zeta.at_mut(k, j).copy_from_slice(&z);
        }
    }
    let residual = residual(instance, &y, &zeta)?;
    Ok(split(instance, y, &zeta, residual, Method::Explicit))
}

/// Largest defect of `Y_k = E_k[Y_{k+1}] + g(ζ_k) dt` and
/// `Y_{k+1} − E_k[Y_{k+1}] = ζ_k ΔB_k`, relative to `max(1, |Y|)`.
pub fn residual(instance: &Instance, y: &AdaptedProcess, zeta: &PredictableProcess) -> Result<f64> {
    let lattice = &instance.lattice;
    let dim = y.dim();
    if zeta.dim() != dim {
        return Err(Error::dims("integrand dimension", dim, zeta.dim()));
    }
    let dt = lattice.dt();
    let sd = lattice.sqrt_dt();
    let mut g = vec![0.0; dim];
    let mut worst: f64 = 0.0;
    for k in 0..lattice.num_steps() {
        for j in 0..lattice.nodes_at(k) {
            let (d, u) = Lattice::children(j);
            let (yd, yu, yk) = (y.at(k + 1, d), y.at(k + 1, u), y.at(k, j));
            let z = zeta.at(k, j);
            generator(z, instance.demand.at(k, j), &mut g);
            for c in 0..dim {
                let mean = 0.5 * (yu[c] + yd[c]);
                let scale = 1.0_f64.max(yk[c].abs()).max(yu[c].abs()).max(yd[c].abs());
                let drift = (yk[c] - mean - g[c] * dt).abs();
                let diffusion = (yu[c] - mean - z[c] * sd).abs();
                worst = worst.max(drift.max(diffusion) / scale);
            }
        }
    }
    Ok(worst)
}

/// Result of one application of the Picard map.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardStep {
    /// `F(ζ)`.
    pub zeta: PredictableProcess,
    /// Martingale of `Ξ + Σ g(ζ) dt`.
    pub martingale: Martingale,
    /// Driver part `E_t[Σ g dt] − E[Σ g dt]`, the `M` of the contraction estimates.
    pub driver_martingale: Martingale,
    /// Running sum `Σ_{j<k} g(ζ_j) dt` (F_k-measurable through predictability).
    pub accumulated: AdaptedProcess,
}

/// `F(ζ)`: representation integrand of the martingale of `Ξ + Σ_k g(ζ_k) dt`.
pub fn picard_map(instance: &Instance, zeta: &PredictableProcess) -> Result<PredictableProcess> {
    Ok(picard_step(instance, &terminal_condition(instance), zeta)?.zeta)
}

pub fn picard_step(instance: &Instance, xi: &Terminal, zeta: &PredictableProcess) -> Result<PicardStep> {
    let lattice = &instance.lattice;
    let dim = xi.dim();
    if zeta.dim() != dim {
        return Err(Error::dims("Picard integrand dimension", dim, zeta.dim()));
    }
    if zeta.num_steps() != lattice.num_steps() {
        return Err(Error::dims("Picard integrand steps", lattice.num_steps(), zeta.num_steps()));
    }
    let dt = lattice.dt();
    let mut acc = AdaptedProcess::zeros(lattice, dim);
    let mut g = vec![0.0; dim];
    for k in 0..lattice.num_steps() {
        for j in 0..lattice.nodes_at(k) {
            generator(zeta.at(k, j), instance.demand.at(k, j), &mut g);
            let base: Vec<f64> = acc.at(k, j).iter().zip(&g).map(|(a, b)| a + b * dt).collect();
            let (d, u) = Lattice::children(j);
            acc.at_mut(k + 1, d).copy_from_slice(&base);
            acc.at_mut(k + 1, u).copy_from_slice(&base);
        }
    }
    let sums = acc.terminal();
    let driver_martingale = lattice.conditional_expectation(&sums.centered())?;
    let total = xi.map_leaves(|leaf, v, out| {
        for c in 0..dim {
            out[c] = v[c] + sums.at(leaf)[c];
        }
    });
    let martingale = lattice.conditional_expectation(&total)?;
    let zeta = lattice.martingale_representation(&martingale)?;
    Ok(PicardStep {
        zeta,
        martingale,
        driver_martingale,
        accumulated: acc,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Fixed `κ`; `None` measures it (corpus plus the run's own martingales).
    pub kappa: Option<f64>,
    /// Fixed `Θ`; `None` uses [`DriverParams::for_instance`].
    pub theta_bound: Option<f64>,
    /// Starting point, `0` when absent.
    pub zeta0: Option<PredictableProcess>,
    /// Seed of the random corpus behind the measured `κ`.
    pub kappa_seed: u64,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings {
            tol: DEFAULT_PICARD_TOL,
            max_iter: DEFAULT_MAX_ITER,
            kappa: None,
            theta_bound: None,
            zeta0: None,
            kappa_seed: 7,
        }
    }
}

/// Per-iteration record of a Picard run. Index `m` of `iterate_norms`
/// refers to `ζ^m`; index `m` of `distances` to `‖ζ^{m+1} − ζ^m‖_bmo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub distances: Vec<f64>,
    /// `distances[m+1] / distances[m]`, `0` once a distance vanishes.
    pub ratios: Vec<f64>,
    pub iterate_norms: Vec<f64>,
    /// `‖M‖_bmo / ‖M‖_bmo1` of the driver martingale producing `ζ^{m+1}`.
    pub driver_kappas: Vec<Option<f64>>,
    /// The same ratio for consecutive driver-martingale differences.
    pub difference_kappas: Vec<Option<f64>>,
    pub l_bmo: f64,
    /// `κ` used in the thresholds.
    pub kappa: f64,
    /// `κ` of the random corpus alone.
    pub kappa_corpus: f64,
    pub theta_bound: f64,
    /// `1/(8κΘ)`.
    pub existence_radius: f64,
    /// `1/(4κΘ)`.
    pub uniqueness_radius: f64,
    /// `2‖L‖_bmo`.
    pub ball_radius: f64,
    pub converged: bool,
    pub iterations: usize,
    pub aborted: Option<String>,
}

impl IterationDiagnostics {
    pub fn final_norm(&self) -> Option<f64> {
        self.iterate_norms.last().copied()
    }

    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }

    pub fn small_data(&self) -> bool {
        self.l_bmo < self.existence_radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    /// `None` only when the run aborted on a non-finite iterate.
    pub solution: Option<BsdeSolution>,
    pub diagnostics: IterationDiagnostics,
}

fn kappa_of(m: &Martingale, lattice: &Lattice) -> Option<f64> {
    if lattice.num_steps() > DEFAULT_SWEEP_MAX_STEPS {
        return None;
    }
    let b2 = bmo_norm(m, lattice).ok()?.value;
    let b1 = bmo_p_norm(m, 1.0, lattice).ok()?.value;
    if b1 > 1e-300 && b2.is_finite() {
        Some(b2 / b1)
    } else {
        None
    }
}

/// Largest `‖M‖_bmo / ‖M‖_bmo1` over a seeded corpus of martingales on a
/// lattice with `min(num_steps, 10)` steps: the walk, `sign(B_T)`, clipped
/// walks, and uniform random terminal variables.
pub fn empirical_kappa(num_steps: usize, samples: usize, seed: u64) -> Result<f64> {
    let lattice = Lattice::new(num_steps.clamp(1, 10), 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus: Vec<Terminal> = vec![
        lattice.terminal_brownian(),
        Terminal::from_fn(&lattice, 1, |j, o| o[0] = lattice.sign_brownian(lattice.num_steps(), j)),
        lattice.terminal_brownian().map_leaves(|_, v, o| o[0] = v[0].clamp(-0.5, 0.5)),
    ];
    for _ in 0..samples {
        let sparse = rng.gen_bool(0.3);
        corpus.push(Terminal::from_fn(&lattice, 1, |_, o| {
            o[0] = if sparse && rng.gen_bool(0.9) { 0.0 } else { rng.gen_range(-1.0..1.0) }
        }));
    }
    let mut kappa: f64 = 1.0;
    for xi in &corpus {
        let m = lattice.conditional_expectation(xi)?;
        if let Some(k) = kappa_of(&m, &lattice) {
            kappa = kappa.max(k);
        }
    }
    Ok(kappa)
}

/// Iterates `ζ^{m+1} = F(ζ^m)` until the bmo distance drops below `tol`.
/// Non-convergence is reported in the diagnostics, not as an error.
pub fn solve_picard(instance: &Instance, settings: &PicardSettings) -> Result<PicardOutcome> {
    if !(settings.tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if settings.max_iter == 0 {
        return Err(Error::invalid("max_iter", "must be at least 1"));
    }
    let lattice = &instance.lattice;
    let dim = 1 + instance.num_stocks();
    let xi = terminal_condition(instance);
    let theta_bound = settings
        .theta_bound
        .unwrap_or_else(|| DriverParams::for_instance(instance).theta_bound);
    let l = lattice.conditional_expectation(&xi)?;
    let l_bmo = bmo_norm(&l, lattice)?.value;
    let kappa_corpus = empirical_kappa(lattice.num_steps(), 200, settings.kappa_seed)?;

    let mut zeta = match &settings.zeta0 {
        Some(z) if z.dim() != dim => return Err(Error::dims("zeta0 dimension", dim, z.dim())),
        Some(z) => z.clone(),
        None => PredictableProcess::zeros(lattice, dim),
    };
    let mut diag = IterationDiagnostics {
        distances: Vec::new(),
        ratios: Vec::new(),
        iterate_norms: vec![h_bmo_norm(&zeta, lattice)?.value],
        driver_kappas: Vec::new(),
        difference_kappas: Vec::new(),
        l_bmo,
        kappa: settings.kappa.unwrap_or(kappa_corpus),
        kappa_corpus,
        theta_bound,
        existence_radius: 0.0,
        uniqueness_radius: 0.0,
        ball_radius: 2.0 * l_bmo,
        converged: false,
        iterations: 0,
        aborted: None,
    };
    let mut previous_driver: Option<AdaptedProcess> = None;
    for m in 0..settings.max_iter {
        let step = match picard_step(instance, &xi, &zeta) {
            Ok(s) => s,
            Err(e) => {
                diag.aborted = Some(format!("iteration {}: {e}", m + 1));
                break;
            }
        };
        if let Some((k, j)) = step.zeta.first_non_finite() {
            diag.aborted = Some(format!("iteration {}: non-finite integrand at step {k}, node {j}", m + 1));
            break;
        }
        let distance = h_bmo_norm(&step.zeta.zip_with(&zeta, |a, b| a - b)?, lattice)?.value;
        let norm = h_bmo_norm(&step.zeta, lattice)?.value;
        if !distance.is_finite() || !norm.is_finite() {
            diag.aborted = Some(format!("iteration {}: bmo norm overflowed", m + 1));
            break;
        }
        diag.driver_kappas.push(kappa_of(&step.driver_martingale, lattice));
        let driver = step.driver_martingale.into_process();
        diag.difference_kappas.push(match &previous_driver {
            Some(prev) => {
                let diff = driver.zip_with(prev, |a, b| a - b)?;
                Martingale::new(lattice, diff).ok().and_then(|m| kappa_of(&m, lattice))
            }
            None => None,
        });
        previous_driver = Some(driver);
        if let Some(&last) = diag.distances.last() {
            diag.ratios.push(if last > 0.0 { distance / last } else { 0.0 });
        }
        diag.distances.push(distance);
        diag.iterate_norms.push(norm);
        diag.iterations = m + 1;
        zeta = step.zeta;
        if distance <= settings.tol {
            diag.converged = true;
            break;
        }
    }
    if settings.kappa.is_none() {
        let seen = diag
            .driver_kappas
            .iter()
            .chain(&diag.difference_kappas)
            .flatten()
            .copied()
            .fold(kappa_corpus, f64::max);
        diag.kappa = seen;
    }
    diag.existence_radius = 1.0 / (8.0 * diag.kappa * theta_bound);
    diag.uniqueness_radius = 1.0 / (4.0 * diag.kappa * theta_bound);

    let solution = if diag.aborted.is_some() {
        None
    } else {
        let y = reconstruct(instance, &xi, &zeta)?;
        let res = residual(instance, &y, &zeta)?;
        Some(split(instance, y, &zeta, res, Method::Picard))
    };
    Ok(PicardOutcome {
        solution,
        diagnostics: diag,
    })
}

/// `Y_k = M_k − Σ_{j<k} g(ζ_j) dt`, the value process carried by `ζ`.
fn reconstruct(instance: &Instance, xi: &Terminal, zeta: &PredictableProcess) -> Result<AdaptedProcess> {
    let step = picard_step(instance, xi, zeta)?;
    step.martingale.process().zip_with(&step.accumulated, |m, a| m - a)
}

/// One inequality evaluated on a Picard trajectory or a sampled pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub iteration: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub l_bmo: f64,
    pub kappa: f64,
    pub kappa_corpus: f64,
    pub theta_bound: f64,
    /// `‖L‖_bmo < 1/(8κΘ)`.
    pub small_data: bool,
    /// `‖ζ‖_bmo ≤ 2‖L‖_bmo` for the limit; `None` unless converged under small data.
    pub ball_bound: Option<BoundCheck>,
    /// `‖F(ζ)‖_bmo ≤ ‖L‖_bmo + 2κΘ‖ζ‖²_bmo` per iteration.
    pub growth: Vec<BoundCheck>,
    /// `‖F(ζ) − F(ζ')‖ ≤ 2κΘ‖ζ − ζ'‖(‖ζ‖ + ‖ζ'‖)` for consecutive iterates.
    pub contraction: Vec<BoundCheck>,
    /// Observed `max d_{m+1} / d_m`.
    pub max_ratio: f64,
    pub violations: usize,
    pub note: String,
}

/// Evaluates the threshold condition, the per-iteration growth bound and the
/// contraction estimate on a recorded trajectory. `tolerance` is relative.
pub fn contraction_report(diag: &IterationDiagnostics, tolerance: f64) -> ContractionReport {
    let kt = 2.0 * diag.kappa * diag.theta_bound;
    let slack = |rhs: f64| tolerance * rhs.abs().max(1.0);
    let growth: Vec<BoundCheck> = (0..diag.distances.len())
        .map(|m| {
            let lhs = diag.iterate_norms[m + 1];
            let rhs = diag.l_bmo + kt * diag.iterate_norms[m].powi(2);
            BoundCheck {
                iteration: m + 1,
                lhs,
                rhs,
                holds: lhs <= rhs + slack(rhs),
            }
        })
        .collect();
    let contraction: Vec<BoundCheck> = (1..diag.distances.len())
        .map(|m| {
            let lhs = diag.distances[m];
            let rhs = kt * diag.distances[m - 1] * (diag.iterate_norms[m] + diag.iterate_norms[m - 1]);
            BoundCheck {
                iteration: m + 1,
                lhs,
                rhs,
                holds: lhs <= rhs + slack(rhs),
            }
        })
        .collect();
    let small_data = diag.small_data();
    let ball_bound = match (diag.converged && small_data, diag.final_norm()) {
        (true, Some(norm)) => Some(BoundCheck {
            iteration: diag.iterations,
            lhs: norm,
            rhs: diag.ball_radius,
            holds: norm <= diag.ball_radius + slack(diag.ball_radius),
        }),
        _ => None,
    };
    let violations = growth.iter().chain(&contraction).chain(ball_bound.iter()).filter(|c| !c.holds).count();
    let note = if violations == 0 {
        "all recorded bounds hold".to_string()
    } else {
        format!(
            "{violations} bound(s) violated: this indicates a mis-set κ or Θ for this instance, \
             not a defect of the underlying estimates"
        )
    };
    ContractionReport {
        l_bmo: diag.l_bmo,
        kappa: diag.kappa,
        kappa_corpus: diag.kappa_corpus,
        theta_bound: diag.theta_bound,
        small_data,
        ball_bound,
        growth,
        contraction,
        max_ratio: diag.max_ratio(),
        violations,
        note,
    }
}

/// The contraction estimate for one pair `(ζ, ζ')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `κ` used: the larger of the supplied one and the pair's own ratio.
    pub kappa: f64,
    /// Whether the supplied `κ` alone would have sufficed.
    pub holds_with_given_kappa: bool,
    pub holds: bool,
}

pub fn contraction_pair(
    instance: &Instance,
    zeta: &PredictableProcess,
    other: &PredictableProcess,
    kappa: f64,
    theta_bound: f64,
    tolerance: f64,
) -> Result<PairCheck> {
    let lattice = &instance.lattice;
    let xi = terminal_condition(instance);
    let a = picard_step(instance, &xi, zeta)?;
    let b = picard_step(instance, &xi, other)?;
    let lhs = h_bmo_norm(&a.zeta.zip_with(&b.zeta, |x, y| x - y)?, lattice)?.value;
    let diff = a
        .driver_martingale
        .process()
        .zip_with(b.driver_martingale.process(), |x, y| x - y)?;
    let own = Martingale::new(lattice, diff).ok().and_then(|m| kappa_of(&m, lattice));
    let used = own.map_or(kappa, |k| k.max(kappa));
    let spread = h_bmo_norm(&zeta.zip_with(other, |x, y| x - y)?, lattice)?.value;
    let sum = h_bmo_norm(zeta, lattice)?.value + h_bmo_norm(other, lattice)?.value;
    let rhs_with = |k: f64| 2.0 * k * theta_bound * spread * sum;
    let ok = |rhs: f64| lhs <= rhs + tolerance * rhs.max(1.0);
    Ok(PairCheck {
        lhs,
        rhs: rhs_with(used),
        kappa: used,
        holds_with_given_kappa: ok(rhs_with(kappa)),
        holds: ok(rhs_with(used)),
    })
}

/// `(α, σ, Z)` rebuilt from a BSDE solution, with the martingale side
/// conditions on `Z`, `ZS` and `Z(γ·S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    /// `α = η + θ·γ`.
    pub alpha: PredictableProcess,
    /// `σ = θ / a`.
    pub sigma: PredictableProcess,
    /// `E(−α·B)`, absent when the positivity guard fails.
    pub density: Option<AdaptedProcess>,
    pub guard_error: Option<String>,
    pub density_defect: Option<Defect>,
    pub priced_defect: Option<Defect>,
    pub gain_defect: Option<Defect>,
}

pub fn assemble(solution: &BsdeSolution, gamma: &PredictableProcess) -> Result<Assembly> {
    let lattice = &solution.lattice;
    let n = solution.theta.dim();
    if gamma.dim() != n {
        return Err(Error::dims("demand dimension", n, gamma.dim()));
    }
    let alpha = PredictableProcess::from_fn(lattice, 1, |k, j, out| {
        out[0] = solution.eta.value(k, j) + dot(solution.theta.at(k, j), gamma.at(k, j));
    });
    let sigma = solution.theta.scaled(1.0 / solution.risk_aversion);
    let mut out = Assembly {
        alpha,
        sigma,
        density: None,
        guard_error: None,
        density_defect: None,
        priced_defect: None,
        gain_defect: None,
    };
    match lattice.stochastic_exponential(&out.alpha.scaled(-1.0)) {
        Ok(z) => {
            let prices = solution.prices();
            let gain = lattice.stochastic_integral(gamma, &prices)?;
            let zs = AdaptedProcess::from_fn(lattice, n, |k, j, o| {
                for (v, p) in o.iter_mut().zip(prices.at(k, j)) {
                    *v = z.value(k, j) * p;
                }
            });
            let zg = z.zip_with(&gain, |a, b| a * b)?;
            out.density_defect = Some(lattice.martingale_defect(&z, None)?);
            out.priced_defect = Some(lattice.martingale_defect(&zs, None)?);
            out.gain_defect = Some(lattice.martingale_defect(&zg, None)?);
            out.density = Some(z);
        }
        Err(Error::ExponentialGuard { step, node, value }) => {
            out.guard_error = Some(format!(
                "|α√dt| = {value} ≥ 1 at step {step}, node {node}; refine the time step"
            ));
        }
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// `(‖η‖_bmo + ‖θ‖_bmo) / ‖Ψ − E[Ψ]‖_bmo`, the empirical a priori ratio;
/// `None` for a constant dividend.
pub fn integrand_ratio(solution: &BsdeSolution, dividend: &Terminal) -> Result<Option<f64>> {
    let lattice = &solution.lattice;
    let psi = bmo_norm(&lattice.conditional_expectation(&dividend.centered())?, lattice)?.value;
    if psi == 0.0 {
        return Ok(None);
    }
    let eta = h_bmo_norm(&solution.eta, lattice)?.value;
    let theta = h_bmo_norm(&solution.theta, lattice)?.value;
    Ok(Some((eta + theta) / psi))
}

/// `iteration,distance,ratio,iterate_bmo`; the ratio column is empty on the first row.
pub fn write_iterations_csv<W: Write>(diag: &IterationDiagnostics, out: &mut W) -> std::io::Result<()> {
    row(out, &["iteration", "distance", "ratio", "iterate_bmo"].map(String::from))?;
    for (m, d) in diag.distances.iter().enumerate() {
        let ratio = if m == 0 { String::new() } else { sci(diag.ratios[m - 1]) };
        row(out, &[(m + 1).to_string(), sci(*d), ratio, sci(diag.iterate_norms[m + 1])])?;
    }
    Ok(())
}

/// Per-node dump in the pricer's column layout. `q_up` is the one implied by
/// `Z`, i.e. `(1 − α√dt)/2`; `Z`-derived columns are empty when the guard failed.
pub fn write_nodes_csv<W: Write>(solution: &BsdeSolution, assembly: &Assembly, out: &mut W) -> std::io::Result<()> {
    let l = &solution.lattice;
    let n = solution.theta.dim();
    let a = solution.risk_aversion;
    let mut header = vec!["step".to_string(), "node".into(), "B".into()];
    header.extend((1..=n).map(|i| format!("S_{i}")));
    header.extend(["R", "Z", "q_up", "alpha"].map(String::from));
    header.extend((1..=n).map(|i| format!("sigma_{i}")));
    row(out, &header)?;
    for k in 0..=l.num_steps() {
        for j in 0..l.nodes_at(k) {
            let mut fields = vec![k.to_string(), j.to_string(), sci(l.brownian(k, j))];
            fields.extend(solution.a_s.at(k, j).iter().map(|v| sci(v / a)));
            fields.push(sci(solution.a_r.value(k, j) / a));
            fields.push(assembly.density.as_ref().map_or(String::new(), |z| sci(z.value(k, j))));
            if k < l.num_steps() {
                let alpha = assembly.alpha.value(k, j);
                fields.push(sci(0.5 * (1.0 - alpha * l.sqrt_dt())));
                fields.push(sci(alpha));
                fields.extend(assembly.sigma.at(k, j).iter().map(|v| sci(*v)));
            } else {
                fields.extend(std::iter::repeat_n(String::new(), 2 + n));
            }
            row(out, &fields)?;
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricer::price_equilibrium;

    fn instance(n_steps: usize, a: f64, gamma: f64, psi: impl Fn(&Lattice, usize) -> f64) -> Instance {
        let l = Lattice::new(n_steps, 1.0).unwrap();
        let demand = PredictableProcess::constant(&l, &[gamma]);
        let dividend = Terminal::from_fn(&l, 1, |j, o| o[0] = psi(&l, j));
        Instance::new(l, a, demand, dividend).unwrap()
    }

    fn sign_t(l: &Lattice, j: usize) -> f64 {
        l.sign_brownian(l.num_steps(), j)
    }

    #[test]
    fn driver_examples() {
        assert_eq!(driver(0.0, &[0.0], &[0.7]), (0.0, vec![0.0]));
        assert_eq!(driver(1.0, &[0.0], &[1.0]), (-0.5, vec![0.0]));
        assert_eq!(driver(0.0, &[2.0], &[1.0]), (2.0, vec![4.0]));
        let mut g = [0.0; 2];
        generator(&[0.0, 2.0], &[1.0], &mut g);
        assert_eq!(g, [2.0, -4.0]);
    }

    #[test]
    fn growth_bound_at_unit_demand() {
        assert!((quadratic_growth_bound(1.0) - 1.5).abs() < 1e-15);
        assert!(quadratic_growth_bound(0.5) < 1.5);
        assert!(quadratic_growth_bound(2.0) > 1.5);
    }

    #[test]
    fn explicit_one_step_without_demand() {
        let inst = instance(1, 1.0, 0.0, sign_t);
        let s = solve_explicit(&inst).unwrap();
        assert!((s.theta.value(0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(s.eta.value(0, 0), 0.0);
        assert_eq!(s.a_s.value(0, 0), 0.0);
        assert_eq!(s.a_r.value(0, 0), 0.0);
        assert!(s.residual < 1e-15);
    }

    #[test]
    fn constant_dividend_is_inert() {
        let inst = instance(6, 0.7, 0.9, |_, _| 0.3);
        let s = solve_explicit(&inst).unwrap();
        assert_eq!(s.theta.max_norm().0, 0.0);
        assert_eq!(s.eta.max_norm().0, 0.0);
        assert!(s.a_s.slices().iter().flatten().all(|v| (v - 0.21).abs() < 1e-15));
        assert_eq!(s.a_r.max_norm().0, 0.0);
        let asm = assemble(&s, &inst.demand).unwrap();
        assert_eq!(asm.alpha.max_norm().0, 0.0);
        assert!(asm.density.unwrap().slices().iter().flatten().all(|&z| z == 1.0));
    }

    #[test]
    fn picard_reproduces_explicit() {
        let inst = instance(8, 0.1, 0.5, |l, j| l.brownian(8, j).clamp(-1.0, 1.0));
        let exp = solve_explicit(&inst).unwrap();
        assert!(exp.residual < 1e-14);
        let out = solve_picard(&inst, &PicardSettings::default()).unwrap();
        assert!(out.diagnostics.converged);
        assert!(out.diagnostics.iterations <= 10);
        let pic = out.solution.unwrap();
        assert!(pic.max_gap(&exp) < 1e-12, "{}", pic.max_gap(&exp));
        let fixed = picard_map(&inst, &exp.integrand()).unwrap();
        assert!(fixed.max_abs_diff(&exp.integrand()) < 1e-12);
    }

    #[test]
    fn picard_without_demand_stops_after_two_rounds() {
        let inst = instance(6, 1.0, 0.0, sign_t);
        let out = solve_picard(&inst, &PicardSettings::default()).unwrap();
        assert!(out.diagnostics.converged);
        assert_eq!(out.diagnostics.iterations, 2);
        let gap = out.solution.unwrap().max_gap(&solve_explicit(&inst).unwrap());
        assert!(gap < 1e-12);
    }

    #[test]
    fn picard_map_is_not_linear() {
        let inst = instance(4, 1.0, 0.5, sign_t);
        let z = PredictableProcess::from_fn(&inst.lattice, 2, |k, j, o| {
            o[0] = 0.1 * (k as f64 - j as f64);
            o[1] = 0.3;
        });
        let once = picard_map(&inst, &z.scaled(2.0)).unwrap();
        let twice = picard_map(&inst, &z).unwrap().scaled(2.0);
        assert!(once.max_abs_diff(&twice) > 1e-3);
        let l = picard_map(&inst, &PredictableProcess::zeros(&inst.lattice, 2)).unwrap();
        let rep = inst
            .lattice
            .martingale_representation(&inst.lattice.conditional_expectation(&terminal_condition(&inst)).unwrap())
            .unwrap();
        assert_eq!(l.max_abs_diff(&rep), 0.0);
    }

    #[test]
    fn small_instance_stays_in_ball() {
        let inst = instance(8, 0.05, 1.0, sign_t);
        let out = solve_picard(&inst, &PicardSettings::default()).unwrap();
        let d = &out.diagnostics;
        assert!(d.converged);
        assert!(d.final_norm().unwrap() <= 2.0 * d.l_bmo);
        let report = contraction_report(d, 1e-9);
        assert_eq!(report.violations, 0, "{report:?}");
    }

    #[test]
    fn bsde_tracks_pricer() {
        let inst = instance(10, 0.2, 0.5, |l, j| 0.5 * l.brownian(10, j));
        let b = solve_explicit(&inst).unwrap();
        let p = price_equilibrium(&inst).unwrap();
        assert!(b.prices().max_abs_diff(&p.prices) < 1e-2);
        let asm = assemble(&b, &inst.demand).unwrap();
        assert!(asm.density_defect.unwrap().value < 1e-12);
    }

    #[test]
    fn iteration_csv_layout() {
        let inst = instance(4, 0.1, 0.5, sign_t);
        let out = solve_picard(&inst, &PicardSettings::default()).unwrap();
        let mut buf = Vec::new();
        write_iterations_csv(&out.diagnostics, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "iteration,distance,ratio,iterate_bmo");
        assert_eq!(lines.len(), out.diagnostics.iterations + 1);
        assert!(lines[1].split(',').nth(2).unwrap().is_empty());
    }
}
