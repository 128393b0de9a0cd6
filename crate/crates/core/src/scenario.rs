//! Market inputs: risk aversion, demand and dividends, in declarative form.
//!
//! Every variant has a one-to-one JSON form (`"kind": "<snake_case name>"`),
//! which is what the CLI configuration file embeds.
//!
//! Sign convention: `sign(0) = +1` everywhere. On the lattice the walk sits at
//! zero with positive probability, so the tie-break is observable; a demand
//! of the form `−sign(B)` therefore has `|γ| = 1` at every node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, PredictableProcess, Terminal};

/// Hitting time `inf{k ≥ from_step : B_k = level} ∧ N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HittingTime {
    pub level: f64,
    #[serde(default)]
    pub from_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSpec {
    /// `γ ≡ value`.
    Constant { value: Vec<f64> },
    /// `γ_k = −scale · sign(B_k)`.
    NegativeSignOfB { scale: Vec<f64> },
    /// Simple demand: `(step, value)` pairs, each value held until the next
    /// listed step. Steps before the first entry carry zero demand.
    PiecewiseConstant { schedule: Vec<(usize, Vec<f64>)> },
    /// `γ'_k = γ_k 1{k > τ}` for a hitting time `τ`.
    Localized { inner: Box<DemandSpec>, tau: HittingTime },
    /// Explicit values: `values[k][j]` is the n-vector at node `(k, j)`.
    Table { values: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DividendSpec {
    /// `Ψ = scale · sign(B_T)`.
    SignOfBT { scale: Vec<f64> },
    /// `Ψ = clip(slope · B_T, −cap, cap)`.
    LinearClipped { slope: Vec<f64>, cap: Vec<f64> },
    /// `Ψ = 1{B_T > strike} − offset`.
    Digital { strike: Vec<f64>, offset: Vec<f64> },
    /// `Ψ' = Ψ 1{τ < N}` for a hitting time `τ`.
    Localized { inner: Box<DividendSpec>, tau: HittingTime },
    /// Explicit per-leaf n-vectors.
    Table { values: Vec<Vec<f64>> },
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub risk_aversion: f64,
    pub num_stocks: usize,
    pub demand: DemandSpec,
    pub dividend: DividendSpec,
    pub num_steps: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Replace `Ψ` by `Ψ − E[Ψ]`.
    #[serde(default)]
    pub center_dividend: bool,
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.risk_aversion > 0.0 && self.risk_aversion.is_finite()) {
            return Err(Error::invalid("risk_aversion", "must be positive and finite"));
        }
        if self.num_stocks == 0 {
            return Err(Error::invalid("num_stocks", "must be at least 1"));
        }
        if self.num_steps == 0 {
            return Err(Error::invalid("num_steps", "must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn lattice(&self) -> Result<Lattice> {
        self.validate()?;
        Lattice::new(self.num_steps, self.horizon)
    }
}

/// Stopping time given by its value on every leaf path.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTime {
    num_steps: usize,
    leaf_steps: Vec<usize>,
}

impl StoppingTime {
    /// Constant stopping time.
    pub fn constant(lattice: &Lattice, step: usize) -> Self {
        StoppingTime {
            num_steps: lattice.num_steps(),
            leaf_steps: vec![step.min(lattice.num_steps()); lattice.num_leaves()],
        }
    }

    /// Validates measurability: `{τ ≤ k}` must be decided at every step-k node.
    pub fn from_leaf_steps(lattice: &Lattice, leaf_steps: Vec<usize>) -> Result<Self> {
        let n = lattice.num_steps();
        if leaf_steps.len() != lattice.num_leaves() {
            return Err(Error::dims("stopping time leaves", lattice.num_leaves(), leaf_steps.len()));
        }
        if let Some(&bad) = leaf_steps.iter().find(|&&s| s > n) {
            return Err(Error::invalid("stopping time", format!("value {bad} exceeds {n}")));
        }
        for k in 0..n {
            for j in 0..lattice.nodes_at(k) {
                let range = lattice.leaf_range(k, j);
                let first = leaf_steps[range.start];
                let stopped = first <= k;
                for leaf in range {
                    let s = leaf_steps[leaf];
                    if (s <= k) != stopped || (stopped && s != first) {
                        return Err(Error::invalid(
                            "stopping time",
                            format!("not decided at step {k}, node {j}"),
                        ));
                    }
                }
            }
        }
        Ok(StoppingTime { num_steps: n, leaf_steps })
    }

    pub fn leaf_steps(&self) -> &[usize] {
        &self.leaf_steps
    }

    pub fn at_leaf(&self, leaf: usize) -> usize {
        self.leaf_steps[leaf]
    }

    /// Whether `τ ≤ step` at the node; determined by the path to the node.
    pub fn stopped_by(&self, step: usize, node: usize) -> bool {
        self.leaf_steps[node << (self.num_steps - step)] <= step
    }

    /// Whether `step > τ` at the node.
    pub fn after(&self, step: usize, node: usize) -> bool {
        step > 0 && self.stopped_by(step - 1, node >> 1)
    }
}

/// Hitting time of `level` by `B` at or after `from_step`, capped at `N`.
pub fn hitting_time_tau(lattice: &Lattice, level: f64, from_step: usize) -> Result<StoppingTime> {
    let n = lattice.num_steps();
    if from_step >= n {
        return Err(Error::invalid("from_step", format!("must be below num_steps = {n}")));
    }
    // Hitting is decided on integer heights when the level sits on the grid.
    let target = level / lattice.sqrt_dt();
    let on_grid = (target - target.round()).abs() < 1e-9;
    let hit = |k: usize, j: usize| {
        if on_grid {
            lattice.height(k, j) == target.round() as i64
        } else {
            (lattice.brownian(k, j) - level).abs() <= 1e-12 * level.abs().max(1.0)
        }
    };
    let leaf_steps = (0..lattice.num_leaves())
        .map(|leaf| {
            (from_step..=n)
                .find(|&k| hit(k, Lattice::ancestor(leaf, n, k)))
                .unwrap_or(n)
        })
        .collect();
    Ok(StoppingTime { num_steps: n, leaf_steps })
}

/// An evaluated demand together with its exact sup norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedDemand {
    pub process: PredictableProcess,
    pub sup_norm: f64,
}

/// Evaluated dividends: per-leaf values and the mean before any centering.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedDividend {
    pub terminal: Terminal,
    pub mean: Vec<f64>,
}

fn check_len(field: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::dims(field, n, v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(field, "values must be finite"));
    }
    Ok(())
}

pub fn evaluate_demand(spec: &DemandSpec, lattice: &Lattice, num_stocks: usize) -> Result<EvaluatedDemand> {
    let process = demand_process(spec, lattice, num_stocks)?;
    let sup_norm = process.max_norm().0;
    Ok(EvaluatedDemand { process, sup_norm })
}

fn demand_process(spec: &DemandSpec, lattice: &Lattice, n: usize) -> Result<PredictableProcess> {
    match spec {
        DemandSpec::Constant { value } => {
            check_len("demand.value", value, n)?;
            Ok(PredictableProcess::constant(lattice, value))
        }
        DemandSpec::NegativeSignOfB { scale } => {
            check_len("demand.scale", scale, n)?;
            Ok(PredictableProcess::from_fn(lattice, n, |k, j, out| {
                let s = lattice.sign_brownian(k, j);
                for (o, c) in out.iter_mut().zip(scale) {
                    *o = -s * c;
                }
            }))
        }
        DemandSpec::PiecewiseConstant { schedule } => {
            let mut sorted = schedule.clone();
            sorted.sort_by_key(|(step, _)| *step);
            for (step, value) in &sorted {
                check_len("demand.schedule", value, n)?;
                if *step >= lattice.num_steps() {
                    return Err(Error::invalid(
                        "demand.schedule",
                        format!("step {step} is not below num_steps = {}", lattice.num_steps()),
                    ));
                }
            }
            Ok(PredictableProcess::from_fn(lattice, n, |k, _, out| {
                if let Some((_, v)) = sorted.iter().rev().find(|(s, _)| *s <= k) {
                    out.copy_from_slice(v);
                }
            }))
        }
        DemandSpec::Localized { inner, tau } => {
            let base = demand_process(inner, lattice, n)?;
            let tau = hitting_time_tau(lattice, tau.level, tau.from_step)?;
            Ok(localize_demand(&base, &tau))
        }
        DemandSpec::Table { values } => {
            if values.len() != lattice.num_steps() {
                return Err(Error::dims("demand.values steps", lattice.num_steps(), values.len()));
            }
            let mut slices = Vec::with_capacity(values.len());
            for (k, step) in values.iter().enumerate() {
                if step.len() != lattice.nodes_at(k) {
                    return Err(Error::dims(format!("demand.values[{k}]"), lattice.nodes_at(k), step.len()));
                }
                let mut slice = Vec::with_capacity(step.len() * n);
                for v in step {
                    check_len("demand.values", v, n)?;
                    slice.extend_from_slice(v);
                }
                slices.push(slice);
            }
            PredictableProcess::from_slices(n, slices)
        }
    }
}

/// `γ'_k = γ_k 1{k > τ}`.
pub fn localize_demand(demand: &PredictableProcess, tau: &StoppingTime) -> PredictableProcess {
    let mut out = demand.clone();
    for k in 0..demand.num_steps() {
        for j in 0..(1usize << k) {
            if !tau.after(k, j) {
                out.at_mut(k, j).iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    out
}

/// `Ψ' = Ψ 1{τ < N}`.
pub fn localize_dividend(dividend: &Terminal, tau: &StoppingTime) -> Terminal {
    let n = tau.num_steps;
    dividend.map_leaves(|leaf, v, out| {
        if tau.at_leaf(leaf) < n {
            out.copy_from_slice(v);
        } else {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
    })
}

pub fn evaluate_dividend(
    spec: &DividendSpec,
    lattice: &Lattice,
    num_stocks: usize,
    center: bool,
) -> Result<EvaluatedDividend> {
    let terminal = dividend_terminal(spec, lattice, num_stocks)?;
    if let Some(pos) = terminal.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "dividend".into(),
            step: lattice.num_steps(),
            node: pos / num_stocks,
        });
    }
    let mean = terminal.mean();
    let terminal = if center { terminal.centered() } else { terminal };
    Ok(EvaluatedDividend { terminal, mean })
}

fn dividend_terminal(spec: &DividendSpec, lattice: &Lattice, n: usize) -> Result<Terminal> {
    let big_n = lattice.num_steps();
    match spec {
        DividendSpec::SignOfBT { scale } => {
            check_len("dividend.scale", scale, n)?;
            Ok(Terminal::from_fn(lattice, n, |j, out| {
                let s = lattice.sign_brownian(big_n, j);
                for (o, c) in out.iter_mut().zip(scale) {
                    *o = s * c;
                }
            }))
        }
        DividendSpec::LinearClipped { slope, cap } => {
            check_len("dividend.slope", slope, n)?;
            check_len("dividend.cap", cap, n)?;
            if cap.iter().any(|&m| m < 0.0) {
                return Err(Error::invalid("dividend.cap", "must be nonnegative"));
            }
            Ok(Terminal::from_fn(lattice, n, |j, out| {
                let b = lattice.brownian(big_n, j);
                for c in 0..n {
                    out[c] = (slope[c] * b).clamp(-cap[c], cap[c]);
                }
            }))
        }
        DividendSpec::Digital { strike, offset } => {
            check_len("dividend.strike", strike, n)?;
            check_len("dividend.offset", offset, n)?;
            Ok(Terminal::from_fn(lattice, n, |j, out| {
                let b = lattice.brownian(big_n, j);
                for c in 0..n {
                    let above = if b > strike[c] + 1e-12 * strike[c].abs().max(1.0) { 1.0 } else { 0.0 };
                    out[c] = above - offset[c];
                }
            }))
        }
        DividendSpec::Localized { inner, tau } => {
            let base = dividend_terminal(inner, lattice, n)?;
            let tau = hitting_time_tau(lattice, tau.level, tau.from_step)?;
            Ok(localize_dividend(&base, &tau))
        }
        DividendSpec::Table { values } => {
            if values.len() != lattice.num_leaves() {
                return Err(Error::dims("dividend.values", lattice.num_leaves(), values.len()));
            }
            let mut flat = Vec::with_capacity(values.len() * n);
            for v in values {
                check_len("dividend.values", v, n)?;
                flat.extend_from_slice(v);
            }
            Ok(Terminal::new(n, flat))
        }
    }
}

/// Fully evaluated market on a lattice: the common input of the pricer and
/// the BSDE solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub lattice: Lattice,
    pub risk_aversion: f64,
    pub demand: PredictableProcess,
    pub dividend: Terminal,
}

impl Instance {
    pub fn new(lattice: Lattice, risk_aversion: f64, demand: PredictableProcess, dividend: Terminal) -> Result<Self> {
        if !(risk_aversion > 0.0 && risk_aversion.is_finite()) {
            return Err(Error::invalid("risk_aversion", "must be positive and finite"));
        }
        if demand.num_steps() != lattice.num_steps() {
            return Err(Error::dims("demand steps", lattice.num_steps(), demand.num_steps()));
        }
        if dividend.num_leaves() != lattice.num_leaves() {
            return Err(Error::dims("dividend leaves", lattice.num_leaves(), dividend.num_leaves()));
        }
        if demand.dim() != dividend.dim() {
            return Err(Error::dims("number of stocks", dividend.dim(), demand.dim()));
        }
        Ok(Instance {
            lattice,
            risk_aversion,
            demand,
            dividend,
        })
    }

    pub fn from_config(config: &MarketConfig) -> Result<Self> {
        let lattice = config.lattice()?;
        let demand = evaluate_demand(&config.demand, &lattice, config.num_stocks)?;
        let dividend = evaluate_dividend(&config.dividend, &lattice, config.num_stocks, config.center_dividend)?;
        Instance::new(lattice, config.risk_aversion, demand.process, dividend.terminal)
    }

    pub fn num_stocks(&self) -> usize {
        self.dividend.dim()
    }

    pub fn demand_sup(&self) -> f64 {
        self.demand.max_norm().0
    }

    pub fn with_risk_aversion(&self, a: f64) -> Result<Self> {
        Instance::new(self.lattice, a, self.demand.clone(), self.dividend.clone())
    }

    pub fn with_demand(&self, demand: PredictableProcess) -> Result<Self> {
        Instance::new(self.lattice, self.risk_aversion, demand, self.dividend.clone())
    }

    pub fn with_dividend(&self, dividend: Terminal) -> Result<Self> {
        Instance::new(self.lattice, self.risk_aversion, self.demand.clone(), dividend)
    }

    pub fn scale_demand(&self, factor: f64) -> Result<Self> {
        self.with_demand(self.demand.scaled(factor))
    }

    pub fn scale_dividend(&self, factor: f64) -> Result<Self> {
        self.with_dividend(self.dividend.scaled(factor))
    }

    /// Backward localization `(Ψ 1{τ<N}, γ 1{k>τ})`.
    pub fn localized(&self, tau: &StoppingTime) -> Result<Self> {
        Instance::new(
            self.lattice,
            self.risk_aversion,
            localize_demand(&self.demand, tau),
            localize_dividend(&self.dividend, tau),
        )
    }

    /// Path-reflected instance `B → −B`, with demand and dividend negated.
    pub fn mirrored(&self) -> Result<Self> {
        Instance::new(
            self.lattice,
            self.risk_aversion,
            self.lattice.reflect_predictable(&self.demand).scaled(-1.0),
            self.lattice.reflect_terminal(&self.dividend).scaled(-1.0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(n: usize) -> Lattice {
        Lattice::new(n, 1.0).unwrap()
    }

    #[test]
    fn constant_demand() {
        let l = lat(4);
        let d = evaluate_demand(&DemandSpec::Constant { value: vec![-0.75] }, &l, 1).unwrap();
        assert_eq!(d.sup_norm, 0.75);
        assert_eq!(d.process.value(3, 5), -0.75);
    }

    #[test]
    fn negative_sign_demand_uses_plus_one_at_zero() {
        let l = lat(2);
        let d = evaluate_demand(&DemandSpec::NegativeSignOfB { scale: vec![1.0] }, &l, 1).unwrap();
        // B_0 = 0 -> sign +1 -> γ_0 = -1
        assert_eq!(d.process.value(0, 0), -1.0);
        // step-1 nodes: down (B<0) -> +1, up (B>0) -> -1
        assert_eq!(d.process.value(1, 0), 1.0);
        assert_eq!(d.process.value(1, 1), -1.0);
        assert_eq!(d.sup_norm, 1.0);
    }

    #[test]
    fn piecewise_schedule() {
        let l = lat(10);
        let spec = DemandSpec::PiecewiseConstant {
            schedule: vec![(0, vec![1.0]), (5, vec![-1.0])],
        };
        let d = evaluate_demand(&spec, &l, 1).unwrap();
        for k in 0..10 {
            let expected = if k < 5 { 1.0 } else { -1.0 };
            for j in 0..l.nodes_at(k) {
                assert_eq!(d.process.value(k, j), expected);
            }
        }
    }

    #[test]
    fn table_size_mismatch() {
        let l = lat(2);
        let spec = DemandSpec::Table {
            values: vec![vec![vec![1.0]], vec![vec![1.0]]],
        };
        assert!(matches!(evaluate_demand(&spec, &l, 1), Err(Error::DimensionMismatch { .. })));
        let spec = DividendSpec::Table { values: vec![vec![1.0]; 3] };
        assert!(evaluate_dividend(&spec, &l, 1, false).is_err());
    }

    #[test]
    fn dividend_examples() {
        let l = lat(1);
        let d = evaluate_dividend(&DividendSpec::SignOfBT { scale: vec![1.0] }, &l, 1, false).unwrap();
        assert_eq!(d.terminal.values(), &[-1.0, 1.0]);
        assert_eq!(d.mean, vec![0.0]);

        // leaves at N=2: -√2, 0, 0, √2; only the last exceeds 0
        let l = lat(2);
        let spec = DividendSpec::Digital {
            strike: vec![0.0],
            offset: vec![0.5],
        };
        let d = evaluate_dividend(&spec, &l, 1, false).unwrap();
        assert_eq!(d.mean, vec![-0.25]);
        let c = evaluate_dividend(&spec, &l, 1, true).unwrap();
        assert!(c.terminal.mean()[0].abs() < 1e-15);

        let l = lat(4);
        let spec = DividendSpec::LinearClipped {
            slope: vec![1.0],
            cap: vec![10.0],
        };
        let d = evaluate_dividend(&spec, &l, 1, false).unwrap();
        assert!(d.mean[0].abs() < 1e-15);
        assert_eq!(d.terminal, l.terminal_brownian());
    }

    #[test]
    fn clipping_active() {
        let l = lat(6);
        let spec = DividendSpec::LinearClipped {
            slope: vec![2.0],
            cap: vec![0.5],
        };
        let d = evaluate_dividend(&spec, &l, 1, false).unwrap();
        assert_eq!(d.terminal.sup_norm(), 0.5);
    }

    #[test]
    fn non_finite_dividend_rejected() {
        let l = lat(1);
        let spec = DividendSpec::Table {
            values: vec![vec![f64::INFINITY], vec![0.0]],
        };
        assert!(evaluate_dividend(&spec, &l, 1, false).is_err());
    }

    #[test]
    fn hitting_time_examples() {
        let l = lat(4);
        let tau = hitting_time_tau(&l, 0.0, 0).unwrap();
        assert!(tau.leaf_steps().iter().all(|&s| s == 0));

        // From step 1 on N=2: B_1 = ±√½ ≠ 0; B_2 = 0 on ud and du, and the
        // remaining paths are capped at N = 2.
        let l2 = lat(2);
        let tau = hitting_time_tau(&l2, 0.0, 1).unwrap();
        assert_eq!(tau.leaf_steps(), &[2, 2, 2, 2]);

        let tau = hitting_time_tau(&l, 10.0, 0).unwrap();
        assert!(tau.leaf_steps().iter().all(|&s| s == 4));

        assert!(hitting_time_tau(&l, 0.0, 4).is_err());
    }

    #[test]
    fn hitting_time_is_stopping_time() {
        let l = lat(8);
        let tau = hitting_time_tau(&l, 0.0, 3).unwrap();
        let checked = StoppingTime::from_leaf_steps(&l, tau.leaf_steps().to_vec()).unwrap();
        assert_eq!(checked, tau);
        // returning to zero at step 4 from height ±1 at step 3 happens on half of the paths
        let early = tau.leaf_steps().iter().filter(|&&s| s == 4).count();
        assert!(early > 0);
    }

    #[test]
    fn non_adapted_time_rejected() {
        let l = lat(2);
        // stops at step 1 only on leaf 0, but leaves 0 and 1 share the step-1 node
        assert!(StoppingTime::from_leaf_steps(&l, vec![1, 2, 2, 2]).is_err());
    }

    #[test]
    fn localized_demand_zero_until_tau() {
        let l = lat(8);
        let spec = DemandSpec::Localized {
            inner: Box::new(DemandSpec::NegativeSignOfB { scale: vec![1.0] }),
            tau: HittingTime { level: 0.0, from_step: 2 },
        };
        let d = evaluate_demand(&spec, &l, 1).unwrap();
        let base = evaluate_demand(&DemandSpec::NegativeSignOfB { scale: vec![1.0] }, &l, 1).unwrap();
        let tau = hitting_time_tau(&l, 0.0, 2).unwrap();
        for leaf in 0..l.num_leaves() {
            let t = tau.at_leaf(leaf);
            for k in 0..8 {
                let j = Lattice::ancestor(leaf, 8, k);
                let expected = if k > t { base.process.value(k, j) } else { 0.0 };
                assert_eq!(d.process.value(k, j), expected);
            }
        }
    }

    #[test]
    fn config_json_round_trip_and_unknown_keys() {
        let json = r#"{
            "risk_aversion": 1.0, "num_stocks": 1, "num_steps": 4,
            "demand": {"kind": "piecewise_constant", "schedule": [[0, [1.0]], [2, [-1.0]]]},
            "dividend": {"kind": "localized", "inner": {"kind": "sign_of_b_t", "scale": [1.0]},
                         "tau": {"level": 0.0, "from_step": 1}}
        }"#;
        let cfg: MarketConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.horizon, 1.0);
        let back: MarketConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let bad = json.replace("\"num_steps\"", "\"bogus\": 1, \"num_steps\"");
        assert!(serde_json::from_str::<MarketConfig>(&bad).is_err());
    }

    #[test]
    fn invalid_risk_aversion() {
        let cfg = MarketConfig {
            risk_aversion: 0.0,
            num_stocks: 1,
            demand: DemandSpec::Constant { value: vec![0.0] },
            dividend: DividendSpec::SignOfBT { scale: vec![1.0] },
            num_steps: 2,
            horizon: 1.0,
            center_dividend: false,
        };
        let err = Instance::from_config(&cfg).unwrap_err();
        assert!(err.to_string().contains("risk_aversion"));
    }
}
