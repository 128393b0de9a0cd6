//! Batch front end: `price`, `bsde`, `norms`, `verify`, `sweep`.
//!
//! Exit codes: 0 success, 1 hard-gate failure, 2 configuration error,
//! 3 numeric failure. Picard non-convergence is data, not an error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bsde::{
    self, assemble, contraction_report, integrand_ratio, solve_explicit, solve_picard, ContractionReport,
    IterationDiagnostics, PicardSettings, DEFAULT_MAX_ITER, DEFAULT_PICARD_TOL,
};
use crate::error::{Error, Result};
use crate::norms::{
    bmo_norm, bmo_p_norm, h_bmo_norm, h_norm, midrange_bound, sup_norm_predictable, sup_norm_terminal, NormReport,
    DEFAULT_BISECTION_TOL, DEFAULT_SWEEP_MAX_STEPS,
};
use crate::output::{row, sci};
use crate::pricer::{self, equilibrium_defects, price_equilibrium, EquilibriumSolution};
use crate::scenario::{Instance, MarketConfig};
use crate::verify::{run_suite, Suite, SuiteOutcome, VerifySettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodChoice {
    Explicit,
    Picard,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepParam {
    RiskAversion,
    DemandScale,
    DividendScale,
    NumSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub method: MethodChoice,
    /// Fixed `κ`; measured when absent.
    pub kappa: Option<f64>,
    /// Fixed `Θ`; derived from `‖γ‖_∞` when absent.
    pub theta_bound: Option<f64>,
    pub kappa_seed: u64,
    /// Relative tolerance of the recorded contraction bounds.
    pub bound_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: DEFAULT_PICARD_TOL,
            max_iter: DEFAULT_MAX_ITER,
            method: MethodChoice::Both,
            kappa: None,
            theta_bound: None,
            kappa_seed: 7,
            bound_tol: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn picard(&self) -> PicardSettings {
        PicardSettings {
            tol: self.tol,
            max_iter: self.max_iter,
            kappa: self.kappa,
            theta_bound: self.theta_bound,
            zeta0: None,
            kappa_seed: self.kappa_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConfig {
    pub bisection_tol: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            bisection_tol: DEFAULT_BISECTION_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub suite: Suite,
    #[serde(flatten)]
    pub settings: VerifySettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Summary path; `--out` wins. Stdout when neither is given.
    pub path: Option<PathBuf>,
    /// Also write `<out>.nodes.csv`.
    pub dump_nodes: bool,
}

/// The whole configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub norms: NormConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol.is_finite()) {
            return Err(Error::invalid("solver.tol", "must be positive and finite"));
        }
        if s.max_iter == 0 {
            return Err(Error::invalid("solver.max_iter", "must be at least 1"));
        }
        if s.kappa.is_some_and(|k| !(k >= 1.0 && k.is_finite())) {
            return Err(Error::invalid("solver.kappa", "must be a finite number >= 1"));
        }
        if s.theta_bound.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::invalid("solver.theta_bound", "must be positive and finite"));
        }
        if !(self.norms.bisection_tol > 0.0) {
            return Err(Error::invalid("norms.bisection_tol", "must be positive"));
        }
        let v = &self.verify.settings;
        if !(v.epsilon > 0.0 && v.epsilon.is_finite()) {
            return Err(Error::invalid("verify.epsilon", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn instance(&self) -> Result<Instance> {
        Instance::from_config(&self.market)
    }
}

#[derive(Debug, Parser)]
#[command(name = "impact-bsde", version, about = "Price-impact equilibrium lab on a binomial lattice")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `<out>.nodes.csv`.
    #[arg(long)]
    pub dump_nodes: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the equilibrium by backward induction.
    Price {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the BSDE explicitly, by Picard iteration, or both.
    Bsde {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
    },
    /// Norms of the inputs and of the equilibrium integrands.
    Norms {
        #[command(flatten)]
        common: Common,
    },
    /// Run the executable lemma checks.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        suite: Option<Suite>,
    },
    /// Sweep one parameter and tabulate Picard behaviour.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
}

/// Replaces non-finite values by `None` so summaries stay valid JSON.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceNorms {
    pub psi_bmo: f64,
    pub sigma_bmo: f64,
    pub alpha_bmo: f64,
    pub eta_bmo: f64,
    pub theta_bmo: f64,
    pub demand_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSummary {
    pub num_steps: usize,
    pub num_stocks: usize,
    pub risk_aversion: f64,
    pub initial_price: Vec<f64>,
    pub initial_certainty_equivalent: f64,
    pub dividend_mean: Vec<f64>,
    /// `max |α − α_log|`, the gap between the two forms of `α`.
    pub alpha_gap: f64,
    pub min_certainty_equivalent: f64,
    pub max_martingale_defect: f64,
    pub norms: PriceNorms,
}

fn price_norms(solution: &EquilibriumSolution, instance: &Instance) -> Result<PriceNorms> {
    let l = &instance.lattice;
    Ok(PriceNorms {
        psi_bmo: bmo_norm(&l.conditional_expectation(&instance.dividend.centered())?, l)?.value,
        sigma_bmo: h_bmo_norm(&solution.sigma, l)?.value,
        alpha_bmo: h_bmo_norm(&solution.alpha, l)?.value,
        eta_bmo: h_bmo_norm(&solution.eta, l)?.value,
        theta_bmo: h_bmo_norm(&solution.theta, l)?.value,
        demand_sup: instance.demand_sup(),
    })
}

pub fn price_summary(instance: &Instance) -> Result<(PriceSummary, EquilibriumSolution)> {
    let solution = price_equilibrium(instance)?;
    let d = equilibrium_defects(&solution)?;
    let summary = PriceSummary {
        num_steps: instance.lattice.num_steps(),
        num_stocks: instance.num_stocks(),
        risk_aversion: instance.risk_aversion,
        initial_price: solution.initial_price().to_vec(),
        initial_certainty_equivalent: solution.initial_certainty_equivalent(),
        dividend_mean: instance.dividend.mean(),
        alpha_gap: solution.alpha_gap(),
        min_certainty_equivalent: d.min_certainty_equivalent,
        max_martingale_defect: d.density.value.max(d.prices.value).max(d.gain.value),
        norms: price_norms(&solution, instance)?,
    };
    Ok((summary, solution))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeRun {
    pub initial_price: Vec<f64>,
    pub initial_certainty_equivalent: f64,
    pub residual: f64,
    /// `(‖η‖_bmo + ‖θ‖_bmo) / ‖Ψ − E[Ψ]‖_bmo`.
    pub integrand_ratio: Option<f64>,
    /// Largest martingale defect of the assembled `Z`, `ZS`, `Z(γ·S)`.
    pub assembly_defect: Option<f64>,
    pub guard_error: Option<String>,
    /// Largest node gap to the pricer's `S` and `R`.
    pub pricer_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardRun {
    pub converged: bool,
    pub iterations: usize,
    pub aborted: Option<String>,
    pub l_bmo: f64,
    pub kappa: f64,
    pub kappa_corpus: f64,
    pub theta_bound: f64,
    pub small_data: bool,
    pub existence_radius: f64,
    pub final_norm: Option<f64>,
    pub ball_bound_holds: Option<bool>,
    pub bound_violations: usize,
    pub max_ratio: Option<f64>,
    pub ratios: Vec<Option<f64>>,
    pub note: String,
    pub solution: Option<BsdeRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeSummary {
    pub method: MethodChoice,
    pub explicit: Option<BsdeRun>,
    pub picard: Option<PicardRun>,
    /// Node-max gap between the explicit and Picard solutions.
    pub discrepancy: Option<f64>,
}

fn bsde_run(solution: &bsde::BsdeSolution, instance: &Instance, priced: &EquilibriumSolution) -> Result<BsdeRun> {
    let assembly = assemble(solution, &instance.demand)?;
    let defect = match (&assembly.density_defect, &assembly.priced_defect, &assembly.gain_defect) {
        (Some(a), Some(b), Some(c)) => Some(a.value.max(b.value).max(c.value)),
        _ => None,
    };
    let gap = solution
        .prices()
        .max_abs_diff(&priced.prices)
        .max(solution.certainty_equivalent().max_abs_diff(&priced.certainty_equivalent));
    Ok(BsdeRun {
        initial_price: solution.prices().at(0, 0).to_vec(),
        initial_certainty_equivalent: solution.certainty_equivalent().value(0, 0),
        residual: solution.residual,
        integrand_ratio: integrand_ratio(solution, &instance.dividend)?,
        assembly_defect: defect,
        guard_error: assembly.guard_error,
        pricer_gap: gap,
    })
}

fn picard_run(diag: &IterationDiagnostics, report: &ContractionReport, solution: Option<BsdeRun>) -> PicardRun {
    PicardRun {
        converged: diag.converged,
        iterations: diag.iterations,
        aborted: diag.aborted.clone(),
        l_bmo: diag.l_bmo,
        kappa: diag.kappa,
        kappa_corpus: diag.kappa_corpus,
        theta_bound: diag.theta_bound,
        small_data: diag.small_data(),
        existence_radius: diag.existence_radius,
        final_norm: diag.final_norm().and_then(finite),
        ball_bound_holds: report.ball_bound.as_ref().map(|b| b.holds),
        bound_violations: report.violations,
        max_ratio: finite(diag.max_ratio()),
        ratios: diag.ratios.iter().map(|r| finite(*r)).collect(),
        note: report.note.clone(),
        solution,
    }
}

/// Summary, Picard diagnostics, and a solution with its assembly for the node dump.
pub type BsdeOutputs = (BsdeSummary, Option<IterationDiagnostics>, Option<(bsde::BsdeSolution, bsde::Assembly)>);

/// Runs the requested BSDE solvers. Also returns the Picard diagnostics and
/// the explicit solution with its assembly for the side files.
pub fn bsde_summary(
    instance: &Instance,
    method: MethodChoice,
    solver: &SolverConfig,
) -> Result<BsdeOutputs> {
    let priced = price_equilibrium(instance)?;
    let mut summary = BsdeSummary {
        method,
        explicit: None,
        picard: None,
        discrepancy: None,
    };
    let mut explicit = None;
    if method != MethodChoice::Picard {
        let sol = solve_explicit(instance)?;
        summary.explicit = Some(bsde_run(&sol, instance, &priced)?);
        explicit = Some(sol);
    }
    let mut diagnostics = None;
    let mut picard_solution = None;
    if method != MethodChoice::Explicit {
        let out = solve_picard(instance, &solver.picard())?;
        let report = contraction_report(&out.diagnostics, solver.bound_tol);
        let run = match &out.solution {
            Some(s) => Some(bsde_run(s, instance, &priced)?),
            None => None,
        };
        summary.picard = Some(picard_run(&out.diagnostics, &report, run));
        diagnostics = Some(out.diagnostics);
        picard_solution = out.solution;
    }
    if let (Some(e), Some(p)) = (&explicit, &picard_solution) {
        summary.discrepancy = finite(e.max_gap(p));
    }
    let dump = match explicit.or(picard_solution) {
        Some(s) => {
            let a = assemble(&s, &instance.demand)?;
            Some((s, a))
        }
        None => None,
    };
    Ok((summary, diagnostics, dump))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DividendNorms {
    pub sup: NormReport,
    pub bmo: NormReport,
    pub bmo1: Option<NormReport>,
    pub h: Option<NormReport>,
    /// `(max − min)/2` per component; bounds `‖Ψ − E[Ψ]‖_bmo` for one stock.
    pub midrange: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsSummary {
    pub dividend: DividendNorms,
    pub demand_sup: NormReport,
    pub sigma_bmo: NormReport,
    pub alpha_bmo: NormReport,
    pub eta_bmo: NormReport,
    pub theta_bmo: NormReport,
    /// `a ‖γ‖_∞ ‖Ψ − E[Ψ]‖_bmo`.
    pub smallness_product: f64,
}

pub fn norms_summary(instance: &Instance, bisection_tol: f64) -> Result<NormsSummary> {
    let l = &instance.lattice;
    let centered = instance.dividend.centered();
    let m = l.conditional_expectation(&centered)?;
    let bmo = bmo_norm(&m, l)?;
    let mut notes = Vec::new();
    let (bmo1, h) = if l.num_steps() <= DEFAULT_SWEEP_MAX_STEPS {
        (Some(bmo_p_norm(&m, 1.0, l)?), Some(h_norm(&m, l, bisection_tol)?.norm))
    } else {
        notes.push(format!(
            "bmo_1 and H norms need a descendant sweep; skipped above {DEFAULT_SWEEP_MAX_STEPS} steps"
        ));
        (None, None)
    };
    let solution = price_equilibrium(instance)?;
    let demand_sup = sup_norm_predictable(&instance.demand);
    Ok(NormsSummary {
        smallness_product: instance.risk_aversion * demand_sup.value * bmo.value,
        dividend: DividendNorms {
            sup: sup_norm_terminal(&instance.dividend, l),
            bmo,
            bmo1,
            h,
            midrange: midrange_bound(&instance.dividend),
            notes,
        },
        demand_sup,
        sigma_bmo: h_bmo_norm(&solution.sigma, l)?,
        alpha_bmo: h_bmo_norm(&solution.alpha, l)?,
        eta_bmo: h_bmo_norm(&solution.eta, l)?,
        theta_bmo: h_bmo_norm(&solution.theta, l)?,
    })
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub product: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_ratio: Option<f64>,
    pub sigma_bmo: f64,
    pub alpha_bmo: f64,
    /// Node-max `|S_pricer − S_bsde|` for the explicit scheme.
    pub pricer_bsde_gap: f64,
}

fn sweep_instance(config: &RunConfig, param: SweepParam, value: f64) -> Result<Instance> {
    let mut market = config.market.clone();
    match param {
        SweepParam::RiskAversion => market.risk_aversion = value,
        SweepParam::NumSteps => {
            if !(value >= 1.0 && value.is_finite()) {
                return Err(Error::invalid("num_steps", format!("sweep value {value} is not a positive step count")));
            }
            market.num_steps = value.round() as usize;
        }
        _ => {}
    }
    let instance = Instance::from_config(&market)?;
    match param {
        SweepParam::DemandScale => instance.scale_demand(value),
        SweepParam::DividendScale => instance.scale_dividend(value),
        _ => Ok(instance),
    }
}

pub fn sweep_rows(config: &RunConfig, param: SweepParam, from: f64, to: f64, points: usize) -> Result<Vec<SweepRow>> {
    if points == 0 {
        return Err(Error::invalid("points", "must be at least 1"));
    }
    if !(from.is_finite() && to.is_finite()) {
        return Err(Error::invalid("from/to", "must be finite"));
    }
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let value = if points == 1 {
            from
        } else {
            from + (to - from) * i as f64 / (points - 1) as f64
        };
        let instance = sweep_instance(config, param, value)?;
        let l = &instance.lattice;
        let priced = price_equilibrium(&instance)?;
        let explicit = solve_explicit(&instance)?;
        let out = solve_picard(&instance, &config.solver.picard())?;
        let psi = bmo_norm(&l.conditional_expectation(&instance.dividend.centered())?, l)?.value;
        rows.push(SweepRow {
            value: if param == SweepParam::NumSteps { l.num_steps() as f64 } else { value },
            product: instance.risk_aversion * instance.demand_sup() * psi,
            converged: out.diagnostics.converged,
            iterations: out.diagnostics.iterations,
            final_ratio: out.diagnostics.ratios.last().copied().and_then(finite),
            sigma_bmo: h_bmo_norm(&priced.sigma, l)?.value,
            alpha_bmo: h_bmo_norm(&priced.alpha, l)?.value,
            pricer_bsde_gap: explicit.prices().max_abs_diff(&priced.prices),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(param: SweepParam, rows: &[SweepRow], out: &mut W) -> std::io::Result<()> {
    let name = serde_json::to_value(param).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let header = [
        name.as_str(),
        "product",
        "converged",
        "iterations",
        "final_ratio",
        "sigma_bmo",
        "alpha_bmo",
        "pricer_bsde_gap",
    ];
    row(out, &header.map(String::from))?;
    for r in rows {
        row(
            out,
            &[
                sci(r.value),
                sci(r.product),
                r.converged.to_string(),
                r.iterations.to_string(),
                r.final_ratio.map(sci).unwrap_or_default(),
                sci(r.sigma_bmo),
                sci(r.alpha_bmo),
                sci(r.pricer_bsde_gap),
            ],
        )?;
    }
    Ok(())
}

/// `<out>.<suffix>` next to the summary file.
pub fn side_path(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_side(out: Option<&Path>, suffix: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let out = out.ok_or_else(|| Error::Config(format!("writing the {suffix} side file needs --out")))?;
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(side_path(out, suffix), buf)?;
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::StepCap { .. }
        | Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::Config(_)
        | Error::Io(_)
        | Error::Json(_) => EXIT_CONFIG,
        Error::NotMartingale { .. }
        | Error::ExponentialGuard { .. }
        | Error::Overflow { .. }
        | Error::NonFinite { .. }
        | Error::NotCentered { .. } => EXIT_NUMERIC,
    }
}

struct Target<'a> {
    out: Option<PathBuf>,
    dump_nodes: bool,
    config: &'a RunConfig,
}

impl<'a> Target<'a> {
    fn new(common: &Common, config: &'a RunConfig) -> Self {
        Target {
            out: common.out.clone().or_else(|| config.output.path.clone()),
            dump_nodes: common.dump_nodes || config.output.dump_nodes,
            config,
        }
    }

    fn out(&self) -> Option<&Path> {
        self.out.as_deref()
    }
}

pub fn cmd_price(config: &RunConfig, common: &Common) -> Result<i32> {
    let t = Target::new(common, config);
    let (summary, solution) = price_summary(&config.instance()?)?;
    if t.dump_nodes {
        write_side(t.out(), "nodes.csv", |w| pricer::write_nodes_csv(&solution, w))?;
    }
    emit_json(&summary, t.out())?;
    Ok(EXIT_OK)
}

pub fn cmd_bsde(config: &RunConfig, common: &Common, method: Option<MethodChoice>) -> Result<i32> {
    let t = Target::new(common, config);
    let method = method.unwrap_or(t.config.solver.method);
    let (summary, diag, dump) = bsde_summary(&config.instance()?, method, &config.solver)?;
    if let (Some(d), Some(_)) = (&diag, t.out()) {
        write_side(t.out(), "iterations.csv", |w| bsde::write_iterations_csv(d, w))?;
    }
    if t.dump_nodes {
        if let Some((s, a)) = &dump {
            write_side(t.out(), "nodes.csv", |w| bsde::write_nodes_csv(s, a, w))?;
        }
    }
    emit_json(&summary, t.out())?;
    Ok(EXIT_OK)
}

pub fn cmd_norms(config: &RunConfig, common: &Common) -> Result<i32> {
    let t = Target::new(common, config);
    let instance = config.instance()?;
    let summary = norms_summary(&instance, config.norms.bisection_tol)?;
    if t.dump_nodes {
        let solution = price_equilibrium(&instance)?;
        write_side(t.out(), "nodes.csv", |w| pricer::write_nodes_csv(&solution, w))?;
    }
    emit_json(&summary, t.out())?;
    Ok(EXIT_OK)
}

pub fn cmd_verify(config: &RunConfig, common: &Common, suite: Option<Suite>) -> Result<i32> {
    let t = Target::new(common, config);
    let suite = suite.unwrap_or(config.verify.suite);
    let mut settings = config.verify.settings.clone();
    settings.bisection_tol = config.norms.bisection_tol;
    let outcome: SuiteOutcome = run_suite(&config.instance()?, suite, &settings, &config.solver.picard())?;
    emit_json(&outcome, t.out())?;
    Ok(if outcome.passed() { EXIT_OK } else { EXIT_VERIFY })
}

pub fn cmd_sweep(config: &RunConfig, common: &Common, param: SweepParam, from: f64, to: f64, points: usize) -> Result<i32> {
    let t = Target::new(common, config);
    let rows = sweep_rows(config, param, from, to, points)?;
    let mut buf = Vec::new();
    write_sweep_csv(param, &rows, &mut buf)?;
    match t.out() {
        Some(p) => fs::write(p, buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let common = match &cli.command {
        Command::Price { common }
        | Command::Bsde { common, .. }
        | Command::Norms { common }
        | Command::Verify { common, .. }
        | Command::Sweep { common, .. } => common,
    };
    let config = RunConfig::load(&common.config)?;
    match &cli.command {
        Command::Price { common } => cmd_price(&config, common),
        Command::Bsde { common, method } => cmd_bsde(&config, common, *method),
        Command::Norms { common } => cmd_norms(&config, common),
        Command::Verify { common, suite } => cmd_verify(&config, common, *suite),
        Command::Sweep {
            common,
            param,
            from,
            to,
            points,
        } => cmd_sweep(&config, common, *param, *from, *to, *points),
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_PERIOD: &str = r#"{
        "market": {
            "risk_aversion": 1.0, "num_stocks": 1, "num_steps": 1,
            "demand": {"kind": "constant", "value": [0.5]},
            "dividend": {"kind": "sign_of_b_t", "scale": [1.0]}
        }
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::parse(ONE_PERIOD).unwrap();
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.verify.suite, Suite::All);
        let back = RunConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_bad_fields() {
        let unknown = ONE_PERIOD.replacen("\"market\"", "\"bogus\": 1, \"market\"", 1);
        assert!(matches!(RunConfig::parse(&unknown), Err(Error::Config(_))));
        let bad = ONE_PERIOD.replace("\"risk_aversion\": 1.0", "\"risk_aversion\": 0.0");
        let e = RunConfig::parse(&bad).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        assert!(e.to_string().contains("risk_aversion"));
    }

    #[test]
    fn one_period_summary() {
        let c = RunConfig::parse(ONE_PERIOD).unwrap();
        let (s, _) = price_summary(&c.instance().unwrap()).unwrap();
        assert!((s.initial_price[0] + 0.4621171572600098).abs() < 1e-12);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<PriceSummary>(&text).unwrap(), s);
    }

    #[test]
    fn side_paths() {
        assert_eq!(side_path(Path::new("/tmp/run.json"), "nodes.csv"), PathBuf::from("/tmp/run.json.nodes.csv"));
    }
}
