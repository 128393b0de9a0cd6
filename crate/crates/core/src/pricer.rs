//! Exact equilibrium pricer.
//!
//! Prices are `S_t = E^Q_t[Ψ]` under the pricing measure with density
//! proportional to `exp(−a ∫γ dS)`. On the lattice this fixed point is solved
//! by one backward pass: at a node with outgoing demand `g` and children
//! `(S±, w±)`, where `w = exp(−aR)`,
//!
//! ```text
//! u± = exp(−a g·S±) w± / 2
//! S  = (u⁺S⁺ + u⁻S⁻) / (u⁺ + u⁻)
//! w  = exp(a g·S) (u⁺ + u⁻)
//! ```
//!
//! The factor `exp(a g·S_t)` is known at the node and cancels from the
//! conditional ratio, so no per-node fixed point is needed. The recursion is
//! carried in log space (`log w = −aR`) with the usual max-shift, so large
//! exponents never overflow.

use std::io::Write;

use crate::error::{Error, Result};
use crate::lattice::{AdaptedProcess, Defect, Lattice, PredictableProcess};
use crate::output::{row, sci};
use crate::scenario::{Instance, StoppingTime};

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub lattice: Lattice,
    pub risk_aversion: f64,
    pub demand: PredictableProcess,
    /// Stock prices `S` (n-dimensional), `S_N = Ψ`.
    pub prices: AdaptedProcess,
    /// Certainty equivalent `R`, `R_N = 0`.
    pub certainty_equivalent: AdaptedProcess,
    /// Density process `Z` of the pricing measure, `Z_0 = 1`.
    pub density: AdaptedProcess,
    /// Conditional pricing-measure probability of the up child.
    pub q_up: PredictableProcess,
    /// Market maker's gain `γ·S`.
    pub gain: AdaptedProcess,
    /// Market price of risk from the difference quotient of `Z`.
    pub alpha: PredictableProcess,
    /// Market price of risk from the log-density increments.
    pub alpha_log: PredictableProcess,
    pub sigma: PredictableProcess,
    pub theta: PredictableProcess,
    pub eta: PredictableProcess,
}

impl EquilibriumSolution {
    pub fn initial_price(&self) -> &[f64] {
        self.prices.initial()
    }

    pub fn initial_certainty_equivalent(&self) -> f64 {
        self.certainty_equivalent.value(0, 0)
    }

    /// Largest gap between the two discrete market prices of risk.
    pub fn alpha_gap(&self) -> f64 {
        self.alpha.max_abs_diff(&self.alpha_log)
    }
}

/// Prices the equilibrium of a fully evaluated instance.
pub fn price_equilibrium(instance: &Instance) -> Result<EquilibriumSolution> {
    let lattice = instance.lattice;
    let a = instance.risk_aversion;
    let n = instance.num_stocks();
    let steps = lattice.num_steps();
    let demand = &instance.demand;

    let mut prices = AdaptedProcess::zeros(&lattice, n);
    let mut log_w = AdaptedProcess::zeros(&lattice, 1);
    let mut q_up = PredictableProcess::zeros(&lattice, 1);
    for leaf in 0..lattice.num_leaves() {
        prices.at_mut(steps, leaf).copy_from_slice(instance.dividend.at(leaf));
    }

    let mut s = vec![0.0; n];
    for k in (0..steps).rev() {
        for j in 0..lattice.nodes_at(k) {
            let (d, u) = Lattice::children(j);
            let g = demand.at(k, j);
            let s_dn = prices.at(k + 1, d);
            let s_up = prices.at(k + 1, u);
            let x_dn = -a * dot(g, s_dn) + log_w.value(k + 1, d);
            let x_up = -a * dot(g, s_up) + log_w.value(k + 1, u);
            if !x_dn.is_finite() || !x_up.is_finite() {
                return Err(Error::Overflow {
                    step: k,
                    node: j,
                    hint: "exponential tilt is not finite; use a smaller risk aversion or rescale demand".into(),
                });
            }
            let m = x_dn.max(x_up);
            let e_dn = (x_dn - m).exp();
            let e_up = (x_up - m).exp();
            let total = e_dn + e_up;
            let q = e_up / total;
            for c in 0..n {
                s[c] = q * s_up[c] + (1.0 - q) * s_dn[c];
            }
            let lw = a * dot(g, &s) + m + (0.5 * total).ln();
            if !lw.is_finite() || s.iter().any(|v| !v.is_finite()) || !q.is_finite() {
                return Err(Error::NonFinite {
                    what: "equilibrium recursion".into(),
                    step: k,
                    node: j,
                });
            }
            prices.at_mut(k, j).copy_from_slice(&s);
            log_w.at_mut(k, j)[0] = lw;
            q_up.at_mut(k, j)[0] = q;
        }
    }

    let certainty_equivalent = log_w.map(|lw| -lw / a);

    let mut density = AdaptedProcess::zeros(&lattice, 1);
    density.at_mut(0, 0)[0] = 1.0;
    for k in 0..steps {
        for child in 0..lattice.nodes_at(k + 1) {
            let parent = child >> 1;
            let q = q_up.value(k, parent);
            let p = if child & 1 == 1 { q } else { 1.0 - q };
            density.at_mut(k + 1, child)[0] = density.value(k, parent) * 2.0 * p;
        }
    }

    let sqrt_dt = lattice.sqrt_dt();
    let alpha = q_up.map(|q| -(2.0 * q - 1.0) / sqrt_dt);
    let alpha_log = q_up.map(|q| -((q / (1.0 - q)).ln()) / (2.0 * sqrt_dt));
    let sigma = lattice.martingale_integrand(&prices)?;
    let theta = sigma.scaled(a);
    let eta = lattice.martingale_integrand(&log_w.scaled(-1.0))?;
    let gain = lattice.stochastic_integral(demand, &prices)?;

    Ok(EquilibriumSolution {
        lattice,
        risk_aversion: a,
        demand: demand.clone(),
        prices,
        certainty_equivalent,
        density,
        q_up,
        gain,
        alpha,
        alpha_log,
        sigma,
        theta,
        eta,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The market maker's gain `γ·S`.
pub fn gain_process(solution: &EquilibriumSolution) -> Result<AdaptedProcess> {
    solution
        .lattice
        .stochastic_integral(&solution.demand, &solution.prices)
}

/// Defects of the equilibrium conditions at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumDefects {
    /// `Z` under `P`.
    pub density: Defect,
    /// `S` under `Q`.
    pub prices: Defect,
    /// `γ·S` under `Q`.
    pub gain: Defect,
    /// `min R`.
    pub min_certainty_equivalent: f64,
    /// `max |Z_N − exp(−a(gain_N − R_0))|` over leaves.
    pub density_identity: f64,
    /// `min Z`.
    pub min_density: f64,
}

pub fn equilibrium_defects(solution: &EquilibriumSolution) -> Result<EquilibriumDefects> {
    let l = &solution.lattice;
    let density = l.martingale_defect(&solution.density, None)?;
    let prices = l.martingale_defect(&solution.prices, Some(&solution.q_up))?;
    let gain = l.martingale_defect(&solution.gain, Some(&solution.q_up))?;
    let min_r = solution
        .certainty_equivalent
        .slices()
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let min_z = solution
        .density
        .slices()
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let r0 = solution.initial_certainty_equivalent();
    let a = solution.risk_aversion;
    let n = l.num_steps();
    let identity = (0..l.num_leaves())
        .map(|leaf| {
            let expected = (-a * (solution.gain.value(n, leaf) - r0)).exp();
            (solution.density.value(n, leaf) - expected).abs() / expected.max(1.0)
        })
        .fold(0.0, f64::max);
    Ok(EquilibriumDefects {
        density,
        prices,
        gain,
        min_certainty_equivalent: min_r,
        density_identity: identity,
        min_density: min_z,
    })
}

/// Node-by-node comparison of a localized solution with the original after `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub solution: EquilibriumSolution,
    pub max_gap: f64,
    pub worst_step: usize,
    pub worst_node: usize,
    pub nodes_compared: usize,
}

/// Prices `(Ψ 1{τ<N}, γ 1{k>τ})` and compares with `solution` on `{k > τ}`.
pub fn localize(solution: &EquilibriumSolution, instance: &Instance, tau: &StoppingTime) -> Result<LocalizationReport> {
    let local = price_equilibrium(&instance.localized(tau)?)?;
    let l = &solution.lattice;
    let mut report = LocalizationReport {
        solution: local,
        max_gap: 0.0,
        worst_step: 0,
        worst_node: 0,
        nodes_compared: 0,
    };
    for k in 0..=l.num_steps() {
        for j in 0..l.nodes_at(k) {
            if !tau.after(k, j) {
                continue;
            }
            report.nodes_compared += 1;
            let gap = solution
                .prices
                .at(k, j)
                .iter()
                .zip(report.solution.prices.at(k, j))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if gap > report.max_gap {
                report.max_gap = gap;
                report.worst_step = k;
                report.worst_node = j;
            }
        }
    }
    Ok(report)
}

/// Per-node dump: `step,node,B,S_1..S_n,R,Z,q_up,alpha,sigma_1..sigma_n`.
/// Predictable columns are empty on terminal nodes.
pub fn write_nodes_csv<W: Write>(solution: &EquilibriumSolution, out: &mut W) -> std::io::Result<()> {
    let l = &solution.lattice;
    let n = solution.prices.dim();
    let mut header = vec!["step".to_string(), "node".into(), "B".into()];
    header.extend((1..=n).map(|i| format!("S_{i}")));
    header.extend(["R".into(), "Z".into(), "q_up".into(), "alpha".into()]);
    header.extend((1..=n).map(|i| format!("sigma_{i}")));
    row(out, &header)?;
    for k in 0..=l.num_steps() {
        for j in 0..l.nodes_at(k) {
            let mut fields = vec![k.to_string(), j.to_string(), sci(l.brownian(k, j))];
            fields.extend(solution.prices.at(k, j).iter().map(|&v| sci(v)));
            fields.push(sci(solution.certainty_equivalent.value(k, j)));
            fields.push(sci(solution.density.value(k, j)));
            if k < l.num_steps() {
                fields.push(sci(solution.q_up.value(k, j)));
                fields.push(sci(solution.alpha.value(k, j)));
                fields.extend(solution.sigma.at(k, j).iter().map(|&v| sci(v)));
            } else {
                fields.extend(std::iter::repeat_n(String::new(), 2 + n));
            }
            row(out, &fields)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Terminal;

    fn one_period(a: f64, g: f64) -> EquilibriumSolution {
        let l = Lattice::new(1, 1.0).unwrap();
        let inst = Instance::new(
            l,
            a,
            PredictableProcess::constant(&l, &[g]),
            Terminal::new(1, vec![-1.0, 1.0]),
        )
        .unwrap();
        price_equilibrium(&inst).unwrap()
    }

    #[test]
    fn one_period_closed_form() {
        let sol = one_period(1.0, 0.5);
        let s0 = -(0.5f64).tanh();
        let r0 = 0.5 * 0.5f64.tanh() - 0.5f64.cosh().ln();
        assert!((sol.initial_price()[0] - s0).abs() < 1e-15);
        assert!((sol.initial_price()[0] + 0.4621171573).abs() < 1e-10);
        assert!((sol.initial_certainty_equivalent() - r0).abs() < 1e-15);
        assert!((sol.initial_certainty_equivalent() - 0.110944).abs() < 1e-6);
    }

    #[test]
    fn one_period_price_impact_is_monotone() {
        let mut last = f64::INFINITY;
        for c in [-2.0, -1.0, -0.3, 0.0, 0.4, 1.5, 3.0] {
            let s0 = one_period(1.0, c).initial_price()[0];
            assert!((s0 + f64::tanh(c)).abs() < 1e-14);
            assert!(s0 < last);
            last = s0;
        }
    }

    #[test]
    fn zero_demand_is_plain_expectation() {
        let l = Lattice::new(5, 1.0).unwrap();
        let psi = Terminal::from_fn(&l, 1, |j, o| o[0] = (j as f64).sin());
        let inst = Instance::new(l, 0.7, PredictableProcess::zeros(&l, 1), psi.clone()).unwrap();
        let sol = price_equilibrium(&inst).unwrap();
        let m = l.conditional_expectation(&psi).unwrap();
        assert!(sol.prices.max_abs_diff(m.process()) < 1e-15);
        assert_eq!(sol.certainty_equivalent.max_norm().0, 0.0);
        assert!(sol.density.max_abs_diff(&AdaptedProcess::from_fn(&l, 1, |_, _, o| o[0] = 1.0)) == 0.0);
        assert!(sol.q_up.slices().iter().flatten().all(|&q| q == 0.5));
    }

    #[test]
    fn one_period_gain() {
        let sol = one_period(1.0, 0.5);
        let t = 0.5f64.tanh();
        assert!((sol.gain.value(1, 1) - 0.5 * (1.0 + t)).abs() < 1e-15);
        assert!((sol.gain.value(1, 0) - 0.5 * (-1.0 + t)).abs() < 1e-15);
        assert!(gain_process(&sol).unwrap().max_abs_diff(&sol.gain) == 0.0);
        let d = equilibrium_defects(&sol).unwrap();
        assert!(d.density_identity < 1e-12);
    }

    #[test]
    fn huge_tilt_stays_finite() {
        let l = Lattice::new(6, 1.0).unwrap();
        let inst = Instance::new(
            l,
            200.0,
            PredictableProcess::constant(&l, &[1.0]),
            Terminal::from_fn(&l, 1, |j, o| o[0] = l.sign_brownian(6, j)),
        )
        .unwrap();
        let sol = price_equilibrium(&inst).unwrap();
        assert!(sol.prices.first_non_finite().is_none());
        assert!(sol.certainty_equivalent.first_non_finite().is_none());
    }

    #[test]
    fn non_finite_dividend_is_reported() {
        let l = Lattice::new(2, 1.0).unwrap();
        let inst = Instance::new(
            l,
            1.0,
            PredictableProcess::constant(&l, &[0.5]),
            Terminal::new(1, vec![0.0, f64::INFINITY, 1.0, 0.0]),
        )
        .unwrap();
        assert!(price_equilibrium(&inst).is_err());
    }

    #[test]
    fn eta_plus_theta_gamma_tracks_alpha() {
        // α = η + θγ only holds up to O(dt); check the gap shrinks with dt.
        let gap = |n: usize| {
            let l = Lattice::new(n, 1.0).unwrap();
            let inst = Instance::new(
                l,
                0.5,
                PredictableProcess::constant(&l, &[0.5]),
                Terminal::from_fn(&l, 1, |j, o| o[0] = (l.brownian(n, j)).tanh()),
            )
            .unwrap();
            let sol = price_equilibrium(&inst).unwrap();
            let combo = sol.eta.zip_with(&sol.theta, |e, t| e + t * 0.5).unwrap();
            combo.max_abs_diff(&sol.alpha)
        };
        let (g8, g16) = (gap(8), gap(16));
        assert!(g16 < g8, "{g8} {g16}");
    }

    #[test]
    fn csv_dump_shape() {
        let sol = one_period(1.0, 0.5);
        let mut buf = Vec::new();
        write_nodes_csv(&sol, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "step,node,B,S_1,R,Z,q_up,alpha,sigma_1");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(",,,"));
    }
}
