//! BMO, bmo_p, Orlicz-H and sup norms on the lattice.
//!
//! Every norm here is a supremum over stopping times `τ` of an
//! `F_τ`-measurable quantity `E_τ[φ(M_N − M_τ)]`. On a finite tree the value
//! of such a quantity on an atom `{τ = k}` ∩ {path through `(k, j)`} is the
//! node value `E_{(k,j)}[φ(M_N − M_{(k,j)})]`, so the supremum is at most the
//! node maximum; conversely the stopping time "stop at the node `(k, j)` if
//! the path passes through it, otherwise at `N`" attains the node value on a
//! set of positive probability, so the essential supremum is at least that
//! value. Hence every supremum over stopping times is a plain node maximum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{AdaptedProcess, Lattice, Martingale, PredictableProcess, Terminal};

/// Default cap on `N` for norms that need a full descendant sweep.
pub const DEFAULT_SWEEP_MAX_STEPS: usize = 14;

pub const DEFAULT_BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormKind {
    Bmo,
    BmoP { p: f64 },
    OrliczH,
    HBmo,
    Sup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    /// `(step, node)` attaining the maximum.
    pub achieving_node: (usize, usize),
    pub kind: NormKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bisection_iterations: Option<usize>,
}

impl NormReport {
    fn new(kind: NormKind, value: f64, node: (usize, usize)) -> Self {
        NormReport {
            value,
            achieving_node: node,
            kind,
            bisection_iterations: None,
        }
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Node values of `E_node[|M_N − M_node|²]` under `P` or under the measure with
/// one-step up-probabilities `q_up`, via orthogonality of increments.
fn remaining_variance(process: &AdaptedProcess, lattice: &Lattice, q_up: Option<&PredictableProcess>) -> AdaptedProcess {
    let n = lattice.num_steps();
    let mut acc = AdaptedProcess::zeros(lattice, 1);
    for k in (0..n).rev() {
        for j in 0..lattice.nodes_at(k) {
            let (d, u) = Lattice::children(j);
            let v = process.at(k, j);
            let q = q_up.map_or(0.5, |q| q.value(k, j));
            let dn = acc.value(k + 1, d) + dist(process.at(k + 1, d), v).powi(2);
            let up = acc.value(k + 1, u) + dist(process.at(k + 1, u), v).powi(2);
            acc.at_mut(k, j)[0] = q * up + (1.0 - q) * dn;
        }
    }
    acc
}

fn max_node(field: &AdaptedProcess) -> (f64, (usize, usize)) {
    let mut best = (0.0, (0, 0));
    for (k, slice) in field.slices().iter().enumerate() {
        for (j, &v) in slice.iter().enumerate() {
            if v > best.0 {
                best = (v, (k, j));
            }
        }
    }
    best
}

/// `‖M‖_bmo = sup_τ ‖E_τ[|M_N − M_τ|²]^{1/2}‖_∞`.
pub fn bmo_norm(m: &Martingale, lattice: &Lattice) -> Result<NormReport> {
    check_steps(lattice, m.process().num_steps())?;
    let (v, node) = max_node(&remaining_variance(m.process(), lattice, None));
    Ok(NormReport::new(NormKind::Bmo, v.sqrt(), node))
}

/// BMO norm of an adapted process, refused unless it is a martingale.
pub fn bmo_norm_process(process: &AdaptedProcess, lattice: &Lattice) -> Result<NormReport> {
    let m = Martingale::new(lattice, process.clone())?;
    bmo_norm(&m, lattice)
}

/// BMO norm of a martingale under the measure with up-probabilities `q_up`.
/// The caller is responsible for `process` being a martingale under it.
pub fn bmo_norm_under(process: &AdaptedProcess, lattice: &Lattice, q_up: &PredictableProcess) -> Result<NormReport> {
    check_steps(lattice, process.num_steps())?;
    let (v, node) = max_node(&remaining_variance(process, lattice, Some(q_up)));
    Ok(NormReport::new(NormKind::Bmo, v.sqrt(), node))
}

fn check_steps(lattice: &Lattice, found: usize) -> Result<()> {
    if found != lattice.num_steps() {
        return Err(Error::dims("process steps", lattice.num_steps(), found));
    }
    Ok(())
}

fn check_sweep(lattice: &Lattice, cap: usize) -> Result<()> {
    if lattice.num_steps() > cap {
        return Err(Error::invalid(
            "num_steps",
            format!(
                "{} steps exceed the descendant-sweep cap of {cap}; use a coarser lattice \
                 (bmo_p for p = 2 falls back to the orthogonality pass)",
                lattice.num_steps()
            ),
        ));
    }
    Ok(())
}

/// Node maximum of `E_node[φ(|M_N − M_node|)]` by sweeping all descendant leaves.
fn sweep_max(process: &AdaptedProcess, lattice: &Lattice, phi: impl Fn(f64) -> f64) -> (f64, (usize, usize)) {
    let n = lattice.num_steps();
    let mut best = (0.0, (0, 0));
    for k in 0..n {
        for j in 0..lattice.nodes_at(k) {
            let v = process.at(k, j);
            let range = lattice.leaf_range(k, j);
            let count = range.len() as f64;
            let mean = range.map(|leaf| phi(dist(process.at(n, leaf), v))).sum::<f64>() / count;
            if mean > best.0 {
                best = (mean, (k, j));
            }
        }
    }
    best
}

/// `‖M‖_{bmo_p} = sup_τ ‖E_τ[|M_N − M_τ|^p]^{1/p}‖_∞`, `p ≥ 1`.
pub fn bmo_p_norm(m: &Martingale, p: f64, lattice: &Lattice) -> Result<NormReport> {
    bmo_p_norm_with_cap(m, p, lattice, DEFAULT_SWEEP_MAX_STEPS)
}

pub fn bmo_p_norm_with_cap(m: &Martingale, p: f64, lattice: &Lattice, cap: usize) -> Result<NormReport> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid("p", "must be a finite number >= 1"));
    }
    check_steps(lattice, m.process().num_steps())?;
    if p == 2.0 && lattice.num_steps() > cap {
        let mut r = bmo_norm(m, lattice)?;
        r.kind = NormKind::BmoP { p };
        return Ok(r);
    }
    check_sweep(lattice, cap)?;
    let (v, node) = sweep_max(m.process(), lattice, |x| x.powf(p));
    Ok(NormReport::new(NormKind::BmoP { p }, v.powf(1.0 / p), node))
}

/// `‖M‖_bmo / ‖M‖_{bmo_1}`, the lattice counterpart of the John–Nirenberg
/// constant; `None` for constant martingales.
pub fn bmo_ratio(m: &Martingale, lattice: &Lattice) -> Result<Option<f64>> {
    let b2 = bmo_norm(m, lattice)?.value;
    let b1 = bmo_p_norm(m, 1.0, lattice)?.value;
    Ok(if b1 > 0.0 { Some(b2 / b1) } else { None })
}

/// BMO norm of a centered terminal variable together with the `L∞` bound
/// `inf_x ‖ξ − x‖_∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvBmoReport {
    pub norm: NormReport,
    /// `‖ξ − x_mid‖_∞` with `x_mid` the componentwise midrange. Exact for one
    /// component, an upper bound of the infimum otherwise.
    pub sup_bound: f64,
    pub bound_holds: bool,
}

fn check_centered(xi: &Terminal) -> Result<()> {
    let scale = xi.sup_norm().max(1.0);
    let mean = xi.mean();
    let worst = mean.iter().map(|m| m.abs()).fold(0.0, f64::max);
    if worst > 1e-12 * scale {
        return Err(Error::NotCentered { mean: worst });
    }
    Ok(())
}

pub fn bmo_norm_rv(xi: &Terminal, lattice: &Lattice) -> Result<RvBmoReport> {
    check_centered(xi)?;
    let m = lattice.conditional_expectation(xi)?;
    let norm = bmo_norm(&m, lattice)?;
    let sup_bound = midrange_bound(xi);
    Ok(RvBmoReport {
        bound_holds: norm.value <= sup_bound + 1e-12 * sup_bound.max(1.0),
        norm,
        sup_bound,
    })
}

/// `‖ξ − x_mid‖_∞` for the componentwise midrange `x_mid`.
pub fn midrange_bound(xi: &Terminal) -> f64 {
    let dim = xi.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for leaf in 0..xi.num_leaves() {
        for (c, &v) in xi.at(leaf).iter().enumerate() {
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
    }
    let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    (0..xi.num_leaves())
        .map(|leaf| dist(xi.at(leaf), &mid))
        .fold(0.0, f64::max)
}

/// The N-function `H(u) = e^u (u − 1) + 1`.
pub fn orlicz_h(u: f64) -> f64 {
    if u < 0.5 {
        // Σ_{k≥2} (k−1) u^k / k!, avoiding cancellation near zero.
        let mut term = u * u / 2.0;
        let mut sum = term;
        for k in 3..40 {
            term *= u / k as f64;
            let add = term * (k - 1) as f64;
            sum += add;
            if add < 1e-18 * sum {
                break;
            }
        }
        sum
    } else {
        u * u.exp() - u.exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HNormReport {
    pub norm: NormReport,
    pub bmo: f64,
    /// `‖M‖_bmo / √2 ≤ ‖M‖_H`.
    pub lower_bound_holds: bool,
    /// `‖M‖_H / ‖M‖_bmo`, the empirical stand-in for the upper constant.
    pub ratio_to_bmo: Option<f64>,
}

/// Orlicz norm `inf{λ > 0 : sup_τ ‖E_τ[H(|M_N − M_τ| / λ)]‖_∞ ≤ 1}` by bisection.
pub fn h_norm(m: &Martingale, lattice: &Lattice, bisection_tol: f64) -> Result<HNormReport> {
    h_norm_with_cap(m, lattice, bisection_tol, DEFAULT_SWEEP_MAX_STEPS)
}

pub fn h_norm_with_cap(m: &Martingale, lattice: &Lattice, bisection_tol: f64, cap: usize) -> Result<HNormReport> {
    if !(bisection_tol > 0.0) {
        return Err(Error::invalid("bisection_tol", "must be positive"));
    }
    check_steps(lattice, m.process().num_steps())?;
    check_sweep(lattice, cap)?;
    let process = m.process();
    let bmo = bmo_norm(m, lattice)?.value;

    // Largest one-step increment d: E_k|M_N − M_k| ≥ d at its node, so by
    // Jensen the criterion is ≥ H(1) = 1 at λ = d and the root lies above d.
    let (d_max, _, _) = lattice
        .martingale_integrand(process)?
        .map(|z| z * lattice.sqrt_dt())
        .max_norm();
    if d_max == 0.0 {
        return Ok(HNormReport {
            norm: NormReport {
                bisection_iterations: Some(0),
                ..NormReport::new(NormKind::OrliczH, 0.0, (0, 0))
            },
            bmo,
            lower_bound_holds: true,
            ratio_to_bmo: None,
        });
    }
    let criterion = |lambda: f64| sweep_max(process, lattice, |x| orlicz_h(x / lambda));

    let mut iterations = 0;
    let mut lo = d_max;
    let (at_lo, node_lo) = criterion(lo);
    let (value, node) = if at_lo <= 1.0 {
        (lo, node_lo)
    } else {
        let spread = (0..lattice.num_leaves())
            .map(|leaf| dist(process.at(lattice.num_steps(), leaf), process.initial()))
            .fold(0.0, f64::max);
        let mut hi = (10.0 * spread).max(2.0 * lo);
        while criterion(hi).0 > 1.0 {
            lo = hi;
            hi *= 2.0;
            iterations += 1;
        }
        while hi - lo > bisection_tol * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if criterion(mid).0 <= 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            iterations += 1;
        }
        (hi, criterion(hi).1)
    };
    let norm = NormReport {
        bisection_iterations: Some(iterations),
        ..NormReport::new(NormKind::OrliczH, value, node)
    };
    Ok(HNormReport {
        lower_bound_holds: bmo / std::f64::consts::SQRT_2 <= value * (1.0 + 1e-10) + 1e-12,
        ratio_to_bmo: if bmo > 0.0 { Some(value / bmo) } else { None },
        norm,
        bmo,
    })
}

/// `‖ξ‖_H` of a centered terminal variable (through its Doob martingale).
pub fn h_norm_rv(xi: &Terminal, lattice: &Lattice, bisection_tol: f64) -> Result<HNormReport> {
    check_centered(xi)?;
    let m = lattice.conditional_expectation(xi)?;
    h_norm(&m, lattice, bisection_tol)
}

/// `‖ζ‖_bmo = sup_τ ‖E_τ[Σ_{s≥τ} |ζ_s|² dt]^{1/2}‖_∞`.
pub fn h_bmo_norm(zeta: &PredictableProcess, lattice: &Lattice) -> Result<NormReport> {
    h_bmo_norm_under(zeta, lattice, None)
}

/// As [`h_bmo_norm`], optionally under the measure with up-probabilities `q_up`.
pub fn h_bmo_norm_under(
    zeta: &PredictableProcess,
    lattice: &Lattice,
    q_up: Option<&PredictableProcess>,
) -> Result<NormReport> {
    if zeta.num_steps() != lattice.num_steps() {
        return Err(Error::dims("integrand steps", lattice.num_steps(), zeta.num_steps()));
    }
    let n = lattice.num_steps();
    let dt = lattice.dt();
    let mut next = vec![0.0; lattice.num_leaves()];
    let mut best = (0.0, (n, 0));
    for k in (0..n).rev() {
        let mut cur = vec![0.0; lattice.nodes_at(k)];
        for (j, c) in cur.iter_mut().enumerate() {
            let q = q_up.map_or(0.5, |q| q.value(k, j));
            *c = norm_sq(zeta.at(k, j)) * dt + q * next[2 * j + 1] + (1.0 - q) * next[2 * j];
            if *c > best.0 {
                best = (*c, (k, j));
            }
        }
        next = cur;
    }
    Ok(NormReport::new(NormKind::HBmo, best.0.sqrt(), best.1))
}

pub fn sup_norm_adapted(process: &AdaptedProcess) -> NormReport {
    let (v, k, j) = process.max_norm();
    NormReport::new(NormKind::Sup, v, (k, j))
}

pub fn sup_norm_predictable(process: &PredictableProcess) -> NormReport {
    let (v, k, j) = process.max_norm();
    NormReport::new(NormKind::Sup, v, (k, j))
}

pub fn sup_norm_terminal(xi: &Terminal, lattice: &Lattice) -> NormReport {
    let mut best = (0.0, 0);
    for leaf in 0..xi.num_leaves() {
        let v = norm_sq(xi.at(leaf)).sqrt();
        if v > best.0 {
            best = (v, leaf);
        }
    }
    NormReport::new(NormKind::Sup, best.0, (lattice.num_steps(), best.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(n: usize, t: f64) -> Lattice {
        Lattice::new(n, t).unwrap()
    }

    fn sign_rv(l: &Lattice, c: f64) -> Terminal {
        Terminal::from_fn(l, 1, |j, o| o[0] = c * l.sign_brownian(l.num_steps(), j))
    }

    #[test]
    fn one_step_bmo() {
        let l = lat(1, 1.0);
        let m = l.conditional_expectation(&sign_rv(&l, 1.0)).unwrap();
        let r = bmo_norm(&m, &l).unwrap();
        assert!((r.value - 1.0).abs() < 1e-15);
        assert_eq!(r.achieving_node, (0, 0));
        let r1 = bmo_p_norm(&m, 1.0, &l).unwrap();
        assert!((r1.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn walk_bmo_is_sqrt_horizon() {
        for (n, t) in [(4, 1.0), (7, 2.5), (10, 0.3)] {
            let l = lat(n, t);
            let m = Martingale::new(&l, l.brownian_motion()).unwrap();
            let r = bmo_norm(&m, &l).unwrap();
            assert!((r.value - f64::sqrt(t)).abs() < 1e-12);
            assert_eq!(r.achieving_node, (0, 0));
        }
    }

    #[test]
    fn constant_martingale_has_zero_norms() {
        let l = lat(3, 1.0);
        let c = Terminal::from_fn(&l, 1, |_, o| o[0] = 2.0);
        let m = l.conditional_expectation(&c).unwrap();
        assert_eq!(bmo_norm(&m, &l).unwrap().value, 0.0);
        assert_eq!(h_norm(&m, &l, 1e-10).unwrap().norm.value, 0.0);
        let zero = Terminal::from_fn(&l, 1, |_, o| o[0] = 0.0);
        assert_eq!(bmo_norm_rv(&zero, &l).unwrap().norm.value, 0.0);
    }

    #[test]
    fn non_martingale_refused() {
        let l = lat(3, 1.0);
        let sq = l.brownian_motion().map(|b| b * b);
        assert!(matches!(bmo_norm_process(&sq, &l), Err(Error::NotMartingale { .. })));
    }

    #[test]
    fn rv_examples() {
        let l = lat(1, 1.0);
        let r = bmo_norm_rv(&sign_rv(&l, 1.0), &l).unwrap();
        assert!((r.norm.value - 1.0).abs() < 1e-15);
        assert!((r.sup_bound - 1.0).abs() < 1e-15);
        assert!(r.bound_holds);

        let l = lat(4, 1.0);
        let r = bmo_norm_rv(&l.terminal_brownian(), &l).unwrap();
        assert!((r.norm.value - 1.0).abs() < 1e-12);
        assert!((r.sup_bound - 2.0).abs() < 1e-12);
        assert!(r.bound_holds);
    }

    #[test]
    fn uncentered_rv_refused() {
        let l = lat(2, 1.0);
        let x = Terminal::from_fn(&l, 1, |j, o| o[0] = j as f64);
        assert!(matches!(bmo_norm_rv(&x, &l), Err(Error::NotCentered { .. })));
    }

    #[test]
    fn h_function_values() {
        assert_eq!(orlicz_h(0.0), 0.0);
        assert!((orlicz_h(1.0) - 1.0).abs() < 1e-15);
        assert!((orlicz_h(2.0) - 8.3890560989).abs() < 1e-10);
        assert!((orlicz_h(2.0) - (2f64.exp() + 1.0)).abs() < 1e-14);
        // series branch against the closed form away from cancellation
        for u in [0.1f64, 0.3, 0.49] {
            let closed = u.exp() * (u - 1.0) + 1.0;
            assert!((orlicz_h(u) - closed).abs() < 1e-15);
        }
        // small-u asymptotics u²/2 + u³/3 + u⁴/8
        let u = 1e-5;
        assert!((orlicz_h(u) / (u * u / 2.0 + u * u * u / 3.0 + u.powi(4) / 8.0) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn h_norm_of_symmetric_step() {
        let l = lat(1, 1.0);
        for c in [1.0, 0.25, 3.0] {
            let r = h_norm_rv(&sign_rv(&l, c), &l, 1e-12).unwrap();
            assert!((r.norm.value - c).abs() < 1e-10 * c.max(1.0), "{c}: {}", r.norm.value);
            assert!(r.lower_bound_holds);
        }
    }

    #[test]
    fn h_bmo_examples() {
        let l = lat(6, 2.0);
        let one = PredictableProcess::constant(&l, &[1.0]);
        let r = h_bmo_norm(&one, &l).unwrap();
        assert!((r.value - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(r.achieving_node, (0, 0));
        assert_eq!(h_bmo_norm(&PredictableProcess::zeros(&l, 2), &l).unwrap().value, 0.0);
    }

    #[test]
    fn sup_examples() {
        let l = lat(5, 1.0);
        let g = PredictableProcess::from_fn(&l, 1, |k, j, o| o[0] = -l.sign_brownian(k, j));
        assert_eq!(sup_norm_predictable(&g).value, 1.0);
        let c = PredictableProcess::constant(&l, &[-0.3]);
        assert_eq!(sup_norm_predictable(&c).value, 0.3);
        let l = lat(9, 1.0);
        let clipped = l.terminal_brownian().map_leaves(|_, v, o| o[0] = v[0].clamp(-1.5, 1.5));
        assert_eq!(sup_norm_terminal(&clipped, &l).value, 1.5);
    }

    #[test]
    fn p_norm_cap() {
        let l = lat(15, 1.0);
        let m = Martingale::new(&l, l.brownian_motion()).unwrap();
        assert!(bmo_p_norm(&m, 1.0, &l).is_err());
        assert!((bmo_p_norm(&m, 2.0, &l).unwrap().value - 1.0).abs() < 1e-12);
        assert!(bmo_p_norm(&m, 0.5, &lat(2, 1.0)).is_err());
    }
}
