use impact_bsde::bsde::{solve_explicit, solve_picard, PicardSettings};
use impact_bsde::lattice::{Lattice, PredictableProcess, Terminal};
use impact_bsde::norms::{bmo_norm, h_norm};
use impact_bsde::pricer::{equilibrium_defects, localize, price_equilibrium};
use impact_bsde::scenario::{hitting_time_tau, Instance};
use proptest::prelude::*;

/// `(steps, a, per-node demand, per-leaf dividend)` for one stock.
fn instance_strategy(max_steps: usize, max_a: f64) -> impl Strategy<Value = Instance> {
    (1..=max_steps).prop_flat_map(move |n| {
        let nodes = (1usize << n) - 1;
        (
            0.01..=max_a,
            prop::collection::vec(-1.0..=1.0f64, nodes),
            prop::collection::vec(-1.0..=1.0f64, 1usize << n),
        )
            .prop_map(move |(a, gamma, psi)| {
                let l = Lattice::new(n, 1.0).unwrap();
                let demand = PredictableProcess::from_fn(&l, 1, |k, j, o| o[0] = gamma[(1 << k) - 1 + j]);
                let dividend = Terminal::from_fn(&l, 1, |j, o| o[0] = psi[j]);
                Instance::new(l, a, demand, dividend).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equilibrium_is_exact(inst in instance_strategy(8, 2.0)) {
        let s = price_equilibrium(&inst).unwrap();
        let d = equilibrium_defects(&s).unwrap();
        prop_assert!(d.density.value <= 1e-10 && d.prices.value <= 1e-10 && d.gain.value <= 1e-10);
        prop_assert!(d.min_certainty_equivalent >= -1e-12);
        prop_assert!(d.min_density > 0.0);
    }

    #[test]
    fn prices_stay_in_dividend_range(inst in instance_strategy(8, 2.0)) {
        let s = price_equilibrium(&inst).unwrap();
        let leaves: Vec<f64> = (0..inst.dividend.num_leaves()).map(|j| inst.dividend.at(j)[0]).collect();
        let lo = leaves.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = leaves.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for slice in s.prices.slices() {
            for v in slice {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn mirror_symmetry(inst in instance_strategy(7, 1.5)) {
        let l = inst.lattice;
        let s = price_equilibrium(&inst).unwrap();
        let m = price_equilibrium(&inst.mirrored().unwrap()).unwrap();
        let expected = l.reflect_adapted(&s.prices).scaled(-1.0);
        prop_assert!(m.prices.max_abs_diff(&expected) <= 1e-12);
        let r = l.reflect_adapted(&s.certainty_equivalent);
        prop_assert!(m.certainty_equivalent.max_abs_diff(&r) <= 1e-12);
    }

    #[test]
    fn zero_demand_prices_are_conditional_expectations(inst in instance_strategy(8, 2.0)) {
        let l = inst.lattice;
        let zero = inst.with_demand(PredictableProcess::zeros(&l, 1)).unwrap();
        let s = price_equilibrium(&zero).unwrap();
        let m = l.conditional_expectation(&zero.dividend).unwrap();
        prop_assert!(s.prices.max_abs_diff(m.process()) <= 1e-14);
        prop_assert!(s.certainty_equivalent.max_norm().0 == 0.0);
    }

    #[test]
    fn localization_leaves_later_prices(inst in instance_strategy(8, 1.0), from in 0usize..8) {
        let l = inst.lattice;
        let tau = hitting_time_tau(&l, 0.0, from.min(l.num_steps() - 1)).unwrap();
        let s = price_equilibrium(&inst).unwrap();
        let report = localize(&s, &inst, &tau).unwrap();
        prop_assert!(report.max_gap <= 1e-10);
    }

    #[test]
    fn explicit_scheme_tracks_pricer(inst in instance_strategy(6, 0.2)) {
        // First-order agreement; the BSDE scheme is a discretization of the pricer's limit.
        let s = price_equilibrium(&inst).unwrap();
        let b = solve_explicit(&inst).unwrap();
        prop_assert!(b.residual <= 1e-12);
        prop_assert!(b.prices().max_abs_diff(&s.prices) <= 0.2 * inst.risk_aversion + 1e-12);
    }

    #[test]
    fn picard_reaches_explicit_fixed_point(inst in instance_strategy(5, 0.04)) {
        let out = solve_picard(&inst, &PicardSettings::default()).unwrap();
        prop_assert!(out.diagnostics.converged);
        let gap = solve_explicit(&inst).unwrap().max_gap(out.solution.as_ref().unwrap());
        prop_assert!(gap <= 1e-10);
    }

    #[test]
    fn h_norm_dominates_scaled_bmo(inst in instance_strategy(7, 1.0)) {
        let l = inst.lattice;
        let m = l.conditional_expectation(&inst.dividend.centered()).unwrap();
        let h = h_norm(&m, &l, 1e-12).unwrap();
        prop_assert!(h.norm.value + 1e-10 >= h.bmo / 2f64.sqrt());
        prop_assert!((h.bmo - bmo_norm(&m, &l).unwrap().value).abs() <= 1e-15);
    }
}
