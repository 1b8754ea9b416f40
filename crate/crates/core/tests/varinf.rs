mod common;

use common::*;
use mlmm::model::Dims;
use mlmm::varinf::{default_init, fit, hard_assignments, lower_bound, relax, sweep, FitConfig, Parametrization};
use mlmm::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sweep_keeps_responsibilities_stochastic(seed in 0u64..100_000, k in 1usize..4) {
        let mut r = rng(seed);
        let par = PARS[(seed % 3) as usize];
        let data = random_dataset(&mut r, par, &Shape { n: 10, max_ni: 4, k });
        let hyper = random_hyper(&mut r, data.dims().p);
        let mut st = random_state(&mut r, &data, k, 0.3);
        let before = lower_bound(&st, &data, &hyper, par).unwrap();
        let after = sweep(&mut st, &data, &hyper, par, &FitConfig::default()).unwrap();
        prop_assert!(after >= before - 1e-8 * before.abs());
        for row in st.q.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn frozen_components_are_untouched(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let par = PARS[(seed % 3) as usize];
        let data = random_dataset(&mut r, par, &Shape { n: 10, max_ni: 4, k: 3 });
        let hyper = random_hyper(&mut r, data.dims().p);
        let st = random_state(&mut r, &data, 3, 0.0);
        let cfg = FitConfig { frozen: vec![0, 2], max_sweeps: 5, ..FitConfig::default() };
        let res = fit(st.clone(), &data, &hyper, par, &cfg).unwrap();
        for j in [0, 2] {
            prop_assert_eq!(component_bits(&res.state.components[j]), component_bits(&st.components[j]));
            for i in 0..data.n() {
                prop_assert_eq!(res.state.q[(i, j)].to_bits(), st.q[(i, j)].to_bits());
            }
        }
    }
}

#[test]
fn cold_start_is_single_component_only() {
    let mut r = rng(1);
    let data = random_dataset(&mut r, Parametrization::Uncentered, &Shape { n: 5, max_ni: 3, k: 1 });
    let hyper = random_hyper(&mut r, data.dims().p);
    assert!(matches!(
        default_init(&data, &hyper, 2, Parametrization::Uncentered),
        Err(Error::InvalidInput(_))
    ));
    let st = default_init(&data, &hyper, 1, Parametrization::Uncentered).unwrap();
    assert_eq!(st.k(), 1);
    assert!(st.q.iter().all(|&v| v == 1.0));
}

#[test]
fn cold_start_ratios_per_coordinate_system() {
    let mut r = rng(2);
    let data = random_dataset(&mut r, Parametrization::FullCentered, &Shape { n: 5, max_ni: 3, k: 1 });
    let hyper = random_hyper(&mut r, data.dims().p);
    let Dims { n, s1, s2, .. } = data.dims();
    for (par, ra, rb, re) in [
        (Parametrization::Uncentered, 1.0, 1.0, 1.0),
        (Parametrization::PartialCentered, 0.1, 1.0, 1.0),
        (Parametrization::FullCentered, 0.1, 0.01, 10.0),
    ] {
        let c = &default_init(&data, &hyper, 1, par).unwrap().components[0];
        assert!((c.alpha_a / c.lambda_a - ra).abs() < 1e-12);
        assert!((c.alpha_b / c.lambda_b - rb).abs() < 1e-12);
        assert!((c.alpha_e[0] / c.lambda_e[0] - re).abs() < 1e-12);
        assert_eq!(c.alpha_a, hyper.alpha_a + 0.5 * (s1 * n) as f64);
        assert_eq!(c.alpha_b, hyper.alpha_b + 0.5 * s2 as f64);
    }
}

#[test]
fn centering_requires_matching_designs() {
    let mut r = rng(3);
    let data = random_dataset(&mut r, Parametrization::Uncentered, &Shape { n: 4, max_ni: 3, k: 1 });
    let hyper = random_hyper(&mut r, data.dims().p);
    for par in [Parametrization::PartialCentered, Parametrization::FullCentered] {
        assert!(matches!(default_init(&data, &hyper, 1, par), Err(Error::InvalidInput(_))));
    }
}

#[test]
fn fit_is_deterministic_and_converges() {
    let mut r = rng(4);
    let par = Parametrization::PartialCentered;
    let data = random_dataset(&mut r, par, &Shape { n: 15, max_ni: 4, k: 1 });
    let hyper = random_hyper(&mut r, data.dims().p);
    let st = default_init(&data, &hyper, 1, par).unwrap();
    let a = fit(st.clone(), &data, &hyper, par, &FitConfig::default()).unwrap();
    let b = fit(st, &data, &hyper, par, &FitConfig::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.converged);
    assert_eq!(a.lb_trace.len(), a.sweeps);
    // With one component the gating is trivial and both scores coincide.
    assert!((a.log_marginal_estimate - a.lower_bound).abs() < 1e-9 * a.lower_bound.abs());
}

#[test]
fn short_runs_stop_no_later_than_full_runs() {
    let mut r = rng(5);
    let par = Parametrization::Uncentered;
    let data = random_dataset(&mut r, par, &Shape { n: 20, max_ni: 4, k: 2 });
    let hyper = random_hyper(&mut r, data.dims().p);
    let st = random_state(&mut r, &data, 2, 0.0);
    let full = fit(st.clone(), &data, &hyper, par, &FitConfig::default()).unwrap();
    let short = fit(st, &data, &hyper, par, &FitConfig { short_run: true, ..FitConfig::default() }).unwrap();
    assert!(short.sweeps <= full.sweeps);
    let last = short.lb_trace.len() - 1;
    assert!(short.lb_trace[last] - short.lb_trace[last - 1] < 1.0);
}

#[test]
fn relax_refreshes_scores() {
    let mut r = rng(6);
    let par = Parametrization::Uncentered;
    let data = random_dataset(&mut r, par, &Shape { n: 12, max_ni: 3, k: 2 });
    let hyper = random_hyper(&mut r, data.dims().p);
    let st = random_state(&mut r, &data, 2, 0.0);
    let mut res = fit(st, &data, &hyper, par, &FitConfig { max_sweeps: 3, ..FitConfig::default() }).unwrap();
    let before = res.clone();
    relax(&mut res, &data, &hyper).unwrap();
    // The gating mode was already refreshed for the final responsibilities.
    assert!((res.lower_bound - before.lower_bound).abs() < 1e-8 * before.lower_bound.abs());
    assert!(res.log_marginal_estimate.is_finite());
}

#[test]
fn hard_assignment_ties_go_to_first() {
    let q = nalgebra::DMatrix::from_row_slice(3, 2, &[0.7, 0.3, 0.2, 0.8, 0.5, 0.5]);
    assert_eq!(hard_assignments(&q), vec![0, 1, 0]);
}
