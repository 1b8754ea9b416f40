use mlmm::eval::{adjusted_rand_index, summarize_fit, Partition};
use mlmm::presets::{simulation_dataset, PriorRecipe};
use mlmm::varinf::{default_init, fit, FitConfig, Parametrization};
use proptest::prelude::*;

/// Pair-counting form of the adjusted Rand index, O(n^2).
fn ari_by_pairs(x: &[usize], y: &[usize]) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            match (x[i] == x[j], y[i] == y[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (a * d - b * c) / denom
}

fn labels(max_k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..40).prop_flat_map(move |n| {
        (prop::collection::vec(0..max_k, n), prop::collection::vec(0..max_k, n))
    })
}

proptest! {
    #[test]
    fn matches_pair_counting((x, y) in labels(5)) {
        let got = adjusted_rand_index(&Partition::new(x.clone()).unwrap(), &Partition::new(y.clone()).unwrap()).unwrap();
        prop_assert!((got - ari_by_pairs(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_bounded((x, y) in labels(4)) {
        let px = Partition::new(x).unwrap();
        let py = Partition::new(y).unwrap();
        let ab = adjusted_rand_index(&px, &py).unwrap();
        prop_assert_eq!(ab, adjusted_rand_index(&py, &px).unwrap());
        prop_assert!(ab <= 1.0 + 1e-12);
    }

    #[test]
    fn invariant_to_relabeling((x, y) in labels(4), shift in 1usize..10) {
        let relabeled: Vec<usize> = x.iter().map(|&l| (l + shift) * 7).collect();
        let a = adjusted_rand_index(&Partition::new(x).unwrap(), &Partition::new(y.clone()).unwrap()).unwrap();
        let b = adjusted_rand_index(&Partition::new(relabeled).unwrap(), &Partition::new(y).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn empty_partition_is_rejected() {
    assert!(Partition::new(vec![]).is_err());
}

#[test]
fn summary_covers_every_component() {
    let (data, _) = simulation_dataset(3).unwrap();
    let hyper = PriorRecipe::TimeCourse.hyperparameters(2);
    let par = Parametrization::Uncentered;
    let st = default_init(&data, &hyper, 1, par).unwrap();
    let res = fit(st, &data, &hyper, par, &FitConfig::default()).unwrap();
    let s = summarize_fit(&res, &data);
    assert_eq!(s.sizes, vec![data.n()]);
    assert_eq!(s.labels, vec![0; data.n()]);
    assert_eq!(s.curves.len(), 1);
    assert!(s.entropy.iter().all(|&e| e.abs() < 1e-12));
    assert!(s.gating_probs.iter().all(|p| (p[0] - 1.0).abs() < 1e-12));
}
