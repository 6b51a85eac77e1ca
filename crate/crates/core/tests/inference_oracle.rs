//! Mixture scores of `infer` against a straight-line evaluation over every
//! three-word sentence of a tiny vocabulary.

mod common;

use common::oracle::exhaustive_mixture_check;
use common::rng;
use mvre::mvre::ScoreMode;
use rand::Rng;

const TOL: f64 = 1e-12;

#[test]
fn mixture_scores_match_brute_force() {
    let s = exhaustive_mixture_check();
    assert_eq!(s.checked, 2 * 3 * 2 * 27 * 2);
    assert!(s.max_abs_err <= TOL, "{}", s.max_abs_err);
    assert_eq!(s.argmax_mismatches, 0);
}

#[test]
fn argmax_is_invariant_to_common_scaling() {
    use mvre::mvre::{aggregate, argmax_first, ViewScores};
    use mvre::nn::Tensor;
    let mut r = rng(3);
    for _ in 0..200 {
        let m = r.random_range(1..=4);
        let n_rel = r.random_range(1..=5);
        let raw: Vec<f64> = (0..m).map(|_| r.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let posterior: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let pv = Tensor::from_vec(
            m,
            n_rel,
            (0..m * n_rel).map(|_| r.random_range(0.0..0.2)).collect(),
        )
        .unwrap();
        let c = r.random_range(0.1..4.0);
        let scaled = pv.map(|v| v * c);
        let a = argmax_first(&aggregate(
            &ViewScores {
                posterior: posterior.clone(),
                per_view_label_prob: pv,
            },
            ScoreMode::Mixture,
        ));
        let b = argmax_first(&aggregate(
            &ViewScores {
                posterior,
                per_view_label_prob: scaled,
            },
            ScoreMode::Mixture,
        ));
        assert_eq!(a, b);
    }
}
