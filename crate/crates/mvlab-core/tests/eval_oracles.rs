//! Independent recomputation oracles for the evaluation metrics: R²
//! re-derived from its definition with plain loops, and AUC counted
//! exhaustively over all positive/negative pairs.

use mvlab_core::data::Matrix;
use mvlab_core::eval::{auc_mann_whitney, r2_per_feature};
use mvlab_core::rng;
use proptest::prelude::*;
use rand::Rng;

fn brute_force_r2(truth: &Matrix, pred: &Matrix, c: usize) -> f64 {
    let n = truth.rows();
    let mut mean = 0.0;
    for r in 0..n {
        mean += truth.get(r, c);
    }
    mean /= n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 0..n {
        num += (truth.get(r, c) - pred.get(r, c)).powi(2);
        den += (truth.get(r, c) - mean).powi(2);
    }
    1.0 - num / den
}

fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, lp) in scores.iter().zip(labels) {
        if *lp != 1 {
            continue;
        }
        for (sn, ln) in scores.iter().zip(labels) {
            if *ln != 0 {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn r2_matches_independent_recomputation() {
    let mut r = rng::stream(500, 0);
    let truth = Matrix::new(20, 5, rng::normal_vec(&mut r, 100)).unwrap();
    let pred = Matrix::new(20, 5, rng::normal_vec(&mut r, 100)).unwrap();
    let r2 = r2_per_feature(&truth, &pred).unwrap();
    for c in 0..5 {
        let expected = brute_force_r2(&truth, &pred, c);
        let got = r2[c].unwrap();
        assert!(
            (got - expected).abs() < 1e-12,
            "col {c}: {got} vs {expected}"
        );
        assert!(got <= 1.0);
    }
}

#[test]
fn auc_matches_exhaustive_pair_counting_on_random_cases() {
    for case in 0..10u64 {
        let mut r = rng::stream(510 + case, 0);
        let n = r.random_range(6..=20usize);
        // quantized scores so ties actually occur
        let scores: Vec<f64> = (0..n)
            .map(|_| (r.random_range(-4i32..=4) as f64) / 2.0)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let expected = brute_force_auc(&scores, &labels);
        let got = auc_mann_whitney(&scores, &labels).unwrap();
        assert_eq!(got, expected, "case {case}: {got} vs {expected}");
    }
}

proptest! {
    #[test]
    fn auc_is_invariant_under_strictly_increasing_transforms(
        raw in prop::collection::vec(-8i32..8, 6..24),
        labels in prop::collection::vec(0u8..2, 24),
    ) {
        let n = raw.len();
        let mut labels = labels[..n].to_vec();
        labels[0] = 0;
        labels[n - 1] = 1;
        let scores: Vec<f64> = raw.iter().map(|&v| v as f64 / 4.0).collect();
        // strictly increasing map preserving ties: x ↦ e^x + 3x
        let mapped: Vec<f64> = scores.iter().map(|&s| s.exp() + 3.0 * s).collect();
        let a = auc_mann_whitney(&scores, &labels).unwrap();
        let b = auc_mann_whitney(&mapped, &labels).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn r2_is_invariant_under_common_affine_rescaling(
        truth in prop::collection::vec(-5.0f64..5.0, 12),
        pred in prop::collection::vec(-5.0f64..5.0, 12),
        scale in prop_oneof![(-4.0f64..-0.25), (0.25f64..4.0)],
        shift in -3.0f64..3.0,
    ) {
        let t = Matrix::new(6, 2, truth.clone()).unwrap();
        let p = Matrix::new(6, 2, pred.clone()).unwrap();
        let t2 = Matrix::new(6, 2, truth.iter().map(|v| v * scale + shift).collect()).unwrap();
        let p2 = Matrix::new(6, 2, pred.iter().map(|v| v * scale + shift).collect()).unwrap();
        let a = r2_per_feature(&t, &p).unwrap();
        let b = r2_per_feature(&t2, &p2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0)),
                _ => prop_assert!(x.is_none() && y.is_none()),
            }
        }
    }
}
