use latent_edit_core::metrics::{
    binarize, correlation_matrix, data_multiplier, f1_scores, fit_pow3, mae_to_target, mean_sd, pair_fpr,
};
use latent_edit_core::Error;
use proptest::prelude::*;

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn f1_hand_counts() {
    // column 0: tp 2, fp 1, fn 1 -> 4 / 6; column 1: nothing positive anywhere
    let pred = [0.9, 0.0, 0.5, 0.0, 0.2, 0.0, 0.05, 0.0];
    let truth = [1.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.7, 0.0];
    let r = f1_scores(&pred, &truth, 2, 0.1).unwrap();
    assert!((r.per_attribute[0] - 4.0 / 6.0).abs() < 1e-15);
    assert_eq!(r.per_attribute[1], 1.0);
    assert_eq!(r.vacuous, vec![false, true]);
    assert!((r.macro_f1 - (4.0 / 6.0 + 1.0) / 2.0).abs() < 1e-15);
}

#[test]
fn threshold_is_inclusive() {
    assert_eq!(binarize(&[0.1, 0.099_999, 1.0], 0.1), vec![1.0, 0.0, 1.0]);
}

#[test]
fn pair_fpr_hand_case() {
    // rows of (truth a, truth b | pred a, pred b)
    let truth = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
    let pred = [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0];
    let r = pair_fpr(&pred, &truth, 2).unwrap();
    // a absent, b present: rows 0..3, a predicted in row 0 only
    assert_eq!(r.get(0, 1), Some(1.0 / 3.0));
    assert_eq!(r.support[1], 3);
    // b absent, a present: row 3, b predicted
    assert_eq!(r.get(1, 0), Some(1.0));
    assert_eq!(r.get(0, 0), None);
    assert!((r.mean().unwrap() - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
}

#[test]
fn pair_fpr_rejects_soft_inputs() {
    assert!(matches!(pair_fpr(&[0.5, 0.0], &[0.0, 1.0], 2), Err(Error::InvalidParameter(_))));
}

#[test]
fn correlation_masks_constant_columns() {
    let v = [1.0, 5.0, 0.0, 2.0, 5.0, 1.0, 3.0, 5.0, 0.0];
    let r = correlation_matrix(&v, 3).unwrap();
    assert_eq!(r.get(0, 1), None);
    assert_eq!(r.get(1, 1), None);
    assert_eq!(r.get(0, 0), Some(1.0));
    let want = pearson(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0]);
    assert!((r.get(0, 2).unwrap() - want).abs() < 1e-15);
    assert!((r.mean_abs_offdiag.unwrap() - want.abs()).abs() < 1e-15);
}

#[test]
fn mae_groups_by_edit_count() {
    let e = [0.5, 0.5, 1.0, 0.0, 0.0, 0.0];
    let t = [0.5, 0.0, 0.0, 0.0, 0.0, 1.0];
    let g = mae_to_target(&e, &t, 2, &[1, 2, 1]).unwrap();
    assert_eq!(g.len(), 2);
    assert_eq!((g[0].edited, g[0].rows), (1, 2));
    assert!((g[0].mae - 0.375).abs() < 1e-15);
    assert_eq!((g[1].edited, g[1].rows, g[1].se), (2, 1, None));
    assert!((g[1].mae - 0.5).abs() < 1e-15);
}

#[test]
fn mean_sd_uses_the_sample_formula() {
    let (m, sd) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((sd.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_sd(&[7.0]).1, None);
}

#[test]
fn pow3_edge_cases() {
    assert!(fit_pow3(&[(10.0, 0.1), (20.0, 0.2)]).is_err());
    assert!(fit_pow3(&[(10.0, 0.1), (0.0, 0.2), (30.0, 0.3)]).is_err());
    let flat = fit_pow3(&[(10.0, 0.4), (20.0, 0.4), (40.0, 0.4)]).unwrap();
    assert!(flat.flat);
    assert!(matches!(data_multiplier(&flat, 0.5, 10.0), Err(Error::Unreachable { .. })));
    let fit = fit_pow3(&[(10.0, 0.3), (20.0, 0.4), (40.0, 0.45), (80.0, 0.47)]).unwrap();
    assert!(matches!(data_multiplier(&fit, fit.a + 0.01, 10.0), Err(Error::Unreachable { .. })));
}

proptest! {
    #[test]
    fn correlation_matches_pairwise_pearson(v in prop::collection::vec(-10.0f64..10.0, 12..60)) {
        let cols = 3;
        let n = v.len() / cols;
        let v = &v[..n * cols];
        let r = correlation_matrix(v, cols).unwrap();
        for a in 0..cols {
            for b in 0..cols {
                let x: Vec<f64> = (0..n).map(|i| v[i * cols + a]).collect();
                let y: Vec<f64> = (0..n).map(|i| v[i * cols + b]).collect();
                let want = pearson(&x, &y);
                if let Some(got) = r.get(a, b) {
                    prop_assert!((got - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pow3_recovers_exact_curves(a in 0.5f64..0.95, b in 0.2f64..2.0, c in 0.2f64..1.5) {
        let pts: Vec<(f64, f64)> = [20.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0]
            .iter()
            .map(|&n: &f64| (n, a - b * n.powf(-c)))
            .collect();
        let fit = fit_pow3(&pts).unwrap();
        prop_assert!((fit.a - a).abs() < 1e-4, "a {} vs {}", fit.a, a);
        prop_assert!((fit.c - c).abs() < 1e-4, "c {} vs {}", fit.c, c);
        prop_assert!((fit.b - b).abs() < 1e-3 * b.max(1.0), "b {} vs {}", fit.b, b);
        let target = fit.eval(3000.0);
        let m = data_multiplier(&fit, target, 1000.0).unwrap();
        prop_assert!((m - 3.0).abs() < 1e-6 * 3.0);
    }
}
