//! Metrics and losses against brute-force and Monte Carlo oracles.

use defer_core::metrics::{
    disparate_impact_hard, disparate_impact_soft, expected_squared_di, min_subgroup_accuracy, pareto_front,
    squared_soft_di,
};
use defer_core::models::{concrete_sample, loss_defer, loss_reject, DiForm};
use defer_core::seed::rng_for;
use rand::Rng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 50;

/// Labels and groups with every `(A, Y)` cell populated.
fn cells(n: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
    let mut y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let mut a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    y[..4].copy_from_slice(&[0, 0, 1, 1]);
    a[..4].copy_from_slice(&[0, 1, 0, 1]);
    (y, a)
}

/// `(fp gap, fn gap)` with the false-negative value `1 - p` on positives.
fn gaps(y: &[u8], a: &[u8], p: &[f64]) -> (f64, f64) {
    gaps_of(y, a, |k| p[k])
}

/// Same as [`gaps`] for values produced on demand, without allocating.
fn gaps_of(y: &[u8], a: &[u8], p: impl Fn(usize) -> f64) -> (f64, f64) {
    let mut sum = [[0.0; 2]; 2];
    let mut count = [[0.0; 2]; 2];
    for k in 0..y.len() {
        let v = if y[k] == 0 { p(k) } else { 1.0 - p(k) };
        sum[a[k] as usize][y[k] as usize] += v;
        count[a[k] as usize][y[k] as usize] += 1.0;
    }
    let mean = |g: usize, l: usize| sum[g][l] / count[g][l];
    (mean(0, 0) - mean(1, 0), mean(0, 1) - mean(1, 1))
}

fn log_lik(y: u8, p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    if y == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

#[test]
fn hard_di_matches_counting() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(10, &[i]);
        let n = rng.random_range(6..40);
        let (y, a) = cells(n, &mut rng);
        let yhat: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        // Count false positives and false negatives per group directly.
        let rate = |group: u8, label: u8| {
            let members: Vec<usize> = (0..n).filter(|&k| a[k] == group && y[k] == label).collect();
            members.iter().filter(|&&k| yhat[k] != label).count() as f64 / members.len() as f64
        };
        let fp = (rate(0, 0) - rate(1, 0)).abs();
        let fn_ = (rate(0, 1) - rate(1, 1)).abs();
        let di = disparate_impact_hard(&y, &a, &yhat).unwrap();
        assert!((di.fp - fp).abs() < 1e-12 && (di.fn_ - fn_).abs() < 1e-12);
        assert!((di.di - 0.5 * (fp + fn_)).abs() < 1e-12);
    }
}

#[test]
fn hard_di_hand_instance() {
    let y = [0, 0, 0, 0, 1, 1, 1, 1];
    let a = [0, 0, 1, 1, 0, 0, 1, 1];
    let yhat = [1, 0, 1, 1, 0, 1, 0, 0];
    let di = disparate_impact_hard(&y, &a, &yhat).unwrap();
    assert_eq!((di.fp, di.fn_, di.di), (0.5, 0.5, 0.5));
}

#[test]
fn soft_di_matches_conditional_means_and_hard_on_binary_inputs() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(11, &[i]);
        let n = rng.random_range(6..30);
        let (y, a) = cells(n, &mut rng);
        let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (gfp, gfn) = gaps(&y, &a, &p);
        let soft = disparate_impact_soft(&y, &a, &p).unwrap();
        assert!((soft.di - 0.5 * (gfp.abs() + gfn.abs())).abs() < 1e-12);
        let sq = squared_soft_di(&y, &a, &p).unwrap();
        assert!((sq - 0.5 * (gfp * gfp + gfn * gfn)).abs() < 1e-12);

        let hard: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let as_prob: Vec<f64> = hard.iter().map(|&v| f64::from(v)).collect();
        assert_eq!(
            disparate_impact_soft(&y, &a, &as_prob).unwrap(),
            disparate_impact_hard(&y, &a, &hard).unwrap()
        );
    }
}

/// Mean and standard error of `f(s)` over `draws` samples of `s_i ~ Ber(pi_i)`.
fn monte_carlo(pi: &[f64], draws: usize, rng: &mut ChaCha8Rng, mut f: impl FnMut(&[f64]) -> f64) -> (f64, f64) {
    let mut s = vec![0.0; pi.len()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        for (sk, &p) in s.iter_mut().zip(pi) {
            *sk = f64::from(u8::from(rng.random::<f64>() < p));
        }
        let v = f(&s);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / draws as f64;
    let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
    (mean, (var / draws as f64).sqrt())
}

#[test]
fn expected_squared_di_matches_monte_carlo() {
    (0..INSTANCES).into_par_iter().for_each(|i| {
        let mut rng = rng_for(12, &[i]);
        let n = 10;
        let (y, a) = cells(n, &mut rng);
        let m: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let pi: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let closed = expected_squared_di(&y, &a, &m, &d, &pi).unwrap();
        let draws = 1_000_000;
        let (mean, se) = monte_carlo(&pi, draws, &mut rng, |s| {
            let (gfp, gfn) = gaps_of(&y, &a, |k| (1.0 - s[k]) * m[k] + s[k] * d[k]);
            0.5 * (gfp * gfp + gfn * gfn)
        });
        assert!((closed - mean).abs() <= 3.0 * se.max(1e-12), "instance {i}: {closed} vs {mean} ± {se}");
    });
}

#[test]
fn expected_squared_di_limits() {
    let mut rng = rng_for(13, &[]);
    let (y, a) = cells(12, &mut rng);
    let m: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
    let d: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
    let at = |g: f64| expected_squared_di(&y, &a, &m, &d, &vec![g; 12]).unwrap();
    assert!((at(0.0) - squared_soft_di(&y, &a, &m).unwrap()).abs() < 1e-12);
    assert!((at(1.0) - squared_soft_di(&y, &a, &d).unwrap()).abs() < 1e-12);
}

#[test]
fn gated_losses_match_monte_carlo_over_the_gate() {
    (0..INSTANCES).into_par_iter().for_each(|i| {
        let mut rng = rng_for(14, &[i]);
        let n = 10;
        let (y, a) = cells(n, &mut rng);
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let pi: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let gamma = rng.random_range(-1.0..1.0);
        let draws = 1_000_000;

        let closed = loss_reject(&y, &a, &m, &pi, gamma, 0.0).unwrap();
        let (mean, se) = monte_carlo(&pi, draws, &mut rng, |s| {
            -(0..n).map(|k| (1.0 - s[k]) * log_lik(y[k], m[k]) + s[k] * gamma).sum::<f64>()
        });
        assert!((closed - mean).abs() <= 3.0 * se.max(1e-12), "reject {i}: {closed} vs {mean} ± {se}");

        let closed = loss_defer(&y, &a, &m, Some(&d), &pi, gamma, 0.0, DiForm::SoftMean).unwrap();
        let (mean, se) = monte_carlo(&pi, draws, &mut rng, |s| {
            -(0..n)
                .map(|k| (1.0 - s[k]) * log_lik(y[k], m[k]) + s[k] * (log_lik(y[k], d[k]) + gamma))
                .sum::<f64>()
        });
        assert!((closed - mean).abs() <= 3.0 * se.max(1e-12), "defer {i}: {closed} vs {mean} ± {se}");

        // The squared form is an exact expectation, so the regularizer joins the oracle.
        let alpha = rng.random_range(0.0..3.0);
        let closed = loss_defer(&y, &a, &m, Some(&d), &pi, gamma, alpha, DiForm::SquaredExpected).unwrap();
        let (mean, se) = monte_carlo(&pi, draws, &mut rng, |s| {
            let (gfp, gfn) = gaps_of(&y, &a, |k| (1.0 - s[k]) * m[k] + s[k] * d[k]);
            -(0..n)
                .map(|k| (1.0 - s[k]) * log_lik(y[k], m[k]) + s[k] * (log_lik(y[k], d[k]) + gamma))
                .sum::<f64>()
                + alpha * 0.5 * (gfp * gfp + gfn * gfn)
        });
        assert!((closed - mean).abs() <= 3.0 * se.max(1e-12), "defer squared {i}: {closed} vs {mean} ± {se}");
    });
}

#[test]
fn concrete_samples_threshold_to_bernoulli() {
    let mut rng = rng_for(15, &[]);
    for &pi in &[0.1, 0.35, 0.5, 0.8] {
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| {
                let u = rng.random_range(f64::EPSILON..1.0);
                concrete_sample(pi, 0.5, u).unwrap() > 0.5
            })
            .count() as f64;
        let se = (pi * (1.0 - pi) / draws as f64).sqrt();
        assert!((hits / draws as f64 - pi).abs() <= 3.0 * se, "pi {pi}");
    }
}

fn dominated(p: (f64, f64), by: (f64, f64)) -> bool {
    by.0 <= p.0 && by.1 <= p.1 && (by.0 < p.0 || by.1 < p.1)
}

#[test]
fn pareto_front_matches_quadratic_dominance() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(16, &[i]);
        let n = rng.random_range(1..=500);
        // Coarse grid values so ties and duplicates occur.
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (f64::from(rng.random_range(0..20)) / 20.0, f64::from(rng.random_range(0..20)) / 20.0))
            .collect();
        let mut expected: Vec<usize> = (0..n)
            .filter(|&k| !pts.iter().any(|&q| dominated(pts[k], q)))
            // Exact duplicates keep only the first occurrence.
            .filter(|&k| !pts[..k].contains(&pts[k]))
            .collect();
        let mut got = pareto_front(&pts);
        expected.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, expected, "instance {i}");
    }
}

#[test]
fn pareto_front_examples() {
    assert_eq!(pareto_front(&[(0.1, 0.2), (0.2, 0.1), (0.2, 0.3)]), vec![0, 1]);
    let curve: Vec<(f64, f64)> = (0..10).map(|k| (f64::from(k), 10.0 - f64::from(k))).collect();
    assert_eq!(pareto_front(&curve).len(), 10);
}

#[test]
fn min_subgroup_accuracy_matches_enumeration() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(17, &[i]);
        let n = rng.random_range(8..40);
        let (y, a) = cells(n, &mut rng);
        let mut a = a;
        let mut g: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        // Populate all four (A, G) subgroups.
        a[4..8].copy_from_slice(&[0, 0, 1, 1]);
        g[4..8].copy_from_slice(&[0, 1, 0, 1]);
        let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut worst: f64 = 1.0;
        for (ga, gg) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let idx: Vec<usize> = (0..n).filter(|&k| a[k] == ga && g[k] == gg).collect();
            let correct = idx.iter().filter(|&&k| u8::from(p[k] >= 0.5) == y[k]).count();
            worst = worst.min(correct as f64 / idx.len() as f64);
        }
        assert_eq!(min_subgroup_accuracy(&y, &p, &a, &g).unwrap(), worst);
    }
}
