//! Evaluation quantities: error, disparate impact, deferral rates, subgroup
//! accuracy and Pareto fronts.
//!
//! Disparate impact (DI) is the mean of two absolute gaps between the sensitive
//! groups: the false-positive-rate gap among `Y = 0` and the false-negative-rate
//! gap among `Y = 1`. The soft variant replaces indicator rates by conditional
//! means of the predicted probability. A conditioning cell with no examples makes
//! the corresponding rate undefined; that is reported as
//! [`Error::UndefinedCell`], never as zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binarization used everywhere: `p >= 0.5` predicts class 1.
pub fn binarize(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

/// DI together with its two components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparateImpact {
    pub di: f64,
    pub fp: f64,
    pub fn_: f64,
}

fn check_lengths(n: usize, others: &[usize]) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("metric input"));
    }
    for &m in others {
        if m != n {
            return Err(Error::DimensionMismatch {
                context: "metric inputs",
                expected: n,
                actual: m,
            });
        }
    }
    Ok(())
}

fn check_binary(v: &[u8], what: &'static str) -> Result<()> {
    if v.iter().any(|&x| x > 1) {
        return Err(Error::invalid(format!("{what} must be binary")));
    }
    Ok(())
}

/// Fraction of examples whose binarized prediction differs from the label.
pub fn error_rate(labels: &[u8], predictions: &[f64]) -> Result<f64> {
    check_lengths(labels.len(), &[predictions.len()])?;
    let wrong = labels
        .iter()
        .zip(predictions)
        .filter(|(&y, &p)| binarize(p) != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Signed cell-mean gaps and their derivatives, shared by the hard, soft and
/// weighted DI variants.
///
/// For `Y = 0` the cell value is `p`, for `Y = 1` it is `1 - p`. Cell means are
/// weighted by `weights` when given. `gap[y] = mean(A=0, Y=y) - mean(A=1, Y=y)`.
#[derive(Debug, Clone)]
pub(crate) struct DiGaps {
    pub gap: [f64; 2],
    /// Total weight in each `(a, y)` cell, indexed `[a][y]`.
    pub weight: [[f64; 2]; 2],
    /// Weighted mean in each cell.
    pub mean: [[f64; 2]; 2],
}

pub(crate) fn di_gaps(
    labels: &[u8],
    sensitive: &[u8],
    p: &[f64],
    weights: Option<&[f64]>,
    context: &'static str,
) -> Result<DiGaps> {
    check_lengths(labels.len(), &[sensitive.len(), p.len()])?;
    if let Some(w) = weights {
        check_lengths(labels.len(), &[w.len()])?;
    }
    check_binary(labels, "labels")?;
    check_binary(sensitive, "sensitive attribute")?;
    let mut count = [[0usize; 2]; 2];
    let mut weight = [[0.0; 2]; 2];
    let mut sum = [[0.0; 2]; 2];
    for i in 0..labels.len() {
        let (a, y) = (sensitive[i] as usize, labels[i] as usize);
        let w = weights.map_or(1.0, |w| w[i]);
        let v = if y == 0 { p[i] } else { 1.0 - p[i] };
        count[a][y] += 1;
        weight[a][y] += w;
        sum[a][y] += w * v;
    }
    for a in 0..2 {
        for y in 0..2 {
            if count[a][y] == 0 {
                return Err(Error::UndefinedCell {
                    context,
                    group: a as u8,
                    label: y as u8,
                });
            }
        }
    }
    let mut mean = [[0.0; 2]; 2];
    for a in 0..2 {
        for y in 0..2 {
            mean[a][y] = if weight[a][y] > 0.0 {
                sum[a][y] / weight[a][y]
            } else {
                0.0
            };
        }
    }
    let mut gap = [0.0; 2];
    for y in 0..2 {
        // A cell whose examples carry no weight cannot be compared; the component is dropped.
        gap[y] = if weight[0][y] > 0.0 && weight[1][y] > 0.0 {
            mean[0][y] - mean[1][y]
        } else {
            0.0
        };
    }
    Ok(DiGaps { gap, weight, mean })
}

impl DiGaps {
    pub fn absolute(&self) -> DisparateImpact {
        let fp = self.gap[0].abs();
        let fn_ = self.gap[1].abs();
        DisparateImpact {
            di: 0.5 * (fp + fn_),
            fp,
            fn_,
        }
    }

    pub fn squared(&self) -> f64 {
        0.5 * (self.gap[0].powi(2) + self.gap[1].powi(2))
    }

    /// `d gap[y_i] / d p_i` for example `i`.
    pub fn d_gap_d_p(&self, y: u8, a: u8, w: f64) -> f64 {
        let (a, y) = (a as usize, y as usize);
        let cell = self.weight[a][y];
        if cell <= 0.0 || self.weight[1 - a][y] <= 0.0 {
            return 0.0;
        }
        let side = if a == 0 { 1.0 } else { -1.0 };
        let value_sign = if y == 0 { 1.0 } else { -1.0 };
        side * value_sign * w / cell
    }

    /// `d gap[y_i] / d w_i` for example `i` with probability `p`.
    pub fn d_gap_d_w(&self, y: u8, a: u8, p: f64) -> f64 {
        let (a, y) = (a as usize, y as usize);
        let cell = self.weight[a][y];
        if cell <= 0.0 || self.weight[1 - a][y] <= 0.0 {
            return 0.0;
        }
        let side = if a == 0 { 1.0 } else { -1.0 };
        let v = if y == 0 { p } else { 1.0 - p };
        side * (v - self.mean[a][y]) / cell
    }
}

/// DI of hard predictions.
pub fn disparate_impact_hard(
    labels: &[u8],
    sensitive: &[u8],
    predictions: &[u8],
) -> Result<DisparateImpact> {
    check_binary(predictions, "predictions")?;
    let p: Vec<f64> = predictions.iter().map(|&v| f64::from(v)).collect();
    Ok(di_gaps(labels, sensitive, &p, None, "disparate_impact_hard")?.absolute())
}

/// DI with indicator rates replaced by conditional means of `p`.
pub fn disparate_impact_soft(
    labels: &[u8],
    sensitive: &[u8],
    p: &[f64],
) -> Result<DisparateImpact> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("soft DI requires probabilities in [0, 1]"));
    }
    Ok(di_gaps(labels, sensitive, p, None, "disparate_impact_soft")?.absolute())
}

/// `(gap_fp^2 + gap_fn^2) / 2` of the soft conditional means.
pub fn squared_soft_di(labels: &[u8], sensitive: &[u8], p: &[f64]) -> Result<f64> {
    Ok(di_gaps(labels, sensitive, p, None, "squared_soft_di")?.squared())
}

/// Per-example coefficients `c_i` such that `gap[y] = const + sum_i c_i * yhat_i`
/// over the examples with `Y = y`. Only the linear part in `yhat` matters.
fn gap_coefficients(labels: &[u8], sensitive: &[u8]) -> Result<Vec<f64>> {
    let mut count = [[0usize; 2]; 2];
    for (&y, &a) in labels.iter().zip(sensitive) {
        count[a as usize][y as usize] += 1;
    }
    for a in 0..2 {
        for y in 0..2 {
            if count[a][y] == 0 {
                return Err(Error::UndefinedCell {
                    context: "expected_squared_di",
                    group: a as u8,
                    label: y as u8,
                });
            }
        }
    }
    Ok(labels
        .iter()
        .zip(sensitive)
        .map(|(&y, &a)| {
            let side = if a == 0 { 1.0 } else { -1.0 };
            // For Y = 1 the cell value is 1 - yhat, so the sign flips.
            let value_sign = if y == 0 { 1.0 } else { -1.0 };
            side * value_sign / count[a as usize][y as usize] as f64
        })
        .collect())
}

/// Value and partial derivatives of [`expected_squared_di`].
#[derive(Debug, Clone)]
pub(crate) struct ExpectedSquaredDi {
    pub value: f64,
    pub d_model: Vec<f64>,
    pub d_gate: Vec<f64>,
}

pub(crate) fn expected_squared_di_with_grad(
    labels: &[u8],
    sensitive: &[u8],
    y_model: &[f64],
    y_dm: &[f64],
    gate: &[f64],
) -> Result<ExpectedSquaredDi> {
    let n = labels.len();
    check_lengths(n, &[sensitive.len(), y_model.len(), y_dm.len(), gate.len()])?;
    check_binary(labels, "labels")?;
    check_binary(sensitive, "sensitive attribute")?;
    if gate.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::invalid("gate probabilities must lie in [0, 1]"));
    }
    let c = gap_coefficients(labels, sensitive)?;
    // gap[y] = k_y + sum_i c_i (m_i + s_i d_i) with d_i = D_i - m_i and s_i ~ Ber(pi_i).
    // E[gap^2] = (E gap)^2 + sum_i c_i^2 d_i^2 pi_i (1 - pi_i).
    // The `1 - yhat` constants of the Y = 1 cells cancel between the two group means.
    let mut mean_gap = [0.0; 2];
    let mut variance = [0.0; 2];
    for i in 0..n {
        let y = labels[i] as usize;
        let d = y_dm[i] - y_model[i];
        let mu = y_model[i] + gate[i] * d;
        mean_gap[y] += c[i] * mu;
        variance[y] += c[i] * c[i] * d * d * gate[i] * (1.0 - gate[i]);
    }
    let value = 0.5
        * ((mean_gap[0].powi(2) + variance[0]) + (mean_gap[1].powi(2) + variance[1]));
    let mut d_model = vec![0.0; n];
    let mut d_gate = vec![0.0; n];
    for i in 0..n {
        let y = labels[i] as usize;
        let d = y_dm[i] - y_model[i];
        let pv = gate[i] * (1.0 - gate[i]);
        d_model[i] = 0.5
            * (2.0 * mean_gap[y] * c[i] * (1.0 - gate[i]) - 2.0 * c[i] * c[i] * d * pv);
        d_gate[i] =
            0.5 * (2.0 * mean_gap[y] * c[i] * d + c[i] * c[i] * d * d * (1.0 - 2.0 * gate[i]));
    }
    Ok(ExpectedSquaredDi {
        value,
        d_model,
        d_gate,
    })
}

/// Expectation over `s_i ~ Ber(gate_i)` of the squared-component soft DI of the
/// mixture `(1 - s) * y_model + s * y_dm`, in closed form.
pub fn expected_squared_di(
    labels: &[u8],
    sensitive: &[u8],
    y_model: &[f64],
    y_dm: &[f64],
    gate: &[f64],
) -> Result<f64> {
    Ok(expected_squared_di_with_grad(labels, sensitive, y_model, y_dm, gate)?.value)
}

/// Overall and per-sensitive-group deferral rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeferralRates {
    pub overall: f64,
    pub per_group: [f64; 2],
    /// Per auxiliary-group rates, present when an auxiliary vector was supplied.
    pub per_aux_group: Option<[f64; 2]>,
}

fn group_means(values: &[u8], groups: &[u8], context: &'static str) -> Result<[f64; 2]> {
    let mut sum = [0usize; 2];
    let mut count = [0usize; 2];
    for (&v, &g) in values.iter().zip(groups) {
        count[g as usize] += 1;
        sum[g as usize] += v as usize;
    }
    let mut out = [0.0; 2];
    for g in 0..2 {
        if count[g] == 0 {
            return Err(Error::UndefinedCell {
                context,
                group: g as u8,
                label: u8::MAX,
            });
        }
        out[g] = sum[g] as f64 / count[g] as f64;
    }
    Ok(out)
}

pub fn deferral_rates(
    deferred: &[u8],
    sensitive: &[u8],
    aux_group: Option<&[u8]>,
) -> Result<DeferralRates> {
    check_lengths(deferred.len(), &[sensitive.len()])?;
    check_binary(deferred, "deferral indicator")?;
    check_binary(sensitive, "sensitive attribute")?;
    let overall =
        deferred.iter().map(|&s| s as usize).sum::<usize>() as f64 / deferred.len() as f64;
    let per_group = group_means(deferred, sensitive, "deferral_rates")?;
    let per_aux_group = match aux_group {
        Some(g) => {
            check_lengths(deferred.len(), &[g.len()])?;
            check_binary(g, "auxiliary group")?;
            Some(group_means(deferred, g, "deferral_rates aux")?)
        }
        None => None,
    };
    Ok(DeferralRates {
        overall,
        per_group,
        per_aux_group,
    })
}

/// Accuracy in each `(A, aux)` subgroup, keyed by `(a, g)`.
pub fn subgroup_accuracies(
    labels: &[u8],
    predictions: &[f64],
    sensitive: &[u8],
    aux_group: &[u8],
) -> Result<BTreeMap<(u8, u8), f64>> {
    check_lengths(
        labels.len(),
        &[predictions.len(), sensitive.len(), aux_group.len()],
    )?;
    check_binary(sensitive, "sensitive attribute")?;
    check_binary(aux_group, "auxiliary group")?;
    let mut correct = [[0usize; 2]; 2];
    let mut count = [[0usize; 2]; 2];
    for i in 0..labels.len() {
        let (a, g) = (sensitive[i] as usize, aux_group[i] as usize);
        count[a][g] += 1;
        correct[a][g] += usize::from(binarize(predictions[i]) == labels[i]);
    }
    let mut out = BTreeMap::new();
    for a in 0..2 {
        for g in 0..2 {
            if count[a][g] == 0 {
                return Err(Error::UndefinedCell {
                    context: "subgroup accuracy (label field holds the aux group)",
                    group: a as u8,
                    label: g as u8,
                });
            }
            out.insert((a as u8, g as u8), correct[a][g] as f64 / count[a][g] as f64);
        }
    }
    Ok(out)
}

/// Worst accuracy over the four `(A, aux)` subgroups.
pub fn min_subgroup_accuracy(
    labels: &[u8],
    predictions: &[f64],
    sensitive: &[u8],
    aux_group: &[u8],
) -> Result<f64> {
    let acc = subgroup_accuracies(labels, predictions, sensitive, aux_group)?;
    Ok(acc.values().copied().fold(f64::INFINITY, f64::min))
}

/// Indices of the points on the (error, DI) Pareto front, ordered by error.
///
/// A point is dropped when another has error and DI both no larger and at least
/// one strictly smaller. Exact duplicates keep the earliest one.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .0
            .total_cmp(&points[j].0)
            .then(points[i].1.total_cmp(&points[j].1))
            .then(i.cmp(&j))
    });
    let mut best_di = f64::INFINITY;
    let mut front = Vec::new();
    for i in order {
        if points[i].1 < best_di {
            best_di = points[i].1;
            front.push(i);
        }
    }
    front
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_rate_examples() {
        let y = [0, 1, 1, 0];
        assert_eq!(error_rate(&y, &[0.0, 1.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(error_rate(&y, &[1.0, 0.0, 0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(error_rate(&y, &[0.0, 1.0, 0.0, 0.0]).unwrap(), 0.25);
        assert!(error_rate(&[], &[]).is_err());
        // Tie at 0.5 predicts 1.
        assert_eq!(error_rate(&[1], &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn hard_di_hand_instance() {
        let y = [0, 0, 0, 0, 1, 1, 1, 1];
        let a = [0, 0, 1, 1, 0, 0, 1, 1];
        let yhat = [1, 0, 1, 1, 0, 1, 0, 0];
        let di = disparate_impact_hard(&y, &a, &yhat).unwrap();
        assert_eq!(di.fp, 0.5);
        assert_eq!(di.fn_, 0.5);
        assert_eq!(di.di, 0.5);
        let perfect = disparate_impact_hard(&y, &a, &y).unwrap();
        assert_eq!(perfect.di, 0.0);
    }

    #[test]
    fn hard_di_empty_cell_is_undefined() {
        let y = [0, 0, 1];
        let a = [0, 1, 0];
        let err = disparate_impact_hard(&y, &a, &[0, 0, 1]).unwrap_err();
        assert!(matches!(
            err,
            Error::UndefinedCell {
                group: 1,
                label: 1,
                ..
            }
        ));
    }

    #[test]
    fn soft_di_constant_is_zero() {
        let y = [0, 0, 1, 1, 0, 1];
        let a = [0, 1, 0, 1, 1, 0];
        let di = disparate_impact_soft(&y, &a, &[0.3; 6]).unwrap();
        assert_eq!(di.di, 0.0);
        assert!(disparate_impact_soft(&y, &a, &[1.2; 6]).is_err());
    }

    #[test]
    fn deferral_examples() {
        let r = deferral_rates(&[0, 0, 0, 0], &[0, 1, 0, 1], None).unwrap();
        assert_eq!((r.overall, r.per_group), (0.0, [0.0, 0.0]));
        let r = deferral_rates(&[1, 1, 0, 0], &[0, 1, 0, 1], None).unwrap();
        assert_eq!((r.overall, r.per_group), (0.5, [0.5, 0.5]));
        let a = [0, 1, 1, 0, 1];
        let r = deferral_rates(&a, &a, Some(&[0, 0, 1, 1, 1])).unwrap();
        assert_eq!(r.per_group, [0.0, 1.0]);
        assert_eq!(r.per_aux_group, Some([0.5, 2.0 / 3.0]));
        assert!(deferral_rates(&[1, 0], &[0, 0], None).is_err());
    }

    #[test]
    fn msa_examples() {
        let y = [0, 1, 0, 1, 0, 1, 0, 1];
        let a = [0, 0, 0, 0, 1, 1, 1, 1];
        let g = [0, 0, 1, 1, 0, 0, 1, 1];
        let perfect: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        assert_eq!(min_subgroup_accuracy(&y, &perfect, &a, &g).unwrap(), 1.0);
        let mut one_bad = perfect.clone();
        one_bad[6] = 1.0;
        one_bad[7] = 0.0;
        assert_eq!(min_subgroup_accuracy(&y, &one_bad, &a, &g).unwrap(), 0.0);
        // Hand instance: (0,0) 1/2, (0,1) 2/2, (1,0) 1/2, (1,1) 1/2.
        let preds = [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let acc = subgroup_accuracies(&y, &preds, &a, &g).unwrap();
        assert_eq!(acc[&(0, 0)], 0.5);
        assert_eq!(acc[&(0, 1)], 1.0);
        assert_eq!(acc[&(1, 0)], 0.5);
        assert_eq!(acc[&(1, 1)], 0.5);
        assert_eq!(min_subgroup_accuracy(&y, &preds, &a, &g).unwrap(), 0.5);
    }

    #[test]
    fn pareto_examples() {
        assert_eq!(pareto_front(&[(0.3, 0.3)]), vec![0]);
        assert_eq!(
            pareto_front(&[(0.1, 0.2), (0.2, 0.1), (0.2, 0.3)]),
            vec![0, 1]
        );
        let curve: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 10.0 - i as f64)).collect();
        assert_eq!(pareto_front(&curve), (0..10).collect::<Vec<_>>());
        assert_eq!(pareto_front(&[(0.2, 0.2), (0.1, 0.3), (0.2, 0.2)]), vec![1, 0]);
    }
}
