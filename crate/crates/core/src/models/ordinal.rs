//! Ordinal three-way head: a single score compared against two thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::di_gaps;
use crate::models::loss::{clamp_prob, scale_for, sign0, Reduction, PROB_FLOOR};
use crate::nn::sigmoid;

/// Probabilities of predicting 1, passing, and predicting 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrdinalOutput {
    pub p: f64,
    pub i: f64,
    pub n: f64,
}

impl OrdinalOutput {
    /// `P(Y = 1)` implied when the model does not pass: `P / (P + N)`.
    pub fn prob_positive(&self) -> f64 {
        let denom = self.p + self.n;
        if denom > 0.0 {
            self.p / denom
        } else {
            0.5
        }
    }
}

/// `P = sigmoid(x - t1)`, `I = sigmoid(x - t0) - sigmoid(x - t1)`, `N = 1 - sigmoid(x - t0)`.
pub fn ordinal_outputs(x: f64, t0: f64, t1: f64) -> Result<OrdinalOutput> {
    if !x.is_finite() || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::NonFinite("ordinal score or thresholds"));
    }
    if t0 > t1 {
        return Err(Error::invalid(format!("threshold t0={t0} exceeds t1={t1}")));
    }
    let a = sigmoid(x - t0);
    let b = sigmoid(x - t1);
    Ok(OrdinalOutput {
        p: b,
        i: (a - b).max(0.0),
        n: 1.0 - a,
    })
}

/// Per-example derivative of a loss with respect to `x`, `t0` and `t1`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct OrdinalGrad {
    pub dx: f64,
    pub dt0: f64,
    pub dt1: f64,
}

fn d_log_clamped(v: f64) -> f64 {
    if (PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&v) {
        1.0 / v
    } else {
        0.0
    }
}

/// Value and gradients of the (fair) punting loss given scores and per-example thresholds.
pub(crate) fn punt_terms(
    labels: &[u8],
    sensitive: &[u8],
    scores: &[f64],
    thresholds: &[(f64, f64)],
    gamma: f64,
    alpha_fair: f64,
    reduction: Reduction,
) -> Result<(f64, Vec<OrdinalGrad>)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("punting loss batch"));
    }
    for (context, len) in [
        ("punting loss sensitive", sensitive.len()),
        ("punting loss scores", scores.len()),
        ("punting loss thresholds", thresholds.len()),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                actual: len,
            });
        }
    }
    let scale = scale_for(reduction, n);
    let mut outs = Vec::with_capacity(n);
    let mut d_p = vec![0.0; n];
    let mut d_n = vec![0.0; n];
    let mut d_i = vec![0.0; n];
    let mut value = 0.0;
    for i in 0..n {
        let (t0, t1) = thresholds[i];
        let o = ordinal_outputs(scores[i], t0, t1)?;
        let y = f64::from(labels[i]);
        value -= scale
            * (y * clamp_prob(o.p).ln() + (1.0 - y) * clamp_prob(o.n).ln()
                - gamma * clamp_prob(o.i).ln());
        d_p[i] = -scale * y * d_log_clamped(o.p);
        d_n[i] = -scale * (1.0 - y) * d_log_clamped(o.n);
        d_i[i] = scale * gamma * d_log_clamped(o.i);
        outs.push(o);
    }
    if alpha_fair != 0.0 {
        let ps: Vec<f64> = outs.iter().map(|o| o.p).collect();
        let ns: Vec<f64> = outs.iter().map(|o| o.n).collect();
        let gp = di_gaps(labels, sensitive, &ps, None, "fair punting regularizer (P)")?;
        let gn = di_gaps(labels, sensitive, &ns, None, "fair punting regularizer (N)")?;
        value += alpha_fair * (gp.absolute().di + gn.absolute().di);
        for i in 0..n {
            let (y, a) = (labels[i], sensitive[i]);
            d_p[i] += alpha_fair * 0.5 * sign0(gp.gap[y as usize]) * gp.d_gap_d_p(y, a, 1.0);
            d_n[i] += alpha_fair * 0.5 * sign0(gn.gap[y as usize]) * gn.d_gap_d_p(y, a, 1.0);
        }
    }
    let grads = (0..n)
        .map(|i| {
            let (t0, t1) = thresholds[i];
            let a = sigmoid(scores[i] - t0);
            let b = sigmoid(scores[i] - t1);
            let da = a * (1.0 - a);
            let db = b * (1.0 - b);
            // P = b, I = a - b, N = 1 - a; da/dx = da, da/dt0 = -da, db/dt1 = -db.
            OrdinalGrad {
                dx: d_p[i] * db + d_i[i] * (da - db) - d_n[i] * da,
                dt0: -d_i[i] * da + d_n[i] * da,
                dt1: -d_p[i] * db + d_i[i] * db,
            }
        })
        .collect();
    Ok((value, grads))
}

/// `-sum[Y log P + (1 - Y) log N - gamma log I]`, one `OrdinalOutput` per example.
pub fn loss_punt(labels: &[u8], outputs: &[OrdinalOutput], gamma: f64) -> Result<f64> {
    if labels.len() != outputs.len() {
        return Err(Error::DimensionMismatch {
            context: "punting loss outputs",
            expected: labels.len(),
            actual: outputs.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("punting loss batch"));
    }
    Ok(labels
        .iter()
        .zip(outputs)
        .map(|(&y, o)| {
            let y = f64::from(y);
            -(y * clamp_prob(o.p).ln() + (1.0 - y) * clamp_prob(o.n).ln()
                - gamma * clamp_prob(o.i).ln())
        })
        .sum())
}

/// Punting loss plus `alpha_fair * (DI_soft(P) + DI_soft(N))`.
pub fn loss_fair_punt(
    labels: &[u8],
    sensitive: &[u8],
    outputs: &[OrdinalOutput],
    gamma: f64,
    alpha_fair: f64,
) -> Result<f64> {
    let base = loss_punt(labels, outputs, gamma)?;
    if alpha_fair == 0.0 {
        return Ok(base);
    }
    let ps: Vec<f64> = outputs.iter().map(|o| o.p).collect();
    let ns: Vec<f64> = outputs.iter().map(|o| o.n).collect();
    let dp = di_gaps(labels, sensitive, &ps, None, "fair punting regularizer (P)")?;
    let dn = di_gaps(labels, sensitive, &ns, None, "fair punting regularizer (N)")?;
    Ok(base + alpha_fair * (dp.absolute().di + dn.absolute().di))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_sum_to_one() {
        for &(x, t0, t1) in &[(0.0, -1.0, 1.0), (3.0, 0.5, 0.7), (-40.0, -1.0, 2.0), (0.2, 0.2, 0.2)] {
            let o = ordinal_outputs(x, t0, t1).unwrap();
            assert!((o.p + o.i + o.n - 1.0).abs() < 1e-12);
            assert!(o.p >= 0.0 && o.i >= 0.0 && o.n >= 0.0);
        }
    }

    #[test]
    fn centred_score_is_symmetric() {
        let o = ordinal_outputs(0.0, -1.0, 1.0).unwrap();
        assert!((o.p - o.n).abs() < 1e-15);
        assert_eq!(o.prob_positive(), 0.5);
        // I is maximised in x at the band centre.
        for dx in [-0.3, -0.01, 0.01, 0.3] {
            assert!(ordinal_outputs(dx, -1.0, 1.0).unwrap().i < o.i);
        }
    }

    #[test]
    fn collapsed_band_never_passes() {
        let o = ordinal_outputs(0.4, 0.4, 0.4).unwrap();
        assert_eq!(o.i, 0.0);
        assert!(ordinal_outputs(0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn punt_loss_hand_value() {
        let o = ordinal_outputs(0.0, -1.0, 1.0).unwrap();
        let gamma = 0.25;
        let expected = -(o.p.ln()) - (o.n.ln()) + 2.0 * gamma * o.i.ln();
        let got = loss_punt(&[1, 0], &[o, o], gamma).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn fair_punt_adds_regularizer() {
        let y = [0u8, 0, 1, 1];
        let a = [0u8, 1, 0, 1];
        let outs: Vec<OrdinalOutput> = [0.3, -0.2, 0.9, 0.1]
            .iter()
            .map(|&x| ordinal_outputs(x, -0.5, 0.5).unwrap())
            .collect();
        let base = loss_punt(&y, &outs, 0.1).unwrap();
        let fair = loss_fair_punt(&y, &a, &outs, 0.1, 0.0).unwrap();
        assert_eq!(base, fair);
        assert!(loss_fair_punt(&y, &a, &outs, 0.1, 1.0).unwrap() > base);
    }
}
