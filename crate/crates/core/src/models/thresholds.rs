use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `(t0, t1)` band per sensitive group, or a single band shared by all.
///
/// Scores strictly inside `(t0, t1)` pass; `score <= t0` predicts 0 and
/// `score >= t1` predicts 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pairs: Vec<(f64, f64)>,
    per_group: bool,
}

/// Outcome of thresholding one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Predict0,
    Pass,
    Predict1,
}

impl ThresholdSet {
    pub fn shared(t0: f64, t1: f64) -> Self {
        ThresholdSet {
            pairs: vec![(t0, t1)],
            per_group: false,
        }
    }

    /// Pair `k` applies to sensitive group `k`.
    pub fn per_group(pairs: Vec<(f64, f64)>) -> Self {
        ThresholdSet {
            pairs,
            per_group: true,
        }
    }

    pub fn is_per_group(&self) -> bool {
        self.per_group
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::invalid("threshold set is empty"));
        }
        if !self.per_group && self.pairs.len() != 1 {
            return Err(Error::invalid("a shared threshold set holds exactly one pair"));
        }
        for &(t0, t1) in &self.pairs {
            if !t0.is_finite() || !t1.is_finite() {
                return Err(Error::NonFinite("thresholds"));
            }
            if t0 > t1 {
                return Err(Error::invalid(format!("threshold t0={t0} exceeds t1={t1}")));
            }
        }
        Ok(())
    }

    /// Index into `pairs` used for an example in `group`.
    pub fn slot(&self, group: u8) -> Result<usize> {
        if !self.per_group {
            return Ok(0);
        }
        let g = group as usize;
        if g >= self.pairs.len() {
            return Err(Error::invalid(format!("no thresholds for group {group}")));
        }
        Ok(g)
    }

    pub fn pair_for(&self, group: u8) -> Result<(f64, f64)> {
        Ok(self.pairs[self.slot(group)?])
    }

    pub fn flat_len(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.pairs.iter().flat_map(|&(a, b)| [a, b]).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::DimensionMismatch {
                context: "threshold vector",
                expected: self.flat_len(),
                actual: flat.len(),
            });
        }
        for (pair, chunk) in self.pairs.iter_mut().zip(flat.chunks(2)) {
            *pair = (chunk[0], chunk[1]);
        }
        Ok(())
    }

    /// Restores `t0 <= t1` after an unconstrained update by collapsing crossed
    /// pairs onto their midpoint.
    pub fn project(&mut self) {
        for pair in &mut self.pairs {
            if pair.0 > pair.1 {
                let mid = 0.5 * (pair.0 + pair.1);
                *pair = (mid, mid);
            }
        }
    }
}

/// Thresholds one score. The band is open: a score equal to `t0` predicts 0.
pub fn apply_thresholds(score: f64, thresholds: &ThresholdSet, group: u8) -> Result<Decision> {
    let (t0, t1) = thresholds.pair_for(group)?;
    Ok(if score <= t0 {
        Decision::Predict0
    } else if score >= t1 {
        Decision::Predict1
    } else {
        Decision::Pass
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        let t = ThresholdSet::shared(0.3, 0.7);
        assert_eq!(apply_thresholds(0.5, &t, 0).unwrap(), Decision::Pass);
        assert_eq!(apply_thresholds(0.3, &t, 1).unwrap(), Decision::Predict0);
        assert_eq!(apply_thresholds(0.7, &t, 1).unwrap(), Decision::Predict1);
    }

    #[test]
    fn collapsed_band_never_passes() {
        let t = ThresholdSet::per_group(vec![(0.4, 0.4), (0.6, 0.6)]);
        for k in 0..=100 {
            let s = k as f64 / 100.0;
            for g in 0..2 {
                assert_ne!(apply_thresholds(s, &t, g).unwrap(), Decision::Pass);
            }
        }
    }

    #[test]
    fn unknown_group_errors() {
        let t = ThresholdSet::per_group(vec![(0.4, 0.6), (0.4, 0.6)]);
        assert!(apply_thresholds(0.5, &t, 2).is_err());
        // Shared sets apply to every group.
        assert!(apply_thresholds(0.5, &ThresholdSet::shared(0.4, 0.6), 7).is_ok());
    }

    #[test]
    fn crossed_pair_is_invalid_until_projected() {
        let mut t = ThresholdSet::shared(0.8, 0.2);
        assert!(t.validate().is_err());
        t.project();
        assert_eq!(t.pairs(), &[(0.5, 0.5)]);
        assert!(t.validate().is_ok());
    }
}
