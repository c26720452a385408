//! Dense one-hidden-layer network with sigmoid hidden units.
//!
//! The network is deliberately fixed in shape: `input -> sigmoid hidden -> linear head`.
//! Heads emit raw logits; whatever nonlinearity the loss needs (sigmoid for a
//! probability, shifted sigmoids for ordinal thresholds) is applied by the loss.
//! Gradients are written out by hand for this architecture, which keeps them exact
//! and lets the gated head stop gradients selectively.

mod adam;
pub(crate) mod train;

pub use adam::AdamState;
pub use train::{gradient, train, Batch, TrainConfig, TrainingHistory};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ThresholdSet;

/// What the output layer produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One logit for `P(Y = 1)`.
    BinaryLogit,
    /// One score compared against an owned pair of thresholds.
    OrdinalThreshold,
    /// Two logits: the model prediction and the deferral gate.
    GatedTwoOutput,
    /// Mean network of a variational posterior; one logit.
    Variational,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::GatedTwoOutput => 2,
            _ => 1,
        }
    }
}

/// Parameters of the network.
///
/// `hidden_weights` is `hidden_units x input_dim`, `head_weights` is
/// `outputs x hidden_units`. Ordinal heads additionally own their thresholds,
/// which take part in the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub head_weights: Array2<f64>,
    pub head_bias: Array1<f64>,
    pub head_kind: HeadKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdSet>,
}

/// Intermediate values kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub hidden: Array2<f64>,
    pub outputs: Array2<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl ModelParams {
    /// Glorot-uniform initialisation: `U[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
    ///
    /// Ordinal heads start with a single shared threshold pair `(-1, 1)`, or one
    /// pair per sensitive group when `per_group_thresholds` is set.
    pub fn init(
        input_dim: usize,
        hidden_units: usize,
        head_kind: HeadKind,
        per_group_thresholds: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_units == 0 {
            return Err(Error::invalid("input_dim and hidden_units must be positive"));
        }
        let outputs = head_kind.outputs();
        let r1 = (6.0 / (input_dim + hidden_units) as f64).sqrt();
        let r2 = (6.0 / (hidden_units + outputs) as f64).sqrt();
        let hidden_weights =
            Array2::from_shape_fn((hidden_units, input_dim), |_| rng.random_range(-r1..=r1));
        let head_weights =
            Array2::from_shape_fn((outputs, hidden_units), |_| rng.random_range(-r2..=r2));
        let thresholds = (head_kind == HeadKind::OrdinalThreshold).then(|| {
            if per_group_thresholds {
                ThresholdSet::per_group(vec![(-1.0, 1.0), (-1.0, 1.0)])
            } else {
                ThresholdSet::shared(-1.0, 1.0)
            }
        });
        Ok(ModelParams {
            input_dim,
            hidden_units,
            hidden_weights,
            hidden_bias: Array1::zeros(hidden_units),
            head_weights,
            head_bias: Array1::zeros(outputs),
            head_kind,
            thresholds,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(input_dim: usize, hidden_units: usize, head_kind: HeadKind) -> Self {
        let outputs = head_kind.outputs();
        ModelParams {
            input_dim,
            hidden_units,
            hidden_weights: Array2::zeros((hidden_units, input_dim)),
            hidden_bias: Array1::zeros(hidden_units),
            head_weights: Array2::zeros((outputs, hidden_units)),
            head_bias: Array1::zeros(outputs),
            head_kind,
            thresholds: (head_kind == HeadKind::OrdinalThreshold)
                .then(|| ThresholdSet::shared(0.0, 0.0)),
        }
    }

    pub fn outputs(&self) -> usize {
        self.head_kind.outputs()
    }

    /// Checks shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let outputs = self.outputs();
        let shape_checks = [
            ("hidden_weights rows", self.hidden_units, self.hidden_weights.nrows()),
            ("hidden_weights cols", self.input_dim, self.hidden_weights.ncols()),
            ("hidden_bias", self.hidden_units, self.hidden_bias.len()),
            ("head_weights rows", outputs, self.head_weights.nrows()),
            ("head_weights cols", self.hidden_units, self.head_weights.ncols()),
            ("head_bias", outputs, self.head_bias.len()),
        ];
        for (context, expected, actual) in shape_checks {
            if expected != actual {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    actual,
                });
            }
        }
        match (self.head_kind, &self.thresholds) {
            (HeadKind::OrdinalThreshold, None) => {
                return Err(Error::invalid("ordinal head requires thresholds"))
            }
            (HeadKind::OrdinalThreshold, Some(t)) => t.validate()?,
            (_, Some(_)) => return Err(Error::invalid("only ordinal heads own thresholds")),
            _ => {}
        }
        let finite = self.hidden_weights.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite())
            && self.head_weights.iter().all(|v| v.is_finite())
            && self.head_bias.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }

    /// Head logits for a single example.
    pub fn forward(&self, features: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.validate()?;
        if features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "forward features",
                expected: self.input_dim,
                actual: features.len(),
            });
        }
        let hidden = (self.hidden_weights.dot(&features) + &self.hidden_bias).mapv(sigmoid);
        Ok(self.head_weights.dot(&hidden) + &self.head_bias)
    }

    /// Batched forward pass, `features` is `n x input_dim`.
    pub fn forward_batch(&self, features: ArrayView2<f64>) -> Result<ForwardCache> {
        if features.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "forward_batch features",
                expected: self.input_dim,
                actual: features.ncols(),
            });
        }
        let mut hidden = features.dot(&self.hidden_weights.t());
        hidden += &self.hidden_bias;
        hidden.mapv_inplace(sigmoid);
        let mut outputs = hidden.dot(&self.head_weights.t());
        outputs += &self.head_bias;
        Ok(ForwardCache { hidden, outputs })
    }

    /// Backpropagates `d_outputs` (`n x outputs`) into a flat gradient laid out
    /// like [`ModelParams::to_flat`]. Threshold gradients are written by the caller.
    ///
    /// `hidden_output_mask[k]` decides whether output `k` sends gradient into the
    /// hidden layer; a masked output still trains its own head row.
    pub fn backward(
        &self,
        features: ArrayView2<f64>,
        cache: &ForwardCache,
        d_outputs: ArrayView2<f64>,
        hidden_output_mask: &[bool],
    ) -> Vec<f64> {
        let mut grad = vec![0.0; self.num_params()];
        let d_head_w = d_outputs.t().dot(&cache.hidden);
        let d_head_b = d_outputs.sum_axis(Axis(0));

        let mut masked = d_outputs.to_owned();
        for (k, keep) in hidden_output_mask.iter().enumerate() {
            if !keep {
                masked.column_mut(k).fill(0.0);
            }
        }
        let mut d_pre = masked.dot(&self.head_weights);
        d_pre.zip_mut_with(&cache.hidden, |d, &h| *d *= h * (1.0 - h));
        let d_hidden_w = d_pre.t().dot(&features);
        let d_hidden_b = d_pre.sum_axis(Axis(0));

        let blocks = d_hidden_w
            .iter()
            .chain(d_hidden_b.iter())
            .chain(d_head_w.iter())
            .chain(d_head_b.iter());
        for (g, v) in grad.iter_mut().zip(blocks) {
            *g = *v;
        }
        grad
    }

    pub fn num_network_params(&self) -> usize {
        self.hidden_weights.len()
            + self.hidden_bias.len()
            + self.head_weights.len()
            + self.head_bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.num_network_params() + self.thresholds.as_ref().map_or(0, |t| t.flat_len())
    }

    /// Flattened parameters: hidden weights (row-major), hidden bias, head weights,
    /// head bias, then thresholds `(t0, t1)` per pair.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        flat.extend(self.hidden_weights.iter());
        flat.extend(self.hidden_bias.iter());
        flat.extend(self.head_weights.iter());
        flat.extend(self.head_bias.iter());
        if let Some(t) = &self.thresholds {
            flat.extend(t.to_flat());
        }
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                context: "flat parameter vector",
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for v in self.hidden_weights.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.hidden_bias.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.head_weights.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.head_bias.iter_mut() {
            *v = it.next().unwrap();
        }
        if let Some(t) = &mut self.thresholds {
            let rest: Vec<f64> = it.collect();
            t.set_flat(&rest)?;
        }
        Ok(())
    }

    pub(crate) fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn zero_network_gives_zero_logits() {
        let p = ModelParams::zeros(3, 4, HeadKind::GatedTwoOutput);
        let out = p.forward(array![0.3, -2.0, 5.0].view()).unwrap();
        assert_eq!(out, array![0.0, 0.0]);
    }

    #[test]
    fn one_unit_network_hand_evaluated() {
        let mut p = ModelParams::zeros(1, 1, HeadKind::BinaryLogit);
        p.hidden_weights[[0, 0]] = 1.0;
        p.head_weights[[0, 0]] = 1.0;
        let out = p.forward(array![0.0].view()).unwrap();
        assert_eq!(out[0], 0.5);
    }

    #[test]
    fn non_finite_weight_is_rejected() {
        let mut p = ModelParams::zeros(2, 2, HeadKind::BinaryLogit);
        p.head_weights[[0, 1]] = f64::NAN;
        assert!(matches!(
            p.forward(array![1.0, 1.0].view()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn wrong_feature_length_is_rejected() {
        let p = ModelParams::zeros(2, 2, HeadKind::BinaryLogit);
        assert!(matches!(
            p.forward(array![1.0].view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_roundtrip_and_batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(3, 4, HeadKind::OrdinalThreshold, true, &mut rng).unwrap();
        let q = p.with_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);

        let x = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        let cache = p.forward_batch(x.view()).unwrap();
        for i in 0..2 {
            let single = p.forward(x.row(i)).unwrap();
            assert!((single[0] - cache.outputs[[i, 0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((logit(sigmoid(1.3)) - 1.3).abs() < 1e-12);
    }
}
