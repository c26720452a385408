//! Synthetic data with DM-only side information of tunable informativeness.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, SideInfo};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Generator settings.
///
/// `X_j ~ N((Y - 0.5) * class_separation + A * group_shift, 1)`. The auxiliary
/// group `G ~ Ber(aux_rate)` is appended as the last feature. With probability
/// `z_informativeness` the side information equals `Y`; otherwise it is an
/// independent fair coin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n: usize,
    pub sensitive_rate: f64,
    /// `P(Y = 1 | A = a)`.
    pub base_rates: [f64; 2],
    pub feature_dim: usize,
    pub class_separation: f64,
    pub group_shift: f64,
    pub aux_rate: f64,
    pub z_informativeness: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 4000,
            sensitive_rate: 0.4,
            base_rates: [0.35, 0.55],
            feature_dim: 4,
            class_separation: 0.8,
            group_shift: 0.6,
            aux_rate: 0.5,
            z_informativeness: 0.7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("sensitive_rate", self.sensitive_rate),
            ("base_rates[0]", self.base_rates[0]),
            ("base_rates[1]", self.base_rates[1]),
            ("aux_rate", self.aux_rate),
            ("z_informativeness", self.z_informativeness),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must be a probability, got {p}")));
            }
        }
        if self.n == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("n and feature_dim must be positive"));
        }
        if !self.class_separation.is_finite() || !self.group_shift.is_finite() {
            return Err(Error::NonFinite("synthetic feature means"));
        }
        Ok(())
    }
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_for(seed, &[0x7379_6e74]);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let d = spec.feature_dim;
    let mut features = Array2::zeros((spec.n, d + 1));
    let mut labels = Vec::with_capacity(spec.n);
    let mut sensitive = Vec::with_capacity(spec.n);
    let mut codes = Vec::with_capacity(spec.n);
    let mut aux = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let a = u8::from(rng.random_bool(spec.sensitive_rate));
        let y = u8::from(rng.random_bool(spec.base_rates[a as usize]));
        let g = u8::from(rng.random_bool(spec.aux_rate));
        let centre = (f64::from(y) - 0.5) * spec.class_separation + f64::from(a) * spec.group_shift;
        for j in 0..d {
            features[[i, j]] = centre + noise.sample(&mut rng);
        }
        features[[i, d]] = f64::from(g);
        let z = if rng.random_bool(spec.z_informativeness) {
            y
        } else {
            u8::from(rng.random_bool(0.5))
        };
        labels.push(y);
        sensitive.push(a);
        codes.push(u32::from(z));
        aux.push(g);
    }
    let mut feature_names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    feature_names.push("g".into());
    let ds = Dataset {
        example_ids: (0..spec.n).map(|i| format!("s{i}")).collect(),
        feature_names,
        features,
        labels,
        sensitive,
        side_info: Some(SideInfo {
            levels: vec!["0".into(), "1".into()],
            codes,
        }),
        aux_group: Some(aux),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_informative_side_info_reveals_label() {
        let spec = SynthSpec {
            n: 500,
            z_informativeness: 1.0,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec, 1).unwrap();
        let z = &ds.side_info.as_ref().unwrap().codes;
        assert!(z.iter().zip(&ds.labels).all(|(&z, &y)| z == u32::from(y)));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let spec = SynthSpec {
            n: 100,
            ..SynthSpec::default()
        };
        assert_eq!(synth_generate(&spec, 7).unwrap(), synth_generate(&spec, 7).unwrap());
        assert_ne!(synth_generate(&spec, 7).unwrap(), synth_generate(&spec, 8).unwrap());
    }

    #[test]
    fn invalid_probability_errors() {
        let spec = SynthSpec {
            aux_rate: 1.5,
            ..SynthSpec::default()
        };
        assert!(synth_generate(&spec, 0).is_err());
    }
}
