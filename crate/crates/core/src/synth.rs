//! Synthetic tensors with known latent SIR structure, used as ground truth
//! for recovery and forecasting checks.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StelarError};
use crate::io::TensorBundle;
use crate::sir_fit::{build_template, SirComponent, SirParams};
use crate::tensor::{reconstruct, DenseTensor3, FactorModel, Matrix};

/// Unit-population wave shapes used when no components are given; they peak
/// around days 10, 28, 47, 38 and 63.
pub const PRESET_WAVES: [SirComponent; 5] = [
    SirComponent { beta: 0.4, gamma: 0.1, s: 0.95, i: 0.05 },
    SirComponent { beta: 0.25, gamma: 0.1, s: 0.99, i: 0.01 },
    SirComponent { beta: 0.18, gamma: 0.08, s: 0.995, i: 0.005 },
    SirComponent { beta: 0.3, gamma: 0.12, s: 0.999, i: 0.001 },
    SirComponent { beta: 0.16, gamma: 0.07, s: 0.998, i: 0.002 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub locations: usize,
    pub signals: usize,
    pub len: usize,
    /// Extra slabs of true continuation returned with the ground truth.
    pub horizon: usize,
    /// Additive Gaussian noise with standard deviation
    /// `noise_level · RMS(signal)`, truncated at zero.
    pub noise_level: f64,
    pub seed: u64,
    /// One latent SIR model per component (so rank = `components.len()`).
    pub components: Vec<SirComponent>,
    pub start_date: NaiveDate,
}

impl SyntheticSpec {
    /// `rank` preset waves, each scaled to a population of `population`.
    pub fn with_presets(
        locations: usize,
        signals: usize,
        len: usize,
        rank: usize,
        population: f64,
    ) -> Self {
        SyntheticSpec {
            locations,
            signals,
            len,
            horizon: 10,
            noise_level: 0.0,
            seed: 0,
            components: (0..rank)
                .map(|k| PRESET_WAVES[k % PRESET_WAVES.len()].rescaled(population))
                .collect(),
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
        }
    }

    pub fn rank(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations == 0 || self.signals == 0 || self.len == 0 || self.rank() == 0 {
            return Err(StelarError::usage(
                "synthetic dims and component count must be positive",
            ));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(StelarError::usage("noise level must be finite and >= 0"));
        }
        if let Some(c) = self.components.iter().find(|c| !c.is_feasible()) {
            return Err(StelarError::usage(format!(
                "component {c:?} is outside the stable SIR region"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Noise-free factors over the observed `len` slabs.
    pub model: FactorModel,
    pub sir: SirParams,
    /// Temporal factor over `len + horizon` slabs.
    pub c_extended: Matrix,
    /// Noise-free slabs `len+1 ..= len+horizon` (absent when horizon is 0).
    pub future: Option<DenseTensor3>,
    /// Noise-free observed tensor.
    pub clean: DenseTensor3,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(TensorBundle, GroundTruth)> {
    spec.validate()?;
    let k = spec.rank();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = Matrix::from_fn(spec.locations, k, |_, _| rng.gen::<f64>());
    let b = Matrix::from_fn(spec.signals, k, |_, _| rng.gen::<f64>());
    let sir = SirParams::from_components(&spec.components);
    let c_extended = build_template(&sir, spec.len + spec.horizon);
    let c = c_extended.rows(0, spec.len).into_owned();
    let model = FactorModel::new(a.clone(), b.clone(), c)?;
    let clean = reconstruct(&model)?;

    let future = if spec.horizon > 0 {
        let tail = c_extended.rows(spec.len, spec.horizon).into_owned();
        Some(reconstruct(&FactorModel::new(a, b, tail)?)?)
    } else {
        None
    };

    let count = clean.as_slice().len() as f64;
    let rms = (clean.as_slice().iter().map(|v| v * v).sum::<f64>() / count).sqrt();
    let sd = spec.noise_level * rms;
    let noisy: Vec<f64> = clean
        .as_slice()
        .iter()
        .map(|v| {
            if sd > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                (v + sd * z).max(0.0)
            } else {
                *v
            }
        })
        .collect();
    let tensor = DenseTensor3::new(clean.dims(), noisy)?;
    let bundle = TensorBundle::new(
        tensor,
        (0..spec.locations).map(|i| format!("loc_{i:03}")).collect(),
        (0..spec.signals).map(|j| format!("signal_{j}")).collect(),
        spec.start_date,
    )?;
    Ok((
        bundle,
        GroundTruth {
            model,
            sir,
            c_extended,
            future,
            clean,
        },
    ))
}
