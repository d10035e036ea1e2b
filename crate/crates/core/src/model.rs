//! Self-describing JSON persistence for fitted models.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::engine::{FittedStelar, Hyperparams, StopReason};
use crate::error::{Result, StelarError};
use crate::io::offset_date;
use crate::sir_fit::SirParams;
use crate::tensor::{FactorModel, Matrix};

pub const FORMAT: &str = "stelar-model";
pub const VERSION: u32 = 1;

/// A matrix flattened in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FlatMatrix {
    pub fn from_matrix(m: &Matrix) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        FlatMatrix { rows, cols, data }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(StelarError::data(format!(
                "matrix data has {} entries, expected {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub locations: usize,
    pub signals: usize,
    /// Slabs the factors were fit on.
    pub fit_len: usize,
    /// Fitted plus held-out slabs; forecasts start after these.
    pub observed_len: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub location: FlatMatrix,
    pub signal: FlatMatrix,
    pub temporal: FlatMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub dims: Dims,
    pub factors: Factors,
    pub sir: SirParams,
    /// Settings of the fit, with `nu` and `mu` as actually used.
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub location_labels: Vec<String>,
    pub signal_labels: Vec<String>,
    pub start_date: NaiveDate,
    pub best_iteration: usize,
    pub stopped_reason: StopReason,
    pub initial_objective: f64,
    pub objective_trace: Vec<f64>,
    pub validation_trace: Vec<f64>,
}

impl ModelFile {
    pub fn new(
        fitted: &FittedStelar,
        hyperparams: &Hyperparams,
        location_labels: Vec<String>,
        signal_labels: Vec<String>,
        start_date: NaiveDate,
    ) -> Result<Self> {
        let (m, n, l) = fitted.model.dims();
        if location_labels.len() != m || signal_labels.len() != n {
            return Err(StelarError::usage("label counts do not match the model"));
        }
        let model = fitted.model.absorb_weights();
        Ok(ModelFile {
            format: FORMAT.to_string(),
            version: VERSION,
            dims: Dims {
                locations: m,
                signals: n,
                fit_len: l,
                observed_len: fitted.observed_len(),
                rank: model.rank(),
            },
            factors: Factors {
                location: FlatMatrix::from_matrix(&model.a),
                signal: FlatMatrix::from_matrix(&model.b),
                temporal: FlatMatrix::from_matrix(&model.c),
            },
            sir: fitted.sir.clone(),
            hyperparams: hyperparams.clone(),
            seed: hyperparams.seed,
            location_labels,
            signal_labels,
            start_date,
            best_iteration: fitted.best_iteration,
            stopped_reason: fitted.stopped_reason,
            initial_objective: fitted.initial_objective,
            objective_trace: fitted.objective_trace.clone(),
            validation_trace: fitted.validation_trace.clone(),
        })
    }

    /// Rebuilds the fit, checking every shape against `dims`.
    pub fn to_fitted(&self) -> Result<FittedStelar> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(StelarError::data(format!(
                "not a {FORMAT} v{VERSION} document (format `{}`, version {})",
                self.format, self.version
            )));
        }
        let d = &self.dims;
        let a = self.factors.location.to_matrix()?;
        let b = self.factors.signal.to_matrix()?;
        let c = self.factors.temporal.to_matrix()?;
        let expected = [(d.locations, d.rank), (d.signals, d.rank), (d.fit_len, d.rank)];
        if [a.shape(), b.shape(), c.shape()] != expected || d.observed_len < d.fit_len {
            return Err(StelarError::data("factor shapes disagree with the stored dims"));
        }
        if self.location_labels.len() != d.locations || self.signal_labels.len() != d.signals {
            return Err(StelarError::data("label counts disagree with the stored dims"));
        }
        let model = FactorModel::new(a, b, c).map_err(|e| StelarError::data(e.to_string()))?;
        if self.sir.rank() != d.rank {
            return Err(StelarError::data("SIR parameter count disagrees with the rank"));
        }
        self.sir
            .validate()
            .map_err(|e| StelarError::data(e.to_string()))?;
        Ok(FittedStelar {
            model,
            sir: self.sir.clone(),
            initial_objective: self.initial_objective,
            objective_trace: self.objective_trace.clone(),
            validation_trace: self.validation_trace.clone(),
            best_iteration: self.best_iteration,
            stopped_reason: self.stopped_reason,
            holdout: d.observed_len - d.fit_len,
        })
    }

    /// Date of the first forecast slab.
    pub fn forecast_start(&self) -> NaiveDate {
        offset_date(self.start_date, self.dims.observed_len)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| StelarError::numerical(format!("cannot serialize model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| StelarError::data(format!("bad model file: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| StelarError::data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{fit, predict_slabs};
    use crate::synth::{generate_synthetic, SyntheticSpec};

    fn fitted_file() -> (ModelFile, FittedStelar) {
        let mut spec = SyntheticSpec::with_presets(6, 3, 30, 2, 100.0);
        spec.noise_level = 0.05;
        let (bundle, _) = generate_synthetic(&spec).unwrap();
        let hp = Hyperparams {
            rank: 2,
            nu: 0.5,
            iters_outer: 15,
            ..Default::default()
        };
        let fitted = fit(&bundle.tensor, &hp).unwrap();
        let file = ModelFile::new(
            &fitted,
            &hp,
            bundle.location_labels.clone(),
            bundle.signal_labels.clone(),
            bundle.start_date,
        )
        .unwrap();
        (file, fitted)
    }

    #[test]
    fn flat_matrix_is_row_major() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let flat = FlatMatrix::from_matrix(&m);
        assert_eq!(flat.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(flat.to_matrix().unwrap(), m);
    }

    #[test]
    fn json_round_trip_gives_identical_forecasts() {
        let (file, fitted) = fitted_file();
        let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        let restored = back.to_fitted().unwrap();
        let p1 = predict_slabs(&fitted, 7).unwrap();
        let p2 = predict_slabs(&restored, 7).unwrap();
        let bits = |t: &crate::tensor::DenseTensor3| -> Vec<u64> {
            t.as_slice().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&p1), bits(&p2));
        assert_eq!(back.forecast_start(), offset_date(file.start_date, 30));
    }

    #[test]
    fn inconsistent_documents_are_data_errors() {
        let (file, _) = fitted_file();
        let mut bad = file.clone();
        bad.factors.signal.data.pop();
        assert!(matches!(bad.to_fitted(), Err(StelarError::Data(_))));
        let mut bad = file.clone();
        bad.dims.rank = 3;
        assert!(matches!(bad.to_fitted(), Err(StelarError::Data(_))));
        let mut bad = file;
        bad.format = "other".into();
        assert!(matches!(bad.to_fitted(), Err(StelarError::Data(_))));
        assert!(matches!(ModelFile::from_json("{"), Err(StelarError::Data(_))));
    }
}
