//! Run configuration: `key = value` lines mirroring the hyperparameters.
//!
//! Blank lines and `#` comments are ignored. `mu` and `nu` also accept
//! `auto`: `mu = auto` uses `default_mu` of the input tensor, `nu = auto`
//! selects the weight on the validation window.

use std::fs;
use std::path::Path;

use crate::engine::{default_mu, Hyperparams, NuChoice, ValidationSignals, NU_MULTIPLIERS};
use crate::error::{Result, StelarError};
use crate::tensor::DenseTensor3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuChoice {
    Fixed(f64),
    Auto,
}

/// Hyperparameters plus the data-dependent choices for `mu` and `nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub hp: Hyperparams,
    pub mu: MuChoice,
    pub nu: NuChoice,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            hp: Hyperparams::default(),
            mu: MuChoice::Auto,
            nu: NuChoice::Sweep(NU_MULTIPLIERS.to_vec()),
        }
    }
}

pub const KEYS: [&str; 11] = [
    "rank",
    "mu",
    "nu",
    "iters_outer",
    "iters_inner",
    "iters_grad",
    "horizon",
    "seed",
    "val_window",
    "val_signals",
    "patience",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| StelarError::usage(format!("invalid value `{value}` for {key}")))
}

fn parse_weight(key: &str, value: &str) -> Result<Option<f64>> {
    if value.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    let v: f64 = parse(key, value)?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(StelarError::usage(format!("{key} must be finite and >= 0")));
    }
    Ok(Some(v))
}

impl FitSettings {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "rank" => self.hp.rank = parse(key, value)?,
            "mu" => {
                self.mu = match parse_weight(key, value)? {
                    Some(v) => MuChoice::Fixed(v),
                    None => MuChoice::Auto,
                }
            }
            "nu" => {
                self.nu = match parse_weight(key, value)? {
                    Some(v) => NuChoice::Fixed(v),
                    None => NuChoice::Sweep(NU_MULTIPLIERS.to_vec()),
                }
            }
            "iters_outer" => self.hp.iters_outer = parse(key, value)?,
            "iters_inner" => self.hp.iters_inner = parse(key, value)?,
            "iters_grad" => self.hp.iters_grad = parse(key, value)?,
            "horizon" => self.hp.horizon = parse(key, value)?,
            "seed" => self.hp.seed = parse(key, value)?,
            "val_window" => self.hp.val_window = parse(key, value)?,
            "val_signals" => {
                self.hp.val_signals = if value.eq_ignore_ascii_case("all") {
                    ValidationSignals::All
                } else {
                    ValidationSignals::Signal(parse(key, value)?)
                }
            }
            "patience" => self.hp.patience = parse(key, value)?,
            other => {
                return Err(StelarError::usage(format!(
                    "unknown setting `{other}` (expected one of {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                StelarError::usage(format!("config line {}: expected `key = value`", idx + 1))
            })?;
            self.set(key, value).map_err(|e| {
                StelarError::usage(format!("config line {}: {}", idx + 1, e.message()))
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| {
            StelarError::usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        self.apply_text(&text)
    }

    /// Hyperparameters for `tensor`, with an automatic `mu` resolved.
    pub fn resolve(&self, tensor: &DenseTensor3) -> Hyperparams {
        let mu = match self.mu {
            MuChoice::Fixed(v) => v,
            MuChoice::Auto => default_mu(tensor),
        };
        Hyperparams {
            mu,
            ..self.hp.clone()
        }
    }
}
