//! The joint factorization loop: alternating ADMM updates of the location,
//! signal and temporal factors, interleaved with projected-gradient steps on
//! the latent SIR parameters; slab forecasting by extending the latent SIR
//! recursions; early stopping on a held-out trailing window; and extraction
//! of the strongest rank-one components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::{admm_factor_update, penalty_policy, AdmmState, FactorSubproblem};
use crate::error::{Result, StelarError};
use crate::sir_fit::{
    build_template, fit_sir_params, initial_params, rescale_to_columns, SirParams,
};
use crate::tensor::{gram, mttkrp, reconstruct, DenseTensor3, FactorModel, Matrix, Mode};

/// Which signals the early-stopping RMSE is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationSignals {
    Signal(usize),
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub rank: usize,
    pub mu: f64,
    pub nu: f64,
    pub iters_outer: usize,
    pub iters_inner: usize,
    pub iters_grad: usize,
    /// Forecast horizon `L_o`.
    pub horizon: usize,
    pub seed: u64,
    /// Trailing slabs held out for early stopping; 0 disables it.
    pub val_window: usize,
    pub val_signals: ValidationSignals,
    /// Consecutive non-improving validation checks tolerated before stopping.
    pub patience: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            rank: 5,
            mu: 0.0,
            nu: 0.0,
            iters_outer: 200,
            iters_inner: 10,
            iters_grad: 50,
            horizon: 10,
            seed: 0,
            val_window: 5,
            val_signals: ValidationSignals::Signal(0),
            patience: 20,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(StelarError::usage("rank must be >= 1"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) || !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(StelarError::usage(format!(
                "mu and nu must be finite and nonnegative (got {}, {})",
                self.mu, self.nu
            )));
        }
        if self.iters_outer == 0 || self.iters_inner == 0 {
            return Err(StelarError::usage("iters_outer and iters_inner must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(StelarError::usage("forecast horizon must be >= 1"));
        }
        if self.patience == 0 {
            return Err(StelarError::usage("patience must be >= 1"));
        }
        Ok(())
    }
}

/// `1e-3 · ||X||² / (M + N + L)`.
pub fn default_mu(tensor: &DenseTensor3) -> f64 {
    let (m, n, l) = tensor.dims();
    1e-3 * tensor.frobenius_norm().powi(2) / (m + n + l) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    ValRmseIncrease,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedStelar {
    /// Factors; `model.c` covers only the fitted (non-held-out) slabs.
    pub model: FactorModel,
    pub sir: SirParams,
    pub initial_objective: f64,
    /// Objective after every completed outer iteration.
    pub objective_trace: Vec<f64>,
    /// Validation RMSE after every completed outer iteration (empty when
    /// early stopping is disabled).
    pub validation_trace: Vec<f64>,
    /// Zero-based outer iteration of the returned snapshot.
    pub best_iteration: usize,
    pub stopped_reason: StopReason,
    /// Observed slabs after the fitted window that were held out.
    pub holdout: usize,
}

impl FittedStelar {
    pub fn fit_len(&self) -> usize {
        self.model.c.nrows()
    }

    /// Number of observed slabs (fitted plus held out).
    pub fn observed_len(&self) -> usize {
        self.fit_len() + self.holdout
    }
}

/// Joint objective
/// `||X - [[A,B,C]]||² + μ(||A||² + ||B||² + ||C||²) + ν Σ (c_tk - C̄_tk)²`.
pub fn objective(
    tensor: &DenseTensor3,
    model: &FactorModel,
    sir: &SirParams,
    hp: &Hyperparams,
) -> Result<f64> {
    if model.dims() != tensor.dims() {
        return Err(StelarError::usage(format!(
            "model dims {:?} do not match tensor {:?}",
            model.dims(),
            tensor.dims()
        )));
    }
    if sir.rank() != model.rank() {
        return Err(StelarError::usage("SIR parameter count differs from rank"));
    }
    let approx = reconstruct(model)?;
    let fit: f64 = tensor
        .as_slice()
        .iter()
        .zip(approx.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let ridge = model.a.norm_squared() + model.b.norm_squared() + model.c.norm_squared();
    let template = build_template(sir, model.c.nrows());
    let latent = (&model.c - template).norm_squared();
    Ok(fit + hp.mu * ridge + hp.nu * latent)
}

/// Slabs `start+1 ..= start+count` (one-based time) of `A diag(ĉ_t) Bᵀ`
/// with `ĉ_t(k) = β_k S_k(t-1) I_k(t-1)` from the extended recursions.
pub fn forecast_slabs(
    model: &FactorModel,
    sir: &SirParams,
    start: usize,
    count: usize,
) -> Result<DenseTensor3> {
    if count == 0 {
        return Err(StelarError::usage("forecast length must be >= 1"));
    }
    if sir.rank() != model.rank() {
        return Err(StelarError::usage("SIR parameter count differs from rank"));
    }
    let mut c_future = Matrix::zeros(count, sir.rank());
    for (k, comp) in sir.components().enumerate() {
        for (t, v) in comp.curve(start, count).into_iter().enumerate() {
            c_future[(t, k)] = v;
        }
    }
    let future = FactorModel {
        a: model.a.clone(),
        b: model.b.clone(),
        c: c_future,
        weights: model.weights.clone(),
    };
    reconstruct(&future)
}

/// Forecasts the `horizon` slabs following the observed window.
pub fn predict_slabs(fitted: &FittedStelar, horizon: usize) -> Result<DenseTensor3> {
    forecast_slabs(&fitted.model, &fitted.sir, fitted.observed_len(), horizon)
}

/// Tracks the best validation score and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, usize)>,
    strikes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best: None,
            strikes: 0,
        }
    }

    pub fn observe(&mut self, iteration: usize, score: f64) -> Verdict {
        let score = if score.is_finite() { score } else { f64::INFINITY };
        match self.best {
            Some((best, _)) if score >= best => {
                if score > best {
                    self.strikes += 1;
                }
                if self.strikes >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Continue
                }
            }
            _ => {
                self.best = Some((score, iteration));
                self.strikes = 0;
                Verdict::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(f64, usize)> {
        self.best
    }
}

fn validation_rmse(
    model: &FactorModel,
    sir: &SirParams,
    holdout: &DenseTensor3,
    signals: ValidationSignals,
) -> Result<f64> {
    let (m, n, l) = holdout.dims();
    let pred = forecast_slabs(model, sir, model.c.nrows(), l)?;
    let selected: Vec<usize> = match signals {
        ValidationSignals::All => (0..n).collect(),
        ValidationSignals::Signal(s) if s < n => vec![s],
        ValidationSignals::Signal(s) => {
            return Err(StelarError::usage(format!(
                "validation signal {s} out of range for {n} signals"
            )))
        }
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..m {
        for &j in &selected {
            for t in 0..l {
                let d = pred.get(i, j, t) - holdout.get(i, j, t);
                sum += d * d;
                count += 1;
            }
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Uniform(0,1) factors scaled so that `||[[A,B,C]]||_F ≈ ||X||_F`.
fn initial_factors<R: Rng>(tensor: &DenseTensor3, rank: usize, rng: &mut R) -> Result<FactorModel> {
    let (m, n, l) = tensor.dims();
    let mut draw = |rows: usize| Matrix::from_fn(rows, rank, |_, _| rng.gen::<f64>());
    let (a, b, c) = (draw(m), draw(n), draw(l));
    let mut model = FactorModel::new(a, b, c)?;
    let approx = reconstruct(&model)?.frobenius_norm();
    let target = tensor.frobenius_norm();
    let scale = if approx > 0.0 { (target / approx).cbrt() } else { 1.0 };
    model.a *= scale;
    model.b *= scale;
    model.c *= scale;
    Ok(model)
}

/// Reference magnitude for `ν`: the mean diagonal of the temporal-update
/// Gram `(AᵀA) ∘ (BᵀB)` at the seeded initialization. A weight of this size
/// makes the template pull comparable to the data term.
pub fn latent_weight_scale(tensor: &DenseTensor3, hp: &Hyperparams) -> Result<f64> {
    let (_, _, l) = tensor.dims();
    let fit_len = l.saturating_sub(hp.val_window).max(1);
    let train = tensor.time_range(0, fit_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let init = initial_factors(&train, hp.rank, &mut rng)?;
    Ok(penalty_policy(&gram(&init.a).component_mul(&gram(&init.b))))
}

/// Called after every outer iteration with the zero-based iteration index
/// and mutable access to the current factors and SIR parameters.
pub type IterationHook<'a> = dyn FnMut(usize, &mut FactorModel, &mut SirParams) + 'a;

pub fn fit(tensor: &DenseTensor3, hp: &Hyperparams) -> Result<FittedStelar> {
    fit_with_hook(tensor, hp, &mut |_, _, _| {})
}

pub fn fit_with_hook(
    tensor: &DenseTensor3,
    hp: &Hyperparams,
    hook: &mut IterationHook<'_>,
) -> Result<FittedStelar> {
    hp.validate()?;
    if tensor.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(StelarError::data("tensor contains non-finite values"));
    }
    let (m, n, l) = tensor.dims();
    if hp.val_window >= l {
        return Err(StelarError::usage(format!(
            "validation window {} leaves no slabs to fit out of {l}",
            hp.val_window
        )));
    }
    let fit_len = l - hp.val_window;
    let max_rank = (m * n).min(n * fit_len).min(m * fit_len);
    if hp.rank > max_rank {
        return Err(StelarError::usage(format!(
            "rank {} exceeds the limit {max_rank} for a {m}x{n}x{fit_len} tensor",
            hp.rank
        )));
    }
    let train = tensor.time_range(0, fit_len)?;
    let holdout = if hp.val_window > 0 {
        Some(tensor.time_range(fit_len, l)?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let init = initial_factors(&train, hp.rank, &mut rng)?;
    let mut sir = rescale_to_columns(&initial_params(hp.rank, &mut rng), &init.c);
    let initial_objective = objective(&train, &init, &sir, hp)?;

    let mut a = AdmmState::new(init.a, 1.0);
    let mut b = AdmmState::new(init.b, 1.0);
    let mut c = AdmmState::new(init.c, 1.0);

    let mut objective_trace = Vec::with_capacity(hp.iters_outer);
    let mut validation_trace = Vec::new();
    let mut stopper = EarlyStopping::new(hp.patience);
    let mut snapshot: Option<(FactorModel, SirParams, usize)> = None;
    let mut stopped_reason = StopReason::MaxIters;

    for iter in 0..hp.iters_outer {
        let g = gram(&c.primal).component_mul(&gram(&b.primal));
        let rhs = mttkrp(&train, &c.primal, &b.primal, Mode::Location)?;
        a.set_rho(penalty_policy(&g));
        a = admm_factor_update(a, &FactorSubproblem::plain(rhs, g, hp.mu), hp.iters_inner)?;

        let g = gram(&c.primal).component_mul(&gram(&a.primal));
        let rhs = mttkrp(&train, &c.primal, &a.primal, Mode::Signal)?;
        b.set_rho(penalty_policy(&g));
        b = admm_factor_update(b, &FactorSubproblem::plain(rhs, g, hp.mu), hp.iters_inner)?;

        let g = gram(&b.primal).component_mul(&gram(&a.primal));
        let rhs = mttkrp(&train, &b.primal, &a.primal, Mode::Time)?;
        c.set_rho(penalty_policy(&g));
        let sub = if hp.nu > 0.0 {
            FactorSubproblem::with_target(rhs, g, hp.mu, hp.nu, build_template(&sir, fit_len))
        } else {
            FactorSubproblem::plain(rhs, g, hp.mu)
        };
        c = admm_factor_update(c, &sub, hp.iters_inner)?;

        if hp.nu > 0.0 && hp.iters_grad > 0 {
            sir = fit_sir_params(&sir, &c.primal, hp.nu, hp.iters_grad)?;
        }

        let mut model = FactorModel {
            a: a.primal.clone(),
            b: b.primal.clone(),
            c: c.primal.clone(),
            weights: None,
        };
        hook(iter, &mut model, &mut sir);
        model.validate()?;
        a.primal = model.a.clone();
        b.primal = model.b.clone();
        c.primal = model.c.clone();

        let obj = objective(&train, &model, &sir, hp)?;
        if !obj.is_finite() {
            return Err(StelarError::numerical(format!(
                "objective became non-finite at outer iteration {iter}"
            )));
        }
        objective_trace.push(obj);

        match &holdout {
            Some(h) => {
                let score = validation_rmse(&model, &sir, h, hp.val_signals)?;
                validation_trace.push(score);
                match stopper.observe(iter, score) {
                    Verdict::Improved => snapshot = Some((model, sir.clone(), iter)),
                    Verdict::Continue => {}
                    Verdict::Stop => {
                        stopped_reason = StopReason::ValRmseIncrease;
                        break;
                    }
                }
            }
            None => snapshot = Some((model, sir.clone(), iter)),
        }
    }

    let (model, sir, best_iteration) =
        snapshot.ok_or_else(|| StelarError::numerical("no outer iteration completed"))?;
    Ok(FittedStelar {
        model,
        sir,
        initial_objective,
        objective_trace,
        validation_trace,
        best_iteration,
        stopped_reason,
        holdout: hp.val_window,
    })
}

/// Multipliers of `latent_weight_scale` tried when `ν` is selected on the
/// validation window.
pub const NU_MULTIPLIERS: [f64; 3] = [0.1, 1.0, 10.0];

/// How the latent-model weight is set for a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NuChoice {
    Fixed(f64),
    /// Multipliers of `latent_weight_scale`, scored by validation RMSE.
    Sweep(Vec<f64>),
}

impl Default for NuChoice {
    fn default() -> Self {
        NuChoice::Sweep(NU_MULTIPLIERS.to_vec())
    }
}

/// Fits with `hp.nu` replaced according to `choice`; returns the weight used.
pub fn fit_with_nu(
    tensor: &DenseTensor3,
    hp: &Hyperparams,
    choice: &NuChoice,
) -> Result<(f64, FittedStelar)> {
    match choice {
        NuChoice::Fixed(nu) => {
            let hp = Hyperparams { nu: *nu, ..hp.clone() };
            Ok((*nu, fit(tensor, &hp)?))
        }
        NuChoice::Sweep(multipliers) => select_nu(tensor, hp, multipliers),
    }
}

/// Fits once per `ν = multiplier · latent_weight_scale` and keeps the fit
/// with the lowest best validation RMSE.
pub fn select_nu(
    tensor: &DenseTensor3,
    hp: &Hyperparams,
    multipliers: &[f64],
) -> Result<(f64, FittedStelar)> {
    if hp.val_window == 0 {
        return Err(StelarError::usage("selecting nu needs a validation window"));
    }
    if multipliers.is_empty() {
        return Err(StelarError::usage("no nu candidates given"));
    }
    let scale = latent_weight_scale(tensor, hp)?;
    let mut best: Option<(f64, f64, FittedStelar)> = None;
    for &mult in multipliers {
        let candidate = Hyperparams {
            nu: mult * scale,
            ..hp.clone()
        };
        let fitted = fit(tensor, &candidate)?;
        let score = fitted.validation_trace[fitted.best_iteration];
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, candidate.nu, fitted));
        }
    }
    let (_, nu, fitted) = best.expect("at least one candidate");
    Ok((nu, fitted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loading {
    pub index: usize,
    pub loading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    /// Column index in the fitted factors.
    pub component: usize,
    pub weight: f64,
    pub temporal_profile: Vec<f64>,
    pub top_locations: Vec<Loading>,
    pub top_signals: Vec<Loading>,
}

fn ranked(column: impl Iterator<Item = f64>, take: usize) -> Vec<Loading> {
    let mut all: Vec<Loading> = column
        .enumerate()
        .map(|(index, loading)| Loading { index, loading })
        .collect();
    all.sort_by(|x, y| {
        y.loading
            .partial_cmp(&x.loading)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.index.cmp(&y.index))
    });
    all.truncate(take);
    all
}

/// Normalizes every factor column, weights each component by the product of
/// its three column norms, and reports the `top_k` heaviest components with
/// their strongest location and signal loadings.
pub fn extract_components(
    fitted: &FittedStelar,
    top_k: usize,
    n_locations: usize,
    n_signals: usize,
) -> Result<Vec<ComponentSummary>> {
    let k = fitted.model.rank();
    if top_k > k {
        return Err(StelarError::usage(format!(
            "asked for {top_k} components from a rank-{k} model"
        )));
    }
    let normed = fitted.model.normalized();
    let weights = normed.weights.clone().unwrap_or_else(|| vec![1.0; k]);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| {
        weights[y]
            .partial_cmp(&weights[x])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    Ok(order
        .into_iter()
        .take(top_k)
        .map(|r| ComponentSummary {
            component: r,
            weight: weights[r],
            temporal_profile: normed.c.column(r).iter().copied().collect(),
            top_locations: ranked(normed.a.column(r).iter().copied(), n_locations),
            top_signals: ranked(normed.b.column(r).iter().copied(), n_signals),
        })
        .collect())
}
