//! Latent SIR fitting: one discrete SIR model per column of the temporal
//! factor, fit by projected gradient descent with exact forward-mode
//! sensitivities of the recursion.
//!
//! For component `k` the template is `C̄(t,k) = β_k S_k(t-1) I_k(t-1)`,
//! `t = 1..=L`, and the loss is `ν Σ_t (c_{t,k} - C̄(t,k))²`. The
//! sensitivities of `S` and `I` with respect to `θ ∈ {β, γ, s, i}` follow the
//! differentiated recursion
//!
//! ```text
//! S'(t) = S'(t-1) - β(S'(t-1) I(t-1) + S(t-1) I'(t-1)) - [θ=β] S(t-1) I(t-1)
//! I'(t) = I'(t-1) + β(S'(t-1) I(t-1) + S(t-1) I'(t-1)) + [θ=β] S(t-1) I(t-1)
//!         - γ I'(t-1) - [θ=γ] I(t-1)
//! ```
//!
//! with `S'(0) = [θ=s]` and `I'(0) = [θ=i]`.
//!
//! The feasible set is `β, s, i >= 0`, `0 <= γ <= 1` and `β (s + i) <= 1`.
//! The last condition is invariant under the population rescaling
//! `(β/σ, γ, σs, σi)` (which scales the curve by `σ`) and keeps every
//! compartment nonnegative for all `t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StelarError};
use crate::tensor::Matrix;

/// Parameters of one latent SIR model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirComponent {
    pub beta: f64,
    pub gamma: f64,
    pub s: f64,
    pub i: f64,
}

impl SirComponent {
    pub fn to_array(self) -> [f64; 4] {
        [self.beta, self.gamma, self.s, self.i]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        SirComponent {
            beta: x[0],
            gamma: x[1],
            s: x[2],
            i: x[3],
        }
    }

    pub fn population(&self) -> f64 {
        self.s + self.i
    }

    /// Same curve shape scaled by `factor` (exact symmetry of the family).
    pub fn rescaled(&self, factor: f64) -> Self {
        SirComponent {
            beta: self.beta / factor,
            gamma: self.gamma,
            s: self.s * factor,
            i: self.i * factor,
        }
    }

    pub fn is_feasible(&self) -> bool {
        let x = self.to_array();
        x.iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.gamma <= 1.0
            && self.beta * self.population() <= 1.0 + 1e-12
    }

    /// Box projection plus a `β` cap restoring `β (s + i) <= 1`.
    pub fn projected(&self) -> Self {
        let mut out = SirComponent::from_array(project_box(self.to_array()));
        let pop = out.population();
        if pop > 0.0 && out.beta * pop > 1.0 {
            out.beta = 1.0 / pop;
        }
        out
    }

    /// Same shape with the population that best matches `column` in least
    /// squares; unchanged when no positive scale exists.
    pub fn scaled_to(&self, column: &[f64]) -> Self {
        let curve = self.curve(0, column.len());
        let energy: f64 = curve.iter().map(|v| v * v).sum();
        let overlap: f64 = curve.iter().zip(column).map(|(a, b)| a * b).sum();
        let factor = overlap / energy;
        if factor.is_finite() && factor > 0.0 {
            self.rescaled(factor)
        } else {
            *self
        }
    }

    /// New-infections curve `C(t)` for `t = start+1 ..= start+len`.
    pub fn curve(&self, start: usize, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        let (mut s, mut i) = (self.s, self.i);
        for t in 0..start + len {
            let inf = self.beta * s * i;
            if t >= start {
                out.push(inf);
            }
            let rec = self.gamma * i;
            s -= inf;
            i += inf - rec;
        }
        out
    }
}

/// Per-component latent SIR parameters (vectors of length `K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
}

impl SirParams {
    pub fn from_components(components: &[SirComponent]) -> Self {
        SirParams {
            beta: components.iter().map(|c| c.beta).collect(),
            gamma: components.iter().map(|c| c.gamma).collect(),
            s: components.iter().map(|c| c.s).collect(),
            i: components.iter().map(|c| c.i).collect(),
        }
    }

    pub fn rank(&self) -> usize {
        self.beta.len()
    }

    pub fn component(&self, k: usize) -> SirComponent {
        SirComponent {
            beta: self.beta[k],
            gamma: self.gamma[k],
            s: self.s[k],
            i: self.i[k],
        }
    }

    pub fn set_component(&mut self, k: usize, c: SirComponent) {
        self.beta[k] = c.beta;
        self.gamma[k] = c.gamma;
        self.s[k] = c.s;
        self.i[k] = c.i;
    }

    pub fn components(&self) -> impl Iterator<Item = SirComponent> + '_ {
        (0..self.rank()).map(|k| self.component(k))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.beta.len();
        if self.gamma.len() != k || self.s.len() != k || self.i.len() != k {
            return Err(StelarError::usage("SIR parameter vectors differ in length"));
        }
        if self.components().any(|c| !c.to_array().iter().all(|v| v.is_finite() && *v >= 0.0))
        {
            return Err(StelarError::usage(
                "SIR parameters must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    pub fn is_feasible(&self) -> bool {
        self.components().all(|c| c.is_feasible())
    }
}

/// Default starting point: `β=0.4, γ=0.1, s=0.95, i=0.05` with independent
/// ±10% uniform jitter per parameter and component.
pub fn initial_params<R: Rng>(rank: usize, rng: &mut R) -> SirParams {
    let mut jitter = |v: f64| v * (1.0 + rng.gen_range(-0.1..=0.1));
    let comps: Vec<_> = (0..rank)
        .map(|_| {
            SirComponent {
                beta: jitter(0.4),
                gamma: jitter(0.1),
                s: jitter(0.95),
                i: jitter(0.05),
            }
            .projected()
        })
        .collect();
    SirParams::from_components(&comps)
}

/// Rescales each component's population so its curve best matches the
/// matching column of `c` in least squares. Curve shapes are unchanged.
pub fn rescale_to_columns(params: &SirParams, c: &Matrix) -> SirParams {
    let mut out = params.clone();
    for k in 0..params.rank() {
        let column: Vec<f64> = c.column(k).iter().copied().collect();
        out.set_component(k, params.component(k).scaled_to(&column));
    }
    out
}

/// `P(t,k) = S_k(t-1)` and `Q(t,k) = I_k(t-1)` for `t = 1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectories {
    pub p: Matrix,
    pub q: Matrix,
}

pub fn latent_trajectories(params: &SirParams, len: usize) -> LatentTrajectories {
    let k = params.rank();
    let mut p = Matrix::zeros(len, k);
    let mut q = Matrix::zeros(len, k);
    for (r, comp) in params.components().enumerate() {
        let (mut s, mut i) = (comp.s, comp.i);
        for t in 0..len {
            p[(t, r)] = s;
            q[(t, r)] = i;
            let inf = comp.beta * s * i;
            s -= inf;
            i += inf - comp.gamma * i;
        }
    }
    LatentTrajectories { p, q }
}

/// Sensitivities of one component's `S(t)` and `I(t)`, `t = 0..L-1`, with
/// respect to `[β, γ, s, i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrajectories {
    pub susceptible: Vec<f64>,
    pub infected: Vec<f64>,
    pub d_susceptible: [Vec<f64>; 4],
    pub d_infected: [Vec<f64>; 4],
}

pub fn sensitivities(comp: &SirComponent, len: usize) -> SensitivityTrajectories {
    let mut out = SensitivityTrajectories {
        susceptible: Vec::with_capacity(len),
        infected: Vec::with_capacity(len),
        d_susceptible: Default::default(),
        d_infected: Default::default(),
    };
    let mut state = Forward::new(comp);
    for _ in 0..len {
        out.susceptible.push(state.s);
        out.infected.push(state.i);
        for p in 0..4 {
            out.d_susceptible[p].push(state.ds[p]);
            out.d_infected[p].push(state.di[p]);
        }
        state.advance(comp);
    }
    out
}

/// Forward-mode state of the recursion and its four sensitivities.
struct Forward {
    s: f64,
    i: f64,
    ds: [f64; 4],
    di: [f64; 4],
}

impl Forward {
    fn new(comp: &SirComponent) -> Self {
        Forward {
            s: comp.s,
            i: comp.i,
            ds: [0.0, 0.0, 1.0, 0.0],
            di: [0.0, 0.0, 0.0, 1.0],
        }
    }

    /// Current new-infections value and its gradient.
    fn incidence(&self, beta: f64) -> (f64, [f64; 4]) {
        let si = self.s * self.i;
        let mut d = [0.0; 4];
        for (p, dp) in d.iter_mut().enumerate() {
            *dp = beta * (self.ds[p] * self.i + self.s * self.di[p]);
        }
        d[0] += si;
        (beta * si, d)
    }

    fn advance(&mut self, comp: &SirComponent) {
        let (beta, gamma) = (comp.beta, comp.gamma);
        let si = self.s * self.i;
        for p in 0..4 {
            let flow = beta * (self.ds[p] * self.i + self.s * self.di[p]);
            let mut ds = self.ds[p] - flow;
            let mut di = self.di[p] + flow - gamma * self.di[p];
            if p == 0 {
                ds -= si;
                di += si;
            } else if p == 1 {
                di -= self.i;
            }
            self.ds[p] = ds;
            self.di[p] = di;
        }
        let inf = beta * si;
        self.s -= inf;
        self.i += inf - gamma * self.i;
    }
}

/// `C̄ = (P ⊛ Q) diag(β)`, shape `L x K`.
pub fn build_template(params: &SirParams, len: usize) -> Matrix {
    let mut out = Matrix::zeros(len, params.rank());
    for (k, comp) in params.components().enumerate() {
        for (t, v) in comp.curve(0, len).into_iter().enumerate() {
            out[(t, k)] = v;
        }
    }
    out
}

fn component_loss(comp: &SirComponent, column: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut i) = (comp.s, comp.i);
    let mut loss = 0.0;
    for c in column {
        let inf = comp.beta * s * i;
        loss += (c - inf) * (c - inf);
        s -= inf;
        i += inf - comp.gamma * i;
    }
    loss
}

fn component_gradient(comp: &SirComponent, column: impl Iterator<Item = f64>) -> [f64; 4] {
    let mut state = Forward::new(comp);
    let mut grad = [0.0; 4];
    for c in column {
        let (inf, d) = state.incidence(comp.beta);
        let r = c - inf;
        for p in 0..4 {
            grad[p] -= 2.0 * r * d[p];
        }
        state.advance(comp);
    }
    grad
}

fn check_shapes(params: &SirParams, c: &Matrix) -> Result<()> {
    if c.ncols() != params.rank() {
        return Err(StelarError::usage(format!(
            "temporal factor has {} columns but {} SIR components",
            c.ncols(),
            params.rank()
        )));
    }
    Ok(())
}

/// `ν Σ_k Σ_t (c_{t,k} - β_k S_k(t-1) I_k(t-1))²`.
pub fn sir_objective(params: &SirParams, c: &Matrix, nu: f64) -> Result<f64> {
    check_shapes(params, c)?;
    Ok(nu
        * params
            .components()
            .enumerate()
            .map(|(k, comp)| component_loss(&comp, c.column(k).iter().copied()))
            .sum::<f64>())
}

/// Partial derivatives of [`sir_objective`] per component.
#[derive(Debug, Clone, PartialEq)]
pub struct SirGradient {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
}

pub fn sir_gradients(params: &SirParams, c: &Matrix, nu: f64) -> Result<SirGradient> {
    check_shapes(params, c)?;
    let k = params.rank();
    let mut out = SirGradient {
        beta: vec![0.0; k],
        gamma: vec![0.0; k],
        s: vec![0.0; k],
        i: vec![0.0; k],
    };
    for (r, comp) in params.components().enumerate() {
        let g = component_gradient(&comp, c.column(r).iter().copied());
        out.beta[r] = nu * g[0];
        out.gamma[r] = nu * g[1];
        out.s[r] = nu * g[2];
        out.i[r] = nu * g[3];
    }
    Ok(out)
}

/// Backtracking (Armijo) line-search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
        }
    }
}

/// Projected gradient descent with Armijo backtracking along the projection
/// arc. Each search starts from the Barzilai-Borwein step of the previous
/// move (or `ls.initial_step` when none is available). `objective` returns
/// `None` for points outside the feasible region, which the line search
/// treats as rejected. A failed line search ends the run with the current
/// point.
pub fn projected_gradient<const D: usize>(
    start: [f64; D],
    steps: usize,
    ls: &LineSearch,
    objective: impl Fn(&[f64; D]) -> Option<f64>,
    gradient: impl Fn(&[f64; D]) -> [f64; D],
    project: impl Fn([f64; D]) -> [f64; D],
) -> [f64; D] {
    let mut x = start;
    let Some(mut fx) = objective(&x) else {
        return x;
    };
    let mut g = gradient(&x);
    let mut first_step = ls.initial_step;
    for _ in 0..steps {
        if g.iter().all(|v| *v == 0.0) || g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut step = first_step;
        let mut accepted = None;
        for _ in 0..=ls.max_backtracks {
            let mut trial = x;
            for d in 0..D {
                trial[d] -= step * g[d];
            }
            let trial = project(trial);
            let decrease: f64 = (0..D).map(|d| g[d] * (trial[d] - x[d])).sum();
            if decrease < 0.0 {
                if let Some(ft) = objective(&trial) {
                    if ft <= fx + ls.sufficient_decrease * decrease {
                        accepted = Some((trial, ft));
                        break;
                    }
                }
            }
            step *= ls.shrink;
        }
        let Some((trial, ft)) = accepted else {
            break;
        };
        let g_new = gradient(&trial);
        let (mut ss, mut sy) = (0.0, 0.0);
        for d in 0..D {
            let s = trial[d] - x[d];
            ss += s * s;
            sy += s * (g_new[d] - g[d]);
        }
        first_step = if sy > 0.0 && (ss / sy).is_finite() {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            ls.initial_step
        };
        x = trial;
        fx = ft;
        g = g_new;
    }
    x
}

fn project_box(mut x: [f64; 4]) -> [f64; 4] {
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
    x[1] = x[1].min(1.0);
    x
}

/// Projected gradient over the box `0 <= x <= upper`, run on coordinates
/// divided by the magnitudes of `start` (an exact diagonal change of
/// variables that equalizes very different parameter scales).
pub fn scaled_projected_gradient<const D: usize>(
    start: [f64; D],
    upper: [f64; D],
    steps: usize,
    ls: &LineSearch,
    objective: impl Fn(&[f64; D]) -> Option<f64>,
    gradient: impl Fn(&[f64; D]) -> [f64; D],
) -> [f64; D] {
    let scale = start.map(|v| if v > 1e-12 { v } else { 1.0 });
    let natural = |y: &[f64; D]| std::array::from_fn(|d| y[d] * scale[d]);
    let best = projected_gradient(
        std::array::from_fn(|d| start[d] / scale[d]),
        steps,
        ls,
        |y| objective(&natural(y)),
        |y| {
            let g = gradient(&natural(y));
            std::array::from_fn(|d| g[d] * scale[d])
        },
        |y| std::array::from_fn(|d| y[d].clamp(0.0, upper[d] / scale[d])),
    );
    natural(&best)
}

/// Fits one component to `column` for `steps` projected-gradient iterations.
///
/// The search runs in population-normalized units with per-parameter
/// scaling. Both maps are exact reparametrizations, so the natural-unit
/// objective still decreases monotonically.
pub fn fit_component(
    comp: SirComponent,
    column: &[f64],
    steps: usize,
    ls: &LineSearch,
) -> SirComponent {
    let comp = if comp.is_feasible() { comp } else { comp.projected() };
    let population = comp.population();
    if steps == 0 || !(population > 0.0) || !population.is_finite() {
        return comp;
    }
    let target: Vec<f64> = column.iter().map(|v| v / population).collect();
    let objective = |x: &[f64; 4]| {
        let c = SirComponent::from_array(*x);
        c.is_feasible()
            .then(|| component_loss(&c, target.iter().copied()))
    };
    let gradient =
        |x: &[f64; 4]| component_gradient(&SirComponent::from_array(*x), target.iter().copied());
    let best = scaled_projected_gradient(
        comp.rescaled(1.0 / population).to_array(),
        [f64::INFINITY, 1.0, f64::INFINITY, f64::INFINITY],
        steps,
        ls,
        objective,
        gradient,
    );
    SirComponent::from_array(best).rescaled(population)
}

/// Unit-population shapes spanning growth rates, recovery rates and initial
/// infected fractions from 0.3 down to 1e-5.
fn shape_grid() -> impl Iterator<Item = SirComponent> {
    const GAMMAS: [f64; 4] = [0.05, 0.1, 0.2, 0.35];
    const RATIOS: [f64; 7] = [1.1, 1.3, 1.6, 2.0, 2.5, 3.5, 5.0];
    GAMMAS.into_iter().flat_map(|gamma| {
        RATIOS.into_iter().flat_map(move |ratio| {
            (1..=10).filter_map(move |e| {
                let i = 10f64.powf(-0.5 * e as f64);
                let s = 1.0 - i;
                let comp = SirComponent {
                    beta: ratio * gamma / s,
                    gamma,
                    s,
                    i,
                };
                comp.is_feasible().then_some(comp)
            })
        })
    })
}

/// Best grid shape for `column` after least-squares population scaling, or
/// `None` for an all-zero column.
pub fn grid_start(column: &[f64]) -> Option<SirComponent> {
    if !column.iter().any(|v| *v > 0.0) {
        return None;
    }
    let mut best: Option<(f64, SirComponent)> = None;
    for shape in shape_grid() {
        let comp = shape.scaled_to(column);
        let loss = component_loss(&comp, column.iter().copied());
        if best.is_none_or(|(l, _)| loss < l) {
            best = Some((loss, comp));
        }
    }
    best.map(|(_, comp)| comp)
}

/// Fits from the warm start and from the best grid shape, keeping whichever
/// ends lower. Never worse than `fit_component` from `comp`.
pub fn fit_component_restarted(
    comp: SirComponent,
    column: &[f64],
    steps: usize,
    ls: &LineSearch,
) -> SirComponent {
    let warm = fit_component(comp, column, steps, ls);
    if steps == 0 {
        return warm;
    }
    let Some(seed) = grid_start(column) else {
        return warm;
    };
    let alt = fit_component(seed, column, steps, ls);
    let loss = |c: &SirComponent| component_loss(c, column.iter().copied());
    if loss(&alt) < loss(&warm) {
        alt
    } else {
        warm
    }
}

/// Runs `steps` projected-gradient iterations on every component
/// independently. With `nu == 0` the loss is identically zero and the
/// parameters are returned unchanged.
pub fn fit_sir_params(params: &SirParams, c: &Matrix, nu: f64, steps: usize) -> Result<SirParams> {
    fit_sir_params_with(params, c, nu, steps, &LineSearch::default())
}

pub fn fit_sir_params_with(
    params: &SirParams,
    c: &Matrix,
    nu: f64,
    steps: usize,
    ls: &LineSearch,
) -> Result<SirParams> {
    check_shapes(params, c)?;
    params.validate()?;
    if nu == 0.0 || steps == 0 {
        return Ok(params.clone());
    }
    let mut out = params.clone();
    for k in 0..params.rank() {
        let column: Vec<f64> = c.column(k).iter().copied().collect();
        out.set_component(k, fit_component_restarted(params.component(k), &column, steps, ls));
    }
    Ok(out)
}
