//! ADMM for the nonnegative, Frobenius-regularized least-squares factor
//! subproblems
//!
//! ```text
//! min_{F >= 0} ||X - Φ Fᵀ||² + μ||F||² + ν||F - T||²
//! ```
//!
//! Only `ΦᵀX` (an MTTKRP, `rhs`) and `ΦᵀΦ` (a Hadamard product of factor
//! Grams, `gram`) are needed. The `K x K` normal matrix is factored once per
//! call and reused by every inner iteration.

use nalgebra::Cholesky;

use crate::error::{Result, StelarError};
use crate::tensor::Matrix;

/// Split variables of one factor block. `auxiliary` is stored in the same
/// orientation as `primal` (it is the transpose of the `K x rows` variable
/// the least-squares step solves for).
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub primal: Matrix,
    pub auxiliary: Matrix,
    pub dual: Matrix,
    pub rho: f64,
}

impl AdmmState {
    /// Cold start: auxiliary copy of `primal`, zero dual.
    pub fn new(primal: Matrix, rho: f64) -> Self {
        let dual = Matrix::zeros(primal.nrows(), primal.ncols());
        AdmmState {
            auxiliary: primal.clone(),
            primal,
            dual,
            rho,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorSubproblem {
    pub rhs: Matrix,
    pub gram: Matrix,
    pub mu: f64,
    pub nu: f64,
    pub target: Option<Matrix>,
}

impl FactorSubproblem {
    /// Subproblem without a latent template (the A and B updates).
    pub fn plain(rhs: Matrix, gram: Matrix, mu: f64) -> Self {
        FactorSubproblem {
            rhs,
            gram,
            mu,
            nu: 0.0,
            target: None,
        }
    }

    /// Subproblem pulled toward `target` with weight `nu` (the C update).
    pub fn with_target(rhs: Matrix, gram: Matrix, mu: f64, nu: f64, target: Matrix) -> Self {
        FactorSubproblem {
            rhs,
            gram,
            mu,
            nu,
            target: Some(target),
        }
    }

    fn validate(&self, state: &AdmmState) -> Result<()> {
        let (rows, k) = self.rhs.shape();
        if self.gram.shape() != (k, k) {
            return Err(StelarError::usage(format!(
                "gram must be {k}x{k}, got {:?}",
                self.gram.shape()
            )));
        }
        for (name, m) in [
            ("primal", &state.primal),
            ("auxiliary", &state.auxiliary),
            ("dual", &state.dual),
        ] {
            if m.shape() != (rows, k) {
                return Err(StelarError::usage(format!(
                    "{name} must be {rows}x{k}, got {:?}",
                    m.shape()
                )));
            }
        }
        if let Some(t) = &self.target {
            if t.shape() != (rows, k) {
                return Err(StelarError::usage(format!(
                    "template must be {rows}x{k}, got {:?}",
                    t.shape()
                )));
            }
        }
        if self.nu > 0.0 && self.target.is_none() {
            return Err(StelarError::usage("nu > 0 requires a template"));
        }
        if !(self.mu >= 0.0 && self.nu >= 0.0 && state.rho > 0.0) {
            return Err(StelarError::usage(format!(
                "need mu >= 0, nu >= 0, rho > 0 (got {}, {}, {})",
                self.mu, self.nu, state.rho
            )));
        }
        Ok(())
    }

    /// Subproblem objective without the constant `||X||²` term.
    pub fn objective(&self, factor: &Matrix) -> f64 {
        let fit = (factor * &self.gram).dot(factor) - 2.0 * factor.dot(&self.rhs);
        let mut total = fit + self.mu * factor.norm_squared();
        if let Some(t) = &self.target {
            total += self.nu * (factor - t).norm_squared();
        }
        total
    }
}

impl AdmmState {
    /// Changes the penalty while keeping the unscaled multiplier `ρ·dual`
    /// fixed, so a warm-started dual stays consistent.
    pub fn set_rho(&mut self, rho: f64) {
        if rho != self.rho {
            self.dual *= self.rho / rho;
            self.rho = rho;
        }
    }
}

/// `trace(gram) / K`, floored at `1e-12`.
pub fn penalty_policy(gram: &Matrix) -> f64 {
    let k = gram.nrows().max(1);
    (gram.trace() / k as f64).max(1e-12)
}

/// Runs `inner_iters` rounds of least-squares solve, nonnegative projection
/// and scaled dual ascent.
pub fn admm_factor_update(
    mut state: AdmmState,
    sub: &FactorSubproblem,
    inner_iters: usize,
) -> Result<AdmmState> {
    sub.validate(&state)?;
    if inner_iters == 0 {
        return Err(StelarError::usage("inner_iters must be >= 1"));
    }
    let k = sub.gram.nrows();
    let shift = sub.mu + sub.nu + state.rho;
    let system = &sub.gram + Matrix::identity(k, k) * shift;
    let chol = Cholesky::new(system).ok_or_else(|| {
        StelarError::numerical("ADMM normal matrix is not positive definite")
    })?;
    let mut fixed = sub.rhs.clone();
    if let Some(t) = &sub.target {
        fixed += t * sub.nu;
    }
    let rho = state.rho;
    for _ in 0..inner_iters {
        let rhs = &fixed + (&state.primal + &state.dual) * rho;
        state.auxiliary = chol.solve(&rhs.transpose()).transpose();
        state.primal = (&state.auxiliary - &state.dual).map(|v| v.max(0.0));
        state.dual += &state.primal - &state.auxiliary;
    }
    if state.primal.iter().any(|v| !v.is_finite()) {
        return Err(StelarError::numerical("ADMM produced non-finite factor entries"));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gram, khatri_rao, mttkrp, reconstruct, unfold, FactorModel, Mode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(penalty_policy(&Matrix::identity(3, 3)), 1.0);
        assert_eq!(
            penalty_policy(&Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0]))),
            3.0
        );
        assert_eq!(penalty_policy(&Matrix::zeros(2, 2)), 1e-12);
    }

    #[test]
    fn scalar_problem_converges_to_ratio() {
        let sub = FactorSubproblem::plain(scalar(4.0), scalar(2.0), 0.0);
        let state = admm_factor_update(AdmmState::new(scalar(0.0), 1.0), &sub, 200).unwrap();
        assert!((state.primal[(0, 0)] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn negative_correlation_projects_to_zero() {
        for rho in [0.1, 1.0, 10.0] {
            let sub = FactorSubproblem::plain(scalar(-3.0), scalar(1.0), 0.0);
            let state = admm_factor_update(AdmmState::new(scalar(1.0), rho), &sub, 500).unwrap();
            assert!(state.primal[(0, 0)].abs() < 1e-8, "rho={rho}");
            assert!(state.primal[(0, 0)] >= 0.0);
        }
    }

    #[test]
    fn exact_factor_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen::<f64>());
        let (a, b, c) = (m(5, 2), m(4, 2), m(6, 2));
        let x = reconstruct(&FactorModel::new(a.clone(), b.clone(), c.clone()).unwrap()).unwrap();
        let g = gram(&c).component_mul(&gram(&b));
        let sub = FactorSubproblem::plain(mttkrp(&x, &c, &b, Mode::Location).unwrap(), g.clone(), 0.0);
        let state = admm_factor_update(AdmmState::new(a.clone(), penalty_policy(&g)), &sub, 10)
            .unwrap();
        assert!((&state.primal - &a).amax() < 1e-10);
        // the cached-rhs objective agrees with the explicit residual
        let x1 = unfold(&x, Mode::Location);
        let phi = khatri_rao(&c, &b).unwrap();
        let explicit = (&x1 - &phi * a.transpose()).norm_squared() - x1.norm_squared();
        assert!((sub.objective(&a) - explicit).abs() < 1e-9);
    }

    #[test]
    fn template_pulls_solution() {
        // gram 1, rhs 1, nu 1 toward 3: minimizer of (f-1)^2 + (f-3)^2 is 2
        let sub = FactorSubproblem::with_target(scalar(1.0), scalar(1.0), 0.0, 1.0, scalar(3.0));
        let state = admm_factor_update(AdmmState::new(scalar(0.0), 1.0), &sub, 300).unwrap();
        assert!((state.primal[(0, 0)] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn shape_errors() {
        let sub = FactorSubproblem::plain(Matrix::zeros(3, 2), Matrix::identity(2, 2), 0.0);
        assert!(admm_factor_update(AdmmState::new(Matrix::zeros(2, 2), 1.0), &sub, 1).is_err());
        assert!(admm_factor_update(AdmmState::new(Matrix::zeros(3, 2), 1.0), &sub, 0).is_err());
        let mut no_target = FactorSubproblem::plain(Matrix::zeros(3, 2), Matrix::identity(2, 2), 0.0);
        no_target.nu = 1.0;
        assert!(admm_factor_update(AdmmState::new(Matrix::zeros(3, 2), 1.0), &no_target, 1).is_err());
    }
}
