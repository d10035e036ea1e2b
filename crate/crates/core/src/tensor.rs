//! Dense three-way tensors, their matrix unfoldings, and the structured
//! products (Khatri-Rao, MTTKRP) the factor updates are built from.
//!
//! Unfolding conventions, for a CPD `X = [[A, B, C]]` of an `M x N x L`
//! tensor:
//!
//! - mode 1: `X1 = (C ⊙ B) Aᵀ`, shape `(N·L) x M`, row `n + t·N`
//! - mode 2: `X2 = (C ⊙ A) Bᵀ`, shape `(M·L) x N`, row `m + t·M`
//! - mode 3: `X3 = (B ⊙ A) Cᵀ`, shape `(M·N) x L`, row `m + n·M`
//!
//! where `P ⊙ Q` places `P[j,k]·Q[i,k]` at row `i + j·rows(Q)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StelarError};

pub type Matrix = DMatrix<f64>;

/// Which mode of a three-way tensor an unfolding or MTTKRP refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Location,
    Signal,
    Time,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Location, Mode::Signal, Mode::Time];

    pub fn index(self) -> usize {
        match self {
            Mode::Location => 1,
            Mode::Signal => 2,
            Mode::Time => 3,
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = StelarError;

    fn try_from(mode: usize) -> Result<Self> {
        match mode {
            1 => Ok(Mode::Location),
            2 => Ok(Mode::Signal),
            3 => Ok(Mode::Time),
            other => Err(StelarError::usage(format!(
                "tensor mode must be 1, 2 or 3, got {other}"
            ))),
        }
    }
}

/// Nonnegative `M x N x L` tensor (locations x signals x time).
///
/// Storage is location-major, time-minor: `(m, n, t)` lives at
/// `(m·N + n)·L + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (m, n, l) = dims;
        if m == 0 || n == 0 || l == 0 {
            return Err(StelarError::usage(format!(
                "tensor dimensions must be positive, got {m}x{n}x{l}"
            )));
        }
        if data.len() != m * n * l {
            return Err(StelarError::usage(format!(
                "tensor {m}x{n}x{l} needs {} values, got {}",
                m * n * l,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(StelarError::data(format!(
                "non-finite tensor value at flat index {pos}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| *v < 0.0) {
            return Err(StelarError::data(format!(
                "negative tensor value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(DenseTensor3 { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        Self::new(dims, vec![0.0; dims.0 * dims.1 * dims.2])
    }

    /// Builds a tensor by evaluating `f(m, n, t)` at every cell.
    pub fn from_fn(
        dims: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let (m, n, l) = dims;
        let mut data = Vec::with_capacity(m * n * l);
        for i in 0..m {
            for j in 0..n {
                for t in 0..l {
                    data.push(f(i, j, t));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn locations(&self) -> usize {
        self.dims.0
    }

    pub fn signals(&self) -> usize {
        self.dims.1
    }

    pub fn len_time(&self) -> usize {
        self.dims.2
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, t: usize) -> f64 {
        let (_, nn, l) = self.dims;
        self.data[(m * nn + n) * l + t]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Time series of one (location, signal) fiber.
    pub fn fiber(&self, m: usize, n: usize) -> &[f64] {
        let (_, nn, l) = self.dims;
        let start = (m * nn + n) * l;
        &self.data[start..start + l]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sub-tensor of the slabs `start..end` along time.
    pub fn time_range(&self, start: usize, end: usize) -> Result<Self> {
        let (m, n, l) = self.dims;
        if start >= end || end > l {
            return Err(StelarError::usage(format!(
                "time range {start}..{end} invalid for {l} slabs"
            )));
        }
        Self::from_fn((m, n, end - start), |i, j, t| self.get(i, j, start + t))
    }
}

/// Matricizes `tensor` along `mode` (layouts in the module docs).
pub fn unfold(tensor: &DenseTensor3, mode: Mode) -> Matrix {
    let (m, n, l) = tensor.dims();
    match mode {
        Mode::Location => Matrix::from_fn(n * l, m, |r, c| tensor.get(c, r % n, r / n)),
        Mode::Signal => Matrix::from_fn(m * l, n, |r, c| tensor.get(r % m, c, r / m)),
        Mode::Time => Matrix::from_fn(m * n, l, |r, c| tensor.get(r % m, r / m, c)),
    }
}

/// Inverse of [`unfold`].
pub fn refold(matrix: &Matrix, mode: Mode, dims: (usize, usize, usize)) -> Result<DenseTensor3> {
    let (m, n, l) = dims;
    let expected = match mode {
        Mode::Location => (n * l, m),
        Mode::Signal => (m * l, n),
        Mode::Time => (m * n, l),
    };
    if matrix.shape() != expected {
        return Err(StelarError::usage(format!(
            "mode-{} unfolding of {m}x{n}x{l} must be {:?}, got {:?}",
            mode.index(),
            expected,
            matrix.shape()
        )));
    }
    DenseTensor3::from_fn(dims, |i, j, t| match mode {
        Mode::Location => matrix[(j + t * n, i)],
        Mode::Signal => matrix[(i + t * m, j)],
        Mode::Time => matrix[(i + j * m, t)],
    })
}

/// Column-wise Kronecker product. `p` is `J x K`, `q` is `I x K`; the result
/// is `(I·J) x K` with `p[j,k]·q[i,k]` at row `i + j·I`.
pub fn khatri_rao(p: &Matrix, q: &Matrix) -> Result<Matrix> {
    if p.ncols() != q.ncols() {
        return Err(StelarError::usage(format!(
            "khatri-rao operands need equal column counts, got {} and {}",
            p.ncols(),
            q.ncols()
        )));
    }
    let rows_q = q.nrows();
    Ok(Matrix::from_fn(p.nrows() * rows_q, p.ncols(), |r, k| {
        p[(r / rows_q, k)] * q[(r % rows_q, k)]
    }))
}

/// Computes `unfold(tensor, mode)ᵀ · khatri_rao(f1, f2)` without forming
/// either operand.
///
/// Operand order follows the unfolding identities: mode 1 takes `(C, B)`,
/// mode 2 `(C, A)`, mode 3 `(B, A)`.
pub fn mttkrp(tensor: &DenseTensor3, f1: &Matrix, f2: &Matrix, mode: Mode) -> Result<Matrix> {
    let (m, n, l) = tensor.dims();
    let (rows1, rows2, out_rows) = match mode {
        Mode::Location => (l, n, m),
        Mode::Signal => (l, m, n),
        Mode::Time => (n, m, l),
    };
    if f1.nrows() != rows1 || f2.nrows() != rows2 {
        return Err(StelarError::usage(format!(
            "mode-{} mttkrp on {m}x{n}x{l} needs factors with {rows1} and {rows2} rows, got {} and {}",
            mode.index(),
            f1.nrows(),
            f2.nrows()
        )));
    }
    if f1.ncols() != f2.ncols() {
        return Err(StelarError::usage(format!(
            "mttkrp factors disagree on rank: {} vs {}",
            f1.ncols(),
            f2.ncols()
        )));
    }
    let k = f1.ncols();
    let mut out = Matrix::zeros(out_rows, k);
    let mut acc = vec![0.0; k];
    match mode {
        Mode::Location => {
            // f1 = C (time), f2 = B (signal)
            for i in 0..m {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for j in 0..n {
                    let fiber = tensor.fiber(i, j);
                    for (r, a) in acc.iter_mut().enumerate() {
                        let dot: f64 = fiber.iter().enumerate().map(|(t, x)| x * f1[(t, r)]).sum();
                        *a += dot * f2[(j, r)];
                    }
                }
                for (r, a) in acc.iter().enumerate() {
                    out[(i, r)] = *a;
                }
            }
        }
        Mode::Signal => {
            // f1 = C (time), f2 = A (location)
            for i in 0..m {
                for j in 0..n {
                    let fiber = tensor.fiber(i, j);
                    for r in 0..k {
                        let dot: f64 = fiber.iter().enumerate().map(|(t, x)| x * f1[(t, r)]).sum();
                        out[(j, r)] += dot * f2[(i, r)];
                    }
                }
            }
        }
        Mode::Time => {
            // f1 = B (signal), f2 = A (location)
            for i in 0..m {
                for j in 0..n {
                    let fiber = tensor.fiber(i, j);
                    for r in 0..k {
                        let w = f1[(j, r)] * f2[(i, r)];
                        if w == 0.0 {
                            continue;
                        }
                        for (t, x) in fiber.iter().enumerate() {
                            out[(t, r)] += w * x;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `Mᵀ M`.
pub fn gram(m: &Matrix) -> Matrix {
    m.transpose() * m
}

/// CPD factor matrices `A (M x K)`, `B (N x K)`, `C (L x K)` and optional
/// per-component weights (set after column normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub weights: Option<Vec<f64>>,
}

impl FactorModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let model = FactorModel {
            a,
            b,
            c,
            weights: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.a.ncols();
        if k == 0 {
            return Err(StelarError::usage("factor model needs rank >= 1"));
        }
        if self.b.ncols() != k || self.c.ncols() != k {
            return Err(StelarError::usage(format!(
                "factor ranks disagree: A has {}, B has {}, C has {}",
                k,
                self.b.ncols(),
                self.c.ncols()
            )));
        }
        if self.a.nrows() == 0 || self.b.nrows() == 0 || self.c.nrows() == 0 {
            return Err(StelarError::usage("factor matrices need at least one row"));
        }
        if let Some(w) = &self.weights {
            if w.len() != k {
                return Err(StelarError::usage(format!(
                    "{} component weights for rank {k}",
                    w.len()
                )));
            }
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    fn weight(&self, k: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[k])
    }

    /// Unit-normalizes every factor column and moves the scale into
    /// `weights` (multiplying any existing weights).
    pub fn normalized(&self) -> FactorModel {
        let k = self.rank();
        let mut out = self.clone();
        let mut weights = Vec::with_capacity(k);
        for r in 0..k {
            let mut w = self.weight(r);
            for factor in [&mut out.a, &mut out.b, &mut out.c] {
                let norm = factor.column(r).norm();
                if norm > 0.0 {
                    factor.column_mut(r).scale_mut(1.0 / norm);
                }
                w *= norm;
            }
            weights.push(w);
        }
        out.weights = Some(weights);
        out
    }

    /// Folds `weights` back into the temporal factor.
    pub fn absorb_weights(&self) -> FactorModel {
        let mut out = self.clone();
        if let Some(w) = out.weights.take() {
            for (r, wr) in w.iter().enumerate() {
                out.c.column_mut(r).scale_mut(*wr);
            }
        }
        out
    }
}

/// `X̂(m,n,t) = Σ_k w_k A(m,k) B(n,k) C(t,k)`.
pub fn reconstruct(model: &FactorModel) -> Result<DenseTensor3> {
    model.validate()?;
    let bad = |m: &Matrix| m.iter().any(|v| !v.is_finite() || *v < 0.0);
    if bad(&model.a) || bad(&model.b) || bad(&model.c) {
        return Err(StelarError::usage(
            "reconstruct needs finite nonnegative factor matrices",
        ));
    }
    let (m, n, l) = model.dims();
    let k = model.rank();
    let mut data = vec![0.0; m * n * l];
    for r in 0..k {
        let w = model.weight(r);
        for i in 0..m {
            let ai = w * model.a[(i, r)];
            if ai == 0.0 {
                continue;
            }
            for j in 0..n {
                let aib = ai * model.b[(j, r)];
                if aib == 0.0 {
                    continue;
                }
                let base = (i * n + j) * l;
                for t in 0..l {
                    data[base + t] += aib * model.c[(t, r)];
                }
            }
        }
    }
    DenseTensor3::new((m, n, l), data)
}
