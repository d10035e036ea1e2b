#![allow(dead_code)]

use stelar::tensor::{DenseTensor3, Matrix};

pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        dot / (nx * ny)
    }
}

fn column(m: &Matrix, k: usize) -> Vec<f64> {
    m.column(k).iter().copied().collect()
}

/// Greedy matching of estimated to true columns by cosine similarity: the
/// best remaining pair is matched first. Returns `perm[true] = estimated`.
pub fn greedy_alignment(est: &Matrix, truth: &Matrix) -> Vec<usize> {
    let k = truth.ncols();
    let mut pairs = Vec::new();
    for e in 0..est.ncols() {
        for t in 0..k {
            pairs.push((cosine(&column(est, e), &column(truth, t)), e, t));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; est.ncols()];
    for (_, e, t) in pairs {
        if !used[e] && perm[t] == usize::MAX {
            used[e] = true;
            perm[t] = e;
        }
    }
    perm
}

/// Mean cosine between matched columns under `perm`.
pub fn mean_cosine(est: &Matrix, truth: &Matrix, perm: &[usize]) -> f64 {
    let k = truth.ncols();
    (0..k)
        .map(|t| cosine(&column(est, perm[t]), &column(truth, t)))
        .sum::<f64>()
        / k as f64
}

pub fn rms(x: &DenseTensor3) -> f64 {
    let v = x.as_slice();
    (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn rmse(a: &DenseTensor3, b: &DenseTensor3) -> f64 {
    assert_eq!(a.dims(), b.dims());
    let n = a.as_slice().len() as f64;
    (a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
        .sqrt()
}

pub fn relative_error(approx: &DenseTensor3, exact: &DenseTensor3) -> f64 {
    let diff: f64 = approx
        .as_slice()
        .iter()
        .zip(exact.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / exact.frobenius_norm()
}

/// `min_{F >= 0} ||X - Φ Fᵀ||²` by projected gradient with step `1/λ_max`,
/// iterated until the iterate stops moving.
pub fn nnls_oracle(phi: &Matrix, x: &Matrix) -> Matrix {
    let g = phi.transpose() * phi;
    let rhs = x.transpose() * phi;
    let lmax = g.symmetric_eigenvalues().max();
    let mut f = Matrix::zeros(x.ncols(), phi.ncols());
    for _ in 0..200_000 {
        let grad = &f * &g - &rhs;
        let next = (&f - grad / lmax).map(|v| v.max(0.0));
        let moved = (&next - &f).amax();
        f = next;
        if moved < 1e-15 {
            break;
        }
    }
    f
}
