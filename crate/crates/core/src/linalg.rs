//! Small dense matrix helpers (row-major, square) for the invertible
//! channel-mixing layers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;

/// Determinant via LU decomposition with partial pivoting.
pub fn det(n: usize, a: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    let mut lu = a.to_vec();
    let mut d = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if math::abs(lu[row * n + col]) > math::abs(lu[pivot * n + col]) {
                pivot = row;
            }
        }
        if lu[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                lu.swap(col * n + k, pivot * n + k);
            }
            d = -d;
        }
        d *= lu[col * n + col];
        for row in col + 1..n {
            let f = lu[row * n + col] / lu[col * n + col];
            for k in col..n {
                lu[row * n + k] -= f * lu[col * n + k];
            }
        }
    }
    d
}

/// Matrix inverse via Gauss-Jordan with partial pivoting.
pub fn inverse(n: usize, a: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut aug = vec![0.0; n * 2 * n];
    for r in 0..n {
        aug[r * 2 * n..r * 2 * n + n].copy_from_slice(&a[r * n..(r + 1) * n]);
        aug[r * 2 * n + n + r] = 1.0;
    }
    let w = 2 * n;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if math::abs(aug[row * w + col]) > math::abs(aug[pivot * w + col]) {
                pivot = row;
            }
        }
        let pv = aug[pivot * w + col];
        if math::abs(pv) < 1e-12 {
            return Err(CoreError::Numerical(format!("singular matrix (pivot {pv} at column {col})")));
        }
        if pivot != col {
            for k in 0..w {
                aug.swap(col * w + k, pivot * w + k);
            }
        }
        let inv_pv = 1.0 / aug[col * w + col];
        for k in 0..w {
            aug[col * w + k] *= inv_pv;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = aug[row * w + col];
            if f != 0.0 {
                for k in 0..w {
                    aug[row * w + k] -= f * aug[col * w + k];
                }
            }
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        out[r * n..(r + 1) * n].copy_from_slice(&aug[r * w + n..r * w + 2 * n]);
    }
    Ok(out)
}

/// C = A * B for n x n row-major matrices.
pub fn matmul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let av = a[i * n + k];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += av * b[k * n + j];
            }
        }
    }
    c
}

pub fn transpose(n: usize, a: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

/// Random orthogonal matrix via modified Gram-Schmidt on a Gaussian draw.
pub fn random_orthogonal(n: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm: f64 = math::sqrt((0..n).map(|k| m[i * n + k] * m[i * n + k]).sum());
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}
