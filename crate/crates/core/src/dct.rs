//! Orthonormal DCT-II and its inverse.
//!
//! The forward transform of a length-`N` signal is
//!
//! ```text
//! X[k] = s_k * sum_n x[n] * cos(pi * (2n + 1) * k / (2N))
//! s_0 = sqrt(1/N),  s_k = sqrt(2/N) for k > 0
//! ```
//!
//! With these scale factors the basis matrix is orthogonal, so the inverse is
//! its transpose and the transform preserves Euclidean norm. Signals here are
//! short (tens of frames), so the dense O(N^2) matrix form is used throughout;
//! the forecasting model also feeds the same basis matrix to the autodiff tape
//! as a constant.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::tensor::Tensor;

/// The `[N, N]` orthonormal DCT-II basis; row `k` holds basis vector `k`.
pub fn dct_matrix(n: usize) -> Tensor {
    let mut d = Tensor::zeros(&[n, n]);
    let nf = n as f64;
    for k in 0..n {
        let s = if k == 0 { fmath::sqrt(1.0 / nf) } else { fmath::sqrt(2.0 / nf) };
        for t in 0..n {
            let angle = core::f64::consts::PI * (2 * t + 1) as f64 * k as f64 / (2.0 * nf);
            d.set2(k, t, s * fmath::cos(angle));
        }
    }
    d
}

/// Forward transform of one signal.
pub fn dct(signal: &[f64]) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::InvalidData("dct of an empty signal".into()));
    }
    let n = signal.len();
    let d = dct_matrix(n);
    let x = Tensor::from_vec(&[n, 1], signal.to_vec())?;
    Ok(d.matmul(&x)?.into_data())
}

/// Inverse transform of one coefficient vector.
pub fn idct(coeffs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.is_empty() {
        return Err(Error::InvalidData("idct of an empty signal".into()));
    }
    let n = coeffs.len();
    let d = dct_matrix(n);
    let x = Tensor::from_vec(&[n, 1], coeffs.to_vec())?;
    Ok(d.transpose()?.matmul(&x)?.into_data())
}

/// Row-wise forward transform of a `[C, N]` matrix: each row is one signal.
pub fn dct_rows(m: &Tensor) -> Result<Tensor> {
    let (_, n) = m.dims2()?;
    if n == 0 {
        return Err(Error::InvalidData("dct of zero-length rows".into()));
    }
    m.matmul(&dct_matrix(n).transpose()?)
}

/// Row-wise inverse transform of a `[C, N]` coefficient matrix.
pub fn idct_rows(m: &Tensor) -> Result<Tensor> {
    let (_, n) = m.dims2()?;
    if n == 0 {
        return Err(Error::InvalidData("idct of zero-length rows".into()));
    }
    m.matmul(&dct_matrix(n))
}
