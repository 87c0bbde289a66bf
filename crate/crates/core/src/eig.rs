//! Eigendecomposition of small symmetric matrices (2x2 and 3x3).
//!
//! These are the only sizes the uncertainty geometry needs: 3x3 for joint
//! position covariance, 2x2 for cross-section ellipses. The 2x2 case is solved
//! in closed form through a single Givens angle; the 3x3 case runs cyclic
//! Jacobi sweeps, which for this size converge to machine precision in a
//! handful of sweeps.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::tensor::Tensor;

/// Permitted asymmetry of the input, relative to its largest entry.
const SYMMETRY_TOL: f64 = 1e-9;
/// Jacobi stops rotating entries below this fraction of the largest entry.
const JACOBI_TOL: f64 = 1e-14;
/// Upper bound on Jacobi sweeps; 3x3 inputs converge far earlier.
const MAX_SWEEPS: usize = 30;

/// Spectral decomposition `A = V diag(values) V^T`.
///
/// `values` are sorted descending and `vectors` holds the matching orthonormal
/// eigenvectors as columns. Each column is oriented so that its first
/// component of non-negligible magnitude is positive, making the
/// decomposition a deterministic function of the input.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

impl SymEig {
    /// Column `j` of the eigenvector frame.
    pub fn vector(&self, j: usize) -> Vec<f64> {
        let n = self.values.len();
        (0..n).map(|i| self.vectors.at2(i, j)).collect()
    }
}

/// Decomposes a symmetric 2x2 or 3x3 matrix.
pub fn sym_eig(a: &Tensor) -> Result<SymEig> {
    let (n, m) = a.dims2()?;
    if n != m || !(n == 2 || n == 3) {
        return Err(Error::InvalidArgument(format!(
            "sym_eig needs a 2x2 or 3x3 matrix, got {n}x{m}"
        )));
    }
    a.ensure_finite("sym_eig input")?;
    let scale = a.max_abs();
    for i in 0..n {
        for j in (i + 1)..n {
            if fmath::abs(a.at2(i, j) - a.at2(j, i)) > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidArgument(format!(
                    "sym_eig input is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut out = if n == 2 { eig2(a) } else { eig3(a, scale) };
    sort_descending(&mut out);
    fix_signs(&mut out);
    Ok(out)
}

/// 2x2 case: one rotation angle diagonalizes the (symmetrized) matrix.
fn eig2(a: &Tensor) -> SymEig {
    let p = a.at2(0, 0);
    let q = 0.5 * (a.at2(0, 1) + a.at2(1, 0));
    let r = a.at2(1, 1);
    let theta = 0.5 * fmath::atan2(2.0 * q, p - r);
    let (s, c) = (fmath::sin(theta), fmath::cos(theta));
    // Columns of the rotation are the eigenvectors.
    let l1 = c * c * p + 2.0 * s * c * q + s * s * r;
    let l2 = s * s * p - 2.0 * s * c * q + c * c * r;
    let vectors = Tensor::from_vec(&[2, 2], alloc::vec![c, -s, s, c]).unwrap();
    SymEig { values: alloc::vec![l1, l2], vectors }
}

/// 3x3 case: cyclic Jacobi rotations over the three off-diagonal entries.
fn eig3(a: &Tensor, scale: f64) -> SymEig {
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = 0.5 * (a.at2(i, j) + a.at2(j, i));
        }
    }
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let tol = JACOBI_TOL * scale.max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if fmath::abs(b[p][q]) <= tol {
                continue;
            }
            rotated = true;
            let theta = (b[q][q] - b[p][p]) / (2.0 * b[p][q]);
            let t = if theta >= 0.0 {
                1.0 / (theta + fmath::sqrt(theta * theta + 1.0))
            } else {
                -1.0 / (-theta + fmath::sqrt(theta * theta + 1.0))
            };
            let c = 1.0 / fmath::sqrt(t * t + 1.0);
            let s = t * c;
            for k in 0..3 {
                let (bkp, bkq) = (b[k][p], b[k][q]);
                b[k][p] = c * bkp - s * bkq;
                b[k][q] = s * bkp + c * bkq;
            }
            for k in 0..3 {
                let (bpk, bqk) = (b[p][k], b[q][k]);
                b[p][k] = c * bpk - s * bqk;
                b[q][k] = s * bpk + c * bqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
        if !rotated {
            break;
        }
    }

    let values = alloc::vec![b[0][0], b[1][1], b[2][2]];
    let mut flat = Vec::with_capacity(9);
    for row in &v {
        flat.extend_from_slice(row);
    }
    SymEig { values, vectors: Tensor::from_vec(&[3, 3], flat).unwrap() }
}

fn sort_descending(e: &mut SymEig) {
    let n = e.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.values[j].partial_cmp(&e.values[i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| e.values[i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set2(i, dst, e.vectors.at2(i, src));
        }
    }
    e.values = values;
    e.vectors = vectors;
}

/// Flips each column so its first component above 1e-12 in magnitude is
/// positive. Unit vectors always have such a component.
fn fix_signs(e: &mut SymEig) {
    let n = e.values.len();
    for j in 0..n {
        let lead = (0..n).map(|i| e.vectors.at2(i, j)).find(|v| fmath::abs(*v) > 1e-12);
        if let Some(v) = lead {
            if v < 0.0 {
                for i in 0..n {
                    let flipped = -e.vectors.at2(i, j);
                    e.vectors.set2(i, j, flipped);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn reconstruct(e: &SymEig) -> Tensor {
        let n = e.values.len();
        let mut lam = Tensor::zeros(&[n, n]);
        for i in 0..n {
            lam.set2(i, i, e.values[i]);
        }
        e.vectors.matmul(&lam).unwrap().matmul(&e.vectors.transpose().unwrap()).unwrap()
    }

    fn random_symmetric(n: usize, rng: &mut RngStream) -> Tensor {
        let g = Tensor::uniform(&[n, n], -5.0, 5.0, rng);
        g.add(&g.transpose().unwrap()).unwrap().scale(0.5)
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let e = sym_eig(&Tensor::eye(3)).unwrap();
        for v in &e.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_matrix_sorts_descending_with_axis_vectors() {
        let mut a = Tensor::zeros(&[3, 3]);
        a.set2(0, 0, 4.0);
        a.set2(1, 1, 1.0);
        a.set2(2, 2, 9.0);
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.values, alloc::vec![9.0, 4.0, 1.0]);
        assert_eq!(e.vector(0), alloc::vec![0.0, 0.0, 1.0]);
        assert_eq!(e.vector(1), alloc::vec![1.0, 0.0, 0.0]);
        assert_eq!(e.vector(2), alloc::vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn known_2x2_pair() {
        let a = Tensor::from_vec(&[2, 2], alloc::vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
        let r = 0.5f64.sqrt();
        let v0 = e.vector(0);
        assert!((v0[0] - r).abs() < 1e-12 && (v0[1] - r).abs() < 1e-12);
        let v1 = e.vector(1);
        assert!((v1[0] - r).abs() < 1e-12 && (v1[1] + r).abs() < 1e-12);
    }

    #[test]
    fn random_matrices_reconstruct_and_stay_orthonormal() {
        let mut rng = RngStream::new(21, 0);
        for _ in 0..200 {
            for n in [2, 3] {
                let a = random_symmetric(n, &mut rng);
                let e = sym_eig(&a).unwrap();
                let scale = a.max_abs().max(1.0);
                let resid = reconstruct(&e).sub(&a).unwrap().max_abs();
                assert!(resid <= 1e-9 * scale, "reconstruction residual {resid}");
                let gram = e.vectors.transpose().unwrap().matmul(&e.vectors).unwrap();
                let ortho = gram.sub(&Tensor::eye(n)).unwrap().max_abs();
                assert!(ortho < 1e-10, "orthonormality residual {ortho}");
                for w in e.values.windows(2) {
                    assert!(w[0] >= w[1]);
                }
            }
        }
    }

    #[test]
    fn psd_inputs_have_nonnegative_spectrum() {
        let mut rng = RngStream::new(22, 0);
        for _ in 0..100 {
            let g = Tensor::uniform(&[3, 3], -2.0, 2.0, &mut rng);
            let a = g.matmul(&g.transpose().unwrap()).unwrap();
            let e = sym_eig(&a).unwrap();
            for v in &e.values {
                assert!(*v >= -1e-12, "negative eigenvalue {v}");
            }
        }
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let mut rng = RngStream::new(23, 0);
        for _ in 0..50 {
            let a = random_symmetric(3, &mut rng);
            let e = sym_eig(&a).unwrap();
            for j in 0..3 {
                let v = e.vector(j);
                let lead = v.iter().find(|c| c.abs() > 1e-12).unwrap();
                assert!(*lead > 0.0);
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_asymmetric_input() {
        let mut a = Tensor::eye(3);
        a.set2(1, 1, f64::NAN);
        assert!(sym_eig(&a).is_err());

        let mut b = Tensor::eye(3);
        b.set2(0, 1, 1.0);
        b.set2(1, 0, 1.0 + 1e-5);
        assert!(sym_eig(&b).is_err());
    }

    #[test]
    fn rejects_unsupported_sizes() {
        assert!(sym_eig(&Tensor::eye(1)).is_err());
        assert!(sym_eig(&Tensor::eye(4)).is_err());
        assert!(sym_eig(&Tensor::zeros(&[2, 3])).is_err());
    }
}
