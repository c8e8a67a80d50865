//! Matrix products and Cholesky factorization.

use crate::error::{shape_err, CoreError, Result};
use crate::tensor::Tensor;

/// Strided view of a row-major matrix, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical_dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = alpha * a * b + beta * out`, with `out` row-major `m × n`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut [f64]) {
    let (m, k) = a.logical_dims();
    let (kb, n) = b.logical_dims();
    assert_eq!(k, kb, "gemm inner dims");
    assert_eq!(out.len(), m * n, "gemm output size");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above guarantee every index matrixmultiply touches
    // lies inside `a.data`, `b.data` and `out`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn as_matrix(t: &Tensor, name: &str) -> Result<(usize, usize)> {
    match *t.dims() {
        [r, c] => Ok((r, c)),
        [n] => Ok((n, 1)),
        _ => shape_err(format!("{name} must be a matrix, got {:?}", t.dims())),
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.dims()[..] else {
        return shape_err(format!("matmul lhs must be 2-D, got {:?}", a.dims()));
    };
    let [kb, n] = b.dims()[..] else {
        return shape_err(format!("matmul rhs must be 2-D, got {:?}", b.dims()));
    };
    if k != kb {
        return shape_err(format!("matmul inner dims {k} vs {kb}"));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        1.0,
        MatRef::new(a.data(), m, k),
        MatRef::new(b.data(), k, n),
        0.0,
        &mut out,
    );
    Tensor::new(&[m, n], out)
}

/// Matrix-vector product for a square or rectangular 2-D `a` and vector `x`.
pub fn matvec(a: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    let [m, k] = a.dims()[..] else {
        return shape_err(format!("matvec needs 2-D matrix, got {:?}", a.dims()));
    };
    if x.len() != k {
        return shape_err(format!("matvec: matrix has {k} columns, vector {}", x.len()));
    }
    Ok((0..m)
        .map(|i| {
            a.data()[i * k..(i + 1) * k]
                .iter()
                .zip(x)
                .map(|(p, q)| p * q)
                .sum()
        })
        .collect())
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = a`.
///
/// Only the lower triangle of `a` is read.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let [n, m] = a.dims()[..] else {
        return shape_err(format!("cholesky needs a square matrix, got {:?}", a.dims()));
    };
    if n != m {
        return shape_err(format!("cholesky needs a square matrix, got {n}×{m}"));
    }
    let src = a.data();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let row_j = j * n;
        let mut diag = src[row_j + j];
        for p in 0..j {
            diag -= l[row_j + p] * l[row_j + p];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(CoreError::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[row_j + j] = ljj;
        for i in (j + 1)..n {
            let row_i = i * n;
            let mut s = src[row_i + j];
            for p in 0..j {
                s -= l[row_i + p] * l[row_j + p];
            }
            l[row_i + j] = s / ljj;
        }
    }
    Tensor::new(&[n, n], l)
}

fn check_factor(l: &Tensor) -> Result<usize> {
    let [n, m] = l.dims()[..] else {
        return shape_err(format!("factor must be square, got {:?}", l.dims()));
    };
    if n != m {
        return shape_err(format!("factor must be square, got {n}×{m}"));
    }
    for i in 0..n {
        if l.at(i, i) == 0.0 {
            return Err(CoreError::Singular { row: i });
        }
    }
    Ok(n)
}

/// Solves `L·y = b` in place for every column of the row-major `n × m` block.
fn forward_substitute(l: &[f64], n: usize, b: &mut [f64], m: usize) {
    if m == 1 {
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let dot: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - dot) / l[i * n + i];
        }
        return;
    }
    for i in 0..n {
        for p in 0..i {
            let lip = l[i * n + p];
            if lip != 0.0 {
                for c in 0..m {
                    b[i * m + c] -= lip * b[p * m + c];
                }
            }
        }
        let d = l[i * n + i];
        for c in 0..m {
            b[i * m + c] /= d;
        }
    }
}

/// Solves `Lᵀ·x = y` in place.
fn backward_substitute(l: &[f64], n: usize, b: &mut [f64], m: usize) {
    for i in (0..n).rev() {
        for p in (i + 1)..n {
            let lpi = l[p * n + i];
            if lpi != 0.0 {
                for c in 0..m {
                    b[i * m + c] -= lpi * b[p * m + c];
                }
            }
        }
        let d = l[i * n + i];
        for c in 0..m {
            b[i * m + c] /= d;
        }
    }
}

/// Solves `L·y = b` for lower-triangular `l`; `b` is an `n`-vector or `n × m` matrix.
pub fn solve_lower(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = check_factor(l)?;
    let (rows, m) = as_matrix(b, "rhs")?;
    if rows != n {
        return shape_err(format!("rhs has {rows} rows, factor is {n}×{n}"));
    }
    let mut x = b.clone();
    forward_substitute(l.data(), n, x.data_mut(), m);
    Ok(x)
}

/// Solves `(L·Lᵀ)·x = b` by forward then backward substitution.
pub fn cholesky_solve(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = check_factor(l)?;
    let (rows, m) = as_matrix(b, "rhs")?;
    if rows != n {
        return shape_err(format!("rhs has {rows} rows, factor is {n}×{n}"));
    }
    let mut x = b.clone();
    forward_substitute(l.data(), n, x.data_mut(), m);
    backward_substitute(l.data(), n, x.data_mut(), m);
    Ok(x)
}

/// `log det(L·Lᵀ)` from a Cholesky factor.
pub fn cholesky_log_det(l: &Tensor) -> f64 {
    let n = l.dims()[0];
    2.0 * (0..n).map(|i| l.at(i, i).ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new(&[2, 2], vec![0., 1., 1., 0.]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2., 1., 4., 3.]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = Tensor::from_fn(&[3, 3], |i| (i as f64 * 0.7).sin());
        assert_eq!(matmul(&Tensor::eye(3), &a).unwrap(), a);
        let z = matmul(&a, &Tensor::zeros(&[3, 3])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(CoreError::Shape(_))));
    }

    #[test]
    fn transposed_gemm_matches_explicit_transpose() {
        let a = Tensor::from_fn(&[3, 4], |i| i as f64 - 5.0);
        let b = Tensor::from_fn(&[3, 2], |i| (i * i) as f64);
        let mut out = vec![0.0; 8];
        gemm(
            1.0,
            MatRef::new(a.data(), 3, 4).t(),
            MatRef::new(b.data(), 3, 2),
            0.0,
            &mut out,
        );
        let expect = matmul(&a.transpose().unwrap(), &b).unwrap();
        assert_eq!(out, expect.data());
    }

    #[test]
    fn cholesky_identity() {
        assert_eq!(cholesky(&Tensor::eye(4)).unwrap(), Tensor::eye(4));
    }

    #[test]
    fn cholesky_hand_example() {
        let a = Tensor::new(&[2, 2], vec![4., 2., 2., 3.]).unwrap();
        let l = cholesky(&a).unwrap();
        let expect = [2.0, 0.0, 1.0, 2f64.sqrt()];
        for (got, want) in l.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn cholesky_indefinite_reports_pivot() {
        let a = Tensor::new(&[2, 2], vec![1., 2., 2., 1.]).unwrap();
        assert!(matches!(
            cholesky(&a),
            Err(CoreError::NotPositiveDefinite { pivot: 1 })
        ));
    }

    #[test]
    fn cholesky_solve_hand_example() {
        let a = Tensor::new(&[2, 2], vec![4., 2., 2., 3.]).unwrap();
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &Tensor::new(&[2], vec![8., 7.]).unwrap()).unwrap();
        assert!((x.data()[0] - 1.25).abs() < 1e-14);
        assert!((x.data()[1] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn cholesky_solve_identity_factor() {
        let b = Tensor::from_fn(&[3, 2], |i| i as f64);
        assert_eq!(cholesky_solve(&Tensor::eye(3), &b).unwrap(), b);
    }

    #[test]
    fn cholesky_solve_zero_diagonal() {
        let l = Tensor::new(&[2, 2], vec![1., 0., 1., 0.]).unwrap();
        let b = Tensor::zeros(&[2]);
        assert!(matches!(
            cholesky_solve(&l, &b),
            Err(CoreError::Singular { row: 1 })
        ));
    }

    #[test]
    fn log_det_of_diagonal() {
        let l = Tensor::new(&[2, 2], vec![2., 0., 0.5, 3.]).unwrap();
        assert!((cholesky_log_det(&l) - 36f64.ln()).abs() < 1e-14);
    }
}
