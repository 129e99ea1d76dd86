//! Small fixed-size dense algebra, generic over [`Scalar`] so the same code
//! runs on plain values and on jets.

use crate::jet::Scalar;
use nalgebra::DMatrix;

pub type Mat<S, const R: usize, const C: usize> = [[S; C]; R];

pub fn zeros<S: Scalar, const R: usize, const C: usize>() -> Mat<S, R, C> {
    [[S::zero(); C]; R]
}

pub fn identity<S: Scalar, const N: usize>() -> Mat<S, N, N> {
    let mut m = zeros::<S, N, N>();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = S::one();
    }
    m
}

pub fn matmul<S: Scalar, const R: usize, const K: usize, const C: usize>(
    a: &Mat<S, R, K>,
    b: &Mat<S, K, C>,
) -> Mat<S, R, C> {
    let mut out = zeros::<S, R, C>();
    for i in 0..R {
        for k in 0..K {
            let aik = a[i][k];
            for j in 0..C {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn transpose<S: Scalar, const R: usize, const C: usize>(a: &Mat<S, R, C>) -> Mat<S, C, R> {
    let mut out = zeros::<S, C, R>();
    for i in 0..R {
        for j in 0..C {
            out[j][i] = a[i][j];
        }
    }
    out
}

/// Gauss–Jordan inverse with partial pivoting on the real part. Returns
/// `None` when a pivot vanishes.
pub fn inverse<S: Scalar, const N: usize>(a: &Mat<S, N, N>) -> Option<Mat<S, N, N>> {
    let mut m = *a;
    let mut inv = identity::<S, N>();
    for col in 0..N {
        let mut piv = col;
        let mut best = m[col][col].re().abs();
        for r in col + 1..N {
            let v = m[r][col].re().abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return None;
        }
        m.swap(col, piv);
        inv.swap(col, piv);
        let p = m[col][col].recip();
        for j in 0..N {
            m[col][j] *= p;
            inv[col][j] *= p;
        }
        for r in 0..N {
            if r != col {
                let f = m[r][col];
                for j in 0..N {
                    let mcj = m[col][j];
                    let icj = inv[col][j];
                    m[r][j] -= f * mcj;
                    inv[r][j] -= f * icj;
                }
            }
        }
    }
    Some(inv)
}

/// Determinant by LU on plain values.
pub fn det<const N: usize>(a: &Mat<f64, N, N>) -> f64 {
    let mut m = *a;
    let mut d = 1.0;
    for col in 0..N {
        let mut piv = col;
        for r in col + 1..N {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            m.swap(col, piv);
            d = -d;
        }
        d *= m[col][col];
        for r in col + 1..N {
            let f = m[r][col] / m[col][col];
            for j in col..N {
                m[r][j] -= f * m[col][j];
            }
        }
    }
    d
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = a`.
pub fn cholesky<const N: usize>(a: &Mat<f64, N, N>) -> Option<Mat<f64, N, N>> {
    let mut l = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

pub fn values<S: Scalar, const R: usize, const C: usize>(a: &Mat<S, R, C>) -> Mat<f64, R, C> {
    let mut out = [[0.0; C]; R];
    for i in 0..R {
        for j in 0..C {
            out[i][j] = a[i][j].re();
        }
    }
    out
}

pub fn max_abs<const R: usize, const C: usize>(a: &Mat<f64, R, C>) -> f64 {
    a.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn sub<const R: usize, const C: usize>(a: &Mat<f64, R, C>, b: &Mat<f64, R, C>) -> Mat<f64, R, C> {
    let mut out = *a;
    for i in 0..R {
        for j in 0..C {
            out[i][j] -= b[i][j];
        }
    }
    out
}

pub fn to_dmatrix<const R: usize, const C: usize>(a: &Mat<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_fn(R, C, |i, j| a[i][j])
}

/// Orthonormal basis (columns) of the null space of the `m × n` matrix `a`.
pub fn null_space(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i].abs() <= tol * scale).collect();
    DMatrix::from_fn(n, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_det_3x3() {
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]];
        let inv = inverse(&a).unwrap();
        let p = matmul(&a, &inv);
        assert!(max_abs(&sub(&p, &identity())) < 1e-14);
        let d = det(&a);
        let expected = 4.0 * (6.0 - 0.04) - 1.0 * (2.0 + 0.1) + 0.5 * (-0.2 - 1.5);
        assert!((d - expected).abs() < 1e-12);
    }

    #[test]
    fn singular_inverse_is_none() {
        let a = [[1.0, 2.0], [2.0, 4.0]];
        assert!(inverse(&a).is_none() || inverse(&a).unwrap()[0][0].abs() > 1e12);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = [[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let r = matmul(&l, &transpose(&l));
        assert!(max_abs(&sub(&r, &a)) < 1e-15);
        assert!(cholesky(&[[1.0, 2.0], [2.0, 1.0]]).is_none());
    }

    #[test]
    fn null_space_of_row() {
        let a = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let b = null_space(&a, 1e-12);
        assert_eq!(b.ncols(), 2);
        assert!((a * &b).abs().max() < 1e-14);
    }
}
