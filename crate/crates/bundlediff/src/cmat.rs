//! Stack-allocated complex matrices of representation size (d ≤ 4), used on
//! the per-step hot path of the multiplicative integrals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;

pub const MAXD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CMat {
    pub d: usize,
    pub a: [[C64; MAXD]; MAXD],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CVec {
    pub d: usize,
    pub a: [C64; MAXD],
}

const Z: C64 = C64 { re: 0.0, im: 0.0 };

impl CMat {
    pub fn zeros(d: usize) -> Self {
        assert!(d <= MAXD, "representation dimension {d} exceeds {MAXD}");
        Self { d, a: [[Z; MAXD]; MAXD] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i][i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn scalar(d: usize, s: C64) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i][i] = s;
        }
        m
    }

    pub fn from_dmatrix(m: &DMatrix<C64>) -> Self {
        let mut out = Self::zeros(m.nrows());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.a[i][j] = m[(i, j)];
            }
        }
        out
    }

    pub fn to_dmatrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.d, self.d, |i, j| self.a[i][j])
    }

    #[inline]
    pub fn mul(&self, o: &CMat) -> CMat {
        let d = self.d;
        let mut out = CMat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let x = self.a[i][k];
                if x == Z {
                    continue;
                }
                for j in 0..d {
                    out.a[i][j] += x * o.a[k][j];
                }
            }
        }
        out
    }

    #[inline]
    pub fn mul_vec(&self, v: &CVec) -> CVec {
        let mut out = CVec::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                out.a[i] += self.a[i][j] * v.a[j];
            }
        }
        out
    }

    #[inline]
    pub fn add_scaled(&mut self, o: &CMat, s: C64) {
        for i in 0..self.d {
            for j in 0..self.d {
                self.a[i][j] += o.a[i][j] * s;
            }
        }
    }

    #[inline]
    pub fn add_scaled_re(&mut self, o: &CMat, s: f64) {
        for i in 0..self.d {
            for j in 0..self.d {
                self.a[i][j] += o.a[i][j] * s;
            }
        }
    }

    pub fn scale(&self, s: C64) -> CMat {
        let mut out = *self;
        for i in 0..self.d {
            for j in 0..self.d {
                out.a[i][j] *= s;
            }
        }
        out
    }

    pub fn transpose(&self) -> CMat {
        let mut out = CMat::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                out.a[j][i] = self.a[i][j];
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                out.a[j][i] = self.a[i][j].conj();
            }
        }
        out
    }

    pub fn sub(&self, o: &CMat) -> CMat {
        let mut out = *self;
        out.add_scaled_re(o, -1.0);
        out
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.d {
            for j in 0..self.d {
                m = m.max(self.a[i][j].norm());
            }
        }
        m
    }

    pub fn trace(&self) -> C64 {
        (0..self.d).map(|i| self.a[i][i]).sum()
    }

    pub fn is_finite(&self) -> bool {
        (0..self.d).all(|i| (0..self.d).all(|j| self.a[i][j].re.is_finite() && self.a[i][j].im.is_finite()))
    }

    pub fn det(&self) -> C64 {
        self.to_dmatrix().determinant()
    }
}

impl CVec {
    pub fn zeros(d: usize) -> Self {
        assert!(d <= MAXD);
        Self { d, a: [Z; MAXD] }
    }

    pub fn from_slice(v: &[C64]) -> Self {
        let mut out = Self::zeros(v.len());
        out.a[..v.len()].copy_from_slice(v);
        out
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.a[..self.d]
    }

    pub fn scale(&self, s: C64) -> CVec {
        let mut out = *self;
        for x in out.a[..self.d].iter_mut() {
            *x *= s;
        }
        out
    }

    pub fn add(&self, o: &CVec) -> CVec {
        let mut out = *self;
        for i in 0..self.d {
            out.a[i] += o.a[i];
        }
        out
    }

    pub fn sub(&self, o: &CVec) -> CVec {
        let mut out = *self;
        for i in 0..self.d {
            out.a[i] -= o.a[i];
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0_f64, |m, x| m.max(x.norm()))
    }

    pub fn norm2(&self) -> f64 {
        self.as_slice().iter().map(|x| x.norm_sqr()).sum()
    }

    /// Hermitian product ⟨self, o⟩ = Σ conj(self_i) o_i.
    pub fn dot(&self, o: &CVec) -> C64 {
        (0..self.d).map(|i| self.a[i].conj() * o.a[i]).sum()
    }
}

/// Serializable complex number as a `[re, im]` pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Cplx(pub f64, pub f64);

impl From<C64> for Cplx {
    fn from(c: C64) -> Self {
        Cplx(c.re, c.im)
    }
}

impl From<Cplx> for C64 {
    fn from(c: Cplx) -> Self {
        C64::new(c.0, c.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_adjoint() {
        let mut a = CMat::zeros(2);
        a.a[0][0] = C64::new(1.0, 1.0);
        a.a[0][1] = C64::new(0.0, 2.0);
        a.a[1][0] = C64::new(-1.0, 0.0);
        a.a[1][1] = C64::new(0.5, -0.5);
        let i = CMat::identity(2);
        assert_eq!(a.mul(&i), a);
        let p = a.mul(&a.adjoint());
        assert!((p.a[0][1] - p.a[1][0].conj()).norm() < 1e-15);
        assert!((a.det() - (a.a[0][0] * a.a[1][1] - a.a[0][1] * a.a[1][0])).norm() < 1e-14);
    }
}
