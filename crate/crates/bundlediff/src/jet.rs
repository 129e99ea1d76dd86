//! Forward-mode jets: truncated Taylor expansions carrying a value, its
//! gradient and (for `Jet2`) its Hessian with respect to `N` chart
//! coordinates.
//!
//! Model tensors are written once, generically over [`Scalar`], and evaluated
//! with `f64` (values), `Jet1` (first derivatives) or `Jet2` (second
//! derivatives). Derivatives obtained this way are exact up to rounding.
//!
//! ```text
//!   (f g)''  = f g'' + g f'' + f'⊗g' + g'⊗f'
//!   φ(f)''   = φ'(f) f'' + φ''(f) f'⊗f'
//! ```

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Arithmetic needed by generic model code.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
{
    fn cst(x: f64) -> Self;
    fn re(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn atan(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return self.powi(-n).recip();
        }
        let mut acc = Self::one();
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Value and gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet1<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
}

/// Value, gradient and Hessian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Jet1<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, g: [0.0; N] }
    }
    pub fn var(v: f64, i: usize) -> Self {
        let mut g = [0.0; N];
        g[i] = 1.0;
        Self { v, g }
    }
    #[inline]
    fn chain(self, f0: f64, f1: f64) -> Self {
        let mut g = self.g;
        for x in g.iter_mut() {
            *x *= f1;
        }
        Self { v: f0, g }
    }
}

impl<const N: usize> Jet2<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, g: [0.0; N], h: [[0.0; N]; N] }
    }
    pub fn var(v: f64, i: usize) -> Self {
        let mut g = [0.0; N];
        g[i] = 1.0;
        Self { v, g, h: [[0.0; N]; N] }
    }
    /// Seeds a point as a vector of independent variables.
    pub fn vars(q: &[f64; N]) -> [Self; N] {
        std::array::from_fn(|i| Self::var(q[i], i))
    }
    /// Drops the Hessian.
    pub fn first(&self) -> Jet1<N> {
        Jet1 { v: self.v, g: self.g }
    }
    /// The first derivative along `i` as a first-order jet.
    pub fn d(&self, i: usize) -> Jet1<N> {
        Jet1 { v: self.g[i], g: self.h[i] }
    }
    #[inline]
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self { v: f0, g: [0.0; N], h: [[0.0; N]; N] };
        for i in 0..N {
            out.g[i] = f1 * self.g[i];
            for j in 0..N {
                out.h[i][j] = f1 * self.h[i][j] + f2 * self.g[i] * self.g[j];
            }
        }
        out
    }
}

impl<const N: usize> Jet1<N> {
    pub fn vars(q: &[f64; N]) -> [Self; N] {
        std::array::from_fn(|i| Self::var(q[i], i))
    }
}

macro_rules! scalar_ops_common {
    ($J:ident) => {
        impl<const N: usize> Add<f64> for $J<N> {
            type Output = Self;
            #[inline]
            fn add(mut self, r: f64) -> Self {
                self.v += r;
                self
            }
        }
        impl<const N: usize> Sub<f64> for $J<N> {
            type Output = Self;
            #[inline]
            fn sub(mut self, r: f64) -> Self {
                self.v -= r;
                self
            }
        }
        impl<const N: usize> Div<f64> for $J<N> {
            type Output = Self;
            #[inline]
            fn div(self, r: f64) -> Self {
                self * (1.0 / r)
            }
        }
        impl<const N: usize> AddAssign for $J<N> {
            #[inline]
            fn add_assign(&mut self, r: Self) {
                *self = *self + r;
            }
        }
        impl<const N: usize> SubAssign for $J<N> {
            #[inline]
            fn sub_assign(&mut self, r: Self) {
                *self = *self - r;
            }
        }
        impl<const N: usize> MulAssign for $J<N> {
            #[inline]
            fn mul_assign(&mut self, r: Self) {
                *self = *self * r;
            }
        }
        impl<const N: usize> Div for $J<N> {
            type Output = Self;
            #[inline]
            fn div(self, r: Self) -> Self {
                self * r.recip()
            }
        }
    };
}

scalar_ops_common!(Jet1);
scalar_ops_common!(Jet2);

impl<const N: usize> Add for Jet1<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, r: Self) -> Self {
        self.v += r.v;
        for i in 0..N {
            self.g[i] += r.g[i];
        }
        self
    }
}
impl<const N: usize> Sub for Jet1<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, r: Self) -> Self {
        self.v -= r.v;
        for i in 0..N {
            self.g[i] -= r.g[i];
        }
        self
    }
}
impl<const N: usize> Neg for Jet1<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for x in self.g.iter_mut() {
            *x = -*x;
        }
        self
    }
}
impl<const N: usize> Mul<f64> for Jet1<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, r: f64) -> Self {
        self.v *= r;
        for x in self.g.iter_mut() {
            *x *= r;
        }
        self
    }
}
impl<const N: usize> Mul for Jet1<N> {
    type Output = Self;
    #[inline]
    fn mul(self, r: Self) -> Self {
        let mut g = [0.0; N];
        for i in 0..N {
            g[i] = self.v * r.g[i] + r.v * self.g[i];
        }
        Self { v: self.v * r.v, g }
    }
}

impl<const N: usize> Add for Jet2<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, r: Self) -> Self {
        self.v += r.v;
        for i in 0..N {
            self.g[i] += r.g[i];
            for j in 0..N {
                self.h[i][j] += r.h[i][j];
            }
        }
        self
    }
}
impl<const N: usize> Sub for Jet2<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, r: Self) -> Self {
        self.v -= r.v;
        for i in 0..N {
            self.g[i] -= r.g[i];
            for j in 0..N {
                self.h[i][j] -= r.h[i][j];
            }
        }
        self
    }
}
impl<const N: usize> Neg for Jet2<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self * -1.0
    }
}
impl<const N: usize> Mul<f64> for Jet2<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, r: f64) -> Self {
        self.v *= r;
        for i in 0..N {
            self.g[i] *= r;
            for j in 0..N {
                self.h[i][j] *= r;
            }
        }
        self
    }
}
impl<const N: usize> Mul for Jet2<N> {
    type Output = Self;
    #[inline]
    fn mul(self, r: Self) -> Self {
        let mut out = Self { v: self.v * r.v, g: [0.0; N], h: [[0.0; N]; N] };
        for i in 0..N {
            out.g[i] = self.v * r.g[i] + r.v * self.g[i];
            for j in 0..N {
                out.h[i][j] = self.v * r.h[i][j]
                    + r.v * self.h[i][j]
                    + self.g[i] * r.g[j]
                    + r.g[i] * self.g[j];
            }
        }
        out
    }
}

impl<const N: usize> Scalar for Jet1<N> {
    fn cst(x: f64) -> Self {
        Self::constant(x)
    }
    fn re(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn atan(self) -> Self {
        self.chain(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r)
    }
}

impl<const N: usize> Scalar for Jet2<N> {
    fn cst(x: f64) -> Self {
        Self::constant(x)
    }
    fn re(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(self.v.ln(), r, -r * r)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
    fn atan(self) -> Self {
        let d = 1.0 / (1.0 + self.v * self.v);
        self.chain(self.v.atan(), d, -2.0 * self.v * d * d)
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<S: Scalar>(x: S, y: S) -> S {
        (x * y).sin() + (x * x + y * 0.5).exp() / (y + 3.0) + (x * x + 1.0).sqrt().ln() * (y * 2.0).atan()
    }

    #[test]
    fn jets_match_finite_differences() {
        let (x0, y0) = (0.3, -0.7);
        let [x, y] = Jet2::<2>::vars(&[x0, y0]);
        let j = f(x, y);
        let e = 1e-5;
        let fx = (f(x0 + e, y0) - f(x0 - e, y0)) / (2.0 * e);
        let fy = (f(x0, y0 + e) - f(x0, y0 - e)) / (2.0 * e);
        assert!((j.v - f(x0, y0)).abs() < 1e-15);
        assert!((j.g[0] - fx).abs() < 1e-8);
        assert!((j.g[1] - fy).abs() < 1e-8);
        let e = 1e-4;
        let fxy = (f(x0 + e, y0 + e) - f(x0 + e, y0 - e) - f(x0 - e, y0 + e) + f(x0 - e, y0 - e))
            / (4.0 * e * e);
        let fxx = (f(x0 + e, y0) - 2.0 * f(x0, y0) + f(x0 - e, y0)) / (e * e);
        assert!((j.h[0][1] - fxy).abs() < 1e-6);
        assert!((j.h[1][0] - fxy).abs() < 1e-6);
        assert!((j.h[0][0] - fxx).abs() < 1e-6);
        let [a, b] = Jet1::<2>::vars(&[x0, y0]);
        let k = f(a, b);
        assert!((k.g[0] - j.g[0]).abs() < 1e-14 && (k.g[1] - j.g[1]).abs() < 1e-14);
    }

    #[test]
    fn powi_negative() {
        let [x] = Jet2::<1>::vars(&[2.0]);
        let p = x.powi(-2);
        assert!((p.v - 0.25).abs() < 1e-15);
        assert!((p.g[0] + 0.25).abs() < 1e-15);
        assert!((p.h[0][0] - 6.0 / 16.0).abs() < 1e-15);
    }
}
