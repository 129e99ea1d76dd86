//! Compact groups U(1) and SU(2) in exponential coordinates: composition,
//! right-invariant frames, irreducible representations and Haar rules.
//!
//! Conventions:
//!
//! ```text
//!   g = exp(a^μ X_μ)                    exponential chart
//!   (∂_α g) g⁻¹ = ū^μ_α(a) X_μ          right-invariant Maurer–Cartan form
//!   v̄ = ū⁻¹,  L̄_μ = v̄^α_μ ∂_α,  L̄_μ g = X_μ g
//!   J_μ = dD(X_μ),  L̄_μ D(g) = J_μ D(g)
//!   [X_μ, X_ν] = c^σ_{μν} X_σ,  hence [J_μ, J_ν] = c^σ_{μν} J_σ
//! ```
//!
//! SU(2) uses `X_μ = −(i/2) σ_μ`, so `c^σ_{μν} = ε_{μνσ}`.

use crate::cmat::{CMat, C64, MAXD};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    U1,
    Su2,
}

/// Group element in exponential coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    pub params: Vec<f64>,
}

impl GroupElement {
    pub fn new(params: Vec<f64>) -> Self {
        Self { params }
    }
    pub fn identity(kind: GroupKind) -> Self {
        Self { params: vec![0.0; kind.dim()] }
    }
    pub fn norm(&self) -> f64 {
        self.params.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// 2×2 SU(2) matrix as a unit quaternion (w, x, y, z) with
/// g = w I − i (x σ₁ + y σ₂ + z σ₃).
#[derive(Clone, Copy, Debug)]
struct Quat([f64; 4]);

impl Quat {
    fn exp(a: &[f64]) -> Quat {
        let t = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        let h = 0.5 * t;
        let s = if t < 1e-8 { 0.5 - t * t / 48.0 } else { h.sin() / t };
        Quat([h.cos(), s * a[0], s * a[1], s * a[2]])
    }

    fn mul(&self, o: &Quat) -> Quat {
        let [w1, x1, y1, z1] = self.0;
        let [w2, x2, y2, z2] = o.0;
        // (w − i v·σ)(w' − i v'·σ) = ww' − v·v' − i (w v' + w' v + v × v')·σ
        Quat([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + w2 * x1 + (y1 * z2 - z1 * y2),
            w1 * y2 + w2 * y1 + (z1 * x2 - x1 * z2),
            w1 * z2 + w2 * z1 + (x1 * y2 - y1 * x2),
        ])
    }

    fn inv(&self) -> Quat {
        let [w, x, y, z] = self.0;
        Quat([w, -x, -y, -z])
    }

    /// Principal logarithm, rotation parameter |a| ∈ [0, 2π].
    fn log(&self) -> Vec<f64> {
        let [w, x, y, z] = self.0;
        let vn = (x * x + y * y + z * z).sqrt();
        let t = 2.0 * vn.atan2(w);
        let f = if vn < 1e-12 { 2.0 / w.max(1e-300) } else { t / vn };
        vec![f * x, f * y, f * z]
    }
}

impl GroupKind {
    pub fn dim(&self) -> usize {
        match self {
            GroupKind::U1 => 1,
            GroupKind::Su2 => 3,
        }
    }

    pub fn semisimple(&self) -> bool {
        matches!(self, GroupKind::Su2)
    }

    pub fn chart_radius(&self) -> f64 {
        match self {
            GroupKind::U1 => PI,
            GroupKind::Su2 => 2.0 * PI,
        }
    }

    /// Structure constants `c[σ][μ][ν] = c^σ_{μν}`.
    pub fn structure_constants(&self) -> Vec<Vec<Vec<f64>>> {
        let n = self.dim();
        let mut c = vec![vec![vec![0.0; n]; n]; n];
        if let GroupKind::Su2 = self {
            for (s, row) in c.iter_mut().enumerate() {
                for (m, r) in row.iter_mut().enumerate() {
                    for (v, x) in r.iter_mut().enumerate() {
                        *x = levi_civita(m, v, s);
                    }
                }
            }
        }
        c
    }

    pub fn compose(&self, g: &GroupElement, h: &GroupElement) -> Result<GroupElement> {
        match self {
            GroupKind::U1 => Ok(GroupElement::new(vec![wrap_angle(g.params[0] + h.params[0])])),
            GroupKind::Su2 => {
                let q = Quat::exp(&g.params).mul(&Quat::exp(&h.params));
                self.checked(GroupElement::new(q.log()))
            }
        }
    }

    pub fn inverse(&self, g: &GroupElement) -> Result<GroupElement> {
        match self {
            GroupKind::U1 => Ok(GroupElement::new(vec![wrap_angle(-g.params[0])])),
            GroupKind::Su2 => self.checked(GroupElement::new(Quat::exp(&g.params).inv().log())),
        }
    }

    fn checked(&self, g: GroupElement) -> Result<GroupElement> {
        let n = g.norm();
        if n >= self.chart_radius() - 1e-9 {
            Err(Error::ChartOverflow(n))
        } else {
            Ok(g)
        }
    }

    /// `ū^μ_α(a)` (row μ, column α), `v̄ = ū⁻¹` and `det ū`.
    pub fn invariant_frames(&self, a: &GroupElement) -> Result<Frames> {
        match self {
            GroupKind::U1 => Ok(Frames { u: DMatrix::from_element(1, 1, 1.0), v: DMatrix::from_element(1, 1, 1.0), det_u: 1.0 }),
            GroupKind::Su2 => {
                let t = a.norm();
                if t >= 2.0 * PI - 1e-9 {
                    return Err(Error::ChartOverflow(t));
                }
                // (ad_A)^σ_ν = a^μ c^σ_{μν}; ū = (e^{ad} − 1)/ad
                let w = DMatrix::from_fn(3, 3, |s, v| (0..3).map(|m| a.params[m] * levi_civita(m, v, s)).sum::<f64>());
                let (c1, c2) = if t < 1e-4 {
                    (0.5 - t * t / 24.0, 1.0 / 6.0 - t * t / 120.0)
                } else {
                    ((1.0 - t.cos()) / (t * t), (t - t.sin()) / (t * t * t))
                };
                let u = DMatrix::identity(3, 3) + &w * c1 + &w * &w * c2;
                let v = u.clone().try_inverse().ok_or(Error::ChartOverflow(t))?;
                let det_u = u.determinant();
                Ok(Frames { u, v, det_u })
            }
        }
    }

    /// Haar quadrature with unit total mass.
    pub fn haar_quadrature(&self, order: usize) -> Vec<(GroupElement, f64)> {
        let n = order.max(1);
        match self {
            GroupKind::U1 => (0..n)
                .map(|i| (GroupElement::new(vec![wrap_angle(2.0 * PI * i as f64 / n as f64)]), 1.0 / n as f64))
                .collect(),
            GroupKind::Su2 => {
                // g = e^{αX₃} e^{βX₂} e^{γX₃}, dμ = sin β dα dβ dγ / (16π²),
                // α ∈ [0,2π), β ∈ [0,π], γ ∈ [0,4π)
                let (xs, ws) = gauss_legendre(n);
                let mut out = Vec::with_capacity(n * n * n);
                for ia in 0..n {
                    let al = 2.0 * PI * ia as f64 / n as f64;
                    for (x, wb) in xs.iter().zip(&ws) {
                        let be = x.acos();
                        for ig in 0..n {
                            let ga = 4.0 * PI * (ig as f64 + 0.5) / n as f64;
                            let q = Quat::exp(&[0.0, 0.0, al])
                                .mul(&Quat::exp(&[0.0, be, 0.0]))
                                .mul(&Quat::exp(&[0.0, 0.0, ga]));
                            let w = wb / (2.0 * (n * n) as f64);
                            out.push((GroupElement::new(q.log()), w));
                        }
                    }
                }
                out
            }
        }
    }
}

pub struct Frames {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub det_u: f64,
}

pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Irreducible unitary representation.
#[derive(Clone, Debug)]
pub struct Irrep {
    pub kind: GroupKind,
    /// U(1): integer charge λ. SU(2): twice the spin, 2j.
    pub label: i32,
    pub dim: usize,
    pub generators: Vec<CMat>,
}

impl Irrep {
    pub fn u1(lambda: i32) -> Self {
        Irrep { kind: GroupKind::U1, label: lambda, dim: 1, generators: vec![CMat::scalar(1, C64::new(0.0, lambda as f64))] }
    }

    /// Spin `two_j / 2` of SU(2), built from ladder operators; `J_μ = −i S_μ`.
    pub fn su2(two_j: i32) -> Self {
        let d = (two_j + 1) as usize;
        assert!(d <= MAXD, "spin too large for the stack matrices");
        let j = two_j as f64 / 2.0;
        let m_of = |k: usize| j - k as f64;
        let mut sp = CMat::zeros(d);
        for k in 1..d {
            let m = m_of(k);
            sp.a[k - 1][k] = C64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
        let sm = sp.adjoint();
        let mut sz = CMat::zeros(d);
        for k in 0..d {
            sz.a[k][k] = C64::new(m_of(k), 0.0);
        }
        let mut sx = sp;
        sx.add_scaled_re(&sm, 1.0);
        let sx = sx.scale(C64::new(0.5, 0.0));
        let mut sy = sp;
        sy.add_scaled_re(&sm, -1.0);
        let sy = sy.scale(C64::new(0.0, -0.5));
        let mi = C64::new(0.0, -1.0);
        Irrep { kind: GroupKind::Su2, label: two_j, dim: d, generators: vec![sx.scale(mi), sy.scale(mi), sz.scale(mi)] }
    }

    pub fn trivial(kind: GroupKind) -> Self {
        match kind {
            GroupKind::U1 => Irrep::u1(0),
            GroupKind::Su2 => Irrep::su2(0),
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.label == 0
    }

    pub fn identity(&self) -> CMat {
        CMat::identity(self.dim)
    }

    /// D(a) = exp(a^μ J_μ).
    pub fn matrix(&self, a: &[f64]) -> CMat {
        match self.kind {
            GroupKind::U1 => CMat::scalar(1, C64::from_polar(1.0, self.label as f64 * a[0])),
            GroupKind::Su2 => {
                let mut x = CMat::zeros(self.dim);
                for (m, jm) in self.generators.iter().enumerate() {
                    x.add_scaled_re(jm, a[m]);
                }
                CMat::from_dmatrix(&x.to_dmatrix().exp())
            }
        }
    }

    /// Σ γ^{μν} J_μ J_ν.
    pub fn casimir(&self, gamma_inv: &[Vec<f64>]) -> CMat {
        let mut out = CMat::zeros(self.dim);
        for (m, jm) in self.generators.iter().enumerate() {
            for (n, jn) in self.generators.iter().enumerate() {
                out.add_scaled_re(&jm.mul(jn), gamma_inv[m][n]);
            }
        }
        out
    }

    pub fn label_string(&self) -> String {
        match self.kind {
            GroupKind::U1 => format!("{}", self.label),
            GroupKind::Su2 if self.label % 2 == 0 => format!("{}", self.label / 2),
            GroupKind::Su2 => format!("{}/2", self.label),
        }
    }

    /// Parses "λ" for U(1) or "j" / "n/2" for SU(2).
    pub fn parse(kind: GroupKind, s: &str) -> Result<Irrep> {
        let bad = || Error::Config(format!("bad irrep label `{s}`"));
        match kind {
            GroupKind::U1 => s.trim().parse::<i32>().map(Irrep::u1).map_err(|_| bad()),
            GroupKind::Su2 => {
                let t = s.trim();
                let two_j = if let Some(n) = t.strip_suffix("/2") {
                    n.parse::<i32>().map_err(|_| bad())?
                } else {
                    2 * t.parse::<i32>().map_err(|_| bad())?
                };
                if two_j < 0 || two_j as usize + 1 > MAXD {
                    return Err(bad());
                }
                Ok(Irrep::su2(two_j))
            }
        }
    }
}

/// Brute-force Casimir: the scalar c with Σ J_μJ_μ = c·I, together with the
/// deviation from a multiple of the identity.
pub fn casimir_oracle(generators: &[CMat]) -> (C64, f64) {
    let d = generators[0].d;
    let mut s = CMat::zeros(d);
    for j in generators {
        s.add_scaled_re(&j.mul(j), 1.0);
    }
    let c = s.trace() / d as f64;
    let dev = s.sub(&CMat::scalar(d, c)).max_abs();
    (c, dev)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rnd(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64)
    }

    fn rnd_su2(seed: &mut u64, r: f64) -> GroupElement {
        GroupElement::new((0..3).map(|_| (2.0 * rnd(seed) - 1.0) * r).collect())
    }

    #[test]
    fn u1_examples() {
        let g = GroupKind::U1;
        let d = Irrep::u1(2).matrix(&[PI / 2.0]);
        assert!((d.a[0][0] - C64::new(-1.0, 0.0)).norm() < 1e-15);
        let c = g.compose(&GroupElement::new(vec![3.0]), &GroupElement::new(vec![1.0])).unwrap();
        assert!((c.params[0] - (4.0 - 2.0 * PI)).abs() < 1e-15);
        assert_eq!(Irrep::u1(3).generators[0].a[0][0], C64::new(0.0, 3.0));
        let q = g.haar_quadrature(16);
        let s: C64 = q.iter().map(|(a, w)| C64::from_polar(*w, a.params[0])).sum();
        assert!(s.norm() < 1e-15);
        assert!((q.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn su2_homomorphism_unitarity_commutators() {
        let mut seed = 7u64;
        let c = GroupKind::Su2.structure_constants();
        for two_j in 1..=3 {
            let ir = Irrep::su2(two_j);
            assert!(ir.matrix(&[0.0; 3]).sub(&ir.identity()).max_abs() < 1e-15);
            for _ in 0..50 {
                let a = rnd_su2(&mut seed, 1.0);
                let b = rnd_su2(&mut seed, 1.0);
                let ab = GroupKind::Su2.compose(&a, &b).unwrap();
                let lhs = ir.matrix(&a.params).mul(&ir.matrix(&b.params));
                assert!(lhs.sub(&ir.matrix(&ab.params)).max_abs() < 1e-12);
                let da = ir.matrix(&a.params);
                assert!(da.adjoint().mul(&da).sub(&ir.identity()).max_abs() < 1e-12);
            }
            for m in 0..3 {
                for n in 0..3 {
                    let jm = &ir.generators[m];
                    let jn = &ir.generators[n];
                    let comm = jm.mul(jn).sub(&jn.mul(jm));
                    let mut rhs = CMat::zeros(ir.dim);
                    for s in 0..3 {
                        rhs.add_scaled_re(&ir.generators[s], c[s][m][n]);
                    }
                    assert!(comm.sub(&rhs).max_abs() < 1e-12, "commutator sign");
                }
            }
        }
    }

    #[test]
    fn jacobi_and_semisimple_trace() {
        let c = GroupKind::Su2.structure_constants();
        for b in 0..3 {
            let tr: f64 = (0..3).map(|a| c[a][b][a]).sum();
            assert_eq!(tr, 0.0);
        }
        for a in 0..3 {
            for b in 0..3 {
                for d in 0..3 {
                    for e in 0..3 {
                        let mut s = 0.0;
                        for m in 0..3 {
                            s += c[m][a][b] * c[e][m][d] + c[m][b][d] * c[e][m][a] + c[m][d][a] * c[e][m][b];
                        }
                        assert!(s.abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn generators_are_right_invariant_derivatives() {
        // L̄_μ D(a) = J_μ D(a) with L̄_μ = v̄^α_μ ∂_α, checked by central differences.
        let mut seed = 3u64;
        let ir = Irrep::su2(1);
        for _ in 0..20 {
            let a = rnd_su2(&mut seed, 1.5);
            let fr = GroupKind::Su2.invariant_frames(&a).unwrap();
            let h = 1e-6;
            for mu in 0..3 {
                let mut lhs = CMat::zeros(2);
                for al in 0..3 {
                    let mut ap = a.params.clone();
                    let mut am = a.params.clone();
                    ap[al] += h;
                    am[al] -= h;
                    let d = ir.matrix(&ap).sub(&ir.matrix(&am));
                    lhs.add_scaled_re(&d, fr.v[(al, mu)] / (2.0 * h));
                }
                let rhs = ir.generators[mu].mul(&ir.matrix(&a.params));
                assert!(lhs.sub(&rhs).max_abs() < 1e-8);
            }
            assert!((&fr.u * &fr.v - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn su2_frames_at_identity() {
        let fr = GroupKind::Su2.invariant_frames(&GroupElement::identity(GroupKind::Su2)).unwrap();
        assert!((fr.u - DMatrix::identity(3, 3)).abs().max() < 1e-15);
    }

    #[test]
    fn casimir_spin_half() {
        let ir = Irrep::su2(1);
        let (c, dev) = casimir_oracle(&ir.generators);
        let gi = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let cas = ir.casimir(&gi);
        assert!(dev < 1e-14);
        assert!(cas.sub(&CMat::scalar(2, c)).max_abs() < 1e-14);
        assert!((c - C64::new(-0.75, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn su2_haar_rule_orthogonality() {
        let q = GroupKind::Su2.haar_quadrature(6);
        assert!((q.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-13);
        for two_j in 1..=3 {
            let ir = Irrep::su2(two_j);
            let mut s = CMat::zeros(ir.dim);
            for (g, w) in &q {
                s.add_scaled_re(&ir.matrix(&g.params), *w);
            }
            assert!(s.max_abs() < 1e-12, "spin {two_j}/2 integral {}", s.max_abs());
        }
        // Schur orthogonality: ∫ |D^{1/2}_{00}|² dμ = 1/2
        let ir = Irrep::su2(1);
        let s: f64 = q.iter().map(|(g, w)| w * ir.matrix(&g.params).a[0][0].norm_sqr()).sum();
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn compose_inverse_axioms() {
        let mut seed = 11u64;
        let k = GroupKind::Su2;
        for _ in 0..100 {
            let g = rnd_su2(&mut seed, 1.0);
            let e = GroupElement::identity(k);
            let eg = k.compose(&e, &g).unwrap();
            assert!(eg.params.iter().zip(&g.params).all(|(x, y)| (x - y).abs() < 1e-13));
            let ii = k.inverse(&k.inverse(&g).unwrap()).unwrap();
            assert!(ii.params.iter().zip(&g.params).all(|(x, y)| (x - y).abs() < 1e-13));
        }
    }
}
