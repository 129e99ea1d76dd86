//! Monte-Carlo action of the path-integral semigroups on test functions.
//!
//! ```text
//!   Σ side:     (U φ)(a) = E[ W · M · φ(ξ̃_Σ(t_b)) ]            ξ̃_Σ(t_a) = a
//!   𝒫 side:     (U_𝒫 f)(p) = E[ exp(∫ V/(μ²κm)) f(η(t_b)) ]    η(t_a) = p
//!   projection: f_λ(p) = ∫ dg conj(D^λ(g)) f(p·g)
//! ```
//!
//! For an equivariant f̃ (f̃(p·g) = D(g)ᵀ f̃(p)) with f̃|_Σ = φ the reduction
//! identity reads (U φ)(a) = (U_𝒫 f̃)(a), and the projection lets the 𝒫 side
//! start from a function that mixes several charges.

use crate::cmat::{CVec, C64};
use crate::error::Result;
use crate::geometry::Derivatives;
use crate::holonomy::{self, IrrepTables, JacobianForm, Kernel, Multiplier, PathOptions, PathState};
use crate::models::{BundleModel, ChartPoint};
use crate::sde::{self, NoiseStream, SimConfig};
use serde::{Deserialize, Serialize};

/// Offset that decorrelates the 𝒫-side noise from the Σ-side noise.
pub const TOTAL_SPACE_SEED_OFFSET: u64 = 0x5851_f42d_4c95_7f2d;

/// Mean and standard error of a vector-valued MC average. The error of each
/// component combines real and imaginary parts: sqrt(Var re + Var im)/√n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupEstimate {
    pub value: Vec<C64>,
    pub stderr: Vec<f64>,
    pub n_paths: usize,
}

impl SemigroupEstimate {
    pub fn from_samples(samples: &[CVec], d: usize) -> Self {
        let n = samples.len();
        let nf = n as f64;
        let mut value = vec![C64::new(0.0, 0.0); d];
        for s in samples {
            for i in 0..d {
                value[i] += s.a[i];
            }
        }
        for v in value.iter_mut() {
            *v /= nf;
        }
        let mut var = vec![0.0; d];
        for s in samples {
            for i in 0..d {
                var[i] += (s.a[i] - value[i]).norm_sqr();
            }
        }
        let stderr = var.iter().map(|v| (v / (nf - 1.0).max(1.0) / nf).sqrt()).collect();
        SemigroupEstimate { value, stderr, n_paths: n }
    }
}

/// Σ-side semigroup. `phi` is evaluated at the endpoint in its own chart.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_apply_mc<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    tables: &IrrepTables,
    cfg: &SimConfig,
    kernel: Kernel,
    jacobian: JacobianForm,
    form: Multiplier,
    start: &ChartPoint<P>,
    phi: &(dyn Fn(&ChartPoint<P>) -> CVec + Sync),
) -> Result<SemigroupEstimate> {
    cfg.validate()?;
    let opts = PathOptions { form, deriv: Derivatives::Analytic, step_offset: 0, n_steps: cfg.n_steps };
    let samples: Vec<CVec> = sde::par_paths(cfg.n_paths, |i| -> Result<CVec> {
        let st = PathState::new(cfg.t_a, *start, &tables.irrep);
        let e = holonomy::run_weighted_path(model, tables, cfg, kernel, st, i as u64, &opts)?;
        let w = e.scalar_weight(kernel, jacobian);
        Ok(e.m.mul_vec(&phi(&e.point)).scale(C64::new(w, 0.0)))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(SemigroupEstimate::from_samples(&samples, tables.irrep.dim))
}

fn total_space_paths<M: BundleModel<P, G>, T: Send, const P: usize, const G: usize>(
    model: &M,
    cfg: &SimConfig,
    start: &ChartPoint<P>,
    f: impl Fn(&ChartPoint<P>, f64) -> T + Sync + Send,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let dt = cfg.dt();
    let seed = cfg.seed.wrapping_add(TOTAL_SPACE_SEED_OFFSET);
    let scale = 1.0 / (cfg.mu2k() * cfg.mass);
    sde::par_paths(cfg.n_paths, |i| -> Result<T> {
        let noise = NoiseStream::new(seed, i as u64);
        let mut p = *start;
        let mut log_v = 0.0;
        for step in 0..cfg.n_steps {
            let dw: [f64; P] = noise.increments(step as u64, dt);
            log_v += model.potential(p.chart, &p.q) * scale * dt;
            p = sde::step_original(model, &p, cfg, dt, &dw)?;
        }
        Ok(f(&p, log_v.exp()))
    })
    .into_iter()
    .collect()
}

/// 𝒫-side semigroup applied to `f` (any function on 𝒫).
pub fn total_space_apply_mc<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    cfg: &SimConfig,
    start: &ChartPoint<P>,
    dim: usize,
    f: &(dyn Fn(&ChartPoint<P>) -> CVec + Sync),
) -> Result<SemigroupEstimate> {
    let samples = total_space_paths(model, cfg, start, |p, w| f(p).scale(C64::new(w, 0.0)))?;
    Ok(SemigroupEstimate::from_samples(&samples, dim))
}

/// 𝒫-side semigroup followed by projection onto the charge of `tables`:
/// each endpoint p contributes Σ_i w_i conj(D(g_i)) f(p·g_i) over a Haar
/// quadrature of the given order.
pub fn group_projected_mc<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    tables: &IrrepTables,
    cfg: &SimConfig,
    start: &ChartPoint<P>,
    order: usize,
    f: &(dyn Fn(&ChartPoint<P>) -> CVec + Sync),
) -> Result<SemigroupEstimate> {
    let quad: Vec<([f64; G], f64, crate::cmat::CMat)> = model
        .group()
        .haar_quadrature(order)
        .into_iter()
        .map(|(g, w)| {
            let mut a = [0.0; G];
            a.copy_from_slice(&g.params);
            let d = tables.irrep.matrix(&a);
            let mut c = d;
            for i in 0..d.d {
                for j in 0..d.d {
                    c.a[i][j] = d.a[i][j].conj();
                }
            }
            (a, w, c)
        })
        .collect();
    let d = tables.irrep.dim;
    let samples = total_space_paths(model, cfg, start, |p, w| {
        let mut acc = CVec::zeros(d);
        for (a, wq, c) in &quad {
            let q = model.action(p.chart, &p.q, a);
            let v = c.mul_vec(&f(&ChartPoint { chart: p.chart, q }));
            acc = acc.add(&v.scale(C64::new(wq * w, 0.0)));
        }
        acc
    })?;
    Ok(SemigroupEstimate::from_samples(&samples, d))
}

/// Difference of two independent estimates and its combined standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub lhs: Vec<C64>,
    pub rhs: Vec<C64>,
    pub residual: f64,
    pub sigma: f64,
}

/// Largest |lhs − rhs| over components, with σ of that component.
pub fn compare(lhs: &SemigroupEstimate, rhs: &SemigroupEstimate) -> Comparison {
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..lhs.value.len() {
        let r = (lhs.value[i] - rhs.value[i]).norm();
        let s = lhs.stderr[i].hypot(rhs.stderr[i]);
        let z = if s > 0.0 { r / s } else if r > 0.0 { f64::INFINITY } else { 0.0 };
        if z > best.2 {
            best = (r, s, z);
        }
    }
    Comparison { lhs: lhs.value.clone(), rhs: rhs.value.clone(), residual: best.0, sigma: best.1 }
}

/// Closed form of the flat model with a Gaussian bump of width w and charge λ
/// at base displacement (dx, dy): heat smoothing in the base times the fiber
/// decay e^{−½μ²κλ²t}. Valid while the bump is narrow against the period.
pub fn flat_closed_form(mu2k: f64, t: f64, lambda: f64, width: f64, dx: f64, dy: f64, theta: f64) -> C64 {
    let s2 = width * width + mu2k * t;
    let base = width * width / s2 * (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
    C64::from_polar(base * (-0.5 * mu2k * lambda * lambda * t).exp(), lambda * theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{GroupKind, Irrep};
    use crate::models::{TestProfile, TorusBundle};

    fn flat_setup(lambda: i32) -> (TorusBundle, IrrepTables, SimConfig, TestProfile) {
        let cfg = SimConfig { n_steps: 20, n_paths: 4000, t_b: 0.5, ..SimConfig::default() };
        let m = TorusBundle::flat(20.0);
        (m, IrrepTables::new(&Irrep::u1(lambda)), cfg, TestProfile::Bump { center: [0.0, 0.0], width: 0.8 })
    }

    #[test]
    fn flat_sigma_side_matches_closed_form() {
        let (m, t, cfg, prof) = flat_setup(1);
        let start = ChartPoint { chart: 0, q: [0.3, -0.2, 0.0] };
        let phi = |p: &ChartPoint<3>| CVec::from_slice(&[m.test_function(&prof, 1, p.chart, &p.q)]);
        let est = semigroup_apply_mc(&m, &t, &cfg, Kernel::F2, JacobianForm::Geometric, Multiplier::Exp, &start, &phi).unwrap();
        let exact = flat_closed_form(1.0, 0.5, 1.0, 0.8, 0.3, -0.2, 0.0);
        assert!((est.value[0] - exact).norm() < 4.0 * est.stderr[0], "{} vs {} ± {}", est.value[0], exact, est.stderr[0]);
    }

    #[test]
    fn projection_extracts_one_charge() {
        let (m, t, cfg, prof) = flat_setup(1);
        let start = ChartPoint { chart: 0, q: [0.1, 0.4, 0.0] };
        let mixed = |p: &ChartPoint<3>| {
            let v: C64 = (-1..=1).map(|c| m.test_function(&prof, c, p.chart, &p.q)).sum();
            CVec::from_slice(&[v])
        };
        let pure = |p: &ChartPoint<3>| CVec::from_slice(&[m.test_function(&prof, 1, p.chart, &p.q)]);
        let a = group_projected_mc(&m, &t, &cfg, &start, 8, &mixed).unwrap();
        let b = total_space_apply_mc(&m, &cfg, &start, 1, &pure).unwrap();
        // same paths, so the projection is exact per sample
        assert!((a.value[0] - b.value[0]).norm() < 1e-12);
    }

    #[test]
    fn estimate_is_linear() {
        let (m, t, cfg, prof) = flat_setup(2);
        let start = ChartPoint { chart: 0, q: [0.0, 0.5, 0.0] };
        let f = |p: &ChartPoint<3>| CVec::from_slice(&[m.test_function(&prof, 2, p.chart, &p.q)]);
        let g = |p: &ChartPoint<3>| CVec::from_slice(&[C64::new(0.0, 1.0) * (-(p.q[0] * p.q[0])).exp()]);
        let fg = |p: &ChartPoint<3>| f(p).scale(C64::new(2.0, 0.0)).add(&g(p).scale(C64::new(-3.0, 0.0)));
        let run = |h: &(dyn Fn(&ChartPoint<3>) -> CVec + Sync)| {
            semigroup_apply_mc(&m, &t, &cfg, Kernel::F3, JacobianForm::Geometric, Multiplier::Euler, &start, h).unwrap().value[0]
        };
        let (a, b, c) = (run(&f), run(&g), run(&fg));
        assert!((c - (2.0 * a - 3.0 * b)).norm() < 1e-12);
    }

    #[test]
    fn stderr_scales_like_inverse_root_n() {
        let (m, t, cfg, prof) = flat_setup(0);
        let start = ChartPoint { chart: 0, q: [0.0, 0.0, 0.0] };
        let phi = |p: &ChartPoint<3>| CVec::from_slice(&[m.test_function(&prof, 0, p.chart, &p.q)]);
        let small = SimConfig { n_paths: 1000, ..cfg };
        let big = SimConfig { n_paths: 16000, ..cfg };
        let s = semigroup_apply_mc(&m, &t, &small, Kernel::F2, JacobianForm::Geometric, Multiplier::Euler, &start, &phi).unwrap();
        let b = semigroup_apply_mc(&m, &t, &big, Kernel::F2, JacobianForm::Geometric, Multiplier::Euler, &start, &phi).unwrap();
        let ratio = s.stderr[0] / b.stderr[0];
        assert!((ratio - 4.0).abs() < 0.6, "{ratio}");
        assert_eq!(t.irrep.kind, GroupKind::U1);
    }
}
