//! Time-ordered multiplicative integrals along Σ paths.
//!
//! Each step multiplies the accumulated matrix on the right by the exponential
//! of the increment, `M ← M exp(A dt + B_M dW^M)`, so for two steps
//! `M = e^{X₀} e^{X₁}` with `X₀` taken at the earlier time. The first-order
//! multiplier keeps the Itô term of that exponential:
//! `I + (A + ½ B_M B_M) dt + B_M dW^M`. Coefficients per kernel:
//!
//! ```text
//!   F1: A = ½μ²κ [γ^{σν} J_σ J_ν − c^β J_β]                 B = μ√κ (ΛΠ𝔛)^β J_β
//!   F2: A = F1 − μ²κ (ΛΠ j_II)^α J_α                         B = F1
//!   F3: A = ½μ²κ [γ^{σν} J_σ J_ν − d^α J_α]                 B = −μ√κ (𝒜N𝔛)^α J_α
//!   log W += V/(μ²κ m) dt            (F2, F3 also −⅛ μ²κ J̃ dt)
//! ```
//!
//! F1 runs on the Σ process with the j_II drift, F2 and F3 on the process
//! without it. A chart change with σ_old = σ_new·g multiplies by D(g)ᵀ.

use crate::cmat::{CMat, C64};
use crate::error::{Error, Result};
use crate::geometry::{self, Derivatives, GeometryReport};
use crate::group::Irrep;
use crate::models::{BundleModel, ChartPoint};
use crate::sde::{self, NoiseStream, SimConfig};
use serde::{Deserialize, Serialize};

/// Bound on ‖M‖ before the step size is declared too large.
pub const MATRIX_BOUND: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    F1,
    F2,
    F3,
}

impl Kernel {
    /// Whether the paired Σ process keeps the j_II drift.
    pub fn full_process(&self) -> bool {
        matches!(self, Kernel::F1)
    }

    pub fn has_jacobian(&self) -> bool {
        !self.full_process()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplier {
    /// I + (A + ½ B_M B_M) dt + B dW.
    Euler,
    /// exp(A dt + B dW).
    Exp,
}

/// One Monte-Carlo path: time, Σ point, matrix weight and scalar log-weight.
#[derive(Clone, Copy, Debug)]
pub struct PathState<const P: usize> {
    pub t: f64,
    pub point: ChartPoint<P>,
    pub m: CMat,
    pub log_w: f64,
}

impl<const P: usize> PathState<P> {
    pub fn new(t: f64, point: ChartPoint<P>, irrep: &Irrep) -> Self {
        PathState { t, point, m: irrep.identity(), log_w: 0.0 }
    }
}

/// Products J_σ J_ν, precomputed once per irrep.
#[derive(Clone, Debug)]
pub struct IrrepTables {
    pub irrep: Irrep,
    pub jj: Vec<Vec<CMat>>,
}

impl IrrepTables {
    pub fn new(irrep: &Irrep) -> Self {
        let g = &irrep.generators;
        let jj = g.iter().map(|a| g.iter().map(|b| a.mul(b)).collect()).collect();
        IrrepTables { irrep: irrep.clone(), jj }
    }

    pub fn lin<const G: usize>(&self, coef: &[f64; G]) -> CMat {
        let mut out = CMat::zeros(self.irrep.dim);
        for (b, j) in self.irrep.generators.iter().enumerate() {
            if coef[b] != 0.0 {
                out.add_scaled_re(j, coef[b]);
            }
        }
        out
    }

    pub fn casimir<const G: usize>(&self, gamma_inv: &[[f64; G]; G]) -> CMat {
        let mut out = CMat::zeros(self.irrep.dim);
        for s in 0..G {
            for n in 0..G {
                out.add_scaled_re(&self.jj[s][n], gamma_inv[s][n]);
            }
        }
        out
    }
}

/// Drift matrix A and noise coefficients (per generator) of a kernel:
/// `B_M dW^M = Σ_β (Σ_M b[β][M] dW^M) J_β`.
pub struct StepCoefficients<const P: usize, const G: usize> {
    pub a: CMat,
    pub b: [[f64; P]; G],
}

pub fn step_coefficients<const P: usize, const G: usize>(
    kernel: Kernel,
    report: &GeometryReport<P, G>,
    tables: &IrrepTables,
    cfg: &SimConfig,
) -> StepCoefficients<P, G> {
    let m = cfg.mu2k();
    let s = cfg.noise_scale();
    let mut a = tables.casimir(&report.gamma_inv);
    let mut lin = [0.0; G];
    let mut b = [[0.0; P]; G];
    match kernel {
        Kernel::F1 | Kernel::F2 => {
            for be in 0..G {
                lin[be] = -report.c_vec[be];
            }
            // ΛΠ
            let mut lp = [[0.0; P]; G];
            for be in 0..G {
                for k in 0..P {
                    lp[be][k] = (0..P).map(|c| report.lambda[be][c] * report.pi[c][k]).sum();
                }
            }
            if kernel == Kernel::F2 {
                for be in 0..G {
                    lin[be] -= 2.0 * (0..P).map(|l| lp[be][l] * report.j_ii[l]).sum::<f64>();
                }
            }
            for be in 0..G {
                for mm in 0..P {
                    b[be][mm] = s * (0..P).map(|k| lp[be][k] * report.x_sqrt[k][mm]).sum::<f64>();
                }
            }
        }
        Kernel::F3 => {
            for al in 0..G {
                lin[al] = -report.d_vec[al];
            }
            let anx = report.conn_n_x();
            for al in 0..G {
                for mm in 0..P {
                    b[al][mm] = -s * anx[al][mm];
                }
            }
        }
    }
    let l = tables.lin(&lin);
    a.add_scaled_re(&l, 1.0);
    StepCoefficients { a: a.scale(C64::new(0.5 * m, 0.0)), b }
}

/// The per-step multiplier.
pub fn multiplier<const P: usize, const G: usize>(
    co: &StepCoefficients<P, G>,
    tables: &IrrepTables,
    dt: f64,
    dw: &[f64; P],
    form: Multiplier,
) -> CMat {
    let d = tables.irrep.dim;
    let mut sb = [0.0; G];
    for be in 0..G {
        sb[be] = (0..P).map(|mm| co.b[be][mm] * dw[mm]).sum();
    }
    let bdw = tables.lin(&sb);
    // Σ_M B_M B_M = Σ_{β,ν} (Σ_M b_βM b_νM) J_β J_ν
    let mut bb = CMat::zeros(d);
    for be in 0..G {
        for nu in 0..G {
            let w: f64 = (0..P).map(|mm| co.b[be][mm] * co.b[nu][mm]).sum();
            if w != 0.0 {
                bb.add_scaled_re(&tables.jj[be][nu], w);
            }
        }
    }
    match form {
        Multiplier::Euler => {
            let mut x = CMat::identity(d);
            x.add_scaled_re(&co.a, dt);
            x.add_scaled_re(&bb, 0.5 * dt);
            x.add_scaled_re(&bdw, 1.0);
            x
        }
        Multiplier::Exp => {
            let mut x = co.a.scale(C64::new(dt, 0.0));
            x.add_scaled_re(&bdw, 1.0);
            if d == 1 {
                CMat::scalar(1, x.a[0][0].exp())
            } else {
                CMat::from_dmatrix(&x.to_dmatrix().exp())
            }
        }
    }
}

/// Advances the matrix and scalar weights of one step (the point is moved by
/// the caller).
#[allow(clippy::too_many_arguments)]
pub fn holonomy_step<const P: usize, const G: usize>(
    kernel: Kernel,
    state: &mut PathState<P>,
    report: &GeometryReport<P, G>,
    tables: &IrrepTables,
    cfg: &SimConfig,
    dt: f64,
    dw: &[f64; P],
    form: Multiplier,
) -> Result<()> {
    let co = step_coefficients(kernel, report, tables, cfg);
    let x = multiplier(&co, tables, dt, dw, form);
    state.m = state.m.mul(&x);
    let norm = state.m.max_abs();
    if !(norm <= MATRIX_BOUND) {
        return Err(Error::MatrixOverflow(norm));
    }
    state.log_w += report.potential / (cfg.mu2k() * cfg.mass) * dt;
    if kernel.has_jacobian() {
        state.log_w -= 0.125 * cfg.mu2k() * report.scalars.jtilde * dt;
    }
    state.t += dt;
    Ok(())
}

/// (γ_b / γ_a)^{1/4}.
pub fn jacobian_prefactor(gamma_a: f64, gamma_b: f64) -> Result<f64> {
    if !(gamma_a > 0.0) {
        return Err(Error::SingularOrbitMetric(gamma_a));
    }
    if !(gamma_b > 0.0) {
        return Err(Error::SingularOrbitMetric(gamma_b));
    }
    Ok((gamma_b / gamma_a).powf(0.25))
}

/// Girsanov exponent increment of one step in its stochastic form:
/// `μ√κ (G^H P⊥ j_II)_K 𝔛^K_M dW^M − ½ μ²κ (P⊥ᵀ G^H P⊥)_{AE} j_II^A j_II^E dt`.
pub fn girsanov_increment<const P: usize, const G: usize>(report: &GeometryReport<P, G>, cfg: &SimConfig, dt: f64, dw: &[f64; P]) -> f64 {
    let mut pj = [0.0; P];
    for l in 0..P {
        pj[l] = (0..P).map(|a| report.pperp[l][a] * report.j_ii[a]).sum();
    }
    let mut v = [0.0; P];
    for k in 0..P {
        v[k] = (0..P).map(|l| report.gh[l][k] * pj[l]).sum();
    }
    let quad: f64 = (0..P).map(|k| v[k] * pj[k]).sum();
    let mut noise = 0.0;
    for k in 0..P {
        for mm in 0..P {
            noise += v[k] * report.x_sqrt[k][mm] * dw[mm];
        }
    }
    cfg.noise_scale() * noise - 0.5 * cfg.mu2k() * quad * dt
}

/// How the F2/F3 Jacobian enters a path weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianForm {
    /// (γ_b/γ_a)^{1/4} exp(−⅛ μ²κ ∫ J̃).
    Geometric,
    /// exp(∫ b·dW − ½∫|b|²) accumulated along the path.
    Stochastic,
}

/// Endpoint of a weighted Σ path.
#[derive(Clone, Copy, Debug)]
pub struct WeightedEnd<const P: usize> {
    pub point: ChartPoint<P>,
    pub m: CMat,
    /// ∫ V/(μ²κm) dt, without the J̃ term.
    pub log_v: f64,
    /// −⅛ μ²κ ∫ J̃ dt.
    pub log_jtilde: f64,
    /// Stochastic Girsanov exponent.
    pub log_girsanov: f64,
    /// (γ_b/γ_a)^{1/4}.
    pub gamma_ratio: f64,
}

impl<const P: usize> WeightedEnd<P> {
    /// Scalar weight including the Jacobian for reduced kernels.
    pub fn scalar_weight(&self, kernel: Kernel, form: JacobianForm) -> f64 {
        if !kernel.has_jacobian() {
            return self.log_v.exp();
        }
        match form {
            JacobianForm::Geometric => self.gamma_ratio * (self.log_v + self.log_jtilde).exp(),
            JacobianForm::Stochastic => (self.log_v + self.log_girsanov).exp(),
        }
    }
}

/// Options for a weighted path run.
#[derive(Clone, Copy, Debug)]
pub struct PathOptions {
    pub form: Multiplier,
    pub deriv: Derivatives,
    /// First step index (noise is keyed by absolute step).
    pub step_offset: usize,
    pub n_steps: usize,
}

/// Runs one Σ path of `kernel` from `state` with the noise of `path`.
pub fn run_weighted_path<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    tables: &IrrepTables,
    cfg: &SimConfig,
    kernel: Kernel,
    state: PathState<P>,
    path: u64,
    opts: &PathOptions,
) -> Result<WeightedEnd<P>> {
    let noise = NoiseStream::new(cfg.seed, path);
    let dt = cfg.dt();
    let mut st = state;
    let start = geometry::geometry_report(model, &st.point, opts.deriv)?;
    let gamma_a = start.det_gamma;
    let mut rep = start;
    let mut log_jt = 0.0;
    let mut log_gir = 0.0;
    let mut log_v = 0.0;
    for step in opts.step_offset..opts.step_offset + opts.n_steps {
        let dw: [f64; P] = noise.increments(step as u64, dt);
        let before = st.log_w;
        holonomy_step(kernel, &mut st, &rep, tables, cfg, dt, &dw, opts.form)?;
        let v = rep.potential / (cfg.mu2k() * cfg.mass) * dt;
        log_v += v;
        log_jt += st.log_w - before - v;
        if kernel.has_jacobian() {
            log_gir += girsanov_increment(&rep, cfg, dt, &dw);
        }
        let s = sde::step_sigma(model, &rep, cfg, dt, &dw, kernel.full_process())?;
        if let Some(g) = s.transition {
            st.m = st.m.mul(&tables.irrep.matrix(&g).transpose());
        }
        st.point = s.point;
        rep = geometry::geometry_report(model, &st.point, opts.deriv)?;
    }
    Ok(WeightedEnd {
        point: st.point,
        m: st.m,
        log_v,
        log_jtilde: log_jt,
        log_girsanov: log_gir,
        gamma_ratio: jacobian_prefactor(gamma_a, rep.det_gamma)?,
    })
}

/// The F1 path on ξ_Σ and the F2 path on ξ̃_Σ driven by the same noise. While
/// both processes sit at bitwise identical points, one geometry evaluation
/// serves both.
pub fn run_girsanov_pair<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    tables: &IrrepTables,
    cfg: &SimConfig,
    start: &ChartPoint<P>,
    path: u64,
    form: Multiplier,
) -> Result<(WeightedEnd<P>, WeightedEnd<P>)> {
    let noise = NoiseStream::new(cfg.seed, path);
    let dt = cfg.dt();
    let mut s1 = PathState::new(cfg.t_a, *start, &tables.irrep);
    let mut s2 = s1;
    let r0 = geometry::geometry_report(model, start, Derivatives::Analytic)?;
    let gamma_a = r0.det_gamma;
    let mut r1 = r0.clone();
    let mut r2 = r0;
    let (mut v1, mut v2, mut jt2, mut gir2) = (0.0, 0.0, 0.0, 0.0);
    for step in 0..cfg.n_steps {
        let dw: [f64; P] = noise.increments(step as u64, dt);
        holonomy_step(Kernel::F1, &mut s1, &r1, tables, cfg, dt, &dw, form)?;
        let before = s2.log_w;
        holonomy_step(Kernel::F2, &mut s2, &r2, tables, cfg, dt, &dw, form)?;
        let dv1 = r1.potential / (cfg.mu2k() * cfg.mass) * dt;
        let dv2 = r2.potential / (cfg.mu2k() * cfg.mass) * dt;
        v1 += dv1;
        v2 += dv2;
        jt2 += s2.log_w - before - dv2;
        gir2 += girsanov_increment(&r2, cfg, dt, &dw);
        let a = sde::step_sigma(model, &r1, cfg, dt, &dw, true)?;
        let b = sde::step_sigma(model, &r2, cfg, dt, &dw, false)?;
        if let Some(g) = a.transition {
            s1.m = s1.m.mul(&tables.irrep.matrix(&g).transpose());
        }
        if let Some(g) = b.transition {
            s2.m = s2.m.mul(&tables.irrep.matrix(&g).transpose());
        }
        s1.point = a.point;
        s2.point = b.point;
        r1 = geometry::geometry_report(model, &s1.point, Derivatives::Analytic)?;
        r2 = if s2.point == s1.point { r1.clone() } else { geometry::geometry_report(model, &s2.point, Derivatives::Analytic)? };
    }
    let e1 = WeightedEnd { point: s1.point, m: s1.m, log_v: v1, log_jtilde: 0.0, log_girsanov: 0.0, gamma_ratio: 1.0 };
    let e2 = WeightedEnd {
        point: s2.point,
        m: s2.m,
        log_v: v2,
        log_jtilde: jt2,
        log_girsanov: gir2,
        gamma_ratio: jacobian_prefactor(gamma_a, r2.det_gamma)?,
    };
    Ok((e1, e2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{GroupKind, Irrep};
    use crate::models::{HopfModel, TorusBundle};

    fn opts(n: usize) -> PathOptions {
        PathOptions { form: Multiplier::Euler, deriv: Derivatives::Analytic, step_offset: 0, n_steps: n }
    }

    #[test]
    fn trivial_irrep_keeps_identity() {
        let m = HopfModel::new(1.0);
        let t = IrrepTables::new(&Irrep::trivial(GroupKind::U1));
        let cfg = SimConfig { n_steps: 20, ..SimConfig::default() };
        let p = ChartPoint { chart: 0, q: [0.3, 0.1, 0.0] };
        for k in [Kernel::F1, Kernel::F2, Kernel::F3] {
            let e = run_weighted_path(&m, &t, &cfg, k, PathState::new(0.0, p, &t.irrep), 3, &opts(20)).unwrap();
            assert_eq!(e.m, CMat::identity(1));
        }
    }

    #[test]
    fn flat_f3_multiplier_is_deterministic() {
        let m = TorusBundle::flat(20.0);
        let t = IrrepTables::new(&Irrep::u1(2));
        let cfg = SimConfig { n_steps: 50, ..SimConfig::default() };
        let p = ChartPoint { chart: 0, q: [0.0, 0.0, 0.0] };
        let e = run_weighted_path(&m, &t, &cfg, Kernel::F3, PathState::new(0.0, p, &t.irrep), 0, &opts(50)).unwrap();
        let dt = cfg.dt();
        let expect = (1.0 - 0.5 * 4.0 * dt).powi(50);
        assert!((e.m.a[0][0].re - expect).abs() < 1e-14 && e.m.a[0][0].im.abs() < 1e-14);
    }

    #[test]
    fn prefactor_examples() {
        assert_eq!(jacobian_prefactor(2.0, 2.0).unwrap(), 1.0);
        assert!((jacobian_prefactor(1.0, 16.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(jacobian_prefactor(0.0, 1.0).is_err());
    }

    #[test]
    fn semigroup_split() {
        let m = HopfModel::new(1.0).with_tilt(0.2);
        let t = IrrepTables::new(&Irrep::u1(1));
        let cfg = SimConfig { n_steps: 40, t_b: 0.4, ..SimConfig::default() };
        let p = ChartPoint { chart: 0, q: m.sigma_from_base(0, &[0.5, -0.4]) };
        let whole = run_weighted_path(&m, &t, &cfg, Kernel::F2, PathState::new(0.0, p, &t.irrep), 9, &opts(40)).unwrap();
        let first = run_weighted_path(&m, &t, &cfg, Kernel::F2, PathState::new(0.0, p, &t.irrep), 9, &opts(17)).unwrap();
        let o2 = PathOptions { step_offset: 17, n_steps: 23, ..opts(0) };
        let second = run_weighted_path(&m, &t, &cfg, Kernel::F2, PathState::new(0.0, first.point, &t.irrep), 9, &o2).unwrap();
        let composed = first.m.mul(&second.m);
        assert!(composed.sub(&whole.m).max_abs() < 1e-13);
        assert_eq!(second.point, whole.point);
    }

    #[test]
    fn product_matches_sum_of_logs() {
        let m = HopfModel::new(1.0);
        let t = IrrepTables::new(&Irrep::u1(1));
        let cfg = SimConfig { n_steps: 100, ..SimConfig::default() };
        let noise = NoiseStream::new(cfg.seed, 4);
        let mut p = ChartPoint { chart: 0, q: [0.2, 0.3, 0.0] };
        let mut prod = C64::new(1.0, 0.0);
        let mut logsum = C64::new(0.0, 0.0);
        for step in 0..cfg.n_steps {
            let r = geometry::geometry_report(&m, &p, Derivatives::Analytic).unwrap();
            let dw: [f64; 3] = noise.increments(step as u64, cfg.dt());
            let co = step_coefficients(Kernel::F1, &r, &t, &cfg);
            let x = multiplier(&co, &t, cfg.dt(), &dw, Multiplier::Euler).a[0][0];
            prod *= x;
            logsum += x.ln();
            let s = sde::step_sigma(&m, &r, &cfg, cfg.dt(), &dw, true).unwrap();
            if let Some(g) = s.transition {
                let d = t.irrep.matrix(&g).a[0][0];
                prod *= d;
                logsum += d.ln();
            }
            p = s.point;
        }
        assert!((prod.norm().ln() - logsum.re).abs() < 1e-8);
        assert!((prod - logsum.exp()).norm() < 1e-8);
    }

    #[test]
    fn f2_equals_f3_pointwise() {
        let m = TorusBundle::warped().with_tilt(0.3);
        let t = IrrepTables::new(&Irrep::u1(1));
        let cfg = SimConfig::default();
        let p = ChartPoint { chart: 0, q: m.sigma_from_base(0, &[0.7, -1.3]) };
        let r = geometry::geometry_report(&m, &p, Derivatives::Analytic).unwrap();
        let a = step_coefficients(Kernel::F2, &r, &t, &cfg);
        let b = step_coefficients(Kernel::F3, &r, &t, &cfg);
        assert!(a.a.sub(&b.a).max_abs() < 1e-12, "{:?} vs {:?}", a.a.a[0][0], b.a.a[0][0]);
        for be in 0..1 {
            for mm in 0..3 {
                assert!((a.b[be][mm] - b.b[be][mm]).abs() < 1e-12);
            }
        }
    }
}
