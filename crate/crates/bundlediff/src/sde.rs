//! Euler–Maruyama steps for the processes on 𝒫, on Σ and on the group.
//!
//! ```text
//!   original:  dQ^A  = ½μ²κ G^{-1/2} ∂_B(G^{1/2} G^{AB}) dt + μ√κ 𝔛^A_M dW^M
//!   Σ:         dQ*^A = μ²κ (−½ h^{CB} ^HΓ^A_CB + j_I^A [+ j_II^A]) dt + μ√κ (N𝔛)^A_M dW^M
//!   group:     da^α  = −½μ²κ [c^β v̄^α_β − G^{MB} Λ^ε_M Λ^β_B v̄^ν_ε ∂_ν v̄^α_β] dt
//!                      + μ√κ v̄^α_β (Λ𝔛)^β_M dW^M
//! ```
//!
//! All coefficients are taken at the start of the step. Noise is a pure
//! function of (seed, path, step), so ensembles are reproducible at any thread
//! count and can be shared between process variants.

use crate::error::{Error, Result};
use crate::geometry::{self, Derivatives, GeometryReport};
use crate::group::{GroupElement, GroupKind};
use crate::jet::Jet1;
use crate::linalg::{self, Mat};
use crate::models::{BundleModel, ChartPoint};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based standard normals keyed by (seed, path, step).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
    pub path: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, path: u64) -> Self {
        NoiseStream { seed, path }
    }

    fn key(&self, step: u64) -> u64 {
        splitmix64(splitmix64(splitmix64(self.seed) ^ self.path) ^ step.wrapping_mul(0xD6E8_FEB8_6659_FD93))
    }

    /// Uniform in (0, 1) from counter `i` of step `step`.
    pub fn uniform(&self, step: u64, i: u64) -> f64 {
        let x = splitmix64(self.key(step) ^ i.wrapping_mul(0xA076_1D64_78BD_642F));
        ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Fills `out` with independent standard normals (Box–Muller pairs).
    pub fn normals(&self, step: u64, out: &mut [f64]) {
        let mut i = 0;
        while i < out.len() {
            let u1 = self.uniform(step, i as u64);
            let u2 = self.uniform(step, i as u64 + 1);
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
            out[i] = r * c;
            if i + 1 < out.len() {
                out[i + 1] = r * s;
            }
            i += 2;
        }
    }

    /// Wiener increments √dt·N(0, 1) for one step.
    pub fn increments<const P: usize>(&self, step: u64, dt: f64) -> [f64; P] {
        let mut z = [0.0; P];
        self.normals(step, &mut z);
        let s = dt.sqrt();
        z.map(|x| x * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Original,
    SigmaFull,
    SigmaReduced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub mu2: f64,
    pub kappa: f64,
    pub mass: f64,
    pub t_a: f64,
    pub t_b: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub variant: Variant,
    #[serde(default)]
    pub include_group: bool,
    #[serde(default = "default_tol")]
    pub constraint_tol: f64,
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mu2: 1.0,
            kappa: 1.0,
            mass: 1.0,
            t_a: 0.0,
            t_b: 0.5,
            n_steps: 200,
            n_paths: 10_000,
            seed: 1,
            variant: Variant::SigmaFull,
            include_group: false,
            constraint_tol: 1e-10,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_b > self.t_a) && self.t_b != self.t_a {
            return Err(Error::Config(format!("t_b = {} must not precede t_a = {}", self.t_b, self.t_a)));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if !(self.kappa > 0.0) || !(self.mu2 > 0.0) || !(self.mass > 0.0) {
            return Err(Error::Config("mu2, kappa and mass must be positive".into()));
        }
        Ok(())
    }

    /// μ²κ.
    pub fn mu2k(&self) -> f64 {
        self.mu2 * self.kappa
    }

    /// μ√κ.
    pub fn noise_scale(&self) -> f64 {
        self.mu2.sqrt() * self.kappa.sqrt()
    }

    pub fn dt(&self) -> f64 {
        (self.t_b - self.t_a) / self.n_steps as f64
    }
}

fn mat_vec<const R: usize, const C: usize>(a: &Mat<f64, R, C>, x: &[f64; C]) -> [f64; R] {
    let mut out = [0.0; R];
    for i in 0..R {
        out[i] = (0..C).map(|j| a[i][j] * x[j]).sum();
    }
    out
}

/// Moves a point that left its chart's preferred region into the next chart.
fn rechart_point<M: BundleModel<P, G>, const P: usize, const G: usize>(model: &M, mut p: ChartPoint<P>) -> Result<ChartPoint<P>> {
    for _ in 0..4 {
        match model.rechart(p.chart, &p.q) {
            Some((c, q)) => p = ChartPoint { chart: c, q },
            None => return Ok(p),
        }
    }
    Err(Error::ChartExit(p.q.to_vec()))
}

/// Drift ½ G^{-1/2}∂_B(G^{1/2}G^{AB}) = −½ G^{BC} Γ^A_BC of the original
/// process, per unit μ²κ.
pub fn original_drift<M: BundleModel<P, G>, const P: usize, const G: usize>(model: &M, p: &ChartPoint<P>) -> Result<[f64; P]> {
    let g1 = model.metric(p.chart, &Jet1::<P>::vars(&p.q));
    let gi = linalg::inverse(&linalg::values(&g1)).ok_or(Error::NotPositiveDefinite)?;
    // ∂_B G^{AB} = −G^{AC} ∂_B G_CD G^{DB};  ∂_B ln√g = ½ G^{CD} ∂_B G_CD
    let mut drift = [0.0; P];
    for a in 0..P {
        let mut v = 0.0;
        for b in 0..P {
            let mut dgi = 0.0;
            let mut dlog = 0.0;
            for c in 0..P {
                for d in 0..P {
                    let dg = g1[c][d].g[b];
                    dgi -= gi[a][c] * dg * gi[d][b];
                    dlog += 0.5 * gi[c][d] * dg;
                }
            }
            v += dgi + gi[a][b] * dlog;
        }
        drift[a] = 0.5 * v;
    }
    Ok(drift)
}

/// One step of the original process on 𝒫.
pub fn step_original<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    p: &ChartPoint<P>,
    cfg: &SimConfig,
    dt: f64,
    dw: &[f64; P],
) -> Result<ChartPoint<P>> {
    let drift = original_drift(model, p)?;
    let g = model.metric(p.chart, &p.q);
    let x = geometry::metric_sqrt(&g)?;
    let noise = mat_vec(&x, dw);
    let (m, s) = (cfg.mu2k(), cfg.noise_scale());
    let mut q = p.q;
    for a in 0..P {
        q[a] += m * drift[a] * dt + s * noise[a];
    }
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::ChartExit(q.to_vec()));
    }
    rechart_point(model, ChartPoint { chart: p.chart, q })
}

/// Newton projection onto χ = 0 along the orbit directions K.
pub fn project_to_sigma<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    chart: usize,
    q: &[f64; P],
    tol: f64,
) -> Result<[f64; P]> {
    let mut x = *q;
    let mut res = f64::INFINITY;
    for _ in 0..20 {
        let f = model.fields(chart, &Jet1::<P>::vars(&x));
        res = f.chi.iter().fold(0.0_f64, |m, c| m.max(c.v.abs()));
        if res <= tol {
            return Ok(x);
        }
        let mut phi = [[0.0; G]; G];
        for b in 0..G {
            for mu in 0..G {
                phi[b][mu] = (0..P).map(|a| f.k[a][mu].v * f.chi[b].g[a]).sum();
            }
        }
        let pinv = linalg::inverse(&phi).ok_or(Error::ProjectionFailure(res))?;
        let chi = f.chi.map(|c| c.v);
        let s = mat_vec(&pinv, &chi);
        for a in 0..P {
            x[a] -= (0..G).map(|mu| f.k[a][mu].v * s[mu]).sum::<f64>();
        }
    }
    let f = model.fields(chart, &x);
    let last = f.chi.iter().fold(0.0_f64, |m: f64, c| m.max(c.abs()));
    if last <= tol {
        Ok(x)
    } else {
        Err(Error::ProjectionFailure(res.min(last)))
    }
}

/// Result of one Σ step: the new Σ point and, if the step crossed into
/// another chart, the group element g with σ_old = σ_new · g.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaStep<const P: usize, const G: usize> {
    pub point: ChartPoint<P>,
    pub transition: Option<[f64; G]>,
}

/// One step of the Σ process using the geometry at its start point.
pub fn step_sigma<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    report: &GeometryReport<P, G>,
    cfg: &SimConfig,
    dt: f64,
    dw: &[f64; P],
    include_jii: bool,
) -> Result<SigmaStep<P, G>> {
    let drift = report.sigma_drift(include_jii);
    let diff = report.sigma_diffusion();
    let noise = mat_vec(&diff, dw);
    let (m, s) = (cfg.mu2k(), cfg.noise_scale());
    let p = report.point;
    let mut q = p.q;
    for a in 0..P {
        q[a] += m * drift[a] * dt + s * noise[a];
    }
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::ChartExit(q.to_vec()));
    }
    let q = project_to_sigma(model, p.chart, &q, cfg.constraint_tol)?;
    let moved = rechart_point(model, ChartPoint { chart: p.chart, q })?;
    if moved.chart == p.chart && moved.q == q {
        return Ok(SigmaStep { point: moved, transition: None });
    }
    let (star, g) = model.split(moved.chart, &moved.q);
    let star = project_to_sigma(model, moved.chart, &star, cfg.constraint_tol)?;
    let transition = if g.iter().all(|x| *x == 0.0) && moved.chart == p.chart { None } else { Some(g) };
    Ok(SigmaStep { point: ChartPoint { chart: moved.chart, q: star }, transition })
}

/// ∂_ν v̄^α_β by central differences in the group chart, `[ν][α][β]`.
fn frame_derivative(kind: GroupKind, a: &GroupElement) -> Result<Vec<nalgebra::DMatrix<f64>>> {
    let n = kind.dim();
    if kind == GroupKind::U1 {
        return Ok(vec![nalgebra::DMatrix::zeros(1, 1)]);
    }
    let h = 1e-6;
    (0..n)
        .map(|nu| {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.params[nu] += h;
            am.params[nu] -= h;
            let vp = kind.invariant_frames(&ap)?.v;
            let vm = kind.invariant_frames(&am)?.v;
            Ok((vp - vm) / (2.0 * h))
        })
        .collect()
}

/// One step of the group process, sharing `dw` with the paired Σ step.
pub fn step_group<const P: usize, const G: usize>(
    report: &GeometryReport<P, G>,
    kind: GroupKind,
    a: &GroupElement,
    cfg: &SimConfig,
    dt: f64,
    dw: &[f64; P],
) -> Result<GroupElement> {
    if dt == 0.0 {
        return Ok(a.clone());
    }
    let fr = kind.invariant_frames(a)?;
    let v = &fr.v;
    let dv = frame_derivative(kind, a)?;
    let lam = &report.lambda;
    let gi = &report.g_inv;
    // G^{MB} Λ^ε_M Λ^β_B
    let mut ll = [[0.0; G]; G];
    for e in 0..G {
        for b in 0..G {
            let mut s = 0.0;
            for m in 0..P {
                for bb in 0..P {
                    s += gi[m][bb] * lam[e][m] * lam[b][bb];
                }
            }
            ll[e][b] = s;
        }
    }
    let lx = report.lambda_x();
    let lxdw = mat_vec(&lx, dw);
    let (m, s) = (cfg.mu2k(), cfg.noise_scale());
    let mut out = a.params.clone();
    for al in 0..G {
        let mut drift = 0.0;
        for be in 0..G {
            drift += report.c_vec[be] * v[(al, be)];
            for e in 0..G {
                for nu in 0..G {
                    drift -= ll[e][be] * v[(nu, e)] * dv[nu][(al, be)];
                }
            }
        }
        let noise: f64 = (0..G).map(|be| v[(al, be)] * lxdw[be]).sum();
        out[al] += -0.5 * m * drift * dt + s * noise;
    }
    match kind {
        GroupKind::U1 => kind.compose(&GroupElement::identity(kind), &GroupElement::new(out)),
        GroupKind::Su2 => {
            let g = GroupElement::new(out);
            if g.norm() >= kind.chart_radius() - 1e-9 {
                Err(Error::ChartOverflow(g.norm()))
            } else {
                Ok(g)
            }
        }
    }
}

/// Summary statistics of path endpoints, in the coordinates of the start
/// chart (paths that changed chart are counted separately).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_paths: usize,
    pub n_steps: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub max_constraint: f64,
    pub chart_changes: usize,
}

/// Endpoint of one path plus diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct PathEnd<const P: usize, const G: usize> {
    pub point: ChartPoint<P>,
    pub group: [f64; G],
    pub max_constraint: f64,
    pub chart_changed: bool,
}

/// Per-step callback data.
pub struct StepEvent<'a, const P: usize, const G: usize> {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub dw: &'a [f64; P],
    pub point: &'a ChartPoint<P>,
}

/// Runs `f(path)` over all paths in parallel and returns the results in path
/// order, so any later reduction is independent of scheduling.
pub fn par_paths<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).into_par_iter().with_min_len(64).map(f).collect()
}

/// One path of the chosen variant from `start`.
pub fn run_path<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    cfg: &SimConfig,
    start: &ChartPoint<P>,
    path: u64,
    hook: &(dyn Fn(&StepEvent<P, G>) + Sync),
) -> Result<PathEnd<P, G>> {
    let noise = NoiseStream::new(cfg.seed, path);
    let dt = cfg.dt();
    let kind = model.group();
    let mut p = *start;
    let mut a = GroupElement::identity(kind);
    let mut max_constraint = 0.0_f64;
    let mut changed = false;
    for step in 0..cfg.n_steps {
        let dw: [f64; P] = noise.increments(step as u64, dt);
        hook(&StepEvent { step, t: cfg.t_a + step as f64 * dt, dt, dw: &dw, point: &p });
        match cfg.variant {
            Variant::Original => {
                let np = step_original(model, &p, cfg, dt, &dw)?;
                changed |= np.chart != p.chart;
                p = np;
            }
            Variant::SigmaFull | Variant::SigmaReduced => {
                let rep = geometry::geometry_report(model, &p, Derivatives::Analytic)?;
                if cfg.include_group {
                    a = step_group(&rep, kind, &a, cfg, dt, &dw)?;
                }
                let st = step_sigma(model, &rep, cfg, dt, &dw, cfg.variant == Variant::SigmaFull)?;
                if let Some(g) = st.transition {
                    changed = true;
                    if cfg.include_group {
                        a = kind.compose(&GroupElement::new(g.to_vec()), &a)?;
                    }
                }
                p = st.point;
                let f = model.fields(p.chart, &p.q);
                max_constraint = f.chi.iter().fold(max_constraint, |m, c| m.max(c.abs()));
            }
        }
    }
    let mut group = [0.0; G];
    group.copy_from_slice(&a.params);
    Ok(PathEnd { point: p, group, max_constraint, chart_changed: changed })
}

/// Simulates `cfg.n_paths` paths and summarizes their endpoints.
pub fn simulate_paths<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    cfg: &SimConfig,
    start: &ChartPoint<P>,
    hook: &(dyn Fn(&StepEvent<P, G>) + Sync),
) -> Result<(EnsembleStats, Vec<PathEnd<P, G>>)> {
    cfg.validate()?;
    let ends: Vec<PathEnd<P, G>> =
        par_paths(cfg.n_paths, |i| run_path(model, cfg, start, i as u64, hook)).into_iter().collect::<Result<_>>()?;
    let same: Vec<&PathEnd<P, G>> = ends.iter().filter(|e| e.point.chart == start.chart).collect();
    let n = same.len().max(1) as f64;
    let mut mean = vec![0.0; P];
    for e in &same {
        for a in 0..P {
            mean[a] += e.point.q[a] / n;
        }
    }
    let mut cov = vec![vec![0.0; P]; P];
    for e in &same {
        for a in 0..P {
            for b in 0..P {
                cov[a][b] += (e.point.q[a] - mean[a]) * (e.point.q[b] - mean[b]) / (n - 1.0).max(1.0);
            }
        }
    }
    let stderr = (0..P).map(|a| (cov[a][a] / n).sqrt()).collect();
    let stats = EnsembleStats {
        n_paths: cfg.n_paths,
        n_steps: cfg.n_steps,
        mean,
        stderr,
        cov,
        max_constraint: ends.iter().fold(0.0, |m, e| m.max(e.max_constraint)),
        chart_changes: ends.iter().filter(|e| e.chart_changed).count(),
    };
    Ok((stats, ends))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{HopfModel, TorusBundle};

    #[test]
    fn noise_is_keyed() {
        let a = NoiseStream::new(7, 3);
        let mut x = [0.0; 5];
        let mut y = [0.0; 5];
        a.normals(11, &mut x);
        a.normals(11, &mut y);
        assert_eq!(x, y);
        NoiseStream::new(7, 4).normals(11, &mut y);
        assert_ne!(x, y);
    }

    #[test]
    fn noise_moments() {
        let s = NoiseStream::new(1, 0);
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        let mut z = [0.0; 2];
        for k in 0..n / 2 {
            s.normals(k as u64, &mut z);
            for v in z {
                m1 += v;
                m2 += v * v;
            }
        }
        assert!((m1 / n as f64).abs() < 0.01);
        assert!((m2 / n as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn flat_original_step() {
        let m = TorusBundle::flat(20.0);
        let cfg = SimConfig::default();
        let p = ChartPoint { chart: 0, q: [0.1, 0.2, 0.3] };
        assert_eq!(step_original(&m, &p, &cfg, 0.1, &[0.0; 3]).unwrap(), p);
        let p2 = step_original(&m, &p, &cfg, 0.1, &[1.0, 0.0, 0.0]).unwrap();
        assert!((p2.q[0] - 1.1).abs() < 1e-15 && p2.q[1] == 0.2);
    }

    #[test]
    fn flat_sigma_and_group_steps() {
        let m = TorusBundle::flat(20.0);
        let cfg = SimConfig::default();
        let p = ChartPoint { chart: 0, q: [0.1, 0.2, 0.0] };
        let r = geometry::geometry_report(&m, &p, Derivatives::Analytic).unwrap();
        let dw = [0.3, -0.2, 0.5];
        let s = step_sigma(&m, &r, &cfg, 0.01, &dw, true).unwrap();
        assert!((s.point.q[0] - 0.4).abs() < 1e-15 && s.point.q[1].abs() < 1e-15 && s.point.q[2] == 0.0);
        let a = step_group(&r, GroupKind::U1, &GroupElement::new(vec![0.2]), &cfg, 0.01, &dw).unwrap();
        assert!((a.params[0] - 0.7).abs() < 1e-15);
        let a0 = step_group(&r, GroupKind::U1, &GroupElement::new(vec![0.2]), &cfg, 0.0, &dw).unwrap();
        assert_eq!(a0.params[0], 0.2);
    }

    #[test]
    fn sigma_drift_matches_report() {
        let m = HopfModel::new(1.0).with_tilt(0.3);
        let p = ChartPoint { chart: 0, q: m.sigma_from_base(0, &[0.4, -0.2]) };
        let r = geometry::geometry_report(&m, &p, Derivatives::Analytic).unwrap();
        let cfg = SimConfig::default();
        let dt = 1e-7;
        let s = step_sigma(&m, &r, &cfg, dt, &[0.0; 3], true).unwrap();
        let d = r.sigma_drift(true);
        for a in 0..2 {
            assert!(((s.point.q[a] - p.q[a]) / dt - d[a]).abs() < 1e-6);
        }
    }

    #[test]
    fn hopf_chart_transition_is_consistent() {
        let m = HopfModel::new(1.0).with_tilt(0.3);
        let p = ChartPoint { chart: 0, q: m.sigma_from_base(0, &[1.99, 0.0]) };
        let r = geometry::geometry_report(&m, &p, Derivatives::Analytic).unwrap();
        let cfg = SimConfig::default();
        let s = step_sigma(&m, &r, &cfg, 1e-4, &[0.5, 0.1, 0.0], true).unwrap();
        assert_eq!(s.point.chart, 1);
        let g = s.transition.unwrap();
        let moved = m.action(1, &s.point.q, &g);
        let (a1, a2) = m.embed(1, &moved);
        let q_old = [s.point.q[0], s.point.q[1]];
        let w = num_complex::Complex64::new(q_old[0], q_old[1]).inv();
        let old = m.sigma_from_base(0, &[w.re, w.im]);
        let (b1, b2) = m.embed(0, &old);
        assert!((a1 - b1).norm() < 1e-12 && (a2 - b2).norm() < 1e-12);
    }
}
