//! Run configuration, verification suites and machine-readable verdicts.
//!
//! A statistical check compares a residual r with its standard error σ:
//!
//! ```text
//!   INCONCLUSIVE   σ > max_rel_sigma · scale
//!   PASS           |r| ≤ k σ + ε·scale  (k = sigma_factor, ε = 1e-12)
//!   FAIL           otherwise
//! ```
//!
//! Deterministic checks compare the measured value with a tolerance. Verdict
//! JSON carries no timing or thread information, so identical configs give
//! byte-identical files apart from the `timestamp` field.

use crate::cmat::{CVec, C64};
use crate::error::{Error, Result};
use crate::geometry::{self, Derivatives};
use crate::greens::{self, SemigroupEstimate};
use crate::group::{GroupElement, Irrep};
use crate::holonomy::{self, IrrepTables, JacobianForm, Kernel, Multiplier};
use crate::models::{self, AnyModel, BaseDomain, BundleModel, ChartPoint, ModelParams, Potential, TestProfile, NP};
use crate::pdecheck::grid::{self, AssembledOperator, Grid, GridSection, ScalarWeight, TimeScheme};
use crate::pdecheck::{self, FnSection, OperatorLabel, TestSection, NB};
use crate::riemann;
use crate::sde::{self, NoiseStream, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::io::Write;

pub const SCHEMA_VERSION: &str = "bundlediff.verdict/1";

/// Relative size below which a statistical residual counts as rounding.
pub const ROUNDING_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Geometry,
    Operators,
    Girsanov,
    Reduction,
    Pde,
    All,
}

impl Suite {
    pub fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Geometry, Suite::Operators, Suite::Girsanov, Suite::Reduction, Suite::Pde],
            s => vec![s],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::Operators => "operators",
            Suite::Girsanov => "girsanov",
            Suite::Reduction => "reduction",
            Suite::Pde => "pde",
            Suite::All => "all",
        }
    }
}

/// Tolerances of the verification suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub geometry_analytic: f64,
    pub geometry_fd: f64,
    pub jtilde_flat: f64,
    pub jtilde_spread: f64,
    pub curvature: f64,
    pub identity_analytic: f64,
    pub identity_fd: f64,
    pub sigma_factor: f64,
    /// σ above this fraction of the compared values makes a check inconclusive.
    pub max_rel_sigma: f64,
    pub pde_l2: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            geometry_analytic: 1e-10,
            geometry_fd: 1e-6,
            jtilde_flat: 1e-12,
            jtilde_spread: 1e-6,
            curvature: 1e-6,
            identity_analytic: 1e-8,
            identity_fd: 1e-4,
            sigma_factor: 3.0,
            max_rel_sigma: 0.05,
            pde_l2: 0.03,
        }
    }
}

/// Sample sizes of the suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budgets {
    pub geometry_points: usize,
    pub identity_points: usize,
    pub identity_sections: usize,
    pub girsanov_paths: usize,
    pub girsanov_steps: usize,
    pub reduction_paths: usize,
    pub reduction_steps: usize,
    pub quad_order: usize,
    /// Paths of the MC side of the PDE check, split over the start points.
    pub pde_paths: usize,
    pub pde_steps: usize,
    pub pde_points: usize,
    pub pde_h: f64,
    pub pde_dt: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            geometry_points: 1000,
            identity_points: 50,
            identity_sections: 20,
            girsanov_paths: 10_000,
            girsanov_steps: 200,
            reduction_paths: 10_000,
            reduction_steps: 100,
            quad_order: 32,
            pde_paths: 40_000,
            pde_steps: 100,
            pde_points: 4,
            pde_h: 0.05,
            pde_dt: 0.01,
        }
    }
}

/// Everything a run needs; read from JSON with unknown keys rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: String,
    pub model_params: ModelParams,
    /// Irrep label: the charge for U(1).
    pub irrep: String,
    pub derivatives: Derivatives,
    pub sim: SimConfig,
    pub suites: Vec<Suite>,
    pub tolerances: Tolerances,
    pub budgets: Budgets,
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "hopf".into(),
            model_params: ModelParams::default(),
            irrep: "1".into(),
            derivatives: Derivatives::Analytic,
            sim: SimConfig::default(),
            suites: vec![Suite::All],
            tolerances: Tolerances::default(),
            budgets: Budgets::default(),
            out: None,
        }
    }
}

impl RunConfig {
    /// Parses a config; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.irrep()?;
        if self.tolerances.sigma_factor <= 0.0 || self.tolerances.max_rel_sigma <= 0.0 {
            return Err(Error::Config("tolerances: `sigma_factor` and `max_rel_sigma` must be positive".into()));
        }
        if !(self.budgets.pde_h > 0.0) || !(self.budgets.pde_dt > 0.0) {
            return Err(Error::Config("budgets: `pde_h` and `pde_dt` must be positive".into()));
        }
        Ok(())
    }

    pub fn irrep(&self) -> Result<Irrep> {
        Irrep::parse(crate::group::GroupKind::U1, &self.irrep)
    }

    pub fn build_model(&self) -> Result<AnyModel> {
        models::make_model(&self.model, &self.model_params, self.sim.mu2k() * (self.sim.t_b - self.sim.t_a))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

/// One verdict line. `sigma` is present for statistical checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub sigma: Option<f64>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl Check {
    /// Passes when `measured ≤ tolerance`.
    pub fn bound(suite: Suite, name: &str, measured: f64, tolerance: f64) -> Check {
        let status = if measured.is_finite() && measured <= tolerance { Status::Pass } else { Status::Fail };
        Check { suite: suite.as_str().into(), name: name.into(), measured, tolerance, sigma: None, status, detail: None }
    }

    /// Residual against k σ; inconclusive when σ exceeds `max_rel_sigma · scale`.
    pub fn statistical(suite: Suite, name: &str, residual: f64, sigma: f64, scale: f64, tol: &Tolerances) -> Check {
        let k = tol.sigma_factor;
        let status = if !residual.is_finite() || !sigma.is_finite() {
            Status::Fail
        } else if sigma > tol.max_rel_sigma * scale.abs().max(1e-12) {
            Status::Inconclusive
        } else if residual.abs() <= k * sigma + ROUNDING_FLOOR * scale.abs() {
            Status::Pass
        } else {
            Status::Fail
        };
        Check { suite: suite.as_str().into(), name: name.into(), measured: residual, tolerance: k * sigma, sigma: Some(sigma), status, detail: None }
    }

    pub fn with_detail(mut self, v: Value) -> Check {
        self.detail = Some(v);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub schema_version: String,
    pub suite: String,
    pub model: String,
    pub irrep: String,
    pub seed: u64,
    pub version: String,
    pub config: RunConfig,
    pub checks: Vec<Check>,
    pub status: Status,
    pub timestamp: String,
}

impl Verdict {
    pub fn new(suite: &str, cfg: &RunConfig, checks: Vec<Check>) -> Verdict {
        let status = overall(&checks);
        let ts = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Verdict {
            schema_version: SCHEMA_VERSION.into(),
            suite: suite.into(),
            model: cfg.model.clone(),
            irrep: cfg.irrep.clone(),
            seed: cfg.sim.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            checks,
            status,
            timestamp: format!("{ts}"),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Pass => 0,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }
}

fn overall(checks: &[Check]) -> Status {
    if checks.iter().any(|c| c.status == Status::Fail) {
        Status::Fail
    } else if checks.iter().any(|c| c.status == Status::Inconclusive) {
        Status::Inconclusive
    } else {
        Status::Pass
    }
}

/// Pretty JSON with every float written with 17 significant digits.
struct SigFormatter(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for SigFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        if v.is_finite() {
            write!(w, "{v:.16e}")
        } else {
            w.write_all(b"null")
        }
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize>(v: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFormatter(serde_json::ser::PrettyFormatter::new()));
    v.serialize(&mut ser).map_err(|e| Error::Io(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

/// CSV float cell.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Removes the `timestamp` line so verdicts can be compared byte for byte.
pub fn strip_timestamp(json: &str) -> String {
    json.lines().filter(|l| !l.trim_start().starts_with("\"timestamp\"")).collect::<Vec<_>>().join("\n")
}

/// Σ points from a counter-keyed stream.
pub fn sample_points<M: BundleModel<NP, 1>>(model: &M, n: usize, seed: u64, stream: u64) -> Vec<ChartPoint<NP>> {
    let noise = NoiseStream::new(seed, stream);
    let mut k = 0u64;
    let mut uniform = || {
        k += 1;
        noise.uniform(k, 0)
    };
    (0..n).map(|_| model.sample_sigma(&mut uniform)).collect()
}

fn uniform_angles(n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let noise = NoiseStream::new(seed, stream);
    (0..n).map(|k| (noise.uniform(k as u64, 1) - 0.5) * 2.0 * std::f64::consts::PI).collect()
}

/// Largest residuals of the projector identities, the pseudoinverse contract
/// and the determinant factorization over `points`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantResiduals {
    pub projectors: f64,
    pub pseudoinverse: f64,
    pub determinant: f64,
}

pub fn geometry_invariants<M: BundleModel<NP, 1>>(model: &M, points: &[ChartPoint<NP>], angles: &[f64], deriv: Derivatives) -> Result<InvariantResiduals> {
    let per: Vec<Result<InvariantResiduals>> = sde::par_paths(points.len(), |k| {
        let r = geometry::geometry_report(model, &points[k], deriv)?;
        let b = geometry::metric_block(&r, model.group(), &GroupElement::new(vec![angles[k]]))?;
        Ok(InvariantResiduals { projectors: r.projector_residuals().max(), pseudoinverse: b.pseudoinverse_residual, determinant: b.det_relative_difference() })
    });
    let mut out = InvariantResiduals::default();
    for r in per {
        let r = r?;
        out.projectors = out.projectors.max(r.projectors);
        out.pseudoinverse = out.pseudoinverse.max(r.pseudoinverse);
        out.determinant = out.determinant.max(r.determinant);
    }
    Ok(out)
}

fn stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn geometry_suite(cfg: &RunConfig, model: &AnyModel) -> Result<Vec<Check>> {
    let s = Suite::Geometry;
    let tol = &cfg.tolerances;
    let n = cfg.budgets.geometry_points;
    let pts = sample_points(model, n, cfg.sim.seed, 0x6e0);
    let angles = uniform_angles(n, cfg.sim.seed, 0x6e1);
    let mut out = Vec::new();
    for (deriv, t) in [(Derivatives::Analytic, tol.geometry_analytic), (Derivatives::Fd, tol.geometry_fd)] {
        let tag = match deriv {
            Derivatives::Analytic => "analytic",
            Derivatives::Fd => "fd",
        };
        let r = geometry_invariants(model, &pts, &angles, deriv)?;
        out.push(Check::bound(s, &format!("projector_identities[{tag}]"), r.projectors, t));
        out.push(Check::bound(s, &format!("pseudoinverse_contract[{tag}]"), r.pseudoinverse, t));
        out.push(Check::bound(s, &format!("determinant_factorization[{tag}]"), r.determinant, t));
    }
    out.extend(jtilde_checks(cfg, model, &pts)?);
    Ok(out)
}

/// J̃ checks: zero on flat models; on Hopf, constancy, the curvature scalars
/// against the brute-force oracle and the radius scaling.
pub fn jtilde_checks(cfg: &RunConfig, model: &AnyModel, pts: &[ChartPoint<NP>]) -> Result<Vec<Check>> {
    let reports = pts.iter().map(|p| geometry::geometry_report(model, p, Derivatives::Analytic)).collect::<Result<Vec<_>>>()?;
    let jt: Vec<f64> = reports.iter().map(|r| r.scalars.jtilde).collect();
    Ok(match model {
        AnyModel::Torus(t) if t.descriptor().known_scalars.is_some() => {
            let worst = jt.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            vec![Check::bound(Suite::Geometry, "jtilde_vanishes", worst, cfg.tolerances.jtilde_flat)]
        }
        AnyModel::Hopf(h) => hopf_curvature_checks(cfg, h, pts, &reports)?,
        _ => vec![],
    })
}

/// Curvature scalars of Hopf against the brute-force oracle (which uses the
/// usual sign; the report uses the opposite sign for R_P and ^HR).
fn hopf_curvature_checks(cfg: &RunConfig, h: &models::HopfModel, pts: &[ChartPoint<NP>], reports: &[geometry::GeometryReport<NP, 1>]) -> Result<Vec<Check>> {
    let s = Suite::Geometry;
    let tol = &cfg.tolerances;
    let r = h.radius;
    let total = riemann::hopf_total_metric::<3>(r);
    let base = riemann::hopf_base_metric::<2>(r);
    let rp = -riemann::scalar_curvature(&total, &[0.6, 0.2, -0.4]);
    let hr = -riemann::scalar_curvature(&base, &[1.0, 0.3]);
    let f2 = riemann::connection_curvature_norm(&total, &[0.0, 1.0, 1.0], &[0.6, 0.0, 0.0]);
    let mut dev = [0.0_f64; 5];
    let mut formula = 0.0_f64;
    for rep in reports {
        let sc = rep.scalars;
        for (k, (x, y)) in [(sc.r_p, rp), (sc.hr, hr), (sc.r_g, 0.0), (sc.f2, f2), (sc.jnorm2, 0.0)].into_iter().enumerate() {
            dev[k] = dev[k].max((x - y).abs());
        }
        formula = formula.max((sc.jtilde - (sc.r_p - sc.hr - 0.25 * sc.f2)).abs());
    }
    let jt: Vec<f64> = reports.iter().map(|r| r.scalars.jtilde).collect();
    let (mean, spread) = stats(&jt);
    let mut out = vec![Check::bound(s, "jtilde_spread", spread, tol.jtilde_spread)];
    for (k, name) in ["r_p_vs_oracle", "hr_vs_oracle", "r_g_vs_oracle", "f2_vs_oracle", "jnorm2_vs_oracle"].iter().enumerate() {
        out.push(Check::bound(s, name, dev[k], tol.curvature));
    }
    out.push(Check::bound(s, "jtilde_vs_rp_hr_f2", formula, tol.curvature));
    // J̃(2r) = J̃(r)/4 at the same base points
    let big = models::HopfModel { radius: 2.0 * r, ..h.clone() };
    let mut scaling = 0.0_f64;
    for (p, rep) in pts.iter().zip(reports).take(100) {
        let q = ChartPoint { chart: p.chart, q: big.sigma_from_base(p.chart, &p.q[..2]) };
        let r2 = geometry::geometry_report(&big, &q, Derivatives::Analytic)?;
        scaling = scaling.max((r2.scalars.jtilde - 0.25 * rep.scalars.jtilde).abs()).max((r2.scalars.r_p - 0.25 * rep.scalars.r_p).abs());
    }
    out.push(Check::bound(s, "radius_scaling", scaling, tol.curvature).with_detail(serde_json::json!({ "jtilde_mean": mean })));
    Ok(out)
}

fn operators_suite(cfg: &RunConfig, model: &AnyModel) -> Result<Vec<Check>> {
    let s = Suite::Operators;
    let irrep = cfg.irrep()?;
    let b = &cfg.budgets;
    let res = pdecheck::operator_identity_residual(model, &irrep, &cfg.sim, b.identity_points, b.identity_sections, cfg.derivatives, cfg.sim.seed)?;
    let t = match cfg.derivatives {
        Derivatives::Analytic => cfg.tolerances.identity_analytic,
        Derivatives::Fd => cfg.tolerances.identity_fd,
    };
    Ok(vec![
        Check::bound(s, "operator_2_vs_H_kappa", res.operator_2_vs_h_kappa, t),
        Check::bound(s, "op2_vs_total_space", res.op2_vs_total_space, t),
        Check::bound(s, "op2_vs_conjugated", res.op2_vs_conjugated, t),
    ])
}

/// Start point and test profile shared by the MC suites.
pub fn default_start(model: &AnyModel) -> ChartPoint<NP> {
    ChartPoint { chart: 0, q: model.sigma_from_base(0, &[0.3, -0.2]) }
}

pub fn default_profile(model: &AnyModel) -> TestProfile {
    match model {
        AnyModel::Torus(t) if t.descriptor().known_scalars.is_some() => TestProfile::Bump { center: [0.0, 0.0], width: 0.8 },
        _ => TestProfile::Smooth { beta: 0.5, c: [0.4, -0.3] },
    }
}

/// Paired F1 / factorized-F2 estimate with common noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GirsanovResidual {
    pub f1: SemigroupEstimate,
    pub geometric: SemigroupEstimate,
    pub stochastic: SemigroupEstimate,
    /// Paired differences F1 − F2 for the two Jacobian forms.
    pub diff_geometric: SemigroupEstimate,
    pub diff_stochastic: SemigroupEstimate,
    /// Every paired difference was exactly zero.
    pub exact: bool,
}

pub fn girsanov_residual<M: BundleModel<NP, 1>>(
    model: &M,
    irrep: &Irrep,
    sim: &SimConfig,
    start: &ChartPoint<NP>,
    profile: &TestProfile,
) -> Result<GirsanovResidual> {
    sim.validate()?;
    let t = IrrepTables::new(irrep);
    let charge = irrep.label;
    let phi = |p: &ChartPoint<NP>| CVec::from_slice(&[model.test_function(profile, charge, p.chart, &p.q)]);
    let rows: Vec<[CVec; 3]> = sde::par_paths(sim.n_paths, |i| -> Result<[CVec; 3]> {
        let (e1, e2) = holonomy::run_girsanov_pair(model, &t, sim, start, i as u64, Multiplier::Euler)?;
        let w = |e: &holonomy::WeightedEnd<NP>, k: Kernel, f: JacobianForm| e.m.mul_vec(&phi(&e.point)).scale(C64::new(e.scalar_weight(k, f), 0.0));
        Ok([w(&e1, Kernel::F1, JacobianForm::Geometric), w(&e2, Kernel::F2, JacobianForm::Geometric), w(&e2, Kernel::F2, JacobianForm::Stochastic)])
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let d = t.irrep.dim;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    let diff = |k: usize| rows.iter().map(|r| r[0].sub(&r[k])).collect::<Vec<_>>();
    let (dg, ds) = (diff(1), diff(2));
    let exact = dg.iter().all(|v| v.max_abs() == 0.0);
    Ok(GirsanovResidual {
        f1: SemigroupEstimate::from_samples(&col(0), d),
        geometric: SemigroupEstimate::from_samples(&col(1), d),
        stochastic: SemigroupEstimate::from_samples(&col(2), d),
        diff_geometric: SemigroupEstimate::from_samples(&dg, d),
        diff_stochastic: SemigroupEstimate::from_samples(&ds, d),
        exact,
    })
}

fn worst_component(e: &SemigroupEstimate) -> (f64, f64) {
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for (v, s) in e.value.iter().zip(&e.stderr) {
        let z = if *s > 0.0 { v.norm() / s } else if v.norm() > 0.0 { f64::INFINITY } else { 0.0 };
        if z > best.2 {
            best = (v.norm(), *s, z);
        }
    }
    (best.0, best.1)
}

fn scale_of(e: &SemigroupEstimate) -> f64 {
    e.value.iter().fold(0.0_f64, |m, v| m.max(v.norm()))
}

fn girsanov_suite(cfg: &RunConfig, model: &AnyModel) -> Result<Vec<Check>> {
    let s = Suite::Girsanov;
    let sim = SimConfig { n_paths: cfg.budgets.girsanov_paths, n_steps: cfg.budgets.girsanov_steps, ..cfg.sim.clone() };
    let g = girsanov_residual(model, &cfg.irrep()?, &sim, &default_start(model), &default_profile(model))?;
    let scale = scale_of(&g.f1);
    let (r, sg) = worst_component(&g.diff_geometric);
    let (r2, ss) = worst_component(&g.diff_stochastic);
    let detail = serde_json::json!({
        "f1": g.f1.value.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
        "factorized": g.geometric.value.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
        "exact": g.exact,
    });
    Ok(vec![
        Check::statistical(s, "girsanov_residual", r, sg, scale, &cfg.tolerances).with_detail(detail),
        Check::statistical(s, "girsanov_residual_stochastic", r2, ss, scale, &cfg.tolerances),
    ])
}

/// Both sides of the smeared reduction identity at one start point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionResidual {
    pub lhs: SemigroupEstimate,
    pub rhs: SemigroupEstimate,
    pub comparison: greens::Comparison,
    /// Closed-form value where one exists (flat model).
    pub exact: Option<Vec<C64>>,
}

pub fn reduction_residual(
    model: &AnyModel,
    irrep: &Irrep,
    sim: &SimConfig,
    start: &ChartPoint<NP>,
    profile: &TestProfile,
    quad_order: usize,
) -> Result<ReductionResidual> {
    let t = IrrepTables::new(irrep);
    let charge = irrep.label;
    let pure = |p: &ChartPoint<NP>| CVec::from_slice(&[model.test_function(profile, charge, p.chart, &p.q)]);
    let mixed = |p: &ChartPoint<NP>| {
        let v: C64 = (charge - 1..=charge + 1).map(|c| model.test_function(profile, c, p.chart, &p.q)).sum();
        CVec::from_slice(&[v])
    };
    let lhs = greens::semigroup_apply_mc(model, &t, sim, Kernel::F2, JacobianForm::Geometric, Multiplier::Euler, start, &pure)?;
    let rhs = greens::group_projected_mc(model, &t, sim, start, quad_order, &mixed)?;
    let comparison = greens::compare(&lhs, &rhs);
    let exact = match (model, profile) {
        (AnyModel::Torus(m), TestProfile::Bump { center, width }) if m.descriptor().known_scalars.is_some() && m.potential == Potential::None => {
            let dx = m.displacement(start.q[0], center[0]);
            let dy = m.displacement(start.q[1], center[1]);
            Some(vec![greens::flat_closed_form(sim.mu2k(), sim.t_b - sim.t_a, charge as f64, *width, dx, dy, start.q[2])])
        }
        _ => None,
    };
    Ok(ReductionResidual { lhs, rhs, comparison, exact })
}

fn reduction_suite(cfg: &RunConfig, model: &AnyModel) -> Result<Vec<Check>> {
    let s = Suite::Reduction;
    let tol = &cfg.tolerances;
    let sim = SimConfig { n_paths: cfg.budgets.reduction_paths, n_steps: cfg.budgets.reduction_steps, ..cfg.sim.clone() };
    let r = reduction_residual(model, &cfg.irrep()?, &sim, &default_start(model), &default_profile(model), cfg.budgets.quad_order)?;
    let scale = scale_of(&r.lhs).max(scale_of(&r.rhs));
    let detail = serde_json::json!({
        "lhs": r.lhs.value.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
        "rhs": r.rhs.value.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
    });
    let mut out = vec![Check::statistical(s, "lhs_vs_rhs", r.comparison.residual, r.comparison.sigma, scale, tol).with_detail(detail)];
    if let Some(ex) = &r.exact {
        for (name, e) in [("lhs_vs_closed_form", &r.lhs), ("rhs_vs_closed_form", &r.rhs)] {
            let res = (e.value[0] - ex[0]).norm();
            out.push(Check::statistical(s, name, res, e.stderr[0], ex[0].norm(), tol));
        }
    }
    Ok(out)
}

/// Semigroup by Monte Carlo against the evolved H_κ system at a few base
/// points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeCrossCheck {
    /// (chart, base coordinates) of each start point.
    pub points: Vec<(usize, [f64; NB])>,
    pub pde: Vec<C64>,
    pub mc: Vec<SemigroupEstimate>,
    /// ‖mc − pde‖₂ / ‖pde‖₂ over the points.
    pub l2_relative: f64,
    /// ‖σ_mc‖₂ / ‖pde‖₂.
    pub sigma_relative: f64,
    pub active_nodes: usize,
    pub max_solver_iterations: usize,
}

/// Start points spread over the base: alternating charts on disk-chart
/// models, a small square on periodic ones.
pub fn cross_check_points(model: &AnyModel, n: usize) -> Vec<(usize, [f64; NB])> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let r = 1.1 * ((k as f64 + 0.5) / n as f64).sqrt();
            let x = [r * (golden * k as f64).cos(), r * (golden * k as f64).sin()];
            match model.base_domain(0) {
                BaseDomain::Disk { .. } => (k % 2, x),
                BaseDomain::PeriodicBox { .. } => (0, x),
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn mc_pde_cross_check(
    model: &AnyModel,
    irrep: &Irrep,
    sim: &SimConfig,
    profile: &TestProfile,
    points: &[(usize, [f64; NB])],
    h: f64,
    dt: f64,
) -> Result<PdeCrossCheck> {
    let t = IrrepTables::new(irrep);
    let charge = irrep.label;
    let grid = Grid::new(model, &t, h)?;
    let op = AssembledOperator::new(OperatorLabel::HKappa, model, &t, sim, &grid, Derivatives::Analytic)?;
    let section = TestSection { model, profile: profile.clone(), charge };
    let u0 = GridSection::from_section(&grid, &section);
    let (u, diag) = grid::evolve(&op, &grid, &u0, sim.t_b - sim.t_a, dt, TimeScheme::CrankNicolson)?;
    let phi = |p: &ChartPoint<NP>| CVec::from_slice(&[model.test_function(profile, charge, p.chart, &p.q)]);
    let mut pde = Vec::new();
    let mut mc = Vec::new();
    for (k, (chart, x)) in points.iter().enumerate() {
        pde.push(u.sample(&grid, model, &t, *chart, x)?.a[0]);
        let start = ChartPoint { chart: *chart, q: model.sigma_from_base(*chart, x) };
        let cfg = SimConfig { seed: sim.seed.wrapping_add(k as u64 * 0x9e37_79b9), ..sim.clone() };
        mc.push(greens::semigroup_apply_mc(model, &t, &cfg, Kernel::F3, JacobianForm::Geometric, Multiplier::Euler, &start, &phi)?);
    }
    let norm: f64 = pde.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let diff: f64 = pde.iter().zip(&mc).map(|(p, m)| (p - m.value[0]).norm_sqr()).sum::<f64>().sqrt();
    let sig: f64 = mc.iter().map(|m| m.stderr[0].powi(2)).sum::<f64>().sqrt();
    Ok(PdeCrossCheck {
        points: points.to_vec(),
        pde,
        mc,
        l2_relative: diff / norm,
        sigma_relative: sig / norm,
        active_nodes: grid.active.len(),
        max_solver_iterations: diag.max_solver_iterations,
    })
}

fn pde_suite(cfg: &RunConfig, model: &AnyModel) -> Result<Vec<Check>> {
    let b = &cfg.budgets;
    let n = b.pde_points.max(1);
    let sim = SimConfig { n_paths: (b.pde_paths / n).max(2), n_steps: b.pde_steps, ..cfg.sim.clone() };
    let profile = TestProfile::Smooth { beta: 0.5, c: [0.4, -0.3] };
    let r = mc_pde_cross_check(model, &cfg.irrep()?, &sim, &profile, &cross_check_points(model, n), b.pde_h, b.pde_dt)?;
    let tol = cfg.tolerances.pde_l2;
    let mut c = Check::bound(Suite::Pde, "mc_vs_pde_l2_relative", r.l2_relative, tol);
    c.sigma = Some(r.sigma_relative);
    // noise only inflates the L² discrepancy, so σ need only be small against the tolerance
    if r.sigma_relative > 0.5 * tol {
        c.status = Status::Inconclusive;
    }
    let detail = serde_json::json!({
        "pde": r.pde.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
        "mc": r.mc.iter().map(|m| [m.value[0].re, m.value[0].im]).collect::<Vec<_>>(),
        "active_nodes": r.active_nodes,
    });
    Ok(vec![c.with_detail(detail)])
}

/// Runs the configured suites. Failures inside a suite become FAIL checks;
/// only configuration problems are returned as errors.
pub fn run_suite(cfg: &RunConfig) -> Result<Verdict> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let mut suites: Vec<Suite> = cfg.suites.iter().flat_map(|s| s.expand()).collect();
    suites.dedup();
    let mut checks = Vec::new();
    for s in &suites {
        let r = match s {
            Suite::Geometry => geometry_suite(cfg, &model),
            Suite::Operators => operators_suite(cfg, &model),
            Suite::Girsanov => girsanov_suite(cfg, &model),
            Suite::Reduction => reduction_suite(cfg, &model),
            Suite::Pde => pde_suite(cfg, &model),
            Suite::All => unreachable!("expanded above"),
        };
        match r {
            Ok(c) => checks.extend(c),
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => {
                let mut c = Check::bound(*s, "error", f64::NAN, 0.0);
                c.detail = Some(Value::String(e.to_string()));
                checks.push(c);
            }
        }
    }
    let name = cfg.suites.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("+");
    Ok(Verdict::new(&name, cfg, checks))
}

/// Errors of a refinement study and the least-squares slope of ln err
/// against ln step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub stderr: Vec<f64>,
    pub slope: f64,
    /// Finest level against the closed form: (residual, σ).
    pub reference_check: (f64, f64),
}

pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Weak order in dt of the Σ scheme with a potential on the flat model:
/// E[exp(−c∫|x|²)] = 1/cosh(√(2c) T) for two base dimensions. All levels are
/// driven by the same fine Brownian increments; errors are taken against the
/// finest level `n_ref`.
pub fn weak_order_study(levels: &[usize], n_ref: usize, n_paths: usize, seed: u64) -> Result<ConvergenceStudy> {
    let c = 0.5;
    let t_end = 1.0;
    let mut model = models::TorusBundle::flat(40.0);
    model.potential = Potential::Quadratic { c };
    let sim = SimConfig { t_a: 0.0, t_b: t_end, n_steps: n_ref, n_paths, seed, ..SimConfig::default() };
    sim.validate()?;
    if levels.iter().any(|n| n_ref % n != 0) {
        return Err(Error::Config("weak-order levels must divide the reference level".into()));
    }
    let start = ChartPoint { chart: 0, q: [0.0; NP] };
    let dt_f = t_end / n_ref as f64;
    let run = |fine: &[[f64; NP]], n: usize| -> Result<f64> {
        let block = n_ref / n;
        let dt = t_end / n as f64;
        let mut p = start;
        let mut log_w = 0.0;
        for k in 0..n {
            let mut dw = [0.0; NP];
            for f in &fine[k * block..(k + 1) * block] {
                for i in 0..NP {
                    dw[i] += f[i];
                }
            }
            let rep = geometry::geometry_report(&model, &p, Derivatives::Analytic)?;
            log_w += rep.potential / (sim.mu2k() * sim.mass) * dt;
            p = sde::step_sigma(&model, &rep, &sim, dt, &dw, true)?.point;
        }
        Ok(log_w.exp())
    };
    let rows: Vec<Vec<f64>> = sde::par_paths(n_paths, |i| -> Result<Vec<f64>> {
        let noise = NoiseStream::new(seed, i as u64);
        let fine: Vec<[f64; NP]> = (0..n_ref).map(|s| noise.increments(s as u64, dt_f)).collect();
        let mut out = vec![run(&fine, n_ref)?];
        for &n in levels {
            out.push(run(&fine, n)?);
        }
        Ok(out)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let exact = 1.0 / ((2.0 * c).sqrt() * t_end).cosh();
    let col_stats = |f: &dyn Fn(&Vec<f64>) -> f64| {
        let v: Vec<f64> = rows.iter().map(f).collect();
        let (m, s) = stats(&v);
        (m, s / (v.len() as f64).sqrt())
    };
    let mut errors = Vec::new();
    let mut stderr = Vec::new();
    for k in 0..levels.len() {
        let (m, s) = col_stats(&|r| r[k + 1] - r[0]);
        errors.push(m);
        stderr.push(s);
    }
    let (mref, sref) = col_stats(&|r| r[0]);
    let steps: Vec<f64> = levels.iter().map(|n| t_end / *n as f64).collect();
    let slope = fit_slope(&steps, &errors);
    Ok(ConvergenceStudy { steps, errors, stderr, slope, reference_check: (mref - exact, sref) })
}

/// Order in h of the grid operator: Crank–Nicolson heat flow of a charged
/// Gaussian on the flat model against the closed form.
pub fn grid_order_study(hs: &[f64], lambda: i32) -> Result<ConvergenceStudy> {
    let model = models::TorusBundle::flat(8.0);
    let t = IrrepTables::new(&Irrep::u1(lambda));
    let sim = SimConfig::default();
    let (w, t_end, dt) = (0.5, 0.25, 0.005);
    let mut errors = Vec::new();
    for &h in hs {
        let grid = Grid::new(&model, &t, h)?;
        let op = AssembledOperator::new(OperatorLabel::HKappa, &model, &t, &sim, &grid, Derivatives::Analytic)?;
        let init = TestSection { model: &model, profile: TestProfile::Bump { center: [0.0, 0.0], width: w }, charge: lambda };
        let u0 = GridSection::from_section(&grid, &init);
        let (u, _) = grid::evolve(&op, &grid, &u0, t_end, dt, TimeScheme::CrankNicolson)?;
        let exact = FnSection {
            dim: 1,
            f: |_c: usize, x: &[f64; NB]| {
                let (dx, dy) = (model.displacement(x[0], 0.0), model.displacement(x[1], 0.0));
                CVec::from_slice(&[greens::flat_closed_form(sim.mu2k(), t_end, lambda as f64, w, dx, dy, 0.0)])
            },
        };
        let ex = GridSection::from_section(&grid, &exact);
        let wts = grid::quadrature_weights(&model, &grid, ScalarWeight::ScalProduct)?;
        errors.push(grid::relative_l2(&grid, &wts, &u, &ex));
    }
    let slope = fit_slope(hs, &errors);
    Ok(ConvergenceStudy { steps: hs.to_vec(), stderr: vec![0.0; hs.len()], errors, slope, reference_check: (0.0, 0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_json(r#"{"model": "flat", "budgetz": {}}"#).unwrap_err();
        assert!(e.to_string().contains("budgetz"), "{e}");
        let e = RunConfig::from_json(r#"{"sim": {"n_pathz": 3}}"#).unwrap_err();
        assert!(e.to_string().contains("n_pathz"), "{e}");
        assert!(RunConfig::from_json("{}").is_ok());
    }

    #[test]
    fn three_state_logic() {
        let tol = Tolerances::default();
        assert_eq!(Check::statistical(Suite::Reduction, "x", 0.01, 0.01, 1.0, &tol).status, Status::Pass);
        assert_eq!(Check::statistical(Suite::Reduction, "x", 0.05, 0.01, 1.0, &tol).status, Status::Fail);
        assert_eq!(Check::statistical(Suite::Reduction, "x", 0.01, 0.2, 1.0, &tol).status, Status::Inconclusive);
        assert_eq!(Check::statistical(Suite::Reduction, "x", 0.0, 0.0, 1.0, &tol).status, Status::Pass);
        assert_eq!(Check::bound(Suite::Geometry, "x", f64::NAN, 1.0).status, Status::Fail);
        assert_eq!(overall(&[Check::bound(Suite::Geometry, "x", 0.0, 1.0)]), Status::Pass);
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let s = to_json_string(&serde_json::json!({ "x": 0.1, "timestamp": "1" })).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(!strip_timestamp(&s).contains("timestamp"));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        assert!((fit_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
