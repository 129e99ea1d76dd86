//! Concrete bundle models in adapted coordinates `Q = (base…, fiber)`.
//!
//! * [`TorusBundle`]: U(1)-invariant metrics on T² × S¹,
//!   `G = b_ij dx^i dx^j + f² (dθ + a_i dx^i)²`, with `K = ∂_θ` and gauge
//!   `χ = θ − ε s(x, y)`. The flat product model and the warped test model are
//!   instances, and JSON model files deserialize into it.
//! * [`HopfModel`]: the round S³ of radius r with the Hopf U(1) action, in two
//!   stereographic charts of the S²(r/2) base times a fiber angle,
//!
//! ```text
//!   z₁ = r e^{iθ}/√ρ,  z₂ = r w e^{iθ}/√ρ,  w = u + iv,  ρ = 1 + |w|²
//!   G  = r² [ (du² + dv²)/ρ² + (dθ + (u dv − v du)/ρ)² ]
//!   chart S: w' = 1/w,  θ' = θ + arg w   (same formula, z₁ ↔ z₂)
//! ```

use crate::error::{Error, Result};
use crate::group::GroupKind;
use crate::jet::Scalar;
use crate::linalg::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const NP: usize = 3;
pub const NG: usize = 1;

/// A point of 𝒫 (or of Σ) in a chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartPoint<const N: usize> {
    pub chart: usize,
    pub q: [f64; N],
}

/// Metric, Killing fields `K^A_μ` and gauge functions `χ^α` at a point.
#[derive(Clone, Copy, Debug)]
pub struct Fields<S, const P: usize, const G: usize> {
    pub g: Mat<S, P, P>,
    pub k: Mat<S, P, G>,
    pub chi: [S; G],
}

/// Shape of the initial data used by the semigroup checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestProfile {
    /// Gaussian bump on the base (torus models, minimum-image distance).
    Bump { center: [f64; 2], width: f64 },
    /// `exp(β |z₁|²/r² + Re(c z₁ z̄₂)/r²)` on Hopf, `exp(β (cos kx + cos ky))` on tori.
    Smooth { beta: f64, c: [f64; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub n_total: usize,
    pub n_group: usize,
    pub n_charts: usize,
    pub group: GroupKind,
    pub analytic: bool,
    /// Known constant scalars in the sign convention used by `geometry`:
    /// [R_P, HR, R_G, F2, jnorm2, Jtilde].
    pub known_scalars: Option<[f64; 6]>,
}

/// Region of base coordinates covered by a chart, used by the grid solvers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaseDomain {
    PeriodicBox { period: f64 },
    Disk { radius: f64 },
}

pub trait BundleModel<const P: usize, const G: usize>: Send + Sync {
    fn descriptor(&self) -> ModelDescriptor;

    fn group(&self) -> GroupKind;

    fn fields<S: Scalar>(&self, chart: usize, q: &[S; P]) -> Fields<S, P, G>;

    fn metric<S: Scalar>(&self, chart: usize, q: &[S; P]) -> Mat<S, P, P> {
        self.fields(chart, q).g
    }

    /// Group-invariant potential V.
    fn potential(&self, _chart: usize, _q: &[f64; P]) -> f64 {
        0.0
    }

    /// Right action F(Q, a).
    fn action(&self, chart: usize, q: &[f64; P], a: &[f64; G]) -> [f64; P];

    /// Inverse of (q*, a) ↦ F(q*, a): the Σ point on the orbit of `q` and the
    /// group coordinates with `q = F(q*, a)`.
    fn split<S: Scalar>(&self, chart: usize, q: &[S; P]) -> ([S; P], [S; G]);

    fn project_sigma(&self, chart: usize, q: &[f64; P]) -> [f64; P] {
        self.split(chart, q).0
    }

    /// The Σ point over base coordinates `x` (length P − G).
    fn sigma_from_base(&self, chart: usize, x: &[f64]) -> [f64; P];

    /// Chart change when `q` leaves its preferred region: new chart and the
    /// same point of 𝒫 in its coordinates.
    fn rechart(&self, chart: usize, q: &[f64; P]) -> Option<(usize, [f64; P])>;

    /// The same point in the overlapping chart, wherever it lies. `None` for
    /// single-chart models.
    fn other_chart(&self, _chart: usize, _q: &[f64; P]) -> Option<(usize, [f64; P])> {
        None
    }

    fn base_domain(&self, chart: usize) -> BaseDomain;

    /// A Σ point from uniform variates.
    fn sample_sigma(&self, uniform: &mut dyn FnMut() -> f64) -> ChartPoint<P>;

    /// Equivariant test function of the given charge: φ̃(p·g) = D(g)ᵀ φ̃(p).
    fn test_function(&self, profile: &TestProfile, charge: i32, chart: usize, q: &[f64; P]) -> C64;
}

/// Σ c_k cos(2π k·x/L) + s_k sin(2π k·x/L) on the periodic box.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPoly {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub kx: i32,
    pub ky: i32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        TrigPoly { constant: c, terms: vec![] }
    }

    pub fn eval<S: Scalar>(&self, period: f64, x: S, y: S) -> S {
        let mut acc = S::cst(self.constant);
        let w = 2.0 * PI / period;
        for t in &self.terms {
            let arg = x * (w * t.kx as f64) + y * (w * t.ky as f64);
            if t.cos != 0.0 {
                acc += arg.cos() * t.cos;
            }
            if t.sin != 0.0 {
                acc += arg.sin() * t.sin;
            }
        }
        acc
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|t| t.cos == 0.0 && t.sin == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    None,
    /// V = −c (x² + y²) on tori (minimum image), V = −c |z₂|²/r² on Hopf.
    Quadratic { c: f64 },
}

/// U(1)-invariant metric on the periodic box × S¹.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusBundle {
    pub name: String,
    pub period: f64,
    pub base_metric: [[TrigPoly; 2]; 2],
    pub fiber_length: TrigPoly,
    pub connection: [TrigPoly; 2],
    #[serde(default)]
    pub gauge_tilt: TrigPoly,
    #[serde(default = "no_potential")]
    pub potential: Potential,
}

fn no_potential() -> Potential {
    Potential::None
}

impl TorusBundle {
    pub fn flat(period: f64) -> Self {
        TorusBundle {
            name: "flat".into(),
            period,
            base_metric: [[TrigPoly::constant(1.0), TrigPoly::default()], [TrigPoly::default(), TrigPoly::constant(1.0)]],
            fiber_length: TrigPoly::constant(1.0),
            connection: [TrigPoly::default(), TrigPoly::default()],
            gauge_tilt: TrigPoly::default(),
            potential: Potential::None,
        }
    }

    /// Non-constant fiber length and a connection with curvature: j_II ≠ 0,
    /// ‖j‖² ≠ 0, ℱ ≠ 0.
    pub fn warped() -> Self {
        let t = |kx, ky, c, s| TrigTerm { kx, ky, cos: c, sin: s };
        TorusBundle {
            name: "warped".into(),
            period: 2.0 * PI,
            base_metric: [[TrigPoly::constant(1.0), TrigPoly::default()], [TrigPoly::default(), TrigPoly::constant(1.0)]],
            fiber_length: TrigPoly { constant: 1.0, terms: vec![t(1, 0, 0.3, 0.0), t(0, 1, 0.0, 0.2)] },
            connection: [
                TrigPoly { constant: 0.0, terms: vec![t(0, 1, 0.4, 0.0)] },
                TrigPoly { constant: 0.0, terms: vec![t(1, 0, 0.0, 0.5), t(1, 1, 0.1, 0.0)] },
            ],
            gauge_tilt: TrigPoly::default(),
            potential: Potential::None,
        }
    }

    pub fn with_tilt(mut self, eps: f64) -> Self {
        if eps != 0.0 {
            self.gauge_tilt = TrigPoly {
                constant: 0.0,
                terms: vec![TrigTerm { kx: 1, ky: 0, cos: 0.0, sin: eps }, TrigTerm { kx: 1, ky: 1, cos: 0.5 * eps, sin: 0.0 }],
            };
        }
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TorusBundle = serde_json::from_str(text).map_err(|e| Error::Config(format!("model file: {e}")))?;
        if !(m.period > 0.0) {
            return Err(Error::Config("model file: `period` must be positive".into()));
        }
        Ok(m)
    }

    fn tilt<S: Scalar>(&self, x: S, y: S) -> S {
        self.gauge_tilt.eval(self.period, x, y)
    }

    fn wrap(&self, x: f64) -> f64 {
        let l = self.period;
        (x + 0.5 * l).rem_euclid(l) - 0.5 * l
    }

    /// Minimum-image displacement.
    pub fn displacement(&self, x: f64, c: f64) -> f64 {
        self.wrap(x - c)
    }
}

impl BundleModel<NP, NG> for TorusBundle {
    fn descriptor(&self) -> ModelDescriptor {
        let flat = self.base_metric[0][1].is_zero()
            && self.base_metric[1][0].is_zero()
            && self.base_metric[0][0].terms.is_empty()
            && self.base_metric[1][1].terms.is_empty()
            && self.fiber_length.terms.is_empty()
            && self.connection.iter().all(|c| c.is_zero());
        ModelDescriptor {
            name: self.name.clone(),
            n_total: NP,
            n_group: NG,
            n_charts: 1,
            group: GroupKind::U1,
            analytic: true,
            known_scalars: if flat { Some([0.0; 6]) } else { None },
        }
    }

    fn group(&self) -> GroupKind {
        GroupKind::U1
    }

    fn fields<S: Scalar>(&self, _chart: usize, q: &[S; NP]) -> Fields<S, NP, NG> {
        let (x, y) = (q[0], q[1]);
        let l = self.period;
        let f = self.fiber_length.eval(l, x, y);
        let f2 = f * f;
        let a = [self.connection[0].eval(l, x, y), self.connection[1].eval(l, x, y)];
        let mut g = [[S::zero(); NP]; NP];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] = self.base_metric[i][j].eval(l, x, y) + f2 * a[i] * a[j];
            }
            g[i][2] = f2 * a[i];
            g[2][i] = f2 * a[i];
        }
        g[2][2] = f2;
        let k = [[S::zero()], [S::zero()], [S::one()]];
        let chi = [q[2] - self.tilt(x, y)];
        Fields { g, k, chi }
    }

    fn potential(&self, _chart: usize, q: &[f64; NP]) -> f64 {
        match self.potential {
            Potential::None => 0.0,
            Potential::Quadratic { c } => {
                let (x, y) = (self.wrap(q[0]), self.wrap(q[1]));
                -c * (x * x + y * y)
            }
        }
    }

    fn action(&self, _chart: usize, q: &[f64; NP], a: &[f64; NG]) -> [f64; NP] {
        [q[0], q[1], q[2] + a[0]]
    }

    fn split<S: Scalar>(&self, _chart: usize, q: &[S; NP]) -> ([S; NP], [S; NG]) {
        let s = self.tilt(q[0], q[1]);
        ([q[0], q[1], s], [q[2] - s])
    }

    fn sigma_from_base(&self, _chart: usize, x: &[f64]) -> [f64; NP] {
        [x[0], x[1], self.tilt(x[0], x[1])]
    }

    fn rechart(&self, chart: usize, q: &[f64; NP]) -> Option<(usize, [f64; NP])> {
        let h = 0.5 * self.period;
        if q[0].abs() > h || q[1].abs() > h {
            Some((chart, [self.wrap(q[0]), self.wrap(q[1]), q[2]]))
        } else {
            None
        }
    }

    fn base_domain(&self, _chart: usize) -> BaseDomain {
        BaseDomain::PeriodicBox { period: self.period }
    }

    fn sample_sigma(&self, uniform: &mut dyn FnMut() -> f64) -> ChartPoint<NP> {
        let x = (uniform() - 0.5) * self.period;
        let y = (uniform() - 0.5) * self.period;
        ChartPoint { chart: 0, q: self.sigma_from_base(0, &[x, y]) }
    }

    fn test_function(&self, profile: &TestProfile, charge: i32, _chart: usize, q: &[f64; NP]) -> C64 {
        let base = match profile {
            TestProfile::Bump { center, width } => {
                let dx = self.displacement(q[0], center[0]);
                let dy = self.displacement(q[1], center[1]);
                (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
            }
            TestProfile::Smooth { beta, c } => {
                let w = 2.0 * PI / self.period;
                (beta * ((w * q[0]).cos() + (w * q[1]).cos()) + c[0] * (w * q[0]).sin() + c[1] * (w * (q[0] + q[1])).cos()).exp()
            }
        };
        C64::from_polar(base, charge as f64 * q[2])
    }
}

/// Round S³ of radius r with the Hopf action.
#[derive(Clone, Debug, PartialEq)]
pub struct HopfModel {
    pub radius: f64,
    pub tilt: f64,
    pub potential: Potential,
    /// Chart switch threshold on |w|.
    pub switch_radius: f64,
}

impl HopfModel {
    pub fn new(radius: f64) -> Self {
        HopfModel { radius, tilt: 0.0, potential: Potential::None, switch_radius: 2.0 }
    }

    pub fn with_tilt(mut self, eps: f64) -> Self {
        self.tilt = eps;
        self
    }

    fn s<S: Scalar>(&self, u: S, v: S) -> S {
        let rho = u * u + v * v + 1.0;
        (u + u * v * 0.5 - v * 0.3) / rho
    }

    /// (z₁, z₂) ∈ ℂ² of a chart point.
    pub fn embed(&self, chart: usize, q: &[f64; NP]) -> (C64, C64) {
        let (u, v, th) = (q[0], q[1], q[2]);
        let rho = 1.0 + u * u + v * v;
        let pre = self.radius / rho.sqrt();
        let e = C64::from_polar(pre, th);
        let w = C64::new(u, v);
        if chart == 0 {
            (e, w * e)
        } else {
            (w * e, e)
        }
    }

    /// Inverse of [`embed`](Self::embed) into the chart with the larger
    /// component as denominator.
    pub fn chart_of(&self, z1: C64, z2: C64) -> ChartPoint<NP> {
        if z1.norm() >= z2.norm() {
            let w = z2 / z1;
            ChartPoint { chart: 0, q: [w.re, w.im, z1.arg()] }
        } else {
            let w = z1 / z2;
            ChartPoint { chart: 1, q: [w.re, w.im, z2.arg()] }
        }
    }
}

impl BundleModel<NP, NG> for HopfModel {
    fn descriptor(&self) -> ModelDescriptor {
        let r2 = self.radius * self.radius;
        ModelDescriptor {
            name: "hopf".into(),
            n_total: NP,
            n_group: NG,
            n_charts: 2,
            group: GroupKind::U1,
            analytic: true,
            known_scalars: Some([-6.0 / r2, -8.0 / r2, 0.0, 8.0 / r2, 0.0, 0.0]),
        }
    }

    fn group(&self) -> GroupKind {
        GroupKind::U1
    }

    fn fields<S: Scalar>(&self, _chart: usize, q: &[S; NP]) -> Fields<S, NP, NG> {
        let (u, v) = (q[0], q[1]);
        let r2 = self.radius * self.radius;
        let rho = u * u + v * v + 1.0;
        let ir = rho.recip();
        let a = [-v * ir, u * ir, S::one()];
        let b = ir * ir * r2;
        let mut g = [[S::zero(); NP]; NP];
        for i in 0..NP {
            for j in 0..NP {
                g[i][j] = a[i] * a[j] * r2;
            }
        }
        g[0][0] += b;
        g[1][1] += b;
        let k = [[S::zero()], [S::zero()], [S::one()]];
        let chi = [q[2] - self.s(u, v) * self.tilt];
        Fields { g, k, chi }
    }

    fn potential(&self, chart: usize, q: &[f64; NP]) -> f64 {
        match self.potential {
            Potential::None => 0.0,
            Potential::Quadratic { c } => {
                let (_, z2) = self.embed(chart, q);
                -c * z2.norm_sqr() / (self.radius * self.radius)
            }
        }
    }

    fn action(&self, _chart: usize, q: &[f64; NP], a: &[f64; NG]) -> [f64; NP] {
        [q[0], q[1], q[2] + a[0]]
    }

    fn split<S: Scalar>(&self, _chart: usize, q: &[S; NP]) -> ([S; NP], [S; NG]) {
        let s = self.s(q[0], q[1]) * self.tilt;
        ([q[0], q[1], s], [q[2] - s])
    }

    fn sigma_from_base(&self, _chart: usize, x: &[f64]) -> [f64; NP] {
        [x[0], x[1], self.tilt * self.s(x[0], x[1])]
    }

    fn rechart(&self, chart: usize, q: &[f64; NP]) -> Option<(usize, [f64; NP])> {
        let n2 = q[0] * q[0] + q[1] * q[1];
        if n2 <= self.switch_radius * self.switch_radius {
            return None;
        }
        self.other_chart(chart, q)
    }

    fn other_chart(&self, chart: usize, q: &[f64; NP]) -> Option<(usize, [f64; NP])> {
        let w = C64::new(q[0], q[1]);
        if w.norm_sqr() == 0.0 {
            return None;
        }
        let wi = w.inv();
        Some((1 - chart, [wi.re, wi.im, q[2] + w.arg()]))
    }

    fn base_domain(&self, _chart: usize) -> BaseDomain {
        BaseDomain::Disk { radius: self.switch_radius }
    }

    fn sample_sigma(&self, uniform: &mut dyn FnMut() -> f64) -> ChartPoint<NP> {
        // uniform on S³ via four normals, then the Σ point over its base point
        let mut n = [0.0; 4];
        for k in 0..2 {
            let (u1, u2) = (uniform().max(1e-300), uniform());
            let r = (-2.0 * u1.ln()).sqrt();
            n[2 * k] = r * (2.0 * PI * u2).cos();
            n[2 * k + 1] = r * (2.0 * PI * u2).sin();
        }
        let p = self.chart_of(C64::new(n[0], n[1]), C64::new(n[2], n[3]));
        ChartPoint { chart: p.chart, q: self.sigma_from_base(p.chart, &p.q[..2]) }
    }

    fn test_function(&self, profile: &TestProfile, charge: i32, chart: usize, q: &[f64; NP]) -> C64 {
        let (z1, z2) = self.embed(chart, q);
        let r = self.radius;
        let (beta, c) = match profile {
            TestProfile::Smooth { beta, c } => (*beta, C64::new(c[0], c[1])),
            TestProfile::Bump { center, width } => (0.5 / (width * width), C64::new(center[0], center[1])),
        };
        let env = (beta * z1.norm_sqr() / (r * r) + (c * z1 * z2.conj()).re / (r * r)).exp();
        let z = z1 / r;
        let pw = if charge >= 0 { z.powi(charge) } else { z.conj().powi(-charge) };
        pw * env
    }
}

/// The built-in models behind one type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Torus(TorusBundle),
    Hopf(HopfModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default)]
    pub tilt: f64,
    /// Flat box side; `None` means 20·√(μ²κ T).
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default = "no_potential")]
    pub potential: Potential,
    #[serde(default)]
    pub file: Option<String>,
}

fn one() -> f64 {
    1.0
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { radius: 1.0, tilt: 0.0, period: None, potential: Potential::None, file: None }
    }
}

/// Builds a model by name: `flat`, `hopf`, `warped` or `file`.
pub fn make_model(name: &str, params: &ModelParams, mu2kappa_t: f64) -> Result<AnyModel> {
    match name {
        "flat" => {
            let l = params.period.unwrap_or(20.0 * mu2kappa_t.max(1e-12).sqrt());
            let mut m = TorusBundle::flat(l).with_tilt(params.tilt);
            m.potential = params.potential.clone();
            Ok(AnyModel::Torus(m))
        }
        "warped" => {
            let mut m = TorusBundle::warped().with_tilt(params.tilt);
            m.potential = params.potential.clone();
            Ok(AnyModel::Torus(m))
        }
        "hopf" => {
            if !(params.radius > 0.0) {
                return Err(Error::Config("hopf radius must be positive".into()));
            }
            let mut m = HopfModel::new(params.radius).with_tilt(params.tilt);
            m.potential = params.potential.clone();
            Ok(AnyModel::Hopf(m))
        }
        "file" => {
            let path = params.file.as_ref().ok_or_else(|| Error::Config("model `file` needs a model file path".into()))?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("model file {path}: {e}")))?;
            Ok(AnyModel::Torus(TorusBundle::from_json(&text)?))
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Torus($m) => $e,
            AnyModel::Hopf($m) => $e,
        }
    };
}

impl BundleModel<NP, NG> for AnyModel {
    fn descriptor(&self) -> ModelDescriptor {
        delegate!(self, m => m.descriptor())
    }
    fn group(&self) -> GroupKind {
        GroupKind::U1
    }
    fn fields<S: Scalar>(&self, chart: usize, q: &[S; NP]) -> Fields<S, NP, NG> {
        delegate!(self, m => m.fields(chart, q))
    }
    fn potential(&self, chart: usize, q: &[f64; NP]) -> f64 {
        delegate!(self, m => m.potential(chart, q))
    }
    fn action(&self, chart: usize, q: &[f64; NP], a: &[f64; NG]) -> [f64; NP] {
        delegate!(self, m => m.action(chart, q, a))
    }
    fn split<S: Scalar>(&self, chart: usize, q: &[S; NP]) -> ([S; NP], [S; NG]) {
        delegate!(self, m => m.split(chart, q))
    }
    fn sigma_from_base(&self, chart: usize, x: &[f64]) -> [f64; NP] {
        delegate!(self, m => m.sigma_from_base(chart, x))
    }
    fn rechart(&self, chart: usize, q: &[f64; NP]) -> Option<(usize, [f64; NP])> {
        delegate!(self, m => m.rechart(chart, q))
    }
    fn other_chart(&self, chart: usize, q: &[f64; NP]) -> Option<(usize, [f64; NP])> {
        delegate!(self, m => m.other_chart(chart, q))
    }
    fn base_domain(&self, chart: usize) -> BaseDomain {
        delegate!(self, m => m.base_domain(chart))
    }
    fn sample_sigma(&self, uniform: &mut dyn FnMut() -> f64) -> ChartPoint<NP> {
        delegate!(self, m => m.sample_sigma(uniform))
    }
    fn test_function(&self, profile: &TestProfile, charge: i32, chart: usize, q: &[f64; NP]) -> C64 {
        delegate!(self, m => m.test_function(profile, charge, chart, q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_metric_is_identity() {
        let m = TorusBundle::flat(10.0);
        let f = m.fields(0, &[0.3, -1.0, 0.0]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(f.g[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(m.descriptor().known_scalars, Some([0.0; 6]));
    }

    #[test]
    fn hopf_metric_matches_embedding() {
        let m = HopfModel::new(1.3);
        for chart in 0..2 {
            let q = [0.4, -0.7, 0.9];
            let g = m.fields(chart, &q).g;
            let h = 1e-6;
            let mut jac = [[C64::new(0.0, 0.0); 2]; 3];
            for a in 0..3 {
                let mut qp = q;
                let mut qm = q;
                qp[a] += h;
                qm[a] -= h;
                let (p1, p2) = m.embed(chart, &qp);
                let (m1, m2) = m.embed(chart, &qm);
                jac[a] = [(p1 - m1) / (2.0 * h), (p2 - m2) / (2.0 * h)];
            }
            for a in 0..3 {
                for b in 0..3 {
                    let e: f64 = (0..2).map(|k| (jac[a][k].conj() * jac[b][k]).re).sum();
                    assert!((e - g[a][b]).abs() < 1e-8, "chart {chart} ({a},{b}) {e} vs {}", g[a][b]);
                }
            }
        }
    }

    #[test]
    fn hopf_rechart_preserves_the_point() {
        let m = HopfModel::new(1.0);
        let q = [2.5, -0.4, 0.3];
        let (c, q2) = m.rechart(0, &q).unwrap();
        assert_eq!(c, 1);
        let (a1, a2) = m.embed(0, &q);
        let (b1, b2) = m.embed(1, &q2);
        assert!((a1 - b1).norm() < 1e-14 && (a2 - b2).norm() < 1e-14);
        let (c3, q3) = m.rechart(1, &[3.0, 1.0, -0.2]).unwrap();
        assert_eq!(c3, 0);
        let (a1, a2) = m.embed(1, &[3.0, 1.0, -0.2]);
        let (b1, b2) = m.embed(0, &q3);
        assert!((a1 - b1).norm() < 1e-14 && (a2 - b2).norm() < 1e-14);
    }

    #[test]
    fn hopf_test_function_is_equivariant_and_global() {
        let m = HopfModel::new(1.0);
        let prof = TestProfile::Smooth { beta: 0.7, c: [0.3, -0.2] };
        let q = [0.5, 0.2, 0.1];
        let alpha = 0.37;
        for charge in [-1, 0, 1, 2] {
            let f0 = m.test_function(&prof, charge, 0, &q);
            let f1 = m.test_function(&prof, charge, 0, &m.action(0, &q, &[alpha]));
            assert!((f1 - f0 * C64::from_polar(1.0, charge as f64 * alpha)).norm() < 1e-14);
            let (c, q2) = m.rechart(0, &[2.5, 0.3, 0.2]).unwrap();
            let a = m.test_function(&prof, charge, 0, &[2.5, 0.3, 0.2]);
            let b = m.test_function(&prof, charge, c, &q2);
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn file_model_roundtrip_and_unknown_key() {
        let w = TorusBundle::warped();
        let text = serde_json::to_string(&w).unwrap();
        assert_eq!(TorusBundle::from_json(&text).unwrap(), w);
        let bad = text.replacen("\"period\"", "\"perod\"", 1);
        let err = TorusBundle::from_json(&bad).unwrap_err();
        assert!(format!("{err}").contains("perod"));
    }

    #[test]
    fn unknown_model_name() {
        assert_eq!(make_model("klein", &ModelParams::default(), 0.5), Err(Error::UnknownModel("klein".into())));
    }
}
