//! Differential generators of the reduced semigroups, assembled pointwise from
//! the reduction tensors, and the identities between them.
//!
//! Sections ψ of V*_λ over Σ are functions of the base coordinates x (the
//! first `NB` chart coordinates), extended off Σ independently of the fiber
//! coordinate, so `∂_θ ψ = 0` and every operator takes the local form
//!
//! ```text
//!   L ψ = a^{ij} ∂_i∂_j ψ + b^i ∂_i ψ + c ψ          (a, b, c: d_λ×d_λ)
//! ```
//!
//! Operators, with m = μ²κ and W = V/(m·mass):
//!
//! ```text
//!   op2        ½m{[h∂∂ − h^HΓ∂ + 2(j_I + j_II)∂ + 2W/m] + 2(N G⁻¹Λᵀ)^{Aα}J_α∂_A
//!                 − c^α J_α + (Λ G⁻¹ Λᵀ)^{ασ} J_α J_σ}
//!   operator_2 ½m{[h∂∂ − h^HΓ∂ + 2 j_I ∂ + 2W/m − ¼J̃] + 2(N G⁻¹Λᵀ)J∂
//!                 − c J + Λ^α_C γ^{μν}(∇̃_{K_μ}K_ν)^C J_α + (Λ G⁻¹ Λᵀ) J J}
//!   Δ^{E*}     h^{EC}{[∂_E∂_C + ∂_C N^B_E ∂_B − ^HΓ^B_EC N^D_B ∂_D]
//!                 + [−2𝒜^α_E ∂_C − 𝒜^α_B ∂_E N^B_C − ∂_E 𝒜^α_C + ^HΓ^B_EC N^D_B 𝒜^α_D] J_α
//!                 + 𝒜^β_E 𝒜^α_C J_β J_α}
//!   H_κ        ½m[Δ^{E*} + γ^{μν}J_μJ_ν] + (W − ⅛ m J̃)
//!   total      ½m Δ_𝒫 ψ̃ + W ψ̃,   ψ̃(Q) = D(a(Q))ᵀ ψ(q*(Q))
//! ```
//!
//! op2 generates the first kernel, operator_2 the Girsanov-transformed one;
//! operator_2 = H_κ and op2 = γ^{-1/4} ∘ operator_2 ∘ γ^{1/4}.

pub mod grid;

use crate::cmat::{CMat, CVec, C64, MAXD};
use crate::error::{Error, Result};
use crate::geometry::{self, Derivatives, GeometryReport};
use crate::group::{GroupKind, Irrep};
use crate::holonomy::IrrepTables;
use crate::jet::{Jet2, Scalar};
use crate::linalg;
use crate::models::{BundleModel, ChartPoint, NG, NP};
use crate::sde::{NoiseStream, SimConfig};
use serde::{Deserialize, Serialize};

/// Base dimension.
pub const NB: usize = NP - NG;

/// Step of the fourth-order difference stencils for sections without jets.
pub const SECTION_FD_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorLabel {
    #[serde(rename = "op2")]
    Op2,
    #[serde(rename = "operator_2")]
    Operator2,
    #[serde(rename = "operator_3_plus_casimir")]
    Operator3PlusCasimir,
    #[serde(rename = "H_kappa")]
    HKappa,
    #[serde(rename = "total_space")]
    TotalSpace,
}

impl OperatorLabel {
    pub const ALL: [OperatorLabel; 5] =
        [OperatorLabel::Op2, OperatorLabel::Operator2, OperatorLabel::Operator3PlusCasimir, OperatorLabel::HKappa, OperatorLabel::TotalSpace];

    pub fn as_str(&self) -> &'static str {
        match self {
            OperatorLabel::Op2 => "op2",
            OperatorLabel::Operator2 => "operator_2",
            OperatorLabel::Operator3PlusCasimir => "operator_3_plus_casimir",
            OperatorLabel::HKappa => "H_kappa",
            OperatorLabel::TotalSpace => "total_space",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown operator label `{s}`")))
    }
}

/// Value, gradient and Hessian of a section at a base point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectionJet {
    pub v: CVec,
    pub g: [CVec; NB],
    pub h: [[CVec; NB]; NB],
}

impl SectionJet {
    pub fn zeros(d: usize) -> Self {
        let z = CVec::zeros(d);
        SectionJet { v: z, g: [z; NB], h: [[z; NB]; NB] }
    }

    /// Product with a real scalar jet `s` (value, gradient, Hessian).
    pub fn scale_by(&self, s: &Jet2<NB>) -> Self {
        let r = |x: f64| C64::new(x, 0.0);
        let mut out = SectionJet::zeros(self.v.d);
        out.v = self.v.scale(r(s.v));
        for i in 0..NB {
            out.g[i] = self.g[i].scale(r(s.v)).add(&self.v.scale(r(s.g[i])));
            for j in 0..NB {
                out.h[i][j] = self.h[i][j]
                    .scale(r(s.v))
                    .add(&self.g[i].scale(r(s.g[j])))
                    .add(&self.g[j].scale(r(s.g[i])))
                    .add(&self.v.scale(r(s.h[i][j])));
            }
        }
        out
    }
}

/// A section of V*_λ given chart by chart in base coordinates.
pub trait Section: Sync {
    fn dim(&self) -> usize;

    fn value(&self, chart: usize, x: &[f64; NB]) -> CVec;

    fn jet(&self, chart: usize, x: &[f64; NB]) -> SectionJet {
        fd_jet(&|y| self.value(chart, y), x, SECTION_FD_STEP)
    }
}

/// Fourth-order central differences of `f` at `x`.
pub fn fd_jet(f: &dyn Fn(&[f64; NB]) -> CVec, x: &[f64; NB], h: f64) -> SectionJet {
    let at = |dx: [f64; NB]| {
        let mut y = *x;
        for i in 0..NB {
            y[i] += dx[i];
        }
        f(&y)
    };
    let w1 = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
    let w2 = [(-2.0, -1.0), (-1.0, 16.0), (0.0, -30.0), (1.0, 16.0), (2.0, -1.0)];
    let v = f(x);
    let d = v.d;
    let mut out = SectionJet::zeros(d);
    out.v = v;
    for i in 0..NB {
        let mut g = CVec::zeros(d);
        let mut hh = CVec::zeros(d);
        for (s, w) in w1 {
            let mut e = [0.0; NB];
            e[i] = s * h;
            g = g.add(&at(e).scale(C64::new(w / (12.0 * h), 0.0)));
        }
        for (s, w) in w2 {
            let mut e = [0.0; NB];
            e[i] = s * h;
            hh = hh.add(&at(e).scale(C64::new(w / (12.0 * h * h), 0.0)));
        }
        out.g[i] = g;
        out.h[i][i] = hh;
        for j in 0..i {
            let mut m = CVec::zeros(d);
            for (si, wi) in w1 {
                for (sj, wj) in w1 {
                    let mut e = [0.0; NB];
                    e[i] = si * h;
                    e[j] = sj * h;
                    m = m.add(&at(e).scale(C64::new(wi * wj / (144.0 * h * h), 0.0)));
                }
            }
            out.h[i][j] = m;
            out.h[j][i] = m;
        }
    }
    out
}

/// One Fourier term `coef · cos(k·x + phase)` of component `comp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionTerm {
    pub comp: usize,
    pub k: [f64; NB],
    pub phase: f64,
    pub coef: C64,
}

/// Trigonometric polynomial section with exact derivatives (same expression
/// in every chart).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigSection {
    pub dim: usize,
    pub terms: Vec<SectionTerm>,
}

impl TrigSection {
    /// Random section with `n_terms` terms per component and integer wave
    /// numbers up to `kmax`.
    pub fn random(dim: usize, n_terms: usize, kmax: i32, uniform: &mut dyn FnMut() -> f64) -> Self {
        let mut terms = Vec::new();
        for comp in 0..dim {
            for _ in 0..n_terms {
                let mut k = [0.0; NB];
                for ki in k.iter_mut() {
                    *ki = ((uniform() * (2 * kmax + 1) as f64).floor() as i32 - kmax) as f64;
                }
                let phase = 2.0 * std::f64::consts::PI * uniform();
                let coef = C64::new(2.0 * uniform() - 1.0, 2.0 * uniform() - 1.0);
                terms.push(SectionTerm { comp, k, phase, coef });
            }
        }
        TrigSection { dim, terms }
    }
}

impl Section for TrigSection {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _chart: usize, x: &[f64; NB]) -> CVec {
        self.jet(0, x).v
    }

    fn jet(&self, _chart: usize, x: &[f64; NB]) -> SectionJet {
        let xs = Jet2::<NB>::vars(x);
        let mut out = SectionJet::zeros(self.dim);
        for t in &self.terms {
            let mut arg = Jet2::constant(t.phase);
            for i in 0..NB {
                arg = arg + xs[i] * t.k[i];
            }
            let c = arg.cos();
            out.v.a[t.comp] += t.coef * c.v;
            for i in 0..NB {
                out.g[i].a[t.comp] += t.coef * c.g[i];
                for j in 0..NB {
                    out.h[i][j].a[t.comp] += t.coef * c.h[i][j];
                }
            }
        }
        out
    }
}

/// A section given by a closure.
pub struct FnSection<F: Fn(usize, &[f64; NB]) -> CVec + Sync> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(usize, &[f64; NB]) -> CVec + Sync> Section for FnSection<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, chart: usize, x: &[f64; NB]) -> CVec {
        (self.f)(chart, x)
    }
}

/// The restriction to Σ of a model's equivariant test function.
pub struct TestSection<'a, M: BundleModel<NP, NG>> {
    pub model: &'a M,
    pub profile: crate::models::TestProfile,
    pub charge: i32,
}

impl<'a, M: BundleModel<NP, NG>> Section for TestSection<'a, M> {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, chart: usize, x: &[f64; NB]) -> CVec {
        let q = self.model.sigma_from_base(chart, x);
        CVec::from_slice(&[self.model.test_function(&self.profile, self.charge, chart, &q)])
    }
}

/// `a^{ij}∂_i∂_j + b^i∂_i + c` with matrix coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalOperator {
    pub a: [[CMat; NB]; NB],
    pub b: [CMat; NB],
    pub c: CMat,
}

impl LocalOperator {
    pub fn zeros(d: usize) -> Self {
        let z = CMat::zeros(d);
        LocalOperator { a: [[z; NB]; NB], b: [z; NB], c: z }
    }

    pub fn apply(&self, jet: &SectionJet) -> CVec {
        let mut out = self.c.mul_vec(&jet.v);
        for i in 0..NB {
            out = out.add(&self.b[i].mul_vec(&jet.g[i]));
            for j in 0..NB {
                out = out.add(&self.a[i][j].mul_vec(&jet.h[i][j]));
            }
        }
        out
    }

    /// Largest coefficient difference.
    pub fn max_diff(&self, o: &LocalOperator) -> f64 {
        let mut m = self.c.sub(&o.c).max_abs();
        for i in 0..NB {
            m = m.max(self.b[i].sub(&o.b[i]).max_abs());
            for j in 0..NB {
                m = m.max(self.a[i][j].sub(&o.a[i][j]).max_abs());
            }
        }
        m
    }

    fn add_scaled(&mut self, o: &LocalOperator, s: f64) {
        self.c.add_scaled_re(&o.c, s);
        for i in 0..NB {
            self.b[i].add_scaled_re(&o.b[i], s);
            for j in 0..NB {
                self.a[i][j].add_scaled_re(&o.a[i][j], s);
            }
        }
    }
}

/// The horizontal Laplacian Δ^{E*} at a Σ point.
pub fn horizontal_laplacian(r: &GeometryReport<NP, NG>, t: &IrrepTables) -> LocalOperator {
    let d = t.irrep.dim;
    let id = CMat::identity(d);
    let mut op = LocalOperator::zeros(d);
    let h = &r.h;
    for i in 0..NB {
        for j in 0..NB {
            op.a[i][j] = id.scale(C64::new(h[i][j], 0.0));
        }
    }
    for dd in 0..NB {
        let mut s = 0.0;
        for e in 0..NP {
            for c in 0..NP {
                s += h[e][c] * r.dn[dd][e][c];
            }
        }
        for b in 0..NP {
            s -= r.h_trace_gamma[b] * r.n[dd][b];
        }
        let mut lin = [0.0; NG];
        for al in 0..NG {
            lin[al] = -2.0 * (0..NP).map(|e| h[e][dd] * r.conn[al][e]).sum::<f64>();
        }
        op.b[dd] = id.scale(C64::new(s, 0.0));
        op.b[dd].add_scaled_re(&t.lin(&lin), 1.0);
    }
    let an = linalg::matmul(&r.conn, &r.n);
    let mut lin = [0.0; NG];
    for al in 0..NG {
        let mut s = 0.0;
        for e in 0..NP {
            for c in 0..NP {
                let mut v = -r.dconn[al][c][e];
                for b in 0..NP {
                    v -= r.conn[al][b] * r.dn[b][c][e];
                }
                s += h[e][c] * v;
            }
        }
        for b in 0..NP {
            s += r.h_trace_gamma[b] * an[al][b];
        }
        lin[al] = s;
    }
    op.c = t.lin(&lin);
    for be in 0..NG {
        for al in 0..NG {
            let mut w = 0.0;
            for e in 0..NP {
                for c in 0..NP {
                    w += h[e][c] * r.conn[be][e] * r.conn[al][c];
                }
            }
            op.c.add_scaled_re(&t.jj[be][al], w);
        }
    }
    op
}

/// Coefficients of op2 / operator_2 (`transformed` selects operator_2).
fn first_kernel_generator(r: &GeometryReport<NP, NG>, t: &IrrepTables, cfg: &SimConfig, transformed: bool) -> LocalOperator {
    let d = t.irrep.dim;
    let id = CMat::identity(d);
    let m = cfg.mu2k();
    let half = 0.5 * m;
    let mut op = LocalOperator::zeros(d);
    for i in 0..NB {
        for j in 0..NB {
            op.a[i][j] = id.scale(C64::new(half * r.h[i][j], 0.0));
        }
    }
    let gl = linalg::matmul(&r.g_inv, &linalg::transpose(&r.lambda));
    let ngl = linalg::matmul(&r.n, &gl);
    for i in 0..NB {
        let jii = if transformed { 0.0 } else { r.j_ii[i] };
        let s = -r.h_trace_gamma[i] + 2.0 * (r.j_i[i] + jii);
        let mut lin = [0.0; NG];
        for al in 0..NG {
            lin[al] = 2.0 * ngl[i][al];
        }
        op.b[i] = id.scale(C64::new(s, 0.0));
        op.b[i].add_scaled_re(&t.lin(&lin), 1.0);
        op.b[i] = op.b[i].scale(C64::new(half, 0.0));
    }
    let mut scalar = 2.0 * r.potential / (m * m * cfg.mass);
    let mut lin = [0.0; NG];
    for al in 0..NG {
        lin[al] = -r.c_vec[al];
    }
    if transformed {
        scalar -= 0.25 * r.scalars.jtilde;
        for al in 0..NG {
            lin[al] += (0..NP).map(|c| r.lambda[al][c] * r.nabla_kk[c]).sum::<f64>();
        }
    }
    let lgl = linalg::matmul(&r.lambda, &gl);
    let mut c = id.scale(C64::new(scalar, 0.0));
    c.add_scaled_re(&t.lin(&lin), 1.0);
    for al in 0..NG {
        for si in 0..NG {
            c.add_scaled_re(&t.jj[al][si], lgl[al][si]);
        }
    }
    op.c = c.scale(C64::new(half, 0.0));
    op
}

/// Local coefficients of a labelled operator at the report's point. The
/// total-space label is probed from [`total_space_from_jet`].
pub fn local_operator<M: BundleModel<NP, NG>>(
    label: OperatorLabel,
    model: &M,
    r: &GeometryReport<NP, NG>,
    t: &IrrepTables,
    cfg: &SimConfig,
) -> Result<LocalOperator> {
    let m = cfg.mu2k();
    let d = t.irrep.dim;
    Ok(match label {
        OperatorLabel::Op2 => first_kernel_generator(r, t, cfg, false),
        OperatorLabel::Operator2 => first_kernel_generator(r, t, cfg, true),
        OperatorLabel::Operator3PlusCasimir | OperatorLabel::HKappa => {
            let mut op = horizontal_laplacian(r, t);
            op.c.add_scaled_re(&t.casimir(&r.gamma_inv), 1.0);
            let mut out = LocalOperator::zeros(d);
            out.add_scaled(&op, 0.5 * m);
            if label == OperatorLabel::HKappa {
                let w = r.potential / (m * cfg.mass) - 0.125 * m * r.scalars.jtilde;
                out.c.add_scaled_re(&CMat::identity(d), w);
            }
            out
        }
        OperatorLabel::TotalSpace => probe_total_space(model, &r.point, t, cfg)?,
    })
}

/// ½μ²κ Δ_𝒫 ψ̃ + W ψ̃ at a Σ point, from the jet of ψ in base coordinates,
/// using only the metric of 𝒫, the action (through `split`) and D.
pub fn total_space_from_jet<M: BundleModel<NP, NG>>(
    model: &M,
    point: &ChartPoint<NP>,
    t: &IrrepTables,
    cfg: &SimConfig,
    psi: &SectionJet,
) -> Result<CVec> {
    if t.irrep.kind != GroupKind::U1 {
        return Err(Error::Config("total-space oracle implemented for U(1) fibers".into()));
    }
    let d = psi.v.d;
    let qj = Jet2::<NP>::vars(&point.q);
    let (star, a) = model.split(point.chart, &qj);
    // f(Q) = ψ(x(Q)), x = first NB coordinates of q*
    let mut f = CJet::zeros(d);
    f.v = psi.v;
    for aa in 0..NP {
        for i in 0..NB {
            f.g[aa] = f.g[aa].add(&psi.g[i].scale(C64::new(star[i].g[aa], 0.0)));
        }
        for bb in 0..NP {
            let mut v = CVec::zeros(d);
            for i in 0..NB {
                v = v.add(&psi.g[i].scale(C64::new(star[i].h[aa][bb], 0.0)));
                for j in 0..NB {
                    v = v.add(&psi.h[i][j].scale(C64::new(star[i].g[aa] * star[j].g[bb], 0.0)));
                }
            }
            f.h[aa][bb] = v;
        }
    }
    // times e^{iλa(Q)}
    let lam = C64::new(0.0, t.irrep.label as f64);
    let a0 = a[0];
    let ev = (lam * a0.v).exp();
    let eg: [C64; NP] = std::array::from_fn(|i| lam * a0.g[i] * ev);
    let eh: [[C64; NP]; NP] = std::array::from_fn(|i| std::array::from_fn(|j| (lam * a0.h[i][j] + lam * lam * a0.g[i] * a0.g[j]) * ev));
    let mut p = CJet::zeros(d);
    p.v = f.v.scale(ev);
    for i in 0..NP {
        p.g[i] = f.g[i].scale(ev).add(&f.v.scale(eg[i]));
        for j in 0..NP {
            p.h[i][j] = f.h[i][j].scale(ev).add(&f.g[i].scale(eg[j])).add(&f.g[j].scale(eg[i])).add(&f.v.scale(eh[i][j]));
        }
    }
    // Laplace–Beltrami with Christoffels of G
    let g1 = model.metric(point.chart, &crate::jet::Jet1::<NP>::vars(&point.q));
    let gv = linalg::values(&g1);
    let gi = linalg::inverse(&gv).ok_or(Error::NotPositiveDefinite)?;
    let mut out = CVec::zeros(d);
    for aa in 0..NP {
        for bb in 0..NP {
            let mut term = p.h[aa][bb];
            for c in 0..NP {
                let mut gam = 0.0;
                for dd in 0..NP {
                    gam += 0.5 * gi[c][dd] * (g1[dd][bb].g[aa] + g1[dd][aa].g[bb] - g1[aa][bb].g[dd]);
                }
                term = term.sub(&p.g[c].scale(C64::new(gam, 0.0)));
            }
            out = out.add(&term.scale(C64::new(gi[aa][bb], 0.0)));
        }
    }
    let m = cfg.mu2k();
    let w = model.potential(point.chart, &point.q) / (m * cfg.mass);
    Ok(out.scale(C64::new(0.5 * m, 0.0)).add(&p.v.scale(C64::new(w, 0.0))))
}

#[derive(Clone, Copy)]
struct CJet {
    v: CVec,
    g: [CVec; NP],
    h: [[CVec; NP]; NP],
}

impl CJet {
    fn zeros(d: usize) -> Self {
        let z = CVec::zeros(d);
        CJet { v: z, g: [z; NP], h: [[z; NP]; NP] }
    }
}

/// Local coefficients of the total-space generator on equivariant functions,
/// read off by applying it to unit monomials.
pub fn probe_total_space<M: BundleModel<NP, NG>>(model: &M, point: &ChartPoint<NP>, t: &IrrepTables, cfg: &SimConfig) -> Result<LocalOperator> {
    let d = t.irrep.dim;
    let mut op = LocalOperator::zeros(d);
    let unit = |k: usize| {
        let mut v = CVec::zeros(d);
        v.a[k] = C64::new(1.0, 0.0);
        v
    };
    let set_col = |m: &mut CMat, k: usize, v: &CVec| {
        for r in 0..d {
            m.a[r][k] = v.a[r];
        }
    };
    for k in 0..d {
        let mut j = SectionJet::zeros(d);
        j.v = unit(k);
        let c = total_space_from_jet(model, point, t, cfg, &j)?;
        set_col(&mut op.c, k, &c);
        for i in 0..NB {
            let mut j = SectionJet::zeros(d);
            j.g[i] = unit(k);
            let b = total_space_from_jet(model, point, t, cfg, &j)?;
            set_col(&mut op.b[i], k, &b);
            for jj in 0..=i {
                let mut s = SectionJet::zeros(d);
                s.h[i][jj] = unit(k);
                s.h[jj][i] = unit(k);
                let mut a = total_space_from_jet(model, point, t, cfg, &s)?;
                if jj != i {
                    a = a.scale(C64::new(0.5, 0.0));
                }
                set_col(&mut op.a[i][jj], k, &a);
                set_col(&mut op.a[jj][i], k, &a);
            }
        }
    }
    Ok(op)
}

/// γ^{1/4} along Σ as a jet in the base coordinates.
pub fn gamma_quarter_jet<M: BundleModel<NP, NG>>(model: &M, chart: usize, x: &[f64; NB]) -> Jet2<NB> {
    let xs = Jet2::<NB>::vars(x);
    let mut q = [Jet2::<NB>::zero(); NP];
    q[..NB].copy_from_slice(&xs);
    let (star, _) = model.split(chart, &q);
    let f = model.fields(chart, &star);
    let mut gamma = Jet2::zero();
    for a in 0..NP {
        for b in 0..NP {
            gamma += f.k[a][0] * f.g[a][b] * f.k[b][0];
        }
    }
    (gamma.ln() * 0.25).exp()
}

/// Applies a labelled generator to a section at a Σ point.
pub fn apply_generator<M: BundleModel<NP, NG>>(
    label: OperatorLabel,
    model: &M,
    t: &IrrepTables,
    cfg: &SimConfig,
    section: &dyn Section,
    point: &ChartPoint<NP>,
    deriv: Derivatives,
) -> Result<CVec> {
    let x: [f64; NB] = std::array::from_fn(|i| point.q[i]);
    let jet = section.jet(point.chart, &x);
    if label == OperatorLabel::TotalSpace {
        return total_space_from_jet(model, point, t, cfg, &jet);
    }
    let r = geometry::geometry_report(model, point, deriv)?;
    Ok(local_operator(label, model, &r, t, cfg)?.apply(&jet))
}

/// Residuals of the operator identities over random sections and points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    pub points: usize,
    pub sections: usize,
    /// max |operator_2 ψ − H_κ ψ| / max(|operator_2 ψ|, |H_κ ψ|)
    pub operator_2_vs_h_kappa: f64,
    /// the same for op2 against the total-space generator
    pub op2_vs_total_space: f64,
    /// op2 against γ^{-1/4} operator_2 γ^{1/4}
    pub op2_vs_conjugated: f64,
}

fn rel(a: &CVec, b: &CVec) -> f64 {
    let n = a.norm2().sqrt().max(b.norm2().sqrt());
    let d = a.sub(b).norm2().sqrt();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

/// Compares operator_2 with ½μ²κ[Δ^{E*} + γJJ] + (W − ⅛μ²κJ̃) on random
/// trigonometric sections at random Σ points; op2 is compared with the
/// total-space generator and with the γ^{1/4} conjugate of operator_2.
pub fn operator_identity_residual<M: BundleModel<NP, NG>>(
    model: &M,
    irrep: &Irrep,
    cfg: &SimConfig,
    n_points: usize,
    n_sections: usize,
    deriv: Derivatives,
    seed: u64,
) -> Result<IdentityResiduals> {
    let t = IrrepTables::new(irrep);
    let noise = NoiseStream::new(seed, 0x0b5e);
    let mut counter = 0u64;
    let mut uniform = || {
        counter += 1;
        noise.uniform(counter, 0)
    };
    let sections: Vec<TrigSection> = (0..n_sections).map(|_| TrigSection::random(irrep.dim, 3, 2, &mut uniform)).collect();
    let points: Vec<ChartPoint<NP>> = (0..n_points).map(|_| model.sample_sigma(&mut uniform)).collect();
    let mut out = IdentityResiduals { points: n_points, sections: n_sections, operator_2_vs_h_kappa: 0.0, op2_vs_total_space: 0.0, op2_vs_conjugated: 0.0 };
    for p in &points {
        let r = geometry::geometry_report(model, p, deriv)?;
        let o2 = local_operator(OperatorLabel::Operator2, model, &r, &t, cfg)?;
        let hk = local_operator(OperatorLabel::HKappa, model, &r, &t, cfg)?;
        let op2 = local_operator(OperatorLabel::Op2, model, &r, &t, cfg)?;
        let x: [f64; NB] = std::array::from_fn(|i| p.q[i]);
        let g4 = gamma_quarter_jet(model, p.chart, &x);
        let inv = 1.0 / g4.v;
        for s in &sections {
            let jet = s.jet(p.chart, &x);
            let a = o2.apply(&jet);
            let b = hk.apply(&jet);
            out.operator_2_vs_h_kappa = out.operator_2_vs_h_kappa.max(rel(&a, &b));
            let lhs = op2.apply(&jet);
            let tot = total_space_from_jet(model, p, &t, cfg, &jet)?;
            out.op2_vs_total_space = out.op2_vs_total_space.max(rel(&lhs, &tot));
            let conj = o2.apply(&jet.scale_by(&g4)).scale(C64::new(inv, 0.0));
            out.op2_vs_conjugated = out.op2_vs_conjugated.max(rel(&lhs, &conj));
        }
    }
    Ok(out)
}

#[allow(dead_code)]
const _: () = assert!(MAXD >= 2);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{HopfModel, Potential, TorusBundle};

    #[test]
    fn flat_constant_section() {
        let m = TorusBundle::flat(10.0);
        let t = IrrepTables::new(&Irrep::u1(2));
        let cfg = SimConfig::default();
        let s = FnSection { dim: 1, f: |_c: usize, _x: &[f64; NB]| CVec::from_slice(&[C64::new(3.0, 0.0)]) };
        let p = ChartPoint { chart: 0, q: [0.2, 0.1, 0.0] };
        for l in OperatorLabel::ALL {
            let v = apply_generator(l, &m, &t, &cfg, &s, &p, Derivatives::Analytic).unwrap();
            assert!((v.a[0] - C64::new(-6.0, 0.0)).norm() < 1e-6, "{l:?} {}", v.a[0]);
        }
    }

    #[test]
    fn fd_jet_matches_exact_jet() {
        let mut k = 0u64;
        let n = NoiseStream::new(1, 1);
        let s = TrigSection::random(2, 3, 2, &mut || {
            k += 1;
            n.uniform(k, 0)
        });
        let x = [0.3, -0.7];
        let a = s.jet(0, &x);
        let b = fd_jet(&|y| s.value(0, y), &x, 1e-3);
        for c in 0..2 {
            assert!((a.v.a[c] - b.v.a[c]).norm() < 1e-14);
            for i in 0..NB {
                assert!((a.g[i].a[c] - b.g[i].a[c]).norm() < 1e-9);
                for j in 0..NB {
                    assert!((a.h[i][j].a[c] - b.h[i][j].a[c]).norm() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn identities_hold_on_hopf_and_warped() {
        let cfg = SimConfig::default();
        let mut hopf = HopfModel::new(1.3).with_tilt(0.25);
        hopf.potential = Potential::Quadratic { c: 0.4 };
        for lam in [0, 1, 2] {
            let r = operator_identity_residual(&hopf, &Irrep::u1(lam), &cfg, 10, 3, Derivatives::Analytic, 3).unwrap();
            assert!(r.operator_2_vs_h_kappa < 1e-10, "{r:?}");
            assert!(r.op2_vs_total_space < 1e-9, "{r:?}");
            assert!(r.op2_vs_conjugated < 1e-9, "{r:?}");
        }
        let w = TorusBundle::warped().with_tilt(0.3);
        let r = operator_identity_residual(&w, &Irrep::u1(1), &cfg, 10, 3, Derivatives::Analytic, 4).unwrap();
        assert!(r.operator_2_vs_h_kappa < 1e-10 && r.op2_vs_total_space < 1e-9 && r.op2_vs_conjugated < 1e-9, "{r:?}");
    }

    #[test]
    fn probe_recovers_op2() {
        let m = TorusBundle::warped().with_tilt(0.2);
        let t = IrrepTables::new(&Irrep::u1(1));
        let cfg = SimConfig::default();
        let p = ChartPoint { chart: 0, q: m.sigma_from_base(0, &[1.0, 2.0]) };
        let r = geometry::geometry_report(&m, &p, Derivatives::Analytic).unwrap();
        let a = local_operator(OperatorLabel::Op2, &m, &r, &t, &cfg).unwrap();
        let b = probe_total_space(&m, &p, &t, &cfg).unwrap();
        assert!(a.max_diff(&b) < 1e-10, "{}", a.max_diff(&b));
    }
}
