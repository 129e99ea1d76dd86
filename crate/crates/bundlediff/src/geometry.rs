//! Reduction tensors at a point of the gauge surface Σ = {χ = 0}.
//!
//! Index layout: mixed tensors are `[upper][lower]`; extra derivative indices
//! go last. With `χ^α_A = ∂_Aχ^α`:
//!
//! ```text
//!   Φ^β_μ = K^A_μ χ^β_A            Λ^α_B = (Φ⁻¹)^α_μ χ^μ_B
//!   N = 1 − K Λ                    γ_μν = K^A_μ G_AB K^B_ν
//!   𝒜^ν_P = γ^{νμ} K^A_μ G_AP      Π = 1 − K 𝒜
//!   G^H = Πᵀ G Π                   h^{AB} = (N G⁻¹ Nᵀ)^{AB}
//!   P⊥ = 1 − G⁻¹χᵀ (χ G⁻¹ χᵀ)⁻¹ χ
//!   ^HΓ^A_CD = ½ h^{AB} (∂_D G^H_BC + ∂_C G^H_BD − ∂_B G^H_CD)
//!   ℱ^α_EP = ∂_E𝒜^α_P − ∂_P𝒜^α_E + c^α_{νσ} 𝒜^ν_E 𝒜^σ_P
//!   j_I  = −½ K Φ⁻¹ h^{LM} ∂_L∂_M χ
//!   j_II = −½ N γ^{αβ} ∇̃_{K_α} K_β
//!   j^B_αβ = −½ h^{BE} 𝒟_E γ_αβ
//!   J̃ = R_P − ^HR − R_G − ¼ℱ² − ‖j‖²
//! ```
//!
//! Curvature scalars use the contraction
//! `R_SEC^M = ∂_SΓ^M_CE − ∂_EΓ^M_CS + Γ^K_CE Γ^M_KS − Γ^P_CS Γ^M_PE`,
//! `R_P = G^{SC} R̃_SEC^E`, `^HR = h^{SC} N^E_M ^HR_SEC^M`. This sign makes a
//! round sphere negative: the unit S³ gives R_P = −6.

use crate::error::{Error, Result};
use crate::group::{GroupElement, GroupKind, Irrep};
use crate::jet::{Jet1, Jet2};
use crate::linalg::{self, Mat};
use crate::models::{BundleModel, ChartPoint, Fields};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// How derivatives of the model fields are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Derivatives {
    Analytic,
    Fd,
}

/// Finite-difference steps: first derivatives (with one Richardson step) and
/// the nested second differences.
pub const FD_STEP: f64 = 1e-5;
pub const FD_STEP2: f64 = 1e-4;

/// Condition number of Φ beyond which the gauge is rejected.
pub const PHI_COND_MAX: f64 = 1e8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scalars {
    pub r_p: f64,
    pub hr: f64,
    pub r_g: f64,
    pub f2: f64,
    pub jnorm2: f64,
    pub jtilde: f64,
}

impl Scalars {
    pub fn as_array(&self) -> [f64; 6] {
        [self.r_p, self.hr, self.r_g, self.f2, self.jnorm2, self.jtilde]
    }
}

/// Everything the processes, kernels and operators read at one Σ point.
#[derive(Clone, Debug)]
pub struct GeometryReport<const P: usize, const G: usize> {
    pub point: ChartPoint<P>,
    pub g: Mat<f64, P, P>,
    pub g_inv: Mat<f64, P, P>,
    pub k: Mat<f64, P, G>,
    /// ∂_B K^A_μ as `[A][μ][B]`.
    pub dk: [[[f64; P]; G]; P],
    pub chi_grad: Mat<f64, G, P>,
    pub phi: Mat<f64, G, G>,
    pub phi_inv: Mat<f64, G, G>,
    pub lambda: Mat<f64, G, P>,
    /// ∂_M Λ^α_A as `[α][A][M]`.
    pub dlambda: [[[f64; P]; P]; G],
    pub n: Mat<f64, P, P>,
    /// ∂_M N^A_L as `[A][L][M]`.
    pub dn: [[[f64; P]; P]; P],
    pub pi: Mat<f64, P, P>,
    pub pperp: Mat<f64, P, P>,
    pub gamma: Mat<f64, G, G>,
    pub gamma_inv: Mat<f64, G, G>,
    pub det_gamma: f64,
    pub gh: Mat<f64, P, P>,
    pub h: Mat<f64, P, P>,
    pub conn: Mat<f64, G, P>,
    /// ∂_E 𝒜^α_C as `[α][C][E]`.
    pub dconn: [[[f64; P]; P]; G],
    pub curv: [[[f64; P]; P]; G],
    pub christoffel_tilde: [[[f64; P]; P]; P],
    pub christoffel_h: [[[f64; P]; P]; P],
    pub j_i: [f64; P],
    pub j_ii: [f64; P],
    /// γ^{αβ} ∇̃_{K_α} K_β.
    pub nabla_kk: [f64; P],
    pub secff: [[[f64; G]; G]; P],
    pub structure: [[[f64; G]; G]; G],
    /// h^{CB} ^HΓ^A_CB.
    pub h_trace_gamma: [f64; P],
    /// c^β of the group-process drift and of the first kernel.
    pub c_vec: [f64; G],
    /// d^α of the horizontal-Laplacian kernel.
    pub d_vec: [f64; G],
    /// Lower Cholesky factor 𝔛 of G⁻¹.
    pub x_sqrt: Mat<f64, P, P>,
    pub potential: f64,
    pub scalars: Scalars,
}

impl<const P: usize, const G: usize> GeometryReport<P, G> {
    /// Σ-process drift per unit μ²κ: −½ h ^HΓ + j_I (+ j_II).
    pub fn sigma_drift(&self, include_jii: bool) -> [f64; P] {
        let mut d = [0.0; P];
        for a in 0..P {
            d[a] = -0.5 * self.h_trace_gamma[a] + self.j_i[a] + if include_jii { self.j_ii[a] } else { 0.0 };
        }
        d
    }

    /// N 𝔛, the Σ-process diffusion matrix per unit μ√κ.
    pub fn sigma_diffusion(&self) -> Mat<f64, P, P> {
        linalg::matmul(&self.n, &self.x_sqrt)
    }

    /// Λ 𝔛, the group-process diffusion per unit μ√κ before v̄.
    pub fn lambda_x(&self) -> Mat<f64, G, P> {
        linalg::matmul(&self.lambda, &self.x_sqrt)
    }

    /// 𝒜 N 𝔛.
    pub fn conn_n_x(&self) -> Mat<f64, G, P> {
        linalg::matmul(&linalg::matmul(&self.conn, &self.n), &self.x_sqrt)
    }

    /// Max residuals of the projector identities.
    pub fn projector_residuals(&self) -> ProjectorResiduals {
        let n = &self.n;
        let p = &self.pperp;
        let pi = &self.pi;
        let r = |a: Mat<f64, P, P>, b: &Mat<f64, P, P>| linalg::max_abs(&linalg::sub(&a, b));
        let nk = linalg::max_abs(&linalg::matmul(n, &self.k));
        let ak = linalg::sub(&linalg::matmul(&self.conn, &self.k), &linalg::identity());
        ProjectorResiduals {
            nn: r(linalg::matmul(n, n), n),
            nk,
            n_pperp: r(linalg::matmul(n, p), p),
            pperp_n: r(linalg::matmul(p, n), n),
            pi_n: r(linalg::matmul(pi, n), pi),
            n_pi: r(linalg::matmul(n, pi), n),
            conn_k: linalg::max_abs(&ak),
            jtilde_sum: (self.scalars.jtilde
                - (self.scalars.r_p - self.scalars.hr - self.scalars.r_g - 0.25 * self.scalars.f2 - self.scalars.jnorm2))
                .abs(),
        }
    }

    pub fn to_json(&self) -> Value {
        fn m<const R: usize, const C: usize>(a: &Mat<f64, R, C>) -> Value {
            json!(a.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
        }
        json!({
            "chart": self.point.chart,
            "coords": self.point.q.to_vec(),
            "Phi": m(&self.phi),
            "PhiInv": m(&self.phi_inv),
            "Lambda": m(&self.lambda),
            "N": m(&self.n),
            "Pi": m(&self.pi),
            "Pperp": m(&self.pperp),
            "gamma": m(&self.gamma),
            "gammaInv": m(&self.gamma_inv),
            "Ghoriz": m(&self.gh),
            "conn": m(&self.conn),
            "jI": self.j_i.to_vec(),
            "jII": self.j_ii.to_vec(),
            "scalars": self.scalars,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectorResiduals {
    pub nn: f64,
    pub nk: f64,
    pub n_pperp: f64,
    pub pperp_n: f64,
    pub pi_n: f64,
    pub n_pi: f64,
    pub conn_k: f64,
    pub jtilde_sum: f64,
}

impl ProjectorResiduals {
    pub fn max(&self) -> f64 {
        [self.nn, self.nk, self.n_pperp, self.pperp_n, self.pi_n, self.n_pi, self.conn_k, self.jtilde_sum]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Second-order jets of G, K and χ at a point.
pub fn field_jets<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    chart: usize,
    q: &[f64; P],
    deriv: Derivatives,
) -> Fields<Jet2<P>, P, G> {
    match deriv {
        Derivatives::Analytic => model.fields(chart, &Jet2::vars(q)),
        Derivatives::Fd => fd_jets(model, chart, q),
    }
}

fn flatten<const P: usize, const G: usize>(f: &Fields<f64, P, G>) -> Vec<f64> {
    let mut v = Vec::with_capacity(P * P + P * G + G);
    v.extend(f.g.iter().flatten());
    v.extend(f.k.iter().flatten());
    v.extend(f.chi.iter());
    v
}

fn fd_jets<M: BundleModel<P, G>, const P: usize, const G: usize>(model: &M, chart: usize, q: &[f64; P]) -> Fields<Jet2<P>, P, G> {
    let eval = |dq: &[(usize, f64)]| {
        let mut x = *q;
        for &(i, s) in dq {
            x[i] += s;
        }
        flatten(&model.fields(chart, &x))
    };
    let f0 = eval(&[]);
    let nf = f0.len();
    let mut jets: Vec<Jet2<P>> = f0.iter().map(|&v| Jet2::constant(v)).collect();
    let h1 = FD_STEP;
    for i in 0..P {
        let (p1, m1) = (eval(&[(i, h1)]), eval(&[(i, -h1)]));
        let (p2, m2) = (eval(&[(i, 0.5 * h1)]), eval(&[(i, -0.5 * h1)]));
        for c in 0..nf {
            let d1 = (p1[c] - m1[c]) / (2.0 * h1);
            let d2 = (p2[c] - m2[c]) / h1;
            jets[c].g[i] = (4.0 * d2 - d1) / 3.0;
        }
    }
    let h2 = FD_STEP2;
    for i in 0..P {
        let (p, m) = (eval(&[(i, h2)]), eval(&[(i, -h2)]));
        for c in 0..nf {
            jets[c].h[i][i] = (p[c] - 2.0 * f0[c] + m[c]) / (h2 * h2);
        }
        for j in i + 1..P {
            let pp = eval(&[(i, h2), (j, h2)]);
            let pm = eval(&[(i, h2), (j, -h2)]);
            let mp = eval(&[(i, -h2), (j, h2)]);
            let mm = eval(&[(i, -h2), (j, -h2)]);
            for c in 0..nf {
                let v = (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h2 * h2);
                jets[c].h[i][j] = v;
                jets[c].h[j][i] = v;
            }
        }
    }
    let mut it = jets.into_iter();
    let mut g = [[Jet2::constant(0.0); P]; P];
    for row in g.iter_mut() {
        for x in row.iter_mut() {
            *x = it.next().unwrap();
        }
    }
    let mut k = [[Jet2::constant(0.0); G]; P];
    for row in k.iter_mut() {
        for x in row.iter_mut() {
            *x = it.next().unwrap();
        }
    }
    let mut chi = [Jet2::constant(0.0); G];
    for x in chi.iter_mut() {
        *x = it.next().unwrap();
    }
    Fields { g, k, chi }
}

fn first<const R: usize, const C: usize, const P: usize>(a: &Mat<Jet2<P>, R, C>) -> Mat<Jet1<P>, R, C> {
    let mut out = [[Jet1::constant(0.0); C]; R];
    for i in 0..R {
        for j in 0..C {
            out[i][j] = a[i][j].first();
        }
    }
    out
}

fn jet_values<const R: usize, const C: usize, const P: usize>(a: &Mat<Jet1<P>, R, C>) -> Mat<f64, R, C> {
    linalg::values(a)
}

/// Structure constants as a fixed array `[σ][μ][ν]`.
pub fn structure_array<const G: usize>(kind: GroupKind) -> [[[f64; G]; G]; G] {
    let c = kind.structure_constants();
    let mut out = [[[0.0; G]; G]; G];
    for s in 0..G {
        for m in 0..G {
            for n in 0..G {
                out[s][m][n] = c[s][m][n];
            }
        }
    }
    out
}

/// ‖Φ‖_∞ ‖Φ⁻¹‖_∞.
fn condition<const G: usize>(a: &Mat<f64, G, G>, ainv: &Mat<f64, G, G>) -> f64 {
    let norm = |m: &Mat<f64, G, G>| m.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    norm(a) * norm(ainv)
}

/// Full geometry report at a Σ point.
pub fn geometry_report<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    point: &ChartPoint<P>,
    deriv: Derivatives,
) -> Result<GeometryReport<P, G>> {
    let fj = field_jets(model, point.chart, &point.q, deriv);
    report_from_jets(&fj, point, model.group(), model.potential(point.chart, &point.q))
}

/// The report pipeline on given field jets; shared by the analytic and the
/// finite-difference routes.
pub fn report_from_jets<const P: usize, const G: usize>(
    fj: &Fields<Jet2<P>, P, G>,
    point: &ChartPoint<P>,
    group: GroupKind,
    potential: f64,
) -> Result<GeometryReport<P, G>> {
    type J1<const P: usize> = Jet1<P>;
    let g2 = fj.g;
    let g1 = first(&g2);
    let g = linalg::values(&g2);
    let ginv1 = linalg::inverse(&g1).ok_or(Error::NotPositiveDefinite)?;
    let g_inv = jet_values(&ginv1);
    let k2 = fj.k;
    let k1 = first(&k2);
    let k = linalg::values(&k2);
    let mut dk = [[[0.0; P]; G]; P];
    for a in 0..P {
        for m in 0..G {
            dk[a][m] = k2[a][m].g;
        }
    }

    // gauge: χ^α_A as jets, Hessian values
    let mut cg1 = [[J1::<P>::constant(0.0); P]; G];
    for al in 0..G {
        for a in 0..P {
            cg1[al][a] = fj.chi[al].d(a);
        }
    }
    let chi_grad = jet_values(&cg1);
    let phi1 = linalg::matmul(&cg1, &k1);
    let phi = jet_values(&phi1);
    let phiinv1 = linalg::inverse(&phi1).ok_or(Error::GaugeNotTransversal(f64::INFINITY))?;
    let phi_inv = jet_values(&phiinv1);
    let cond = condition(&phi, &phi_inv);
    if !(cond <= PHI_COND_MAX) {
        return Err(Error::GaugeNotTransversal(cond));
    }
    let lam1 = linalg::matmul(&phiinv1, &cg1);
    let lambda = jet_values(&lam1);
    let mut dlambda = [[[0.0; P]; P]; G];
    for al in 0..G {
        for a in 0..P {
            dlambda[al][a] = lam1[al][a].g;
        }
    }
    let kl1 = linalg::matmul(&k1, &lam1);
    let mut n1 = [[J1::<P>::constant(0.0); P]; P];
    for a in 0..P {
        for b in 0..P {
            n1[a][b] = -kl1[a][b];
        }
        n1[a][a] = n1[a][a] + 1.0;
    }
    let n = jet_values(&n1);
    let mut dn = [[[0.0; P]; P]; P];
    for a in 0..P {
        for l in 0..P {
            dn[a][l] = n1[a][l].g;
        }
    }

    // orbit metric and connection
    let gk2 = linalg::matmul(&g2, &k2);
    let gamma2 = linalg::matmul(&linalg::transpose(&k2), &gk2);
    let gamma = linalg::values(&gamma2);
    let chol = linalg::cholesky(&gamma).ok_or_else(|| {
        let m = (0..G).map(|i| gamma[i][i]).fold(f64::INFINITY, f64::min);
        Error::SingularOrbitMetric(m)
    })?;
    let det_gamma = (0..G).map(|i| chol[i][i] * chol[i][i]).product::<f64>();
    let gammainv2 = linalg::inverse(&gamma2).ok_or(Error::SingularOrbitMetric(0.0))?;
    let gammainv1 = first(&gammainv2);
    let gamma_inv = linalg::values(&gammainv2);
    let conn1 = linalg::matmul(&gammainv1, &linalg::transpose(&first(&gk2)));
    let conn = jet_values(&conn1);
    let mut dconn = [[[0.0; P]; P]; G];
    for al in 0..G {
        for c in 0..P {
            dconn[al][c] = conn1[al][c].g;
        }
    }
    let mut pi = linalg::identity::<f64, P>();
    let kc = linalg::matmul(&k, &conn);
    for a in 0..P {
        for b in 0..P {
            pi[a][b] -= kc[a][b];
        }
    }

    // horizontal metric G^H = G − GK γ⁻¹ KᵀG as a second-order jet
    let gkg = linalg::matmul(&linalg::matmul(&gk2, &gammainv2), &linalg::transpose(&gk2));
    let mut gh2 = g2;
    for a in 0..P {
        for b in 0..P {
            gh2[a][b] -= gkg[a][b];
        }
    }
    let gh = linalg::values(&gh2);
    let h1 = linalg::matmul(&linalg::matmul(&n1, &ginv1), &linalg::transpose(&n1));
    let h = jet_values(&h1);

    // P⊥
    let cgv = chi_grad;
    let ginv_ct = linalg::matmul(&g_inv, &linalg::transpose(&cgv));
    let cgc = linalg::matmul(&cgv, &ginv_ct);
    let cgc_inv = linalg::inverse(&cgc).ok_or(Error::GaugeNotTransversal(f64::INFINITY))?;
    let proj = linalg::matmul(&linalg::matmul(&ginv_ct, &cgc_inv), &cgv);
    let pperp = linalg::sub(&linalg::identity(), &proj);

    // Christoffels
    let mut hg1 = [[[J1::<P>::constant(0.0); P]; P]; P];
    let mut gt1 = [[[J1::<P>::constant(0.0); P]; P]; P];
    {
        // ∂_D G^H_BC and ∂_D G_BC as first-order jets
        let mut dgh = [[[J1::<P>::constant(0.0); P]; P]; P];
        let mut dg = [[[J1::<P>::constant(0.0); P]; P]; P];
        for b in 0..P {
            for c in 0..P {
                for d in 0..P {
                    dgh[b][c][d] = gh2[b][c].d(d);
                    dg[b][c][d] = g2[b][c].d(d);
                }
            }
        }
        for c in 0..P {
            for d in c..P {
                let mut low_h = [J1::<P>::constant(0.0); P];
                let mut low_t = [J1::<P>::constant(0.0); P];
                for b in 0..P {
                    low_h[b] = (dgh[b][c][d] + dgh[b][d][c] - dgh[c][d][b]) * 0.5;
                    low_t[b] = (dg[b][c][d] + dg[b][d][c] - dg[c][d][b]) * 0.5;
                }
                for a in 0..P {
                    let mut sh = J1::<P>::constant(0.0);
                    let mut st = J1::<P>::constant(0.0);
                    for b in 0..P {
                        sh += h1[a][b] * low_h[b];
                        st += ginv1[a][b] * low_t[b];
                    }
                    hg1[a][c][d] = sh;
                    hg1[a][d][c] = sh;
                    gt1[a][c][d] = st;
                    gt1[a][d][c] = st;
                }
            }
        }
    }
    let christoffel_h = map3(&hg1, |x| x.v);
    let christoffel_tilde = map3(&gt1, |x| x.v);

    // R_P = G^{SC} R̃_SEC^E
    let mut r_p = 0.0;
    for s in 0..P {
        for c in 0..P {
            let w = g_inv[s][c];
            if w == 0.0 {
                continue;
            }
            let mut ric = 0.0;
            for e in 0..P {
                ric += gt1[e][c][e].g[s] - gt1[e][c][s].g[e];
                for kk in 0..P {
                    ric += christoffel_tilde[kk][c][e] * christoffel_tilde[e][kk][s]
                        - christoffel_tilde[kk][c][s] * christoffel_tilde[e][kk][e];
                }
            }
            r_p += w * ric;
        }
    }
    // ^HR = h^{SC} N^E_M ^HR_SEC^M
    let hgv = &christoffel_h;
    let mut hr = 0.0;
    for s in 0..P {
        for c in 0..P {
            let w = h[s][c];
            if w == 0.0 {
                continue;
            }
            for e in 0..P {
                for m in 0..P {
                    let ne = n[e][m];
                    if ne == 0.0 {
                        continue;
                    }
                    let mut r = hg1[m][c][e].g[s] - hg1[m][c][s].g[e];
                    for kk in 0..P {
                        r += hgv[kk][c][e] * hgv[m][kk][s] - hgv[kk][c][s] * hgv[m][kk][e];
                    }
                    hr += w * ne * r;
                }
            }
        }
    }

    // orbit curvature R_G
    let cst = structure_array::<G>(group);
    let mut r_g = 0.0;
    for mu in 0..G {
        for nu in 0..G {
            for s in 0..G {
                for al in 0..G {
                    r_g += 0.5 * gamma_inv[mu][nu] * cst[s][mu][al] * cst[al][nu][s];
                }
            }
        }
    }
    for mu in 0..G {
        for s in 0..G {
            for al in 0..G {
                for be in 0..G {
                    for ep in 0..G {
                        for nu in 0..G {
                            r_g += 0.25
                                * gamma[mu][s]
                                * gamma_inv[al][be]
                                * gamma_inv[ep][nu]
                                * cst[mu][ep][al]
                                * cst[s][nu][be];
                        }
                    }
                }
            }
        }
    }

    // ℱ and ℱ²
    let mut curv = [[[0.0; P]; P]; G];
    for al in 0..G {
        for e in 0..P {
            for p in 0..P {
                let mut f = dconn[al][p][e] - dconn[al][e][p];
                for nu in 0..G {
                    for s in 0..G {
                        f += cst[al][nu][s] * conn[nu][e] * conn[s][p];
                    }
                }
                curv[al][e][p] = f;
            }
        }
    }
    let mut f2 = 0.0;
    for f in 0..P {
        for b in 0..P {
            if h[f][b] == 0.0 {
                continue;
            }
            for p in 0..P {
                for a in 0..P {
                    if h[p][a] == 0.0 {
                        continue;
                    }
                    for mu in 0..G {
                        for nu in 0..G {
                            f2 += h[f][b] * h[p][a] * gamma[mu][nu] * curv[mu][p][f] * curv[nu][a][b];
                        }
                    }
                }
            }
        }
    }

    // second fundamental form j^B_αβ and ‖j‖²
    let mut dgam = [[[0.0; P]; G]; G];
    for al in 0..G {
        for be in 0..G {
            for e in 0..P {
                let mut d = gamma2[al][be].g[e];
                for s in 0..G {
                    for mu in 0..G {
                        d -= cst[s][mu][al] * conn[mu][e] * gamma[s][be] + cst[s][mu][be] * conn[mu][e] * gamma[s][al];
                    }
                }
                dgam[al][be][e] = d;
            }
        }
    }
    let mut secff = [[[0.0; G]; G]; P];
    for b in 0..P {
        for al in 0..G {
            for be in 0..G {
                secff[b][al][be] = -0.5 * (0..P).map(|e| h[b][e] * dgam[al][be][e]).sum::<f64>();
            }
        }
    }
    let mut jnorm2 = 0.0;
    for a in 0..P {
        for b in 0..P {
            for al in 0..G {
                for mu in 0..G {
                    for be in 0..G {
                        for nu in 0..G {
                            jnorm2 += gh[a][b] * gamma_inv[al][mu] * gamma_inv[be][nu] * secff[a][al][be] * secff[b][mu][nu];
                        }
                    }
                }
            }
        }
    }
    let jtilde = r_p - hr - r_g - 0.25 * f2 - jnorm2;

    // mean curvature vectors
    let mut nabla_kk = [0.0; P];
    for al in 0..G {
        for be in 0..G {
            let w = gamma_inv[al][be];
            for c in 0..P {
                let mut v = 0.0;
                for a in 0..P {
                    v += k[a][al] * dk[c][be][a];
                    for b in 0..P {
                        v += christoffel_tilde[c][a][b] * k[a][al] * k[b][be];
                    }
                }
                nabla_kk[c] += w * v;
            }
        }
    }
    let mut j_ii = [0.0; P];
    for a in 0..P {
        j_ii[a] = -0.5 * (0..P).map(|c| n[a][c] * nabla_kk[c]).sum::<f64>();
    }
    let mut hchi = [0.0; G];
    for be in 0..G {
        for l in 0..P {
            for m in 0..P {
                hchi[be] += h[l][m] * fj.chi[be].h[l][m];
            }
        }
    }
    let mut j_i = [0.0; P];
    for a in 0..P {
        for mu in 0..G {
            for be in 0..G {
                j_i[a] -= 0.5 * k[a][mu] * phi_inv[mu][be] * hchi[be];
            }
        }
    }
    let mut h_trace_gamma = [0.0; P];
    for a in 0..P {
        for c in 0..P {
            for b in 0..P {
                h_trace_gamma[a] += h[c][b] * christoffel_h[a][c][b];
            }
        }
    }

    // c^β = G^{RS}Γ̃^B_RS Λ^β_B + G^{RP}Λ^σ_R Λ^β_B ∂_P K^B_σ − G^{CA} N^M_C ∂_M Λ^β_A
    let mut c_vec = [0.0; G];
    for be in 0..G {
        let mut v = 0.0;
        for b in 0..P {
            let mut tr = 0.0;
            for r in 0..P {
                for s in 0..P {
                    tr += g_inv[r][s] * christoffel_tilde[b][r][s];
                }
            }
            v += tr * lambda[be][b];
        }
        for r in 0..P {
            for p in 0..P {
                for s in 0..G {
                    for b in 0..P {
                        v += g_inv[r][p] * lambda[s][r] * lambda[be][b] * dk[b][s][p];
                    }
                }
            }
        }
        for c in 0..P {
            for a in 0..P {
                for m in 0..P {
                    v -= g_inv[c][a] * n[m][c] * dlambda[be][a][m];
                }
            }
        }
        c_vec[be] = v;
    }

    // d^α = h^{EB}[∂_E(N^C_B 𝒜^α_C) − ^HΓ^D_EB N^C_D 𝒜^α_C]
    let mut na = [[0.0; P]; G];
    for al in 0..G {
        for d in 0..P {
            na[al][d] = (0..P).map(|c| n[c][d] * conn[al][c]).sum();
        }
    }
    let mut d_vec = [0.0; G];
    for al in 0..G {
        let mut v = 0.0;
        for e in 0..P {
            for b in 0..P {
                let w = h[e][b];
                if w == 0.0 {
                    continue;
                }
                let mut t = 0.0;
                for c in 0..P {
                    t += dn[c][b][e] * conn[al][c] + n[c][b] * dconn[al][c][e];
                }
                for d in 0..P {
                    t -= christoffel_h[d][e][b] * na[al][d];
                }
                v += w * t;
            }
        }
        d_vec[al] = v;
    }

    let x_sqrt = metric_sqrt(&g)?;
    Ok(GeometryReport {
        point: *point,
        g,
        g_inv,
        k,
        dk,
        chi_grad,
        phi,
        phi_inv,
        lambda,
        dlambda,
        n,
        dn,
        pi,
        pperp,
        gamma,
        gamma_inv,
        det_gamma,
        gh,
        h,
        conn,
        dconn,
        curv,
        christoffel_tilde,
        christoffel_h,
        j_i,
        j_ii,
        nabla_kk,
        secff,
        structure: cst,
        h_trace_gamma,
        c_vec,
        d_vec,
        x_sqrt,
        potential,
        scalars: Scalars { r_p, hr, r_g, f2, jnorm2, jtilde },
    })
}

fn map3<T: Copy, const P: usize>(a: &[[[T; P]; P]; P], f: impl Fn(&T) -> f64) -> [[[f64; P]; P]; P] {
    let mut out = [[[0.0; P]; P]; P];
    for i in 0..P {
        for j in 0..P {
            for l in 0..P {
                out[i][j][l] = f(&a[i][j][l]);
            }
        }
    }
    out
}

/// Lower-triangular 𝔛 with 𝔛 𝔛ᵀ = G⁻¹.
pub fn metric_sqrt<const P: usize>(g: &Mat<f64, P, P>) -> Result<Mat<f64, P, P>> {
    linalg::cholesky(g).ok_or(Error::NotPositiveDefinite)?;
    let ginv = linalg::inverse(g).ok_or(Error::NotPositiveDefinite)?;
    let mut sym = ginv;
    for i in 0..P {
        for j in 0..P {
            sym[i][j] = 0.5 * (ginv[i][j] + ginv[j][i]);
        }
    }
    linalg::cholesky(&sym).ok_or(Error::NotPositiveDefinite)
}

/// The bundle-coordinate metric in the (Q*, a) basis, its pseudoinverse and
/// the two sides of the determinant factorization (restricted to TΣ ⊕ 𝔤).
#[derive(Clone, Debug)]
pub struct MetricBlock {
    pub gtilde: Vec<Vec<f64>>,
    pub gtilde_inv: Vec<Vec<f64>>,
    /// ‖G̃^{AB} G̃_{BC} − diag(P⊥, δ)‖∞.
    pub pseudoinverse_residual: f64,
    pub det_direct: f64,
    pub det_factorized: f64,
}

impl MetricBlock {
    pub fn det_relative_difference(&self) -> f64 {
        (self.det_direct - self.det_factorized).abs() / self.det_direct.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn metric_block<const P: usize, const G: usize>(
    report: &GeometryReport<P, G>,
    group: GroupKind,
    a: &GroupElement,
) -> Result<MetricBlock> {
    use nalgebra::DMatrix;
    let fr = group.invariant_frames(a)?;
    let (u, v) = (&fr.u, &fr.v);
    let d = P + G;
    let gm = linalg::to_dmatrix(&report.g);
    let p = linalg::to_dmatrix(&report.pperp);
    let k = linalg::to_dmatrix(&report.k);
    let gam = linalg::to_dmatrix(&report.gamma);
    let n = linalg::to_dmatrix(&report.n);
    let gi = linalg::to_dmatrix(&report.g_inv);
    let lam = linalg::to_dmatrix(&report.lambda);

    let mut gt = DMatrix::<f64>::zeros(d, d);
    gt.view_mut((0, 0), (P, P)).copy_from(&(p.transpose() * &gm * &p));
    let off = p.transpose() * &gm * &k * u;
    gt.view_mut((0, P), (P, G)).copy_from(&off);
    gt.view_mut((P, 0), (G, P)).copy_from(&off.transpose());
    gt.view_mut((P, P), (G, G)).copy_from(&(u.transpose() * &gam * u));

    let mut gi_t = DMatrix::<f64>::zeros(d, d);
    gi_t.view_mut((0, 0), (P, P)).copy_from(&(&n * &gi * n.transpose()));
    let off_i = v * &lam * &gi * n.transpose();
    gi_t.view_mut((P, 0), (G, P)).copy_from(&off_i);
    gi_t.view_mut((0, P), (P, G)).copy_from(&off_i.transpose());
    gi_t.view_mut((P, P), (G, G)).copy_from(&(v * &lam * &gi * lam.transpose() * v.transpose()));

    let mut target = DMatrix::<f64>::zeros(d, d);
    target.view_mut((0, 0), (P, P)).copy_from(&p);
    target.view_mut((P, P), (G, G)).fill_with_identity();
    let pseudoinverse_residual = (&gi_t * &gt - target).abs().max();

    // orthonormal basis of TΣ = ker χ, extended by the identity on 𝔤
    let basis = linalg::null_space(&linalg::to_dmatrix(&report.chi_grad), 1e-12);
    let nm = basis.ncols();
    let mut e = DMatrix::<f64>::zeros(d, nm + G);
    e.view_mut((0, 0), (P, nm)).copy_from(&basis);
    e.view_mut((P, nm), (G, G)).fill_with_identity();
    let det_direct = (e.transpose() * &gt * &e).determinant();
    let gh = linalg::to_dmatrix(&report.gh);
    let hor = basis.transpose() * p.transpose() * gh * &p * &basis;
    let det_factorized = hor.determinant() * report.det_gamma * fr.det_u * fr.det_u;

    let rows = |m: &DMatrix<f64>| (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect();
    Ok(MetricBlock { gtilde: rows(&gt), gtilde_inv: rows(&gi_t), pseudoinverse_residual, det_direct, det_factorized })
}

/// Max over random group elements of ‖ψ̃(p·g) − D(g)ᵀ ψ̃(p)‖ for a scalar-per-
/// component test function.
pub fn equivariance_check<M: BundleModel<P, G>, const P: usize, const G: usize>(
    model: &M,
    irrep: &Irrep,
    test: &dyn Fn(usize, &[f64; P]) -> Vec<C64>,
    samples: &[(ChartPoint<P>, [f64; G])],
) -> f64 {
    let mut worst = 0.0_f64;
    for (p, a) in samples {
        let lhs = test(p.chart, &model.action(p.chart, &p.q, a));
        let base = test(p.chart, &p.q);
        let dt = irrep.matrix(a).transpose();
        for (i, l) in lhs.iter().enumerate() {
            let rhs: C64 = (0..irrep.dim).map(|j| dt.a[i][j] * base[j]).sum();
            worst = worst.max((l - rhs).norm());
        }
    }
    worst
}

/// Jets of a scalar function on P, used by tests and by operator assembly.
pub fn jets_of<const P: usize>(f: impl Fn(&[Jet2<P>; P]) -> Jet2<P>, q: &[f64; P]) -> Jet2<P> {
    f(&Jet2::vars(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{HopfModel, TorusBundle};

    fn hopf_point(m: &HopfModel, u: f64, v: f64) -> ChartPoint<3> {
        ChartPoint { chart: 0, q: m.sigma_from_base(0, &[u, v]) }
    }

    #[test]
    fn flat_report_vanishes() {
        let m = TorusBundle::flat(10.0);
        let r = geometry_report(&m, &ChartPoint { chart: 0, q: [0.3, 1.2, 0.0] }, Derivatives::Analytic).unwrap();
        assert_eq!(r.scalars, Scalars::default());
        assert_eq!(r.j_i, [0.0; 3]);
        assert_eq!(r.j_ii, [0.0; 3]);
        assert!(r.projector_residuals().max() < 1e-15);
    }

    #[test]
    fn hopf_scalars() {
        let m = HopfModel::new(1.0);
        let r = geometry_report(&m, &hopf_point(&m, 0.4, -0.3), Derivatives::Analytic).unwrap();
        let s = r.scalars;
        assert!((s.r_p + 6.0).abs() < 1e-10, "{s:?}");
        assert!((s.hr + 8.0).abs() < 1e-10, "{s:?}");
        assert!((s.f2 - 8.0).abs() < 1e-10, "{s:?}");
        assert!(s.jnorm2.abs() < 1e-12 && s.jtilde.abs() < 1e-10);
        assert!(r.projector_residuals().max() < 1e-12);
    }

    #[test]
    fn tilted_gauge_keeps_scalars() {
        let m = HopfModel::new(1.0).with_tilt(0.4);
        let r = geometry_report(&m, &hopf_point(&m, 0.7, 0.2), Derivatives::Analytic).unwrap();
        assert!((r.scalars.hr + 8.0).abs() < 1e-9, "{:?}", r.scalars);
        assert!(r.scalars.jtilde.abs() < 1e-9);
        assert!(r.projector_residuals().max() < 1e-12);
    }

    #[test]
    fn fd_matches_analytic() {
        let m = TorusBundle::warped().with_tilt(0.3);
        let p = ChartPoint { chart: 0, q: m.sigma_from_base(0, &[0.4, 1.1]) };
        let a = geometry_report(&m, &p, Derivatives::Analytic).unwrap();
        let f = geometry_report(&m, &p, Derivatives::Fd).unwrap();
        for (x, y) in a.scalars.as_array().iter().zip(f.scalars.as_array()) {
            assert!((x - y).abs() < 1e-5, "{:?} vs {:?}", a.scalars, f.scalars);
        }
        for i in 0..3 {
            assert!((a.j_i[i] - f.j_i[i]).abs() < 1e-6);
            assert!((a.j_ii[i] - f.j_ii[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn metric_block_contract() {
        let m = HopfModel::new(1.0).with_tilt(0.3);
        let r = geometry_report(&m, &hopf_point(&m, -0.5, 0.8), Derivatives::Analytic).unwrap();
        let b = metric_block(&r, GroupKind::U1, &GroupElement::new(vec![0.7])).unwrap();
        assert!(b.pseudoinverse_residual < 1e-12, "{}", b.pseudoinverse_residual);
        assert!(b.det_relative_difference() < 1e-10, "{} vs {}", b.det_direct, b.det_factorized);
    }

    #[test]
    fn metric_sqrt_examples() {
        let x = metric_sqrt(&[[4.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((x[0][0] - 0.5).abs() < 1e-15 && (x[1][1] - 1.0).abs() < 1e-15);
        assert_eq!(metric_sqrt(&[[1.0, 2.0], [2.0, 1.0]]), Err(Error::NotPositiveDefinite));
    }
}
