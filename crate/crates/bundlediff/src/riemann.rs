//! Brute-force curvature of a metric given in explicit coordinates. Used as an
//! oracle for the scalars of the geometry report, so it shares nothing with
//! that code beyond jet arithmetic.
//!
//! ```text
//!   Γ^a_bc = ½ g^{ae}(∂_b g_ec + ∂_c g_eb − ∂_e g_bc)
//!   R^a_bcd = ∂_c Γ^a_db − ∂_d Γ^a_cb + Γ^a_ce Γ^e_db − Γ^a_de Γ^e_cb
//!   R = g^{bd} R^a_bad                     (usual sign: unit S^n gives n(n−1))
//!   𝒜 = g(K,·)/γ,  γ = g(K,K),  |F|²_γ = γ F_ab F_cd g^{ac} g^{bd}
//! ```

use crate::jet::{Jet2, Scalar};
use crate::linalg::{self, Mat};

/// A metric as a function of coordinate jets.
pub type MetricFn<'a, const N: usize> = &'a dyn Fn(&[Jet2<N>; N]) -> Mat<Jet2<N>, N, N>;

/// Scalar curvature of `metric` at `x`.
pub fn scalar_curvature<const N: usize>(metric: MetricFn<N>, x: &[f64; N]) -> f64 {
    let g = metric(&Jet2::vars(x));
    let gv = linalg::values(&g);
    let gi = linalg::inverse(&gv).expect("metric must be invertible");
    // ∂_c g^{ab}
    let mut dgi = [[[0.0; N]; N]; N];
    for a in 0..N {
        for b in 0..N {
            for c in 0..N {
                let mut s = 0.0;
                for e in 0..N {
                    for f in 0..N {
                        s -= gi[a][e] * g[e][f].g[c] * gi[f][b];
                    }
                }
                dgi[a][b][c] = s;
            }
        }
    }
    let lower = |e: usize, b: usize, c: usize| g[e][c].g[b] + g[e][b].g[c] - g[b][c].g[e];
    let dlower = |e: usize, b: usize, c: usize, d: usize| g[e][c].h[b][d] + g[e][b].h[c][d] - g[b][c].h[e][d];
    let mut gam = [[[0.0; N]; N]; N];
    let mut dgam = [[[[0.0; N]; N]; N]; N];
    for a in 0..N {
        for b in 0..N {
            for c in 0..N {
                for e in 0..N {
                    gam[a][b][c] += 0.5 * gi[a][e] * lower(e, b, c);
                    for d in 0..N {
                        dgam[a][b][c][d] += 0.5 * (dgi[a][e][d] * lower(e, b, c) + gi[a][e] * dlower(e, b, c, d));
                    }
                }
            }
        }
    }
    let mut scal = 0.0;
    for b in 0..N {
        for d in 0..N {
            // Ric_bd = R^a_bad
            let mut ric = 0.0;
            for a in 0..N {
                ric += dgam[a][d][b][a] - dgam[a][a][b][d];
                for e in 0..N {
                    ric += gam[a][a][e] * gam[e][d][b] - gam[a][d][e] * gam[e][a][b];
                }
            }
            scal += gi[b][d] * ric;
        }
    }
    scal
}

/// γ-weighted squared norm of the curvature of the mechanical connection of a
/// one-parameter isometry with generator `killing` (constant in these
/// coordinates).
pub fn connection_curvature_norm<const N: usize>(metric: MetricFn<N>, killing: &[f64; N], x: &[f64; N]) -> f64 {
    let g = metric(&Jet2::vars(x));
    let gi = linalg::inverse(&linalg::values(&g)).expect("metric must be invertible");
    let mut gamma = Jet2::<N>::zero();
    for a in 0..N {
        for b in 0..N {
            gamma += g[a][b] * killing[a] * killing[b];
        }
    }
    let conn: [Jet2<N>; N] = std::array::from_fn(|a| {
        let mut s = Jet2::zero();
        for b in 0..N {
            s += g[a][b] * killing[b];
        }
        s / gamma
    });
    let f = |a: usize, b: usize| conn[b].g[a] - conn[a].g[b];
    let mut s = 0.0;
    for a in 0..N {
        for b in 0..N {
            for c in 0..N {
                for d in 0..N {
                    s += f(a, b) * f(c, d) * gi[a][c] * gi[b][d];
                }
            }
        }
    }
    gamma.v * s
}

/// Round S³ of radius r in Hopf coordinates (η, ξ₁, ξ₂):
/// r²(dη² + sin²η dξ₁² + cos²η dξ₂²). The Hopf action shifts ξ₁ and ξ₂ together.
pub fn hopf_total_metric<const N: usize>(r: f64) -> impl Fn(&[Jet2<N>; N]) -> Mat<Jet2<N>, N, N> {
    move |x| {
        let mut g: Mat<Jet2<N>, N, N> = linalg::zeros();
        let (s, c) = (x[0].sin(), x[0].cos());
        g[0][0] = Jet2::cst(r * r);
        g[1][1] = s * s * (r * r);
        g[2][2] = c * c * (r * r);
        g
    }
}

/// Round S² of radius r/2 in polar coordinates.
pub fn hopf_base_metric<const N: usize>(r: f64) -> impl Fn(&[Jet2<N>; N]) -> Mat<Jet2<N>, N, N> {
    move |x| {
        let mut g: Mat<Jet2<N>, N, N> = linalg::zeros();
        let s = x[0].sin();
        let q = 0.25 * r * r;
        g[0][0] = Jet2::cst(q);
        g[1][1] = s * s * q;
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_spheres() {
        for r in [1.0, 2.0] {
            let p = hopf_total_metric::<3>(r);
            let b = hopf_base_metric::<2>(r);
            assert!((scalar_curvature(&p, &[0.7, 0.3, -1.0]) - 6.0 / (r * r)).abs() < 1e-12);
            assert!((scalar_curvature(&b, &[1.1, 0.4]) - 8.0 / (r * r)).abs() < 1e-12);
            let f2 = connection_curvature_norm(&p, &[0.0, 1.0, 1.0], &[0.4, 0.0, 0.0]);
            assert!((f2 - 8.0 / (r * r)).abs() < 1e-12, "{f2}");
        }
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let e = |_: &[Jet2<3>; 3]| linalg::identity::<Jet2<3>, 3>();
        assert_eq!(scalar_curvature(&e, &[0.1, 0.2, 0.3]), 0.0);
        assert_eq!(connection_curvature_norm(&e, &[0.0, 0.0, 1.0], &[0.0; 3]), 0.0);
    }
}
