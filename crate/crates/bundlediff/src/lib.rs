//! Diffusion of a scalar particle on a manifold with a free isometric action
//! of a compact group, reduced onto a non-zero momentum level, together with
//! the numerical oracles that check the reduction.
//!
//! Layout, bottom up:
//!
//! ```text
//!   jet, linalg, cmat   forward-mode derivatives and small dense algebra
//!   group               U(1) / SU(2), irreps, Haar rules, invariant frames
//!   models              flat / warped torus bundles, Hopf S³ → S²
//!   geometry            Σ-point tensors, curvature scalars, J̃
//!   sde                 original, Σ and group processes
//!   holonomy            multiplicative matrix integrals along paths
//!   greens              semigroup estimators and the reduction identity
//!   pdecheck            assembled generators, identities, grid evolution
//!   harness             configs, suites, verdicts
//! ```

pub mod cmat;
pub mod error;
pub mod geometry;
pub mod greens;
pub mod harness;
pub mod group;
pub mod holonomy;
pub mod jet;
pub mod linalg;
pub mod models;
pub mod pdecheck;
pub mod riemann;

pub mod sde;

pub use error::{Error, Result};
