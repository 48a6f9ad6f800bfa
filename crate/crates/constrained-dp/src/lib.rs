//! Constrained differential privacy via two constraint-enforcement views:
//! probabilistic conditioning (belief revision) and L2-projection imaging
//! (belief update), over additive Laplace/Gaussian mechanisms.
//!
//! The crate provides:
//!
//! - [`belief`]: an exact finite possible-worlds oracle for conditioning,
//!   imaging, and mixtures. Every continuous-case property has a discrete
//!   counterpart that can be checked here exactly.
//! - [`mechanisms`]: Laplace/Gaussian noise calibration, seeded sampling and
//!   density evaluation.
//! - [`invariants`]: affine equality/inequality constraint systems, hierarchy
//!   trees compiled to constraints, and free-variable parametrizations.
//! - [`revision`]: conditional mechanisms `M(·|C)` — exact conditional
//!   densities (including the measure-zero change-of-variables case),
//!   rejection sampling, and a constrained Metropolis–Hastings sampler for
//!   hierarchical consistency.
//! - [`update`]: the imaged mechanism `M_C = f_L2 ∘ M` — closed-form affine
//!   projection, Dykstra alternating projections, and a TopDown baseline.
//! - [`composition`]: basic, disjoint-union, and mixture composition over
//!   mechanism handles, plus postprocessing wrappers.
//! - [`verify`]: analytic variance formulas, density-ratio privacy audits,
//!   KL divergence, and MCMC diagnostics.
//! - [`bench`]: a seeded benchmark harness comparing the conditioning and
//!   imaging pipelines on hierarchical count data.
//!
//! See the `examples/` directory for one runnable example per capability;
//! the thin `cdp` binary exposes the same operations as subcommands.

pub mod belief;
pub mod bench;
pub mod composition;
pub mod invariants;
pub mod mechanisms;
pub mod quad;
pub mod revision;
pub mod rng;
pub mod update;
pub mod verify;

pub use belief::{Event, FiniteBeliefState};
pub use invariants::{AffineEquality, AffineInequality, FreeParametrization, Hierarchy, Invariant};
pub use mechanisms::{NoiseKind, NoiseSpec, PrivacyParams};
pub use revision::{ConditionalDensity, MhConfig, SampleSet};
