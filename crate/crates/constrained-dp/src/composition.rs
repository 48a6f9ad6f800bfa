//! Composition operators over constrained mechanisms.
//!
//! Mechanisms are first-class values: a `MechanismHandle` bundles a seeded
//! sampler with its privacy budget and optional invariant. Budgets are
//! metadata only; nothing here enforces a ledger.
//!
//! Operators: basic (joint) composition with additive budgets, disjoint-union
//! composition as a data-dependent convex combination of conditional
//! mechanisms, probabilistic mixtures, and postprocessing wrappers.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::invariants::{AffineInequality, Invariant, InvariantError};
use crate::mechanisms::{MechanismError, NoiseSpec, PrivacyParams};
use crate::revision::{self, RevisionError};
use crate::rng;

#[derive(Debug, Error)]
pub enum CompositionError {
    #[error("mechanism list is empty")]
    EmptyList,
    #[error("mixture weights must be nonnegative and sum to 1 (sum = {0})")]
    WeightError(f64),
    #[error("weights and mechanisms disagree in length: {weights} vs {mechanisms}")]
    LengthMismatch { weights: usize, mechanisms: usize },
    #[error("mixture components must share an output dimension")]
    MixedDimensions,
    #[error("both invariants have mass below 1e-12; the union carries no probability")]
    ZeroMass,
    #[error(transparent)]
    Revision(#[from] RevisionError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Update(#[from] crate::update::UpdateError),
}

type Sampler = Arc<dyn Fn(&[f64], u64) -> Result<Vec<f64>, CompositionError> + Send + Sync>;
type Density = Arc<dyn Fn(&[f64], &[f64]) -> Result<f64, CompositionError> + Send + Sync>;

/// A mechanism as a value: seeded sampler, optional density evaluator,
/// budget metadata, optional invariant its outputs respect.
#[derive(Clone)]
pub struct MechanismHandle {
    sampler: Sampler,
    density: Option<Density>,
    pub budget: PrivacyParams,
    pub invariant: Option<Invariant>,
    pub dim: usize,
}

impl MechanismHandle {
    pub fn new(
        dim: usize,
        budget: PrivacyParams,
        invariant: Option<Invariant>,
        sampler: impl Fn(&[f64], u64) -> Result<Vec<f64>, CompositionError> + Send + Sync + 'static,
    ) -> Self {
        MechanismHandle { sampler: Arc::new(sampler), density: None, budget, invariant, dim }
    }

    pub fn with_density(
        mut self,
        density: impl Fn(&[f64], &[f64]) -> Result<f64, CompositionError> + Send + Sync + 'static,
    ) -> Self {
        self.density = Some(Arc::new(density));
        self
    }

    /// Unconstrained additive mechanism from a noise spec.
    pub fn additive(noise: NoiseSpec, budget: PrivacyParams) -> Self {
        let dim = noise.dim;
        MechanismHandle::new(dim, budget, None, move |fval, seed| {
            Ok(crate::mechanisms::sample_additive(fval, &noise, seed)?)
        })
        .with_density(move |fval, z| {
            let u: Vec<f64> = z.iter().zip(fval).map(|(a, b)| a - b).collect();
            Ok(noise.density(&u)?)
        })
    }

    pub fn sample(&self, fval: &[f64], seed: u64) -> Result<Vec<f64>, CompositionError> {
        (self.sampler)(fval, seed)
    }

    /// Density of the output at `z` given the true value `fval`, when known.
    pub fn density(&self, fval: &[f64], z: &[f64]) -> Option<Result<f64, CompositionError>> {
        self.density.as_ref().map(|d| d(fval, z))
    }
}

/// Joint mechanism: runs every component on its own slice of the input with
/// an independent derived sub-stream and concatenates the outputs. Budget is
/// the sum of component budgets; the invariant is the product invariant.
pub fn compose_basic(ms: &[MechanismHandle]) -> Result<MechanismHandle, CompositionError> {
    if ms.is_empty() {
        return Err(CompositionError::EmptyList);
    }
    let dim: usize = ms.iter().map(|m| m.dim).sum();
    let epsilon: f64 = ms.iter().map(|m| m.budget.epsilon).sum();
    let delta: f64 = ms.iter().map(|m| m.budget.delta).sum();
    let budget = PrivacyParams::new(epsilon, delta)?;
    let invariant = ms
        .iter()
        .map(|m| m.invariant.clone().unwrap_or_else(|| vacuous(m.dim)))
        .reduce(|a, b| a.product(&b));
    let any_constrained = ms.iter().any(|m| m.invariant.is_some());
    let parts: Vec<MechanismHandle> = ms.to_vec();
    Ok(MechanismHandle::new(
        dim,
        budget,
        if any_constrained { invariant } else { None },
        move |fval, seed| {
            if fval.len() != dim {
                return Err(MechanismError::DimensionMismatch { expected: dim, got: fval.len() }.into());
            }
            let mut out = Vec::with_capacity(dim);
            let mut offset = 0;
            for (i, m) in parts.iter().enumerate() {
                let block = &fval[offset..offset + m.dim];
                out.extend(m.sample(block, rng::derive(seed, i as u64))?);
                offset += m.dim;
            }
            Ok(out)
        },
    ))
}

fn vacuous(dim: usize) -> Invariant {
    Invariant::Inequality(AffineInequality::halfspace(&vec![0.0; dim], -1.0))
}

/// Diagnostics of a disjoint-union draw: the convex weight λ on the first
/// invariant and its standard error when Monte-Carlo estimated.
#[derive(Debug, Clone, Copy)]
pub struct UnionDiagnostics {
    pub lambda: f64,
    pub lambda_std_err: Option<f64>,
    pub chose_first: bool,
}

/// Conditional mechanism on a disjoint union C ∪ C': computes the
/// data-dependent weight λ = P(C) / (P(C) + P(C')) under the unconstrained
/// mechanism, flips a λ-biased coin, and samples the chosen conditional
/// mechanism by rejection. Both invariants must be positive-mass
/// (inequality) sets; disjointness is the caller's assertion.
pub fn disjoint_union_sampler(
    fval: &[f64],
    noise: &NoiseSpec,
    c1: &AffineInequality,
    c2: &AffineInequality,
    seed: u64,
) -> Result<(Vec<f64>, UnionDiagnostics), CompositionError> {
    let (p1, se1) = revision::invariant_mass(fval, noise, c1)?;
    let (p2, se2) = revision::invariant_mass(fval, noise, c2)?;
    let total = p1 + p2;
    if total < 1e-12 {
        return Err(CompositionError::ZeroMass);
    }
    let lambda = p1 / total;
    // first-order propagation of independent mass errors through the ratio
    let lambda_std_err = match (se1, se2) {
        (None, None) => None,
        (a, b) => {
            let s1 = a.unwrap_or(0.0);
            let s2 = b.unwrap_or(0.0);
            Some(((p2 * s1).hypot(p1 * s2)) / (total * total))
        }
    };
    let mut r = rng::stream(rng::derive(seed, 0));
    let chose_first = r.gen::<f64>() < lambda;
    let target = if chose_first { c1 } else { c2 };
    let draw = revision::rejection_sample(fval, noise, target, rng::derive(seed, 1), 1_000_000)?;
    Ok((draw, UnionDiagnostics { lambda, lambda_std_err, chose_first }))
}

/// Probabilistic mixture of mechanisms: draws component i with probability
/// `weights[i]`, then samples it. Budget is the componentwise max of the
/// component budgets; this is our reading for heterogeneous components, and
/// it coincides with the common budget when all components share one.
pub fn mixture_mechanism(
    ms: &[MechanismHandle],
    weights: &[f64],
) -> Result<MechanismHandle, CompositionError> {
    if ms.is_empty() {
        return Err(CompositionError::EmptyList);
    }
    if ms.len() != weights.len() {
        return Err(CompositionError::LengthMismatch { weights: weights.len(), mechanisms: ms.len() });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CompositionError::WeightError(sum));
    }
    let dim = ms[0].dim;
    if ms.iter().any(|m| m.dim != dim) {
        return Err(CompositionError::MixedDimensions);
    }
    let epsilon = ms.iter().map(|m| m.budget.epsilon).fold(0.0, f64::max);
    let delta = ms.iter().map(|m| m.budget.delta).fold(0.0, f64::max);
    let budget = PrivacyParams::new(epsilon, delta)?;
    let invariant = ms[0].invariant.clone();
    let parts: Vec<MechanismHandle> = ms.to_vec();
    let w: Vec<f64> = weights.to_vec();
    let densities: Option<Vec<Density>> =
        parts.iter().map(|m| m.density.clone()).collect::<Option<Vec<_>>>();
    let handle = MechanismHandle::new(dim, budget, invariant, move |fval, seed| {
        let mut r = rng::stream(rng::derive(seed, 0));
        let u: f64 = r.gen();
        let mut acc = 0.0;
        let mut idx = w.len() - 1;
        for (i, &wi) in w.iter().enumerate() {
            acc += wi;
            if u < acc {
                idx = i;
                break;
            }
        }
        parts[idx].sample(fval, rng::derive(seed, 1 + idx as u64))
    });
    Ok(match densities {
        Some(ds) => {
            let w: Vec<f64> = weights.to_vec();
            handle.with_density(move |fval, z| {
                let mut total = 0.0;
                for (d, &wi) in ds.iter().zip(&w) {
                    total += wi * d(fval, z)?;
                }
                Ok(total)
            })
        }
        None => handle,
    })
}

/// Postprocessing wrapper: applies a deterministic map to the mechanism's
/// output. Budget unchanged; the invariant is dropped because `h` need not
/// preserve it.
pub fn postprocess(
    m: &MechanismHandle,
    h: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
) -> MechanismHandle {
    let inner = m.clone();
    MechanismHandle::new(m.dim, m.budget, None, move |fval, seed| {
        Ok(h(&inner.sample(fval, seed)?))
    })
}
