//! Additive Laplace and Gaussian privacy mechanisms: noise calibration,
//! seeded sampling, and exact density evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("sensitivity must be positive, got {0}")]
    InvalidSensitivity(f64),
    #[error("invalid privacy budget: epsilon = {epsilon}, delta = {delta}")]
    InvalidBudget { epsilon: f64, delta: f64 },
    #[error("noise scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("expected vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Laplace,
    Gaussian,
}

/// I.i.d. additive noise description: `dim` independent coordinates, each
/// Laplace(scale) or N(0, scale²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub scale: f64,
    pub dim: usize,
}

/// Privacy budget (ε, δ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn pure(epsilon: f64) -> Result<Self, MechanismError> {
        Self::new(epsilon, 0.0)
    }

    pub fn new(epsilon: f64, delta: f64) -> Result<Self, MechanismError> {
        if epsilon <= 0.0 || !(0.0..1.0).contains(&delta) {
            return Err(MechanismError::InvalidBudget { epsilon, delta });
        }
        Ok(PrivacyParams { epsilon, delta })
    }
}

/// A query with caller-supplied sensitivities. For counting or histogram
/// queries over bucketed records use [`QuerySpec::counting`], which sets
/// Δ₁ = Δ₂ = 1 per the add/remove-one-record neighboring relation.
pub struct QuerySpec {
    pub dim: usize,
    pub l1_sensitivity: f64,
    pub l2_sensitivity: f64,
    eval: Box<dyn Fn(&[usize]) -> Vec<f64> + Send + Sync>,
}

impl QuerySpec {
    pub fn new(
        dim: usize,
        l1_sensitivity: f64,
        l2_sensitivity: f64,
        eval: impl Fn(&[usize]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self, MechanismError> {
        if l1_sensitivity < 0.0 {
            return Err(MechanismError::InvalidSensitivity(l1_sensitivity));
        }
        if l2_sensitivity < 0.0 {
            return Err(MechanismError::InvalidSensitivity(l2_sensitivity));
        }
        Ok(QuerySpec { dim, l1_sensitivity, l2_sensitivity, eval: Box::new(eval) })
    }

    /// Histogram of records over `dim` buckets (records are bucket indices).
    pub fn counting(dim: usize) -> Self {
        QuerySpec {
            dim,
            l1_sensitivity: 1.0,
            l2_sensitivity: 1.0,
            eval: Box::new(move |records: &[usize]| {
                let mut counts = vec![0.0; dim];
                for &r in records {
                    counts[r] += 1.0;
                }
                counts
            }),
        }
    }

    pub fn eval(&self, records: &[usize]) -> Vec<f64> {
        let out = (self.eval)(records);
        debug_assert_eq!(out.len(), self.dim);
        out
    }
}

/// Laplace scale for ε-DP: λ = Δ₁/ε.
pub fn calibrate_laplace(delta1: f64, epsilon: f64) -> Result<f64, MechanismError> {
    if delta1 <= 0.0 {
        return Err(MechanismError::InvalidSensitivity(delta1));
    }
    if epsilon <= 0.0 {
        return Err(MechanismError::InvalidBudget { epsilon, delta: 0.0 });
    }
    Ok(delta1 / epsilon)
}

/// Gaussian scale for (ε, δ)-DP: σ = Δ₂·(1 + √(1 + ln(1/δ)))/ε.
pub fn calibrate_gaussian(delta2: f64, params: PrivacyParams) -> Result<f64, MechanismError> {
    if delta2 <= 0.0 {
        return Err(MechanismError::InvalidSensitivity(delta2));
    }
    if params.delta <= 0.0 || params.delta >= 1.0 || params.epsilon <= 0.0 {
        return Err(MechanismError::InvalidBudget { epsilon: params.epsilon, delta: params.delta });
    }
    Ok(delta2 * (1.0 + (1.0 + (1.0 / params.delta).ln()).sqrt()) / params.epsilon)
}

/// The classical Gaussian calibration σ = Δ₂·√(2 ln(1.25/δ))/ε, provided for
/// comparison with [`calibrate_gaussian`].
pub fn calibrate_gaussian_classic(delta2: f64, params: PrivacyParams) -> Result<f64, MechanismError> {
    if delta2 <= 0.0 {
        return Err(MechanismError::InvalidSensitivity(delta2));
    }
    if params.delta <= 0.0 || params.delta >= 1.0 || params.epsilon <= 0.0 {
        return Err(MechanismError::InvalidBudget { epsilon: params.epsilon, delta: params.delta });
    }
    Ok(delta2 * (2.0 * (1.25 / params.delta).ln()).sqrt() / params.epsilon)
}

impl NoiseSpec {
    pub fn laplace(scale: f64, dim: usize) -> Result<Self, MechanismError> {
        if scale <= 0.0 {
            return Err(MechanismError::InvalidScale(scale));
        }
        Ok(NoiseSpec { kind: NoiseKind::Laplace, scale, dim })
    }

    pub fn gaussian(scale: f64, dim: usize) -> Result<Self, MechanismError> {
        if scale <= 0.0 {
            return Err(MechanismError::InvalidScale(scale));
        }
        Ok(NoiseSpec { kind: NoiseKind::Gaussian, scale, dim })
    }

    /// Per-coordinate density at `x`.
    pub fn density1(&self, x: f64) -> f64 {
        match self.kind {
            NoiseKind::Laplace => (-x.abs() / self.scale).exp() / (2.0 * self.scale),
            NoiseKind::Gaussian => {
                let z = x / self.scale;
                (-0.5 * z * z).exp() / (self.scale * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }

    /// Per-coordinate log density at `x`.
    pub fn log_density1(&self, x: f64) -> f64 {
        match self.kind {
            NoiseKind::Laplace => -x.abs() / self.scale - (2.0 * self.scale).ln(),
            NoiseKind::Gaussian => {
                let z = x / self.scale;
                -0.5 * z * z - (self.scale * (2.0 * std::f64::consts::PI).sqrt()).ln()
            }
        }
    }

    /// Per-coordinate CDF at `x`.
    pub fn cdf1(&self, x: f64) -> f64 {
        match self.kind {
            NoiseKind::Laplace => {
                if x < 0.0 {
                    0.5 * (x / self.scale).exp()
                } else {
                    1.0 - 0.5 * (-x / self.scale).exp()
                }
            }
            NoiseKind::Gaussian => 0.5 * erfc_stable(-x / (self.scale * std::f64::consts::SQRT_2)),
        }
    }

    /// Product density of the i.i.d. noise vector at `u`.
    pub fn density(&self, u: &[f64]) -> Result<f64, MechanismError> {
        if u.len() != self.dim {
            return Err(MechanismError::DimensionMismatch { expected: self.dim, got: u.len() });
        }
        Ok(self.log_density(u)?.exp())
    }

    /// Log of the product density; avoids underflow for larger `dim`.
    pub fn log_density(&self, u: &[f64]) -> Result<f64, MechanismError> {
        if u.len() != self.dim {
            return Err(MechanismError::DimensionMismatch { expected: self.dim, got: u.len() });
        }
        Ok(u.iter().map(|&x| self.log_density1(x)).sum())
    }

    /// One noise coordinate drawn from `rng`.
    ///
    /// Laplace uses the inverse-CDF transform of a uniform draw; Gaussian
    /// uses Box–Muller (one value per call, deterministic in the stream).
    pub fn sample1(&self, rng: &mut impl Rng) -> f64 {
        match self.kind {
            NoiseKind::Laplace => {
                let u: f64 = rng.gen::<f64>() - 0.5;
                -self.scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            }
            NoiseKind::Gaussian => {
                let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.gen();
                self.scale
                    * (-2.0 * u1.ln()).sqrt()
                    * (2.0 * std::f64::consts::PI * u2).cos()
            }
        }
    }

    /// Noise vector of length `dim` drawn from `rng`.
    pub fn sample_vec(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim).map(|_| self.sample1(rng)).collect()
    }
}

/// Additive mechanism output `fval + U` for a named seed.
pub fn sample_additive(fval: &[f64], noise: &NoiseSpec, seed: u64) -> Result<Vec<f64>, MechanismError> {
    if fval.len() != noise.dim {
        return Err(MechanismError::DimensionMismatch { expected: noise.dim, got: fval.len() });
    }
    let mut r = rng::stream(seed);
    Ok(fval.iter().map(|&v| v + noise.sample1(&mut r)).collect())
}

// Abramowitz & Stegun 7.1.26 rational approximation, |error| < 1.5e-7,
// ample for CDF-based halfspace masses.
fn erfc_stable(x: f64) -> f64 {
    let sign_neg = x < 0.0;
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erfc = poly * (-x * x).exp();
    if sign_neg {
        2.0 - erfc
    } else {
        erfc
    }
}
