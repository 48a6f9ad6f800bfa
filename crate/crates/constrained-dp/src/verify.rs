//! Quantitative checks for the toolkit's privacy and utility claims.
//!
//! Closed-form variances of the constrained releases, density-ratio privacy
//! audits on grids, KL divergence on finite states, and MCMC chain
//! diagnostics. Everything here is pure; grid evaluations can be partitioned
//! by the caller.

use thiserror::Error;

use crate::belief::FiniteBeliefState;
use crate::revision::{batch_means_ess, SampleSet};

/// Slack added to the epsilon bound in analytic audits; covers floating-point
/// roundoff only.
pub const ANALYTIC_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("n must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("densities disagree about support at grid point {index}: {d1:.3e} vs {d2:.3e}")]
    SupportMismatch { index: usize, d1: f64, d2: f64 },
    #[error("q({0}) > 0 where p({0}) = 0; KL is undefined")]
    AbsoluteContinuityViolation(usize),
    #[error("states have different world counts: {0} vs {1}")]
    StateMismatch(usize, usize),
    #[error("need at least 100 draws for diagnostics, got {0}")]
    TooFewSamples(usize),
}

/// Marginal variance of one coordinate of n=3 i.i.d. Laplace(λ) noise
/// conditioned on the coordinates summing to zero: (5/6)λ².
pub fn analytic_conditioned_variance_n3(lambda: f64) -> Result<f64, VerifyError> {
    if !(lambda > 0.0) {
        return Err(VerifyError::InvalidScale(lambda));
    }
    Ok(5.0 * lambda * lambda / 6.0)
}

/// Per-coordinate variance of the L2-projected Laplace(λ) release under the
/// sum constraint in dimension n: 2λ²(1 − 1/n).
pub fn analytic_imaging_variance(lambda: f64, n: usize) -> Result<f64, VerifyError> {
    if !(lambda > 0.0) {
        return Err(VerifyError::InvalidScale(lambda));
    }
    if n < 2 {
        return Err(VerifyError::InvalidDimension(n));
    }
    Ok(2.0 * lambda * lambda * (1.0 - 1.0 / n as f64))
}

/// Result of a density-ratio audit: the epsilon-DP ratio condition checked
/// pointwise over a grid.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub max_log_ratio: f64,
    pub epsilon_target: f64,
    pub grid_spec: String,
    pub pass: bool,
    /// `epsilon_target + slack - max_log_ratio`; negative on failure.
    pub margin: f64,
}

/// Checks e^{-ε} ≤ d1/d2 ≤ e^{ε} over a grid of points. Both evaluators must
/// agree on support: a point where exactly one vanishes is a hard error, a
/// point where both vanish is skipped.
pub fn privacy_audit<F1, F2>(
    d1: F1,
    d2: F2,
    epsilon: f64,
    grid: &[Vec<f64>],
    slack: f64,
) -> Result<AuditReport, VerifyError>
where
    F1: Fn(&[f64]) -> f64,
    F2: Fn(&[f64]) -> f64,
{
    let mut max_log_ratio: f64 = 0.0;
    for (i, point) in grid.iter().enumerate() {
        let a = d1(point);
        let b = d2(point);
        if (a == 0.0) != (b == 0.0) {
            return Err(VerifyError::SupportMismatch { index: i, d1: a, d2: b });
        }
        if a == 0.0 {
            continue;
        }
        max_log_ratio = max_log_ratio.max((a.ln() - b.ln()).abs());
    }
    let margin = epsilon + slack - max_log_ratio;
    Ok(AuditReport {
        max_log_ratio,
        epsilon_target: epsilon,
        grid_spec: format!("{} points, dim {}", grid.len(), grid.first().map_or(0, |p| p.len())),
        pass: margin >= 0.0,
        margin,
    })
}

/// Regular 1-D audit grid on `[lo, hi]` with `n` points.
pub fn grid_1d(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64])
        .collect()
}

/// KL divergence Σ q(ω) log(q(ω)/p(ω)) with the 0·log 0 = 0 convention.
pub fn kl_divergence(q: &FiniteBeliefState, p: &FiniteBeliefState) -> Result<f64, VerifyError> {
    if q.probs().len() != p.probs().len() {
        return Err(VerifyError::StateMismatch(q.probs().len(), p.probs().len()));
    }
    let mut total = 0.0;
    for (i, (&qi, &pi)) in q.probs().iter().zip(p.probs()).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(VerifyError::AbsoluteContinuityViolation(i));
        }
        total += qi * (qi / pi).ln();
    }
    Ok(total.max(0.0))
}

/// Chain-quality summary for a constrained MH run.
#[derive(Debug, Clone)]
pub struct McmcDiagnostics {
    pub acceptance_rate: f64,
    /// Minimum batch-means ESS across coordinates (50 batches).
    pub ess: f64,
    pub per_coordinate_mean: Vec<f64>,
    pub per_coordinate_variance: Vec<f64>,
    pub n_draws: usize,
}

pub fn mcmc_diagnostics(s: &SampleSet) -> Result<McmcDiagnostics, VerifyError> {
    let n = s.draws.len();
    if n < 100 {
        return Err(VerifyError::TooFewSamples(n));
    }
    let dim = s.draws[0].len();
    let mut mean = vec![0.0; dim];
    for d in &s.draws {
        for (m, x) in mean.iter_mut().zip(d) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; dim];
    for d in &s.draws {
        for ((v, x), m) in var.iter_mut().zip(d).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    for v in &mut var {
        *v /= n as f64;
    }
    let mut ess = f64::INFINITY;
    let mut series = vec![0.0; n];
    for c in 0..dim {
        for (s_i, d) in series.iter_mut().zip(&s.draws) {
            *s_i = d[c];
        }
        ess = ess.min(batch_means_ess(&series, 50));
    }
    Ok(McmcDiagnostics {
        acceptance_rate: s.acceptance_rate,
        ess,
        per_coordinate_mean: mean,
        per_coordinate_variance: var,
        n_draws: n,
    })
}
