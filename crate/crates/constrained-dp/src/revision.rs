//! Constrained DP as belief revision: the conditional mechanism `M(·|C)`.
//!
//! Two cases, by the mass of the invariant under the unconstrained mechanism:
//!
//! - positive mass (typically inequality invariants): the conditional density
//!   is the unconstrained density restricted to `C` and renormalized by
//!   `P(C)`; exact sampling by rejection.
//! - measure zero (affine-equality invariants): the density lives on the
//!   free-coordinate chart of the constraint set, renormalized by the
//!   constant `K_C`, which depends only on `C` and the noise law. The
//!   Jacobian of the chart is constant and cancels between numerator and
//!   `K_C`. Sampling via a constrained Metropolis–Hastings chain that
//!   proposes free (leaf) coordinates and reconstructs the dependent ones,
//!   so every draw satisfies the equalities exactly.

use rand::Rng;
use thiserror::Error;

use crate::invariants::{
    solve_free_parametrization, AffineEquality, AffineInequality, Hierarchy,
    Invariant, InvariantError,
};
use crate::mechanisms::{MechanismError, NoiseSpec};
use crate::quad::{self, QuadError};
use crate::rng;

/// Fixed internal stream for Monte-Carlo mass estimates, so conditional
/// densities are deterministic values.
const MASS_SEED: u64 = 0x5eed_c0de;
const MASS_DRAWS: u64 = 100_000;

#[derive(Debug, Error)]
pub enum RevisionError {
    #[error("f(D) does not lie in the equality invariant (residual {residual:.3e}); Def.-style invariants require it")]
    InfeasibleInvariant { residual: f64 },
    #[error("invariant mass is below 1e-12 under the mechanism; conditioning is numerically undefined")]
    ZeroMass,
    #[error("no accepted draw after {0} rejections; the invariant mass is tiny, use the MH sampler")]
    AcceptanceTimeout(u64),
    #[error("initial state violates the inequality constraint (violation {0:.3e})")]
    InfeasibleStart(f64),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionCase {
    PositiveMass,
    MeasureZero,
}

/// Which density the MH acceptance ratio uses: the product over all
/// coordinates of the constrained vector, or only over the free (leaf)
/// coordinates. The two agree whenever the constraint leaves a single noise
/// scale in play; `FullProduct` is the default reading of the hierarchical
/// acceptance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityMode {
    FullProduct,
    FreeOnly,
}

/// Conditional density of `M(D) | C` for an additive mechanism.
///
/// In the measure-zero case the density is taken w.r.t. Lebesgue measure on
/// the free-coordinate chart; in the positive-mass case w.r.t. Lebesgue
/// measure on the ambient space.
pub struct ConditionalDensity {
    fval: Vec<f64>,
    noise: NoiseSpec,
    invariant: Invariant,
    case: ConditionCase,
    normalizer: f64,
    normalizer_std_err: Option<f64>,
    membership_tol: f64,
}

impl ConditionalDensity {
    pub fn case(&self) -> ConditionCase {
        self.case
    }

    /// `K_C` in the measure-zero case, `P_{M(D)}(C)` in the positive-mass case.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Standard error of the normalizer when it was Monte-Carlo estimated.
    pub fn normalizer_std_err(&self) -> Option<f64> {
        self.normalizer_std_err
    }

    /// Density at a full output vector `z`; zero off the invariant.
    pub fn eval(&self, z: &[f64]) -> Result<f64, RevisionError> {
        if z.len() != self.noise.dim {
            return Err(MechanismError::DimensionMismatch { expected: self.noise.dim, got: z.len() }.into());
        }
        if !self.invariant.contains(z, self.membership_tol)? {
            return Ok(0.0);
        }
        let u: Vec<f64> = z.iter().zip(&self.fval).map(|(a, b)| a - b).collect();
        Ok((self.noise.log_density(&u)? - self.normalizer.ln()).exp())
    }

    /// Log density at `z`; `-inf` off the invariant.
    pub fn log_eval(&self, z: &[f64]) -> Result<f64, RevisionError> {
        if !self.invariant.contains(z, self.membership_tol)? {
            return Ok(f64::NEG_INFINITY);
        }
        let u: Vec<f64> = z.iter().zip(&self.fval).map(|(a, b)| a - b).collect();
        Ok(self.noise.log_density(&u)? - self.normalizer.ln())
    }
}

/// Builds the conditional density of an additive mechanism under an
/// invariant, selecting the positive-mass or measure-zero machinery
/// automatically: any affine-equality component forces the measure-zero
/// change-of-variables path.
pub fn conditional_density(
    fval: &[f64],
    noise: &NoiseSpec,
    inv: &Invariant,
) -> Result<ConditionalDensity, RevisionError> {
    if fval.len() != noise.dim {
        return Err(MechanismError::DimensionMismatch { expected: noise.dim, got: fval.len() }.into());
    }
    match inv.equality() {
        Some(eq) => {
            let residual = eq.residual(fval)?;
            let tol = 1e-9 * fval.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            if residual > tol {
                return Err(RevisionError::InfeasibleInvariant { residual });
            }
            let noise_inv = match inv {
                Invariant::Intersection(_, iq) => {
                    // restate the inequality in noise coordinates u = z - fval
                    let shifted = iq.rhs() - iq.matrix() * nalgebra::DVector::from_column_slice(fval);
                    Invariant::Intersection(
                        eq.homogeneous(),
                        AffineInequality::new(iq.matrix().clone(), shifted)?,
                    )
                }
                _ => Invariant::Equality(eq.homogeneous()),
            };
            let (k, se) = normalizing_constant_for(noise, &noise_inv)?;
            Ok(ConditionalDensity {
                fval: fval.to_vec(),
                noise: *noise,
                invariant: inv.clone(),
                case: ConditionCase::MeasureZero,
                normalizer: k,
                normalizer_std_err: se,
                membership_tol: 1e-9,
            })
        }
        None => {
            let iq = inv.inequality().expect("invariant without equality must carry inequalities");
            let (mass, se) = invariant_mass(fval, noise, iq)?;
            if mass < 1e-12 {
                return Err(RevisionError::ZeroMass);
            }
            Ok(ConditionalDensity {
                fval: fval.to_vec(),
                noise: *noise,
                invariant: inv.clone(),
                case: ConditionCase::PositiveMass,
                normalizer: mass,
                normalizer_std_err: se,
                membership_tol: 0.0,
            })
        }
    }
}

/// `P(fval + U ∈ C)` for an inequality invariant: closed form via per-
/// coordinate CDFs when each row touches one distinct coordinate, otherwise
/// a seeded Monte-Carlo estimate with its standard error.
pub fn invariant_mass(
    fval: &[f64],
    noise: &NoiseSpec,
    iq: &AffineInequality,
) -> Result<(f64, Option<f64>), RevisionError> {
    if let Some(mass) = analytic_halfspace_mass(fval, noise, iq) {
        return Ok((mass, None));
    }
    let mut r = rng::stream(MASS_SEED);
    let mut hits = 0u64;
    let mut u = vec![0.0; noise.dim];
    let mut z = vec![0.0; noise.dim];
    for _ in 0..MASS_DRAWS {
        for (ui, (zi, f)) in u.iter_mut().zip(z.iter_mut().zip(fval)) {
            *ui = noise.sample1(&mut r);
            *zi = f + *ui;
        }
        if iq.contains(&z, 0.0)? {
            hits += 1;
        }
    }
    let p = hits as f64 / MASS_DRAWS as f64;
    let se = (p * (1.0 - p) / MASS_DRAWS as f64).sqrt();
    Ok((p, Some(se)))
}

fn analytic_halfspace_mass(fval: &[f64], noise: &NoiseSpec, iq: &AffineInequality) -> Option<f64> {
    let mut used = vec![false; iq.dim()];
    let mut mass = 1.0;
    for r in 0..iq.rows() {
        let row = iq.matrix().row(r);
        let mut nz = None;
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                if nz.is_some() {
                    return None;
                }
                nz = Some((c, v));
            }
        }
        let (c, coef) = nz?;
        if used[c] {
            return None;
        }
        used[c] = true;
        // coef * (fval_c + U) >= rhs
        let t = (iq.rhs()[r] - coef * fval[c]) / coef;
        mass *= if coef > 0.0 { 1.0 - noise.cdf1(t) } else { noise.cdf1(t) };
    }
    Some(mass)
}

/// The constant `K_C` of the measure-zero conditional density: the integral
/// of the unconstrained noise density over the free-coordinate chart of
/// {u : A u = 0}. Depends only on the constraint set and the noise law.
///
/// Returns `(value, std_err)`; the standard error is present only for the
/// importance-sampling path used above 4 free coordinates.
pub fn normalizing_constant(
    noise: &NoiseSpec,
    eq: &AffineEquality,
) -> Result<(f64, Option<f64>), RevisionError> {
    normalizing_constant_for(noise, &Invariant::Equality(eq.homogeneous()))
}

fn normalizing_constant_for(
    noise: &NoiseSpec,
    noise_inv: &Invariant,
) -> Result<(f64, Option<f64>), RevisionError> {
    let eq = noise_inv.equality().expect("measure-zero case requires equalities");
    let param = solve_free_parametrization(&eq.homogeneous())?;
    let nf = param.n_free();
    let indicator = |u: &[f64]| -> f64 {
        match noise_inv.inequality() {
            Some(iq) => {
                if iq.contains(u, 0.0).unwrap_or(false) {
                    1.0
                } else {
                    0.0
                }
            }
            None => 1.0,
        }
    };
    if nf == 0 {
        return Ok((1.0, None));
    }
    if nf <= 4 {
        // log density at the chart origin sets the overall magnitude; the
        // quadrature runs on the exp of the shifted log density
        let origin = param.solve(&vec![0.0; nf])?;
        let log0 = noise.log_density(&origin)?;
        let g = |v: &[f64]| -> f64 {
            let u = param.solve(v).expect("chart dimension fixed");
            let ld = noise.log_density(&u).expect("dimension fixed");
            indicator(&u) * (ld - log0).exp()
        };
        let spread = noise.scale * param.max_row_l1().max(1.0);
        let half = match noise.kind {
            crate::mechanisms::NoiseKind::Laplace => 60.0 * spread,
            crate::mechanisms::NoiseKind::Gaussian => 14.0 * spread,
        };
        let lo = vec![-half; nf];
        let hi = vec![half; nf];
        let rel_tol = if nf <= 2 { 1e-7 } else { 1e-5 };
        let coarse = quad::integrate_box(&g, &lo, &hi, 1e-3 * noise.scale.powi(nf as i32))?;
        let value = quad::integrate_box(&g, &lo, &hi, rel_tol * coarse.abs().max(f64::MIN_POSITIVE))?;
        Ok((value * log0.exp(), None))
    } else {
        // importance sampling: free coordinates drawn from their own noise
        // marginals, weight = product of dependent-coordinate densities
        let mut r = rng::stream(MASS_SEED ^ 0xabcd);
        let draws = 200_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let v: Vec<f64> = (0..nf).map(|_| noise.sample1(&mut r)).collect();
            let u = param.solve(&v)?;
            let mut w = indicator(&u);
            if w > 0.0 {
                for &idx in param.pivot_indices() {
                    w *= noise.density1(u[idx]);
                }
            }
            sum += w;
            sumsq += w * w;
        }
        let mean = sum / draws as f64;
        let var = (sumsq / draws as f64 - mean * mean).max(0.0);
        Ok((mean, Some((var / draws as f64).sqrt())))
    }
}

/// Exact conditional sampling for positive-mass invariants: redraws the
/// unconstrained mechanism until the output lands in `C`.
pub fn rejection_sample(
    fval: &[f64],
    noise: &NoiseSpec,
    inv: &AffineInequality,
    seed: u64,
    max_tries: u64,
) -> Result<Vec<f64>, RevisionError> {
    if fval.len() != noise.dim {
        return Err(MechanismError::DimensionMismatch { expected: noise.dim, got: fval.len() }.into());
    }
    let mut r = rng::stream(seed);
    let mut z = vec![0.0; noise.dim];
    for _ in 0..max_tries {
        for (zi, f) in z.iter_mut().zip(fval) {
            *zi = f + noise.sample1(&mut r);
        }
        if inv.contains(&z, 0.0)? {
            return Ok(z);
        }
    }
    Err(RevisionError::AcceptanceTimeout(max_tries))
}

/// Metropolis–Hastings configuration. The chain updates one free coordinate
/// per step in a systematic scan with a Gaussian random-walk proposal; the
/// proposal is symmetric, so the Hastings correction cancels in the
/// acceptance ratio. Single-coordinate updates keep the acceptance rate
/// usable at any dimension, where a joint proposal pays a log-density cost
/// growing with the coordinate count and stalls.
#[derive(Debug, Clone)]
pub struct MhConfig {
    /// Random-walk standard deviation for the single updated coordinate.
    /// Defaults to the noise scale divided by the number of density terms a
    /// coordinate move touches (its own plus dependent coordinates). The
    /// default stays proportional to the noise scale, so chains at
    /// different privacy budgets share one trajectory shape under common
    /// random numbers.
    pub proposal_scale: Option<f64>,
    pub n_samples: usize,
    /// Counted in coordinate proposals, like `thinning`.
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub density_mode: DensityMode,
    /// Initialize at a random feasible point instead of at `fval`.
    pub random_init: bool,
}

impl MhConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        MhConfig {
            proposal_scale: None,
            n_samples,
            burn_in: 10_000,
            thinning: 1,
            seed,
            density_mode: DensityMode::FullProduct,
            random_init: false,
        }
    }
}

/// Output of a constrained MH run. Every draw satisfies the equality
/// constraints exactly (they are reconstructed, not sampled) and any
/// inequality constraint by the acceptance indicator.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub draws: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    /// Batch-means effective sample size of the first coordinate.
    pub ess: f64,
    pub seed: u64,
    /// Set when acceptance rate < 1% or ESS < 50; the chain is suspect but
    /// the draws are still returned.
    pub warning: Option<String>,
}

/// Batch-means effective sample size with `n_batches` batches.
pub fn batch_means_ess(series: &[f64], n_batches: usize) -> f64 {
    let n = series.len();
    if n < 2 * n_batches {
        return 1.0;
    }
    let m = n / n_batches;
    let used = m * n_batches;
    let mean = series[..used].iter().sum::<f64>() / used as f64;
    let var = series[..used].iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / used as f64;
    if var <= 0.0 {
        return 1.0;
    }
    let mut var_bm = 0.0;
    for b in 0..n_batches {
        let bm = series[b * m..(b + 1) * m].iter().sum::<f64>() / m as f64;
        var_bm += (bm - mean) * (bm - mean);
    }
    var_bm /= n_batches as f64;
    if var_bm <= 0.0 {
        return used as f64;
    }
    let tau = m as f64 * var_bm / var;
    (used as f64 / tau).min(used as f64).max(1.0)
}

struct MhState<'a> {
    noise: &'a NoiseSpec,
    fval: &'a [f64],
    mode: DensityMode,
    free_coords: Vec<usize>,
}

impl MhState<'_> {
    fn log_target(&self, x: &[f64]) -> f64 {
        match self.mode {
            DensityMode::FullProduct => x
                .iter()
                .zip(self.fval)
                .map(|(xi, fi)| self.noise.log_density1(xi - fi))
                .sum(),
            DensityMode::FreeOnly => self
                .free_coords
                .iter()
                .map(|&i| self.noise.log_density1(x[i] - self.fval[i]))
                .sum(),
        }
    }
}

fn run_mh<F>(
    fval: &[f64],
    noise: &NoiseSpec,
    ineq: Option<&AffineInequality>,
    cfg: &MhConfig,
    free_coords: Vec<usize>,
    init: Vec<f64>,
    default_scale: f64,
    mut reconstruct: F,
) -> Result<SampleSet, RevisionError>
where
    F: FnMut(&mut Vec<f64>),
{
    let scale = cfg.proposal_scale.unwrap_or(default_scale);
    let gaussian_step = NoiseSpec::gaussian(scale, 1).expect("positive proposal scale");
    let mh = MhState { noise, fval, mode: cfg.density_mode, free_coords };

    if let Some(iq) = ineq {
        let v = iq.violation(&init)?;
        if v > 0.0 {
            return Err(RevisionError::InfeasibleStart(v));
        }
    }

    let mut r = rng::stream(cfg.seed);
    let mut current = init;
    let mut current_lp = mh.log_target(&current);
    let mut candidate = current.clone();
    let total_steps = cfg.burn_in + cfg.n_samples * cfg.thinning;
    let mut accepted = 0u64;
    let mut draws = Vec::with_capacity(cfg.n_samples);

    let n_free = mh.free_coords.len().max(1);
    for step in 0..total_steps {
        candidate.copy_from_slice(&current);
        let i = mh.free_coords[step % n_free];
        candidate[i] += gaussian_step.sample1(&mut r);
        reconstruct(&mut candidate);
        let feasible = match ineq {
            Some(iq) => iq.violation(&candidate)? <= 0.0,
            None => true,
        };
        if feasible {
            let cand_lp = mh.log_target(&candidate);
            let log_u = (r.gen::<f64>().max(f64::MIN_POSITIVE)).ln();
            if log_u < cand_lp - current_lp {
                std::mem::swap(&mut current, &mut candidate);
                current_lp = cand_lp;
                accepted += 1;
            }
        } else {
            // still consumes the uniform so chains with and without the
            // inequality stay aligned per step count
            let _ = r.gen::<f64>();
        }
        if step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thinning == 0 {
            draws.push(current.clone());
        }
    }

    let acceptance_rate = accepted as f64 / total_steps as f64;
    let series: Vec<f64> = draws.iter().map(|d| d[0]).collect();
    let ess = batch_means_ess(&series, 50);
    let warning = if acceptance_rate < 0.01 || ess < 50.0 {
        Some(format!(
            "chain may not have converged: acceptance rate {acceptance_rate:.4}, ess {ess:.1}"
        ))
    } else {
        None
    };
    Ok(SampleSet { draws, acceptance_rate, ess, seed: cfg.seed, warning })
}

/// Constrained MH over a hierarchy: leaf coordinates move under the random
/// walk, every internal coordinate is recomputed as the sum of its children,
/// and an optional inequality enters the acceptance indicator.
pub fn mh_sample(
    fval: &[f64],
    noise: &NoiseSpec,
    h: &Hierarchy,
    ineq: Option<&AffineInequality>,
    cfg: &MhConfig,
) -> Result<SampleSet, RevisionError> {
    if fval.len() != h.node_count() || noise.dim != h.node_count() {
        return Err(MechanismError::DimensionMismatch { expected: h.node_count(), got: fval.len() }.into());
    }
    let eq = h.to_equalities();
    let tol = 1e-9 * fval.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let residual = eq.residual(fval)?;
    if residual > tol {
        return Err(RevisionError::InfeasibleInvariant { residual });
    }
    let free_coords: Vec<usize> = (0..h.n_leaves()).collect();
    let mut init = fval.to_vec();
    if cfg.random_init {
        let mut r = rng::stream(rng::derive(cfg.seed, u64::MAX));
        for i in 0..h.n_leaves() {
            init[i] += noise.sample1(&mut r);
        }
        h.refresh_internal(&mut init);
    }
    // a leaf move touches its own density term plus one ancestor per level
    let default_scale = noise.scale / h.max_level().max(1) as f64;
    let hier = h.clone();
    run_mh(fval, noise, ineq, cfg, free_coords, init, default_scale, move |x| {
        hier.refresh_internal(x)
    })
}

/// Constrained MH over a general affine equality: free chart coordinates move
/// under the random walk and dependent coordinates are solved from the
/// constraint system.
pub fn mh_sample_equality(
    fval: &[f64],
    noise: &NoiseSpec,
    eq: &AffineEquality,
    ineq: Option<&AffineInequality>,
    cfg: &MhConfig,
) -> Result<SampleSet, RevisionError> {
    let tol = 1e-9 * fval.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let residual = eq.residual(fval)?;
    if residual > tol {
        return Err(RevisionError::InfeasibleInvariant { residual });
    }
    let param = solve_free_parametrization(eq)?;
    let free_coords = param.free_indices().to_vec();
    let mut init = fval.to_vec();
    if cfg.random_init {
        let mut r = rng::stream(rng::derive(cfg.seed, u64::MAX));
        let mut v = param.free_of(&init)?;
        for vi in &mut v {
            *vi += noise.sample1(&mut r);
        }
        init = param.solve(&v)?;
    }
    // average number of density terms a single free-coordinate move touches:
    // its own plus every dependent coordinate whose chart row involves it,
    // probed through the parametrization itself
    let base = param.solve(&vec![0.0; param.n_free()])?;
    let mut touched = 0usize;
    for j in 0..param.n_free() {
        let mut unit = vec![0.0; param.n_free()];
        unit[j] = 1.0;
        let moved = param.solve(&unit)?;
        touched += moved
            .iter()
            .zip(&base)
            .filter(|(a, b)| (**a - **b).abs() > 1e-12)
            .count();
    }
    let avg_terms = touched as f64 / param.n_free().max(1) as f64;
    let default_scale = noise.scale / avg_terms.max(1.0);
    run_mh(fval, noise, ineq, cfg, free_coords, init, default_scale, move |x| {
        let v: Vec<f64> = param.free_indices().iter().map(|&i| x[i]).collect();
        let solved = param.solve(&v).expect("chart dimension fixed");
        x.copy_from_slice(&solved);
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{Event, FiniteBeliefState};

    #[test]
    fn k_constant_n3_sum_zero_laplace() {
        // K_C = (1/(2 lambda))^3 * (3/2) lambda^2 = 3 / (16 lambda)
        for lambda in [0.5, 1.0, 2.0] {
            let noise = NoiseSpec::laplace(lambda, 3).unwrap();
            let eq = AffineEquality::sum_constraint(3, 0.0);
            let (k, se) = normalizing_constant(&noise, &eq).unwrap();
            assert!(se.is_none());
            let expected = 3.0 / (16.0 * lambda);
            assert!((k - expected).abs() / expected < 1e-4, "lambda={lambda}: {k} vs {expected}");
        }
    }

    #[test]
    fn k_constant_n2_sum_zero_laplace() {
        // closed form: (1/(2 lambda))^2 * integral exp(-2|u|/lambda) du = 1/(4 lambda)
        let noise = NoiseSpec::laplace(1.3, 2).unwrap();
        let eq = AffineEquality::sum_constraint(2, 0.0);
        let (k, _) = normalizing_constant(&noise, &eq).unwrap();
        let expected = 1.0 / (4.0 * 1.3);
        assert!((k - expected).abs() / expected < 1e-5, "{k} vs {expected}");
    }

    #[test]
    fn k_constant_n3_sum_zero_gaussian() {
        // degenerate trivariate normal: K = integral over the chart of the
        // spherical density; compare against the closed form
        // (2 pi s^2)^{-3/2} * 2 pi s^2 / sqrt(3) = 1 / (sqrt(3) * sqrt(2 pi) * s)
        let s = 0.9;
        let noise = NoiseSpec::gaussian(s, 3).unwrap();
        let eq = AffineEquality::sum_constraint(3, 0.0);
        let (k, _) = normalizing_constant(&noise, &eq).unwrap();
        let expected = 1.0 / (3.0f64.sqrt() * (2.0 * std::f64::consts::PI).sqrt() * s);
        assert!((k - expected).abs() / expected < 1e-5, "{k} vs {expected}");
    }

    #[test]
    fn k_is_data_independent() {
        let noise = NoiseSpec::laplace(1.0, 3).unwrap();
        let eq = AffineEquality::sum_constraint(3, 5.0);
        let d1 = conditional_density(&[1.0, 1.0, 3.0], &noise, &Invariant::Equality(eq.clone())).unwrap();
        let d2 = conditional_density(&[5.0, 0.0, 0.0], &noise, &Invariant::Equality(eq)).unwrap();
        assert_eq!(d1.normalizer(), d2.normalizer());
    }

    #[test]
    fn conditional_density_chart_values() {
        // h(u1, u2) = exp(-(|u1|+|u2|+|u1+u2|)/lambda) / ((3/2) lambda^2) in
        // the unnormalized-exponential convention; our eval returns the full-
        // density convention, which differs by the (2 lambda)^3 prefactor.
        let lambda = 1.0;
        let noise = NoiseSpec::laplace(lambda, 3).unwrap();
        let eq = AffineEquality::sum_constraint(3, 0.0);
        let d = conditional_density(&[0.0; 3], &noise, &Invariant::Equality(eq)).unwrap();
        assert_eq!(d.case(), ConditionCase::MeasureZero);
        let (u1, u2) = (0.4, -0.9);
        let z = [u1, u2, -(u1 + u2)];
        let got = d.eval(&z).unwrap();
        // unnormalized-exponential convention; equals the full-density
        // convention p_U(z)/K_C with K_C = 3/(16 lambda) after the (2
        // lambda)^3 prefactor cancels
        let h = (-(u1.abs() + u2.abs() + (u1 + u2).abs()) / lambda).exp() / (1.5 * lambda * lambda);
        let direct = noise.density(&z).unwrap() / (3.0 / (16.0 * lambda));
        // the normalizer is quadrature-estimated, so allow its tolerance
        assert!((got - direct).abs() / direct < 1e-4, "{got} vs {direct}");
        assert!((got - h).abs() / h < 1e-4, "conventions must agree: {got} vs {h}");
        // off the constraint set the density vanishes
        assert_eq!(d.eval(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn infeasible_fval_rejected() {
        let noise = NoiseSpec::laplace(1.0, 3).unwrap();
        let eq = AffineEquality::sum_constraint(3, 0.0);
        let res = conditional_density(&[1.0, 1.0, 1.0], &noise, &Invariant::Equality(eq));
        assert!(matches!(res, Err(RevisionError::InfeasibleInvariant { .. })));
    }

    #[test]
    fn halfspace_conditional_density_is_doubled_laplace() {
        let noise = NoiseSpec::laplace(1.0, 1).unwrap();
        let inv = Invariant::Inequality(AffineInequality::halfspace(&[1.0], 0.0));
        let d = conditional_density(&[0.0], &noise, &inv).unwrap();
        assert_eq!(d.case(), ConditionCase::PositiveMass);
        assert!((d.normalizer() - 0.5).abs() < 1e-12); // analytic path
        for u in [0.1, 0.5, 2.0] {
            let got = d.eval(&[u]).unwrap();
            let expected = 2.0 * noise.density1(u);
            assert!((got - expected).abs() < 1e-12);
        }
        assert_eq!(d.eval(&[-0.5]).unwrap(), 0.0);
    }

    #[test]
    fn rejection_sampler_halfspace_statistics() {
        // mean of the half-Laplace is lambda; acceptance frequency ~ 1/2
        let noise = NoiseSpec::laplace(1.0, 1).unwrap();
        let iq = AffineInequality::halfspace(&[1.0], 0.0);
        let n = 200_000u64;
        let mut sum = 0.0;
        for s in 0..n {
            let z = rejection_sample(&[0.0], &noise, &iq, rng::derive(7, s), 10_000).unwrap();
            sum += z[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn rejection_timeout() {
        let noise = NoiseSpec::laplace(1.0, 1).unwrap();
        let iq = AffineInequality::halfspace(&[1.0], 60.0);
        assert!(matches!(
            rejection_sample(&[0.0], &noise, &iq, 3, 100),
            Err(RevisionError::AcceptanceTimeout(_))
        ));
    }

    #[test]
    fn vacuous_inequality_returns_first_draw() {
        let noise = NoiseSpec::laplace(1.0, 2).unwrap();
        let iq = AffineInequality::halfspace(&[0.0, 0.0], -1.0); // always true
        let z = rejection_sample(&[1.0, 2.0], &noise, &iq, 11, 10).unwrap();
        let direct = crate::mechanisms::sample_additive(&[1.0, 2.0], &noise, 11).unwrap();
        assert_eq!(z, direct);
    }

    #[test]
    fn mh_acceptance_matches_hand_ratio() {
        // symmetric proposal, no inequality: acceptance = min{1, p'/p}
        let noise = NoiseSpec::laplace(1.0, 3).unwrap();
        let fval = [0.0; 3];
        let mh = MhState {
            noise: &noise,
            fval: &fval,
            mode: DensityMode::FullProduct,
            free_coords: vec![0, 1],
        };
        let x = [0.5, -0.2, -0.3];
        let y = [1.0, 0.5, -1.5];
        let got = (mh.log_target(&y) - mh.log_target(&x)).exp().min(1.0);
        let p = |v: &[f64]| noise.density(v).unwrap();
        let expected = (p(&y) / p(&x)).min(1.0);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn mh_hierarchy_draws_are_consistent() {
        let h = Hierarchy::new(vec![
            ("root".into(), None, 1),
            ("a".into(), Some("root".into()), 2),
            ("b".into(), Some("root".into()), 2),
            ("c".into(), Some("root".into()), 2),
        ])
        .unwrap();
        let fval = h.consistent_fill(&[2.0, 3.0, 5.0]).unwrap();
        let noise = NoiseSpec::laplace(1.0, 4).unwrap();
        let mut cfg = MhConfig::new(2_000, 42);
        cfg.burn_in = 500;
        let out = mh_sample(&fval, &noise, &h, None, &cfg).unwrap();
        let eq = h.to_equalities();
        for draw in &out.draws {
            assert!(eq.residual(draw).unwrap() < 1e-9);
        }
        assert!(out.acceptance_rate > 0.05);
    }

    #[test]
    fn mh_flat_sum_marginal_variance() {
        // n = 3 sum-zero, lambda = 1: Var(u1) = 5/6 under the conditional
        // density. Smoke-test version of the acceptance criterion.
        let noise = NoiseSpec::laplace(1.0, 3).unwrap();
        let eq = AffineEquality::sum_constraint(3, 0.0);
        let mut cfg = MhConfig::new(300_000, 9);
        cfg.burn_in = 5_000;
        let out = mh_sample_equality(&[0.0; 3], &noise, &eq, None, &cfg).unwrap();
        let n = out.draws.len() as f64;
        let mean = out.draws.iter().map(|d| d[0]).sum::<f64>() / n;
        let var = out.draws.iter().map(|d| (d[0] - mean) * (d[0] - mean)).sum::<f64>() / n;
        assert!((var - 5.0 / 6.0).abs() / (5.0 / 6.0) < 0.05, "var = {var}");
    }

    #[test]
    fn mh_infeasible_start_detected() {
        let h = Hierarchy::new(vec![
            ("root".into(), None, 1),
            ("a".into(), Some("root".into()), 2),
            ("b".into(), Some("root".into()), 2),
        ])
        .unwrap();
        let fval = h.consistent_fill(&[-5.0, 1.0]).unwrap();
        let noise = NoiseSpec::laplace(1.0, 3).unwrap();
        let iq = AffineInequality::nonneg(3);
        let cfg = MhConfig::new(10, 1);
        assert!(matches!(
            mh_sample(&fval, &noise, &h, Some(&iq), &cfg),
            Err(RevisionError::InfeasibleStart(_))
        ));
    }

    #[test]
    fn ess_degenerate_and_iid() {
        let constant = vec![3.0; 5_000];
        assert!(batch_means_ess(&constant, 50) <= 1.0 + 1e-9);
        let mut r = rng::stream(31);
        let noise = NoiseSpec::gaussian(1.0, 1).unwrap();
        let iid: Vec<f64> = (0..20_000).map(|_| noise.sample1(&mut r)).collect();
        let ess = batch_means_ess(&iid, 50);
        assert!(ess > 0.7 * iid.len() as f64, "ess = {ess}");
    }

    #[test]
    fn discretized_conditional_matches_finite_oracle() {
        // positive-mass case 1 against the finite belief oracle on a grid
        let noise = NoiseSpec::laplace(1.0, 1).unwrap();
        let inv = Invariant::Inequality(AffineInequality::halfspace(&[1.0], 0.3));
        let d = conditional_density(&[0.0], &noise, &inv).unwrap();

        let lo = -6.0;
        let n_bins = 400;
        let w = 12.0 / n_bins as f64;
        let centers: Vec<f64> = (0..n_bins).map(|i| lo + (i as f64 + 0.5) * w).collect();
        let raw: Vec<f64> = centers.iter().map(|&c| noise.density1(c) * w).collect();
        let total: f64 = raw.iter().sum();
        let state = FiniteBeliefState::from_probs(raw.iter().map(|p| p / total).collect()).unwrap();
        let event = Event::from_indices(
            (0..n_bins).filter(|&i| centers[i] >= 0.3),
        );
        let cond = state.condition(&event).unwrap();
        for (i, &c) in centers.iter().enumerate() {
            if c < 0.25 || c > 5.0 {
                continue;
            }
            let oracle = cond.probs()[i];
            let continuous = d.eval(&[c]).unwrap() * w / total;
            assert!(
                (oracle - continuous).abs() < 2e-3,
                "bin {i}: {oracle} vs {continuous}"
            );
        }
    }
}
