//! Constrained DP as belief update: L2 projection onto invariants, the imaged
//! mechanism `M_C = f_L2 ∘ M`, and the TopDown hierarchical baseline.

use nalgebra::DVector;
use thiserror::Error;

use crate::invariants::{AffineEquality, AffineInequality, Hierarchy, Invariant, InvariantError};
use crate::mechanisms::{sample_additive, MechanismError, NoiseSpec};

#[derive(Debug, Error)]
pub enum UpdateError {
    #[error("A Aᵀ is numerically singular; the equality system is ill-formed")]
    SingularSystem,
    #[error("Dykstra did not converge after {iters} sweeps (residual {residual:.3e}); the intersection may be empty")]
    NoConvergence { iters: usize, residual: f64 },
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

/// Orthogonal projection onto {z : A z = b}: y − Aᵀ(AAᵀ)⁻¹(Ay − b).
pub fn project_affine(y: &[f64], eq: &AffineEquality) -> Result<Vec<f64>, UpdateError> {
    if y.len() != eq.dim() {
        return Err(InvariantError::DimensionMismatch { expected: eq.dim(), got: y.len() }.into());
    }
    if eq.rows() == 0 {
        return Ok(y.to_vec());
    }
    let a = eq.matrix();
    let yv = DVector::from_column_slice(y);
    let residual = a * &yv - eq.rhs();
    let gram = a * a.transpose();
    let chol = gram.cholesky().ok_or(UpdateError::SingularSystem)?;
    let correction = a.transpose() * chol.solve(&residual);
    Ok((yv - correction).iter().copied().collect())
}

fn project_halfspace(z: &mut DVector<f64>, row: &DVector<f64>, rhs: f64, row_norm_sq: f64) {
    let slack = row.dot(z) - rhs;
    if slack < 0.0 {
        *z -= row * (slack / row_norm_sq);
    }
}

/// Dykstra's alternating projections onto the intersection of an affine set
/// and the halfspaces of `ineq`. Converges to the exact L2 projection for
/// intersections of closed convex sets.
pub fn project_convex(
    y: &[f64],
    eq: Option<&AffineEquality>,
    ineq: &AffineInequality,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, UpdateError> {
    let n = y.len();
    if ineq.dim() != n {
        return Err(InvariantError::DimensionMismatch { expected: ineq.dim(), got: n }.into());
    }
    let m = ineq.rows();
    let rows: Vec<DVector<f64>> = (0..m).map(|r| ineq.matrix().row(r).transpose()).collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.norm_squared()).collect();
    let n_sets = m + usize::from(eq.is_some());

    let mut z = DVector::from_column_slice(y);
    let mut corrections: Vec<DVector<f64>> = vec![DVector::zeros(n); n_sets];
    let mut residual = f64::INFINITY;
    for sweep in 0..max_iter {
        let prev = z.clone();
        let mut set = 0;
        if let Some(eq) = eq {
            let v: Vec<f64> = (&z - &corrections[set]).iter().copied().collect();
            let projected = DVector::from_vec(project_affine(&v, eq)?);
            corrections[set] = &projected - DVector::from_column_slice(&v);
            z = projected;
            set += 1;
        }
        for r in 0..m {
            let mut v = &z - &corrections[set + r];
            let before = v.clone();
            project_halfspace(&mut v, &rows[r], ineq.rhs()[r], norms[r]);
            corrections[set + r] = &v - before;
            z = v;
        }
        let feas_eq = eq.map_or(0.0, |e| {
            e.residual(z.as_slice()).unwrap_or(f64::INFINITY)
        });
        let feas_in = ineq.violation(z.as_slice())?;
        let step = (&z - prev).amax();
        residual = feas_eq.max(feas_in);
        if step <= tol && residual <= tol {
            return Ok(z.iter().copied().collect());
        }
        let _ = sweep;
    }
    Err(UpdateError::NoConvergence { iters: max_iter, residual })
}

/// L2 projection onto a general invariant.
pub fn project(y: &[f64], inv: &Invariant, tol: f64, max_iter: usize) -> Result<Vec<f64>, UpdateError> {
    match inv {
        Invariant::Equality(eq) => project_affine(y, eq),
        Invariant::Inequality(iq) => project_convex(y, None, iq, tol, max_iter),
        Invariant::Intersection(eq, iq) => project_convex(y, Some(eq), iq, tol, max_iter),
    }
}

/// The imaged mechanism `M_C(D) = f_L2(M(D))`: sample the unconstrained
/// additive mechanism, then transport the draw to its closest point in the
/// invariant.
pub fn imaged_mechanism(
    fval: &[f64],
    noise: &NoiseSpec,
    inv: &Invariant,
    seed: u64,
) -> Result<Vec<f64>, UpdateError> {
    let noisy = sample_additive(fval, noise, seed)?;
    project(&noisy, inv, 1e-8, 100_000)
}

/// TopDown consistency baseline: the root keeps its noisy value; descending
/// level by level, each sibling block absorbs its parent's discrepancy in
/// equal shares, so every parent-child sum constraint holds afterwards.
pub fn topdown(h: &Hierarchy, noisy: &[f64]) -> Result<Vec<f64>, UpdateError> {
    if noisy.len() != h.node_count() {
        return Err(InvariantError::DimensionMismatch { expected: h.node_count(), got: noisy.len() }.into());
    }
    let mut x = noisy.to_vec();
    // parents are processed top-down, so each parent value is final before
    // its children are adjusted
    let mut internal: Vec<usize> = (0..h.node_count()).filter(|&i| !h.is_leaf(i)).collect();
    internal.sort_by_key(|&i| h.level_of(i));
    for node in internal {
        let children = h.children(node);
        let k = children.len() as f64;
        let child_sum: f64 = children.iter().map(|&c| x[c]).sum();
        let share = (x[node] - child_sum) / k;
        for &c in children {
            x[c] += share;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariants::solve_free_parametrization;
    use rand::Rng;

    #[test]
    fn projection_onto_sum_zero() {
        let eq = AffineEquality::sum_constraint(3, 0.0);
        let p = project_affine(&[3.0, 0.0, 0.0], &eq).unwrap();
        for (a, b) in p.iter().zip([2.0, -1.0, -1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn feasible_point_is_fixed() {
        let eq = AffineEquality::sum_constraint(3, 6.0);
        let p = project_affine(&[1.0, 2.0, 3.0], &eq).unwrap();
        for (a, b) in p.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_optimality_and_idempotence() {
        let mut rng = crate::rng::stream(21);
        let eq = AffineEquality::from_rows(
            &[vec![1.0, 1.0, 1.0, 1.0], vec![1.0, -1.0, 0.0, 2.0]],
            &[4.0, 1.0],
        )
        .unwrap();
        let param = solve_free_parametrization(&eq).unwrap();
        for _ in 0..200 {
            let y: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
            let p = project_affine(&y, &eq).unwrap();
            assert!(eq.residual(&p).unwrap() < 1e-9);
            // idempotence
            let pp = project_affine(&p, &eq).unwrap();
            for (a, b) in p.iter().zip(&pp) {
                assert!((a - b).abs() < 1e-9);
            }
            // optimality against random feasible points
            let dist = |a: &[f64], b: &[f64]| -> f64 {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            };
            for _ in 0..20 {
                let v: Vec<f64> = (0..param.n_free()).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
                let z = param.solve(&v).unwrap();
                assert!(dist(&p, &y) <= dist(&z, &y) + 1e-9);
            }
        }
    }

    #[test]
    fn dykstra_simplex_corner() {
        let eq = AffineEquality::sum_constraint(2, 1.0);
        let iq = AffineInequality::nonneg(2);
        let p = project_convex(&[-1.0, 2.0], Some(&eq), &iq, 1e-10, 100_000).unwrap();
        assert!((p[0] - 0.0).abs() < 1e-6 && (p[1] - 1.0).abs() < 1e-6, "got {p:?}");
    }

    #[test]
    fn dykstra_interior_point_unchanged() {
        let eq = AffineEquality::sum_constraint(2, 1.0);
        let iq = AffineInequality::nonneg(2);
        let p = project_convex(&[0.5, 0.5], Some(&eq), &iq, 1e-10, 10_000).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-8 && (p[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn imaged_zero_noise_limit() {
        // projecting an already-feasible value returns it
        let eq = AffineEquality::sum_constraint(3, 6.0);
        let p = project_affine(&[1.0, 2.0, 3.0], &eq).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn imaged_laplace_variance_matches_formula() {
        // Var(f_L2(x~) - x)_i = 2 lambda^2 (1 - 1/n); spot-check n = 3 at a
        // looser tolerance than the acceptance suite (fewer draws here).
        let n = 3;
        let fval = vec![0.0; n];
        let noise = NoiseSpec::laplace(1.0, n).unwrap();
        let inv = Invariant::Equality(AffineEquality::sum_constraint(n, 0.0));
        let draws = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for s in 0..draws {
            let out = imaged_mechanism(&fval, &noise, &inv, crate::rng::derive(1234, s)).unwrap();
            sum += out[0];
            sumsq += out[0] * out[0];
        }
        let mean = sum / draws as f64;
        let var = sumsq / draws as f64 - mean * mean;
        let expected = 2.0 * (1.0 - 1.0 / n as f64);
        assert!((var - expected).abs() / expected < 0.05, "var = {var}");
    }

    fn three_level() -> Hierarchy {
        Hierarchy::new(vec![
            ("root".into(), None, 1),
            ("p".into(), Some("root".into()), 2),
            ("q".into(), Some("root".into()), 2),
            ("p1".into(), Some("p".into()), 3),
            ("p2".into(), Some("p".into()), 3),
            ("q1".into(), Some("q".into()), 3),
            ("q2".into(), Some("q".into()), 3),
        ])
        .unwrap()
    }

    #[test]
    fn topdown_consistent_input_unchanged() {
        let h = three_level();
        let x = h.consistent_fill(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = topdown(&h, &x).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn topdown_equal_share_split() {
        let h = Hierarchy::new(vec![
            ("root".into(), None, 1),
            ("a".into(), Some("root".into()), 2),
            ("b".into(), Some("root".into()), 2),
        ])
        .unwrap();
        // coordinates: a, b, root
        let out = topdown(&h, &[4.0, 4.0, 10.0]).unwrap();
        assert_eq!(out, vec![5.0, 5.0, 10.0]);
    }

    #[test]
    fn topdown_three_levels_consistent() {
        let h = three_level();
        let mut rng = crate::rng::stream(4);
        let noisy: Vec<f64> = (0..h.node_count()).map(|_| rng.gen::<f64>() * 10.0).collect();
        let out = topdown(&h, &noisy).unwrap();
        let eq = h.to_equalities();
        assert!(eq.residual(&out).unwrap() < 1e-9);
        // root untouched
        assert_eq!(out[h.node_count() - 1], noisy[h.node_count() - 1]);
    }
}
