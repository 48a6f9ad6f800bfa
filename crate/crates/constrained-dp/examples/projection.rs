//! Imaging by L2 projection: exact affine projection, the top-down
//! baseline, and Dykstra's alternating projections when a nonnegativity
//! constraint joins the equalities.

use constrained_dp::invariants::{AffineInequality, Hierarchy, Invariant};
use constrained_dp::mechanisms::{sample_additive, NoiseSpec};
use constrained_dp::update::{project, project_affine, topdown};

fn main() {
    let h = Hierarchy::new(vec![
        ("root".into(), None, 1),
        ("a".into(), Some("root".into()), 2),
        ("b".into(), Some("root".into()), 2),
        ("c".into(), Some("root".into()), 2),
    ])
    .unwrap();
    let x = h.consistent_fill(&[2.0, 3.0, 5.0]).unwrap();
    let noise = NoiseSpec::laplace(1.0, 4).unwrap();
    let noisy = sample_additive(&x, &noise, 5).unwrap();
    println!("noisy (inconsistent): {noisy:?}");

    let eq = h.to_equalities();
    let imaged = project_affine(&noisy, &eq).unwrap();
    println!("L2 projection:        {imaged:?}");
    assert!(eq.residual(&imaged).unwrap() < 1e-9);

    let td = topdown(&h, &noisy).unwrap();
    println!("top-down baseline:    {td:?}");
    assert!(eq.residual(&td).unwrap() < 1e-9);

    // add x >= 0 and project onto the intersection
    let inv = Invariant::Intersection(eq.clone(), AffineInequality::nonneg(4));
    let constrained = project(&[-1.0, 4.0, 6.0, 12.0], &inv, 1e-10, 100_000).unwrap();
    println!("equality + nonneg:    {constrained:?}");
    assert!(inv.contains(&constrained, 1e-8).unwrap());
}
