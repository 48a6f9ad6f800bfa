//! Composing constrained mechanisms: joint release with additive budgets,
//! a disjoint-union conditional mechanism, mixtures, and postprocessing.

use constrained_dp::composition::{
    compose_basic, disjoint_union_sampler, mixture_mechanism, postprocess, MechanismHandle,
};
use constrained_dp::invariants::AffineInequality;
use constrained_dp::mechanisms::{NoiseSpec, PrivacyParams};

fn main() {
    let m1 = MechanismHandle::additive(
        NoiseSpec::laplace(2.0, 2).unwrap(),
        PrivacyParams::pure(0.5).unwrap(),
    );
    let m2 = MechanismHandle::additive(
        NoiseSpec::laplace(2.0, 1).unwrap(),
        PrivacyParams::pure(0.5).unwrap(),
    );

    let joint = compose_basic(&[m1.clone(), m2.clone()]).unwrap();
    println!("joint budget: epsilon = {}", joint.budget.epsilon);
    println!("joint draw:   {:?}", joint.sample(&[1.0, 2.0, 3.0], 7).unwrap());

    // disjoint union of two halfspaces around the true value: the sampler
    // weighs the branches by their mass under the unconstrained mechanism
    let noise = NoiseSpec::laplace(1.0, 1).unwrap();
    let c1 = AffineInequality::halfspace(&[1.0], 0.5); // u >= 0.5
    let c2 = AffineInequality::halfspace(&[-1.0], 2.0); // u <= -2
    let (draw, diag) = disjoint_union_sampler(&[0.0], &noise, &c1, &c2, 3).unwrap();
    println!("union draw {draw:?}, lambda = {:.4} (chose_first = {})", diag.lambda, diag.chose_first);

    let mix = mixture_mechanism(&[m2.clone(), m2.clone()], &[0.3, 0.7]).unwrap();
    println!("mixture budget (max rule): epsilon = {}", mix.budget.epsilon);

    let rounded = postprocess(&m2, |z| z.iter().map(|v| v.round()).collect());
    println!("postprocessed draw: {:?}", rounded.sample(&[10.2], 5).unwrap());
    assert_eq!(rounded.budget.epsilon, m2.budget.epsilon);
}
