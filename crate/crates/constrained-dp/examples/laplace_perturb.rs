//! Calibrating and sampling the additive Laplace mechanism.

use constrained_dp::mechanisms::{calibrate_laplace, sample_additive, NoiseSpec};

fn main() {
    let epsilon = 0.5;
    let sensitivity = 1.0; // counting query
    let lambda = calibrate_laplace(sensitivity, epsilon).unwrap();
    println!("epsilon = {epsilon} -> lambda = {lambda}");

    let counts = [120.0, 45.0, 338.0];
    let noise = NoiseSpec::laplace(lambda, counts.len()).unwrap();
    for seed in 0..3 {
        let noisy = sample_additive(&counts, &noise, seed).unwrap();
        println!("seed {seed}: {noisy:?}");
    }

    // same seed, same draw: the mechanism is a pure function of (data, seed)
    let a = sample_additive(&counts, &noise, 7).unwrap();
    let b = sample_additive(&counts, &noise, 7).unwrap();
    assert_eq!(a, b);
}
