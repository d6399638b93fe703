use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

/// Draws additive Gaussian noise and an inverted-dropout mask for an
/// `n × d` matrix, row by row. The mask entries are `0` or `1 / (1 - p)`.
pub fn sample_perturbation(n: usize, d: usize, sigma: f64, p: f64, rng: &mut impl RngCore) -> (Vec<f64>, Vec<f64>) {
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let mut noise = Vec::with_capacity(n * d);
    let mut mask = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        let z: f64 = rng.sample(StandardNormal);
        noise.push(sigma * z);
        mask.push(if rng.random::<f64>() < keep { scale } else { 0.0 });
    }
    (noise, mask)
}

/// `X' = (X + N(0, σ²I)) ⊙ M / (1 - p)` with `M ~ Bernoulli(1 - p)`
/// elementwise. `σ = 0, p = 0` returns `X` unchanged.
pub fn perturb_input(x: &[f64], n: usize, d: usize, sigma: f64, p: f64, rng: &mut impl RngCore) -> Vec<f64> {
    assert_eq!(x.len(), n * d, "perturb_input: matrix is not {n}x{d}");
    if sigma == 0.0 && p == 0.0 {
        return x.to_vec();
    }
    let (noise, mask) = sample_perturbation(n, d, sigma, p, rng);
    x.iter().zip(noise).zip(mask).map(|((&v, e), m)| (v + e) * m).collect()
}
