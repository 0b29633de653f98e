//! Central finite-difference check of the analytic gradients.

use cached_dfl::learning::{grad, proximal_loss, Arch, Dataset, ModelParams};
use cached_dfl::rng::{stream, Domain, StreamRng};
use rand::Rng;

pub const H: f64 = 1e-6;
/// Denominator floor of the relative error, so coordinates whose gradient is
/// essentially zero are compared on an absolute scale.
const FLOOR: f64 = 1e-3;

fn random_instance(arch: Arch, rng: &mut StreamRng) -> (ModelParams, ModelParams, Dataset, Vec<usize>, f64) {
    let n = rng.random_range(1..6);
    let dim = arch.input_dim();
    let features = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..arch.classes())).collect();
    let data = Dataset::new(dim, arch.classes(), features, labels).unwrap();
    let w: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
    // the anchor is the epoch-start model, a few SGD steps away from x
    let a = w.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
    let x = ModelParams::from_weights(arch, w).unwrap();
    let anchor = ModelParams::from_weights(arch, a).unwrap();
    let batch = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..n)).collect();
    let rho = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) };
    (x, anchor, data, batch, rho)
}

/// Smallest |pre-activation| of the hidden layer over the batch; finite
/// differences are meaningless within `H` of a rectifier kink.
fn kink_margin(x: &ModelParams, data: &Dataset, batch: &[usize]) -> f64 {
    let Arch::Mlp { input_dim, hidden, .. } = x.arch() else {
        return f64::INFINITY;
    };
    let w = x.weights();
    let bias = hidden * input_dim;
    let mut margin = f64::INFINITY;
    for &i in batch {
        let row = data.row(i);
        for h in 0..hidden {
            let pre: f64 = (0..input_dim).map(|k| w[h * input_dim + k] * row[k]).sum::<f64>() + w[bias + h];
            margin = margin.min(pre.abs());
        }
    }
    margin
}

pub fn max_relative_error(arch: Arch, instances: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, Domain::ModelInit, &[]);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < instances {
        let (x, anchor, data, batch, rho) = random_instance(arch, &mut rng);
        if kink_margin(&x, &data, &batch) < 1e-3 {
            continue;
        }
        checked += 1;
        let analytic = grad(&x, &data, &batch, &anchor, rho).unwrap();
        for (i, a) in analytic.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut w = x.weights().to_vec();
                w[i] += delta;
                let p = ModelParams::from_weights(arch, w).unwrap();
                proximal_loss(&p, &data, &batch, &anchor, rho).unwrap()
            };
            let numeric = (shifted(H) - shifted(-H)) / (2.0 * H);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}
