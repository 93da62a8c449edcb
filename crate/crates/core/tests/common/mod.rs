//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use fedqp::harness::RunConfig;
use fedqp::{Dataset, LayeredParams, ModelSpec, RandomSource};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn dual_objective_delta(lambda: f64, center: f64, gg: f64, mg: f64) -> f64 {
    // q(l) - q(c) for q(l) = 0.5 l^2 gg + l mg, factored to keep precision near the minimum
    (lambda - center) * (0.5 * (lambda + center) * gg + mg)
}

fn grid_argmin(lo: f64, hi: f64, points: usize, center: f64, gg: f64, mg: f64) -> (f64, f64) {
    let step = (hi - lo) / (points - 1) as f64;
    let mut best = lo;
    let mut best_val = f64::INFINITY;
    for i in 0..points {
        let l = lo + step * i as f64;
        let v = dual_objective_delta(l, center, gg, mg);
        if v < best_val {
            best_val = v;
            best = l;
        }
    }
    (best, step)
}

/// Brute-force minimiser of the scalar dual over a dense grid of 10^6 points
/// on `[0, 10 |mg| / gg + 1]`, refined once around the coarse argmin.
/// Returns `(lambda, mut + lambda * grad)`.
pub fn dual_grid_oracle(mutation: &[f64], grad: &[f64]) -> (f64, Vec<f64>) {
    let gg: f64 = grad.iter().map(|g| g * g).sum();
    let mg: f64 = mutation.iter().zip(grad).map(|(m, g)| m * g).sum();
    let upper = 10.0 * mg.abs() / gg + 1.0;
    let points = 1_000_000;
    let (coarse, step) = grid_argmin(0.0, upper, points, 0.0, gg, mg);
    let lo = (coarse - 4.0 * step).max(0.0);
    let hi = coarse + 4.0 * step;
    let (lambda, _) = grid_argmin(lo, hi, points, coarse, gg, mg);
    let corrected = mutation.iter().zip(grad).map(|(m, g)| m + lambda * g).collect();
    (lambda, corrected)
}

/// Projected gradient descent on the scalar dual with step `1 / (2 gg)`.
pub fn dual_projected_gradient(mutation: &[f64], grad: &[f64]) -> (f64, Vec<f64>) {
    let gg: f64 = grad.iter().map(|g| g * g).sum();
    let mg: f64 = mutation.iter().zip(grad).map(|(m, g)| m * g).sum();
    let step = 0.5 / gg;
    let mut lambda = 0.0f64;
    for _ in 0..200 {
        lambda = (lambda - step * (lambda * gg + mg)).max(0.0);
    }
    let corrected = mutation.iter().zip(grad).map(|(m, g)| m + lambda * g).collect();
    (lambda, corrected)
}

/// Random `(mut, grad)` pair with dimension in `1..=6` and a random scale.
pub fn random_qp_case(rng: &mut RandomSource) -> (Vec<f64>, Vec<f64>) {
    let d = rng.random_range(1..=6);
    let sm = 10f64.powf(rng.random_range(-1.0..1.0));
    let sg = 10f64.powf(rng.random_range(-1.0..1.0));
    let draw = |rng: &mut RandomSource, s: f64| -> Vec<f64> {
        (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            })
            .collect()
    };
    let m = draw(rng, sm);
    let g = draw(rng, sg);
    (m, g)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn random_batch(rng: &mut RandomSource, n: usize, d: usize, c: usize) -> Dataset {
    let features: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    Dataset::new(features, labels, d, c).unwrap()
}

/// Random parameters with nonzero biases so every layer carries gradient.
pub fn random_params(spec: &ModelSpec, rng: &mut RandomSource) -> LayeredParams {
    let mut p = spec.init_params(rng).unwrap();
    for layer in p.layers_mut() {
        for v in &mut layer.data {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    p
}

/// Largest relative error between `backward` and central differences.
/// Relative error is `|a - f| / max(|a|, |f|, 1e-6)`.
pub fn fd_max_rel_error(spec: &ModelSpec, params: &LayeredParams, batch: &Dataset, h: f64) -> f64 {
    let grad = spec.backward(params, batch).unwrap();
    let mut worst: f64 = 0.0;
    for (li, layer) in params.layers().iter().enumerate() {
        for i in 0..layer.data.len() {
            let mut plus = params.clone();
            plus.layers_mut()[li].data[i] += h;
            let mut minus = params.clone();
            minus.layers_mut()[li].data[i] -= h;
            let fd =
                (spec.forward_loss(&plus, batch).unwrap().0 - spec.forward_loss(&minus, batch).unwrap().0) / (2.0 * h);
            let an = grad.layers()[li].data[i];
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

/// Scaled-down comparison setup: 10 Gaussian classes in 32 dimensions,
/// 500 samples per class, 100 clients under Dir(0.1), MLP(32), 100 rounds.
pub fn comparison_config(output_dir: &std::path::Path) -> RunConfig {
    let text = format!(
        r#"
seeds = [0, 1, 2, 3, 4]
output_dir = "{}"

[engine]
num_rounds = 100
num_devices = 100
clients_per_round = 10
strategy = "fedqp"

[engine.mutation]
alpha = 1.0
qp_probability = 0.5
distribution = "signed_gradient"

[model]
architecture = "mlp"
hidden_dim = 32

[data]
num_classes = 10
input_dim = 32
samples_per_class = 500
class_separation = 3.5
noise_std = 1.0

[partition]
mode = "dirichlet"
beta = 0.1
"#,
        output_dir.display()
    );
    RunConfig::from_toml(&text).unwrap()
}

/// Two well separated Gaussian classes, 20 iid clients, 30 rounds of FedAvg.
pub fn sanity_config(output_dir: &std::path::Path) -> RunConfig {
    let text = format!(
        r#"
seeds = [0, 1, 2, 3, 4]
output_dir = "{}"

[engine]
num_rounds = 30
num_devices = 20
clients_per_round = 10
strategy = "fedavg"

[model]
architecture = "logreg"

[data]
num_classes = 2
input_dim = 2
samples_per_class = 500
class_separation = 4.0
noise_std = 0.5

[partition]
mode = "iid"
"#,
        output_dir.display()
    );
    RunConfig::from_toml(&text).unwrap()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
