#![allow(dead_code)]

use rkb::ModelSpec64;

/// F = 0, G = Q = R = 1, T = 1, mu = 0.5, x0 = 0.
pub fn bench(steps: usize) -> ModelSpec64 {
    ModelSpec64::scalar(0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.5, 1.0, steps).unwrap()
}

pub fn scalar(f: f64, g: f64, q: f64, r: f64, mu: f64, horizon: f64, steps: usize) -> ModelSpec64 {
    ModelSpec64::scalar(f, 0.0, g, 0.0, q, r, 0.0, mu, horizon, steps).unwrap()
}

/// (mean, standard error of the mean).
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
