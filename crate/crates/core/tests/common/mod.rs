#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::Array2;
use plasticity_core::data::{load_mnist_idx, MnistData};
use plasticity_core::model::{evaluate, init_mlp, LabeledBatch, ParamSet};
use plasticity_core::rng::rng_stream;

/// A small random network and batch.
pub struct TinyCase {
    pub params: ParamSet,
    pub batch: LabeledBatch,
}

pub fn tiny_case(seed: u64, sizes: &[usize], batch_size: usize) -> TinyCase {
    let params = init_mlp(&mut rng_stream(seed, "test-init", 0), sizes).unwrap();
    let mut rng = rng_stream(seed, "test-data", 0);
    let inputs = Array2::from_shape_fn((batch_size, sizes[0]), |_| rng.uniform());
    let k = *sizes.last().unwrap() as u64;
    let labels = (0..batch_size).map(|_| rng.below(k) as usize).collect();
    TinyCase {
        params,
        batch: LabeledBatch::new(inputs, labels).unwrap(),
    }
}

/// Random layer sizes: 2..6 inputs, 1..3 hidden layers of width 2..5, 2..4 outputs.
pub fn random_sizes(seed: u64) -> Vec<usize> {
    let mut rng = rng_stream(seed, "test-sizes", 0);
    let mut sizes = vec![rng.range(2, 7) as usize];
    for _ in 0..rng.range(1, 4) {
        sizes.push(rng.range(2, 6) as usize);
    }
    sizes.push(rng.range(2, 5) as usize);
    sizes
}

/// Smallest |pre-activation| over every hidden unit and example, computed
/// with a plain loop independent of the library's forward pass.
pub fn min_hidden_preactivation(params: &ParamSet, batch: &LabeledBatch) -> f64 {
    let sizes = params.layer_sizes().to_vec();
    let vals = params.values();
    let mut min = f64::INFINITY;
    for row in batch.inputs().rows() {
        let mut act: Vec<f64> = row.to_vec();
        let mut offset = 0;
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let w = &vals[offset..offset + fan_in * fan_out];
            let b = &vals[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let z: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + (0..fan_in).map(|i| w[o * fan_in + i] * act[i]).sum::<f64>())
                .collect();
            if l + 1 < sizes.len() - 1 {
                min = z.iter().fold(min, |m, v| m.min(v.abs()));
                act = z.into_iter().map(|v| v.max(0.0)).collect();
            }
        }
    }
    min
}

pub fn loss_at(params: &ParamSet, batch: &LabeledBatch, w: &[f64]) -> f64 {
    evaluate(&params.with_values(w.to_vec()).unwrap(), batch).unwrap()
}

pub fn central_gradient(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|i| {
            probe[i] = w[i] + h;
            let up = f(&probe);
            probe[i] = w[i] - h;
            let down = f(&probe);
            probe[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let da: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let db: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / da.max(db).max(1e-300)
}

pub fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn load_mnist() -> MnistData {
    let dir = mnist_dir();
    load_mnist_idx(&dir).unwrap_or_else(|e| panic!("MNIST not available at {}: {e}", dir.display()))
}
