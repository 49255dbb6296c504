#![allow(dead_code)]

use std::path::{Path, PathBuf};

use npat::harness::ExperimentConfig;
use npat::model::{Activation, LayerParams, NetworkModel};
use npat::numerics::{derive_seed, rng_from_seed, seeded_gaussian, Matrix};
use rand::Rng;

pub fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Loads a shipped config and redirects its output into `out`.
pub fn shipped_config(name: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&repo_path(&format!("configs/{name}"))).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Random ReLU network with the given widths; the last layer is affine.
pub fn random_model(dims: &[usize], seed: u64, scale: f64) -> NetworkModel {
    let mut layers: Vec<LayerParams> = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| LayerParams {
            weight: seeded_gaussian(w[1], w[0], derive_seed(seed, &[i as u64, 0]), scale),
            bias: seeded_gaussian(1, w[1], derive_seed(seed, &[i as u64, 1]), scale).into_data(),
            activation: Activation::Relu,
        })
        .collect();
    let mut last = layers.pop().unwrap();
    last.activation = Activation::Identity;
    NetworkModel::new(layers, last).unwrap()
}

/// Random widths `[d, hidden.., c]` with `c < last hidden width`.
pub fn random_dims(seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let d = rng.random_range(2..=5);
    let depth = rng.random_range(1..=2);
    let c = rng.random_range(2..=4);
    let mut dims = vec![d];
    for _ in 0..depth {
        dims.push(rng.random_range(c + 1..=7));
    }
    dims.push(c);
    dims
}

pub fn random_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().max_abs()
}
