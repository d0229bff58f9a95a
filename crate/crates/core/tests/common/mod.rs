#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slalom_core::model::{make_preset, ModelGraph, Preset};
use slalom_core::quantize::{QuantScheme, QuantizedModel};

pub fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Quantizes and certifies `graph` on 32 random probes.
pub fn certified(graph: &ModelGraph, seed: u64) -> QuantizedModel {
    let mut q = QuantizedModel::quantize(graph, QuantScheme::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<Vec<f32>> = (0..32)
        .map(|_| random_input(&mut rng, q.input_len()))
        .collect();
    assert!(
        q.certify(&probes).unwrap().pass,
        "{} does not certify",
        graph.name
    );
    q
}

pub fn certified_preset(p: Preset) -> QuantizedModel {
    certified(&make_preset(p, 7), 11)
}

pub fn quantized_inputs(q: &QuantizedModel, n: usize, seed: u64) -> Vec<Vec<i64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            q.quantize_input(&random_input(&mut rng, q.input_len()))
                .unwrap()
        })
        .collect()
}
