//! Shared fixtures for the benchmarks.

use fedsim_core::{generate_synthetic, init_params, LabeledExample, ModelParameters, ModelSpec, SyntheticSpec};

/// The reference MLP (8 inputs, 16 hidden units, 8 classes) with seeded
/// weights and `n` synthetic examples.
pub fn reference_mlp(n_per_class: usize) -> (ModelSpec, ModelParameters, Vec<LabeledExample>) {
    let spec = ModelSpec::mlp(8, 16, 8);
    let params = init_params(&spec, 1).expect("valid spec");
    let data = generate_synthetic(&SyntheticSpec {
        num_classes: 8,
        input_dim: 8,
        examples_per_class: n_per_class,
        cluster_spread: 0.5,
        seed: 2,
    })
    .expect("valid synthetic spec");
    (spec, params, data)
}
