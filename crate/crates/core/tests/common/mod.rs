#![allow(dead_code)]

use clsr_core::autodiff::{GradCheckConfig, GradCheckReport};
use clsr_core::data::{make_synthetic_dataset, SynthConfig};
use clsr_core::losses::check_objective_gradients;
use clsr_core::rng::SplitMix64;
use clsr_core::{LossConfig, LossWeights, ModelDims, ModelParams, PairedDataset, Tensor2};

pub fn synthetic(config: &SynthConfig, seed: u64) -> PairedDataset {
    let s = make_synthetic_dataset(config, seed).unwrap();
    PairedDataset::new(&s.audio, &s.text, &s.manifest).unwrap()
}

/// Random parameters (init plus noise, so biases are nonzero) and inputs in [-1, 1].
pub fn random_instance(seed: u64, b: usize, dims: ModelDims) -> (ModelParams<f64>, Tensor2<f64>, Tensor2<f64>) {
    let mut rng = SplitMix64::new(seed);
    let mut params = ModelParams::<f64>::init(dims, seed).unwrap();
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.1 * rng.normal();
        }
    }
    let audio = Tensor2::from_fn(b, dims.d_a, |_, _| rng.uniform(-1.0, 1.0));
    let text = Tensor2::from_fn(b, dims.d_t, |_, _| rng.uniform(-1.0, 1.0));
    (params, audio, text)
}

pub fn objective_gradcheck(seed: u64, b: usize, dims: ModelDims, weights: &LossWeights) -> GradCheckReport {
    objective_gradcheck_with(seed, b, dims, weights, &GradCheckConfig::default())
}

pub fn objective_gradcheck_with(
    seed: u64,
    b: usize,
    dims: ModelDims,
    weights: &LossWeights,
    check: &GradCheckConfig,
) -> GradCheckReport {
    let (params, audio, text) = random_instance(seed, b, dims);
    check_objective_gradients(&params, &audio, &text, &LossConfig::full(weights), check).unwrap()
}

/// `count` instances cycling through batch sizes 2, 4, 8 with dims <= 16.
pub fn gradcheck_instances(count: usize) -> Vec<(u64, usize, ModelDims)> {
    let mut rng = SplitMix64::new(0x6AD);
    (0..count)
        .map(|i| {
            let b = [2, 4, 8][i % 3];
            let mut dim = || 2 + rng.below(15);
            let dims = ModelDims {
                d_a: dim(),
                d_t: dim(),
                hidden: dim(),
                embed_dim: dim(),
            };
            (1000 + i as u64, b, dims)
        })
        .collect()
}
