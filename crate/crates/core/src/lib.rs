//! Contrastive latent space reconstruction for audio-text retrieval.
//!
//! Two modality encoders map precomputed (or log-Mel) features into a shared
//! unit-sphere embedding space. Training minimizes inter- and intra-modal
//! contrastive losses at a batch-adaptive temperature, a similarity-symmetry
//! penalty and a cross-modal reconstruction loss; evaluation reports R@k in
//! both retrieval directions.
//!
//! Module map:
//!
//! * [`autodiff`]: tensors and reverse-mode gradients
//! * [`dsp`]: WAV loading and log-Mel features
//! * [`data`]: feature banks, manifests, synthetic data, batching
//! * [`model`] / [`checkpoint`]: parameters, forward pass, checkpoint files
//! * [`losses`]: the objective
//! * [`trainer`]: optimization loop
//! * [`eval`]: ranking, recall and ablations

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod dsp;
pub mod eval;
pub mod losses;
pub mod model;
pub mod rng;
pub mod trainer;

pub use autodiff::{Graph, NodeId, Tensor2};
pub use checkpoint::Checkpoint;
pub use data::{Batch, FeatureBank, Manifest, Modality, PairedDataset};
pub use eval::{AblationVariant, Direction, EvalReport, RetrievalReport};
pub use losses::{LossBreakdown, LossConfig, LossWeights, Temperature};
pub use model::{ModelDims, ModelParams};

pub use trainer::{OptimizerKind, TrainConfig, TrainOutcome};
