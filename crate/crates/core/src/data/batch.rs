use super::{DataError, PairedDataset};
use crate::autodiff::Tensor2;
use crate::rng::SplitMix64;

/// Aligned rows: row `i` of both tensors comes from pair `indices[i]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub audio: Tensor2<f32>,
    pub text: Tensor2<f32>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn gather(data: &PairedDataset, pair_indices: &[usize]) -> Self {
        let (audio_rows, text_rows): (Vec<usize>, Vec<usize>) =
            pair_indices.iter().map(|&p| data.pairs[p]).unzip();
        Self {
            audio: data.audio.select_rows(&audio_rows),
            text: data.text.select_rows(&text_rows),
            indices: pair_indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One epoch's batch order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    /// Pairs left over after the last full batch.
    pub dropped: usize,
}

/// Shuffles `pool` with a stream keyed by `(seed, epoch)` and cuts it into
/// full batches; a short tail is dropped.
pub fn sample_batches(
    pool: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<BatchPlan, DataError> {
    if batch_size < 2 {
        return Err(DataError::BatchTooSmall(batch_size));
    }
    let mut order = pool.to_vec();
    SplitMix64::keyed(seed, epoch as u64).shuffle(&mut order);
    let full = order.len() / batch_size;
    let batches = order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect();
    Ok(BatchPlan {
        batches,
        dropped: order.len() - full * batch_size,
    })
}
