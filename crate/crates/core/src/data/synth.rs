use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, FeatureBank, FeatureItem, Manifest, Modality};
use crate::autodiff::Tensor2;
use crate::rng::SplitMix64;

/// Parameters of the linear-Gaussian paired-data generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of audio clips.
    pub n_pairs: usize,
    pub latent_dim: usize,
    pub d_a: usize,
    pub d_t: usize,
    pub noise_sigma: f64,
    pub captions_per_audio: usize,
    /// Std-dev of the per-caption latent jitter when `captions_per_audio > 1`.
    pub caption_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pairs: 200,
            latent_dim: 8,
            d_a: 32,
            d_t: 32,
            noise_sigma: 0.1,
            captions_per_audio: 1,
            caption_jitter: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub audio: FeatureBank,
    pub text: FeatureBank,
    pub manifest: Manifest,
    /// Ground-truth latent per audio clip.
    pub latents: Vec<Vec<f64>>,
    /// `d_a x latent` map.
    pub audio_map: Tensor2<f64>,
    /// `d_t x latent` map.
    pub text_map: Tensor2<f64>,
}

/// Draws `u ~ N(0, I)` per clip and emits `audio = P_a u + e_a`,
/// `text = P_t u' + e_t`, with `e ~ N(0, sigma^2)` and `u' = u` (or
/// `u + jitter * N(0, I)` per caption when several are requested).
///
/// Draw order from `SplitMix64::new(seed)`: `P_a` row-major, `P_t`
/// row-major (entries `N(0, 1/latent)`), then per clip `u`, the audio
/// noise, and per caption the optional jitter followed by the text noise.
pub fn make_synthetic_dataset(config: &SynthConfig, seed: u64) -> Result<SyntheticDataset, DataError> {
    let SynthConfig {
        n_pairs,
        latent_dim,
        d_a,
        d_t,
        noise_sigma,
        captions_per_audio,
        caption_jitter,
    } = *config;
    if latent_dim == 0 || latent_dim > d_a.min(d_t) {
        return Err(DataError::InvalidDimensions(format!(
            "need 0 < latent_dim <= min(d_a, d_t); got latent {latent_dim}, d_a {d_a}, d_t {d_t}"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) || !(caption_jitter >= 0.0 && caption_jitter.is_finite()) {
        return Err(DataError::InvalidDimensions(format!(
            "noise_sigma and caption_jitter must be finite and >= 0; got {noise_sigma}, {caption_jitter}"
        )));
    }
    if captions_per_audio == 0 {
        return Err(DataError::InvalidDimensions("captions_per_audio must be >= 1".into()));
    }

    let mut rng = SplitMix64::new(seed);
    let scale = 1.0 / (latent_dim as f64).sqrt();
    let mut draw_map = |rows: usize| Tensor2::from_fn(rows, latent_dim, |_, _| rng.normal() * scale);
    let audio_map = draw_map(d_a);
    let text_map = draw_map(d_t);

    let project = |map: &Tensor2<f64>, u: &[f64], noise: &mut dyn FnMut() -> f64| -> Vec<f32> {
        (0..map.rows())
            .map(|r| {
                let clean: f64 = map.row(r).iter().zip(u).map(|(p, x)| p * x).sum();
                (clean + noise_sigma * noise()) as f32
            })
            .collect()
    };

    let mut audio_items = Vec::with_capacity(n_pairs);
    let mut text_items = Vec::with_capacity(n_pairs * captions_per_audio);
    let mut pairs = Vec::with_capacity(n_pairs * captions_per_audio);
    let mut captions = BTreeMap::new();
    let mut latents = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let u: Vec<f64> = (0..latent_dim).map(|_| rng.normal()).collect();
        let audio_id = format!("a{i:05}");
        audio_items.push(FeatureItem {
            id: audio_id.clone(),
            vector: project(&audio_map, &u, &mut || rng.normal()),
        });
        let mut group = Vec::with_capacity(captions_per_audio);
        for c in 0..captions_per_audio {
            let caption_latent: Vec<f64> = if captions_per_audio > 1 {
                u.iter().map(|x| x + caption_jitter * rng.normal()).collect()
            } else {
                u.clone()
            };
            let text_id = format!("t{i:05}_{c}");
            text_items.push(FeatureItem {
                id: text_id.clone(),
                vector: project(&text_map, &caption_latent, &mut || rng.normal()),
            });
            pairs.push((audio_id.clone(), text_id.clone()));
            group.push(text_id);
        }
        captions.insert(audio_id, group);
        latents.push(u);
    }

    Ok(SyntheticDataset {
        audio: FeatureBank::from_items(Modality::Audio, d_a, audio_items)?,
        text: FeatureBank::from_items(Modality::Text, d_t, text_items)?,
        manifest: Manifest {
            pairs,
            captions,
            validation_audio: None,
        },
        latents,
        audio_map,
        text_map,
    })
}
