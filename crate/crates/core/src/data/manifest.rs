use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, FeatureBank, Modality};
use crate::autodiff::Tensor2;
use crate::rng::SplitMix64;

/// Audio-text pairing. `captions` carries the one-audio-to-many-captions
/// structure; every pair must appear in its audio's caption group.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub pairs: Vec<(String, String)>,
    #[serde(default)]
    pub captions: BTreeMap<String, Vec<String>>,
    /// Audio ids reserved for validation. When absent a seeded holdout is drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_audio: Option<Vec<String>>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Checks every referenced id against the banks and every pair against
    /// the caption groups.
    pub fn validate(&self, audio: &FeatureBank, text: &FeatureBank) -> Result<(), DataError> {
        let audio_ids: HashSet<&str> = audio.ids().collect();
        let text_ids: HashSet<&str> = text.ids().collect();
        let need = |set: &HashSet<&str>, modality, id: &str| {
            if set.contains(id) {
                Ok(())
            } else {
                Err(DataError::UnknownId {
                    modality,
                    id: id.to_owned(),
                })
            }
        };
        for (a, t) in &self.pairs {
            need(&audio_ids, Modality::Audio, a)?;
            need(&text_ids, Modality::Text, t)?;
            let in_group = self.captions.get(a).is_some_and(|g| g.contains(t));
            if !in_group {
                return Err(DataError::PairNotInCaptions {
                    audio: a.clone(),
                    text: t.clone(),
                });
            }
        }
        for (a, group) in &self.captions {
            need(&audio_ids, Modality::Audio, a)?;
            for t in group {
                need(&text_ids, Modality::Text, t)?;
            }
        }
        for a in self.validation_audio.iter().flatten() {
            need(&audio_ids, Modality::Audio, a)?;
        }
        Ok(())
    }
}

/// Banks and manifest resolved to row indices.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    pub audio: Tensor2<f32>,
    pub text: Tensor2<f32>,
    pub audio_ids: Vec<String>,
    pub text_ids: Vec<String>,
    /// `(audio row, text row)` per manifest pair, in manifest order.
    pub pairs: Vec<(usize, usize)>,
    validation_audio: Option<Vec<usize>>,
}

impl PairedDataset {
    pub fn new(audio: &FeatureBank, text: &FeatureBank, manifest: &Manifest) -> Result<Self, DataError> {
        manifest.validate(audio, text)?;
        let audio_index: HashMap<&str, usize> = audio.ids().enumerate().map(|(i, id)| (id, i)).collect();
        let text_index: HashMap<&str, usize> = text.ids().enumerate().map(|(i, id)| (id, i)).collect();
        let pairs = manifest
            .pairs
            .iter()
            .map(|(a, t)| (audio_index[a.as_str()], text_index[t.as_str()]))
            .collect();
        let validation_audio = manifest
            .validation_audio
            .as_ref()
            .map(|ids| ids.iter().map(|a| audio_index[a.as_str()]).collect());
        Ok(Self {
            audio: audio.to_tensor(),
            text: text.to_tensor(),
            audio_ids: audio.ids().map(str::to_owned).collect(),
            text_ids: text.ids().map(str::to_owned).collect(),
            pairs,
            validation_audio,
        })
    }

    pub fn audio_dim(&self) -> usize {
        self.audio.cols()
    }

    pub fn text_dim(&self) -> usize {
        self.text.cols()
    }

    pub fn all_pairs(&self) -> Vec<usize> {
        (0..self.pairs.len()).collect()
    }

    /// Splits pairs into train and validation by audio item so captions of
    /// one clip never straddle the split. Uses the manifest's designated
    /// validation audio if present, else holds out `round(fraction * n_audio)`
    /// clips chosen by a seeded shuffle.
    pub fn split(&self, fraction: f64, seed: u64) -> Split {
        let held: HashSet<usize> = match &self.validation_audio {
            Some(rows) => rows.iter().copied().collect(),
            None => {
                let mut groups = Vec::new();
                let mut seen = HashSet::new();
                for &(a, _) in &self.pairs {
                    if seen.insert(a) {
                        groups.push(a);
                    }
                }
                SplitMix64::keyed(seed, SPLIT_STREAM).shuffle(&mut groups);
                let n_val = ((fraction * groups.len() as f64).round() as usize).min(groups.len());
                groups.into_iter().take(n_val).collect()
            }
        };
        let (val, train): (Vec<usize>, Vec<usize>) =
            (0..self.pairs.len()).partition(|&i| held.contains(&self.pairs[i].0));
        Split { train, val }
    }
}

const SPLIT_STREAM: u64 = 0x0005_EED5_u64;

/// Pair indices of the training and validation parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureItem;

    fn bank(modality: Modality, ids: &[&str]) -> FeatureBank {
        FeatureBank::from_items(
            modality,
            1,
            ids.iter().enumerate().map(|(i, id)| FeatureItem {
                id: id.to_string(),
                vector: vec![i as f32],
            }),
        )
        .unwrap()
    }

    fn manifest() -> Manifest {
        Manifest::from_json(
            r#"{"pairs": [["a0","t0"],["a0","t1"],["a1","t2"]],
                "captions": {"a0": ["t0","t1"], "a1": ["t2"]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn json_layout() {
        let m = manifest();
        assert_eq!(m.pairs[1], ("a0".to_string(), "t1".to_string()));
        let back = Manifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(Manifest::from_json(r#"{"pairs": [], "typo": 1}"#).is_err());
    }

    #[test]
    fn validation_catches_bad_references() {
        let audio = bank(Modality::Audio, &["a0", "a1"]);
        let text = bank(Modality::Text, &["t0", "t1", "t2"]);
        manifest().validate(&audio, &text).unwrap();

        let mut m = manifest();
        m.pairs.push(("a9".into(), "t0".into()));
        assert!(matches!(m.validate(&audio, &text), Err(DataError::UnknownId { .. })));

        let mut m = manifest();
        m.pairs.push(("a1".into(), "t0".into()));
        assert!(matches!(m.validate(&audio, &text), Err(DataError::PairNotInCaptions { .. })));
    }

    #[test]
    fn split_keeps_caption_groups_together() {
        let audio = bank(Modality::Audio, &["a0", "a1"]);
        let text = bank(Modality::Text, &["t0", "t1", "t2"]);
        let data = PairedDataset::new(&audio, &text, &manifest()).unwrap();
        assert_eq!(data.pairs, vec![(0, 0), (0, 1), (1, 2)]);
        for seed in 0..10 {
            let split = data.split(0.5, seed);
            let val_audio: HashSet<usize> = split.val.iter().map(|&p| data.pairs[p].0).collect();
            let train_audio: HashSet<usize> = split.train.iter().map(|&p| data.pairs[p].0).collect();
            assert_eq!(val_audio.len(), 1);
            assert!(val_audio.is_disjoint(&train_audio));
            assert_eq!(split.train.len() + split.val.len(), 3);
        }
    }

    #[test]
    fn designated_validation_audio_wins() {
        let audio = bank(Modality::Audio, &["a0", "a1"]);
        let text = bank(Modality::Text, &["t0", "t1", "t2"]);
        let mut m = manifest();
        m.validation_audio = Some(vec!["a1".into()]);
        let data = PairedDataset::new(&audio, &text, &m).unwrap();
        assert_eq!(data.split(0.0, 1), Split { train: vec![0, 1], val: vec![2] });
    }
}
