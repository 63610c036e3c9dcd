//! Run configuration: one JSON document covering every subcommand.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use clsr_core::data::SynthConfig;
use clsr_core::dsp::MelConfig;
use clsr_core::{AblationVariant, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "CLSR_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub audio_bank: Option<PathBuf>,
    pub text_bank: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    #[default]
    Val,
    Train,
    All,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Defaults to `final.ckpt` in the output directory.
    pub checkpoint: Option<PathBuf>,
    pub split: SplitKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    pub variants: Vec<AblationVariant>,
    /// Empty means the run seed alone.
    pub seeds: Vec<u64>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            variants: AblationVariant::ALL.to_vec(),
            seeds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for data splits, initialization and batching. `train.seed` is
    /// not accepted in files; it always mirrors this value.
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub data: DataPaths,
    pub train: TrainConfig,
    /// Loss variant used by `train`.
    pub variant: AblationVariant,
    pub dsp: MelConfig,
    pub synth: SynthConfig,
    pub eval: EvalSettings,
    pub ablation: AblationSettings,
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path
            .parent()
            .map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })
            .unwrap_or(Path::new("."));
        let base = base
            .canonicalize()
            .map_err(|e| CliError::Config(format!("{}: {e}", base.display())))?;
        cfg.rebase(&base);
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if value.get("train").and_then(|t| t.get("seed")).is_some() {
            return Err("train.seed: set the seed with the top-level `seed` field".into());
        }
        serde_json::from_value(value).map_err(|e| e.to_string())
    }

    fn paths_mut(&mut self) -> Vec<&mut Option<PathBuf>> {
        vec![
            &mut self.output_dir,
            &mut self.data.audio_bank,
            &mut self.data.text_bank,
            &mut self.data.manifest,
            &mut self.eval.checkpoint,
        ]
    }

    /// Makes every relative path absolute against `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in self.paths_mut() {
            if let Some(path) = p.as_mut() {
                *path = absolute(base, path);
            }
        }
    }

    /// Final seed: flag, then config, then `CLSR_SEED`, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let seed = match flag.or(self.seed) {
            Some(s) => s,
            None => match env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{SEED_ENV}: not an unsigned integer: {v:?}")))?,
                Err(_) => 0,
            },
        };
        self.seed = Some(seed);
        self.train.seed = seed;
        Ok(seed)
    }

    pub fn output_dir(&self) -> Result<&Path, CliError> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("output_dir: not set (use --out or the config field)".into()))
    }

    /// Checks that the dataset paths are set and exist.
    pub fn require_data(&self) -> Result<(&Path, &Path, &Path), CliError> {
        let need = |field: &str, p: &Option<PathBuf>| -> Result<(), CliError> {
            match p {
                None => Err(CliError::Config(format!("data.{field}: not set"))),
                Some(p) if !p.exists() => Err(CliError::Config(format!(
                    "data.{field}: path does not exist: {}",
                    p.display()
                ))),
                Some(_) => Ok(()),
            }
        };
        need("audio_bank", &self.data.audio_bank)?;
        need("text_bank", &self.data.text_bank)?;
        need("manifest", &self.data.manifest)?;
        Ok((
            self.data.audio_bank.as_deref().unwrap(),
            self.data.text_bank.as_deref().unwrap(),
            self.data.manifest.as_deref().unwrap(),
        ))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.ablation.variants.is_empty() {
            return Err(CliError::Config("ablation.variants: must not be empty".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(train) = value.get_mut("train").and_then(|t| t.as_object_mut()) {
            train.remove("seed");
        }
        serde_json::to_string_pretty(&value).expect("config serializes")
    }

    /// Records the resolved configuration as `run.json` in the output directory.
    pub fn write_run_record(&self) -> Result<PathBuf, CliError> {
        let dir = self.output_dir()?;
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("run.json");
        fs::write(&path, self.to_json()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
