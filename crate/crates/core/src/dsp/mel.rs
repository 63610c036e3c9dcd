use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, DspError};
use crate::autodiff::Tensor2;

/// Power floor applied before the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32000,
            window: 1024,
            hop: 320,
            n_mels: 64,
            fmin: 50.0,
            fmax: 14000.0,
        }
    }
}

impl MelConfig {
    pub fn n_bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// `floor((len - window) / hop) + 1`, or zero for clips shorter than a window.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.hop + 1
        }
    }

    fn validate(&self) -> Result<(), DspError> {
        let bad = |msg: String| Err(DspError::InvalidConfig(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be > 0".into());
        }
        if self.window < 2 || self.hop == 0 || self.n_mels == 0 {
            return bad(format!(
                "window {} / hop {} / n_mels {} must be positive (window >= 2)",
                self.window, self.hop, self.n_mels
            ));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {nyquist} Hz, got fmin {} fmax {}",
                self.fmin, self.fmax
            ));
        }
        Ok(())
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, peak height 1, no area
/// normalization.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `n_mels` rows of `n_bins` weights.
    weights: Vec<Vec<f64>>,
    /// `(lower, center, upper)` edge frequencies per filter, in Hz.
    edges: Vec<(f64, f64, f64)>,
    bin_hz: f64,
}

impl MelFilterbank {
    pub fn new(config: &MelConfig) -> Result<Self, DspError> {
        config.validate()?;
        let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
        let step = (hi - lo) / (config.n_mels + 1) as f64;
        let points: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(lo + step * i as f64))
            .collect();
        let bin_hz = config.sample_rate as f64 / config.window as f64;
        let mut weights = Vec::with_capacity(config.n_mels);
        let mut edges = Vec::with_capacity(config.n_mels);
        for m in 0..config.n_mels {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            let row = (0..config.n_bins())
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let rise = (f - left) / (center - left);
                    let fall = (right - f) / (right - center);
                    rise.min(fall).max(0.0)
                })
                .collect();
            weights.push(row);
            edges.push((left, center, right));
        }
        Ok(Self {
            weights,
            edges,
            bin_hz,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, band: usize) -> &[f64] {
        &self.weights[band]
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.edges[band].1
    }

    pub fn edges_hz(&self, band: usize) -> (f64, f64, f64) {
        self.edges[band]
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    /// Mel energies of one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// `frames x n_mels` natural-log mel energies.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Tensor2<f32>,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn mel_bins(&self) -> usize {
        self.values.cols()
    }

    /// Temporal mean of the frames: one clip-level vector.
    pub fn mean_pool(&self) -> Vec<f32> {
        let frames = self.frames().max(1) as f64;
        (0..self.mel_bins())
            .map(|j| {
                let s: f64 = (0..self.frames()).map(|i| self.values.get(i, j) as f64).sum();
                (s / frames) as f32
            })
            .collect()
    }
}

/// Hann-windowed STFT, power spectrum, mel filterbank, log.
///
/// No centering or edge padding; the FFT size equals the window size.
pub struct LogMelExtractor {
    config: MelConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(config: MelConfig) -> Result<Self, DspError> {
        let filterbank = MelFilterbank::new(&config)?;
        let n = config.window;
        // Periodic Hann.
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            config,
            window,
            filterbank,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn log_mel(&self, clip: &AudioClip) -> Result<MelSpectrogram, DspError> {
        if clip.sample_rate != self.config.sample_rate {
            return Err(DspError::SampleRateMismatch {
                expected: self.config.sample_rate,
                got: clip.sample_rate,
            });
        }
        let (win, hop) = (self.config.window, self.config.hop);
        if clip.len() < win {
            return Err(DspError::TooShort {
                len: clip.len(),
                window: win,
            });
        }
        let frames = self.config.frame_count(clip.len());
        let n_mels = self.filterbank.n_mels();
        let mut values = Vec::with_capacity(frames * n_mels);
        let mut buffer = vec![Complex::new(0.0, 0.0); win];
        let mut power = vec![0.0; self.config.n_bins()];
        for frame in 0..frames {
            let start = frame * hop;
            for (slot, (&s, &w)) in buffer
                .iter_mut()
                .zip(clip.samples[start..start + win].iter().zip(&self.window))
            {
                *slot = Complex::new(s as f64 * w, 0.0);
            }
            self.fft.process(&mut buffer);
            for (p, c) in power.iter_mut().zip(&buffer) {
                *p = c.norm_sqr();
            }
            values.extend(
                self.filterbank
                    .apply(&power)
                    .into_iter()
                    .map(|e| e.max(LOG_FLOOR).ln() as f32),
            );
        }
        let values = Tensor2::new(frames, n_mels, values)
            .expect("log-mel values are finite by construction");
        Ok(MelSpectrogram { values })
    }

    /// Mean-pooled log-mel vector for one clip.
    pub fn clip_features(&self, clip: &AudioClip) -> Result<Vec<f32>, DspError> {
        Ok(self.log_mel(clip)?.mean_pool())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extractor() -> LogMelExtractor {
        LogMelExtractor::new(MelConfig::default()).unwrap()
    }

    #[test]
    fn one_window_gives_one_frame() {
        let clip = AudioClip::new(vec![0.1; 1024], 32000);
        let spec = extractor().log_mel(&clip).unwrap();
        assert_eq!(spec.frames(), 1);
        assert_eq!(spec.mel_bins(), 64);
    }

    #[test]
    fn silence_hits_the_floor_exactly() {
        let clip = AudioClip::new(vec![0.0; 5000], 32000);
        let spec = extractor().log_mel(&clip).unwrap();
        let floor = LOG_FLOOR.ln() as f32;
        assert!(spec.values.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn short_clip_and_rate_mismatch_are_errors() {
        let ex = extractor();
        assert!(matches!(
            ex.log_mel(&AudioClip::new(vec![0.0; 1023], 32000)),
            Err(DspError::TooShort { len: 1023, .. })
        ));
        assert!(matches!(
            ex.log_mel(&AudioClip::new(vec![0.0; 2048], 16000)),
            Err(DspError::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn filters_are_nonnegative_unimodal_and_cover_the_range() {
        let config = MelConfig::default();
        let fb = MelFilterbank::new(&config).unwrap();
        for m in 0..fb.n_mels() {
            let w = fb.weights(m);
            assert!(w.iter().all(|&x| x >= 0.0));
            let peak = w
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(w[peak] > 0.0, "band {m} is empty");
            assert!(w[..=peak].windows(2).all(|p| p[0] <= p[1]), "band {m} rises");
            assert!(w[peak..].windows(2).all(|p| p[0] >= p[1]), "band {m} falls");
        }
        for k in 0..config.n_bins() {
            let f = k as f64 * fb.bin_hz();
            if f > config.fmin && f < config.fmax {
                let total: f64 = (0..fb.n_mels()).map(|m| fb.weights(m)[k]).sum();
                assert!(total > 0.0, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let config = MelConfig {
            fmax: 20000.0,
            ..MelConfig::default()
        };
        assert!(matches!(MelFilterbank::new(&config), Err(DspError::InvalidConfig(_))));
    }

    #[test]
    fn doubling_amplitude_adds_log4() {
        let ex = extractor();
        let samples: Vec<f32> = (0..4000).map(|i| ((i as f32) * 0.37).sin() * 0.3).collect();
        let loud: Vec<f32> = samples.iter().map(|s| s * 2.0).collect();
        let a = ex.log_mel(&AudioClip::new(samples, 32000)).unwrap();
        let b = ex.log_mel(&AudioClip::new(loud, 32000)).unwrap();
        let floor = LOG_FLOOR.ln() as f32;
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            if *x > floor + 1.0 {
                assert!((y - x - 4f32.ln()).abs() < 1e-4, "{x} -> {y}");
            }
        }
    }
}
