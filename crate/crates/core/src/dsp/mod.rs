//! Audio front end: PCM16 WAV loading and log-Mel spectrograms.

mod mel;
mod wav;

pub use mel::{LogMelExtractor, MelConfig, MelFilterbank, MelSpectrogram, LOG_FLOOR};
pub use wav::{load_wav, parse_wav, write_wav_pcm16, AudioClip};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed WAV file: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV encoding: format tag {format_tag}, {bits_per_sample} bits, {channels} channels (need PCM16 mono or stereo)")]
    UnsupportedEncoding {
        format_tag: u16,
        bits_per_sample: u16,
        channels: u16,
    },
    #[error("WAV data chunk is empty")]
    EmptyData,
    #[error("clip has {len} samples, shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("clip sample rate {got} Hz does not match configured {expected} Hz (resampling is not supported)")]
    SampleRateMismatch { expected: u32, got: u32 },
    #[error("invalid mel configuration: {0}")]
    InvalidConfig(String),
}
