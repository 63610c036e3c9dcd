use std::fs;
use std::io::Write;
use std::path::Path;

use super::DspError;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, DspError> {
    parse_wav(&fs::read(path)?)
}

/// Parses a RIFF/WAVE PCM16 byte buffer. Stereo is averaged to mono and
/// samples are scaled by `1/32768`.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip, DspError> {
    if bytes.len() < 12 {
        return Err(DspError::MalformedWav(format!(
            "{} bytes is too short for a RIFF header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(DspError::MalformedWav("missing RIFF/WAVE signature".into()));
    }

    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                DspError::MalformedWav(format!(
                    "chunk {:?} claims {size} bytes but the file ends first",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(DspError::MalformedWav("fmt chunk shorter than 16 bytes".into()));
                }
                let le16 = |o: usize| u16::from_le_bytes([body[o], body[o + 1]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                format = Some((le16(0), le16(2), rate, le16(14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are padded to an even length.
        pos = body_end + (size & 1);
    }

    let (format_tag, channels, sample_rate, bits_per_sample) =
        format.ok_or_else(|| DspError::MalformedWav("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| DspError::MalformedWav("no data chunk".into()))?;
    if format_tag != 1 || bits_per_sample != 16 || !(1..=2).contains(&channels) {
        return Err(DspError::UnsupportedEncoding {
            format_tag,
            bits_per_sample,
            channels,
        });
    }
    if sample_rate == 0 {
        return Err(DspError::MalformedWav("sample rate is zero".into()));
    }
    let frame_bytes = 2 * channels as usize;
    let frames = data.len() / frame_bytes;
    if frames == 0 {
        return Err(DspError::EmptyData);
    }

    let samples = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f32 = frame
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0)
                .sum();
            sum / channels as f32
        })
        .collect();
    Ok(AudioClip::new(samples, sample_rate))
}

/// Writes interleaved PCM16 samples as a canonical 44-byte-header WAV.
pub fn write_wav_pcm16(
    path: impl AsRef<Path>,
    samples: &[i16],
    channels: u16,
    sample_rate: u32,
) -> Result<(), DspError> {
    let data_len = (samples.len() * 2) as u32;
    let block_align = channels * 2;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(samples: &[i16], channels: u16) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav_pcm16(&path, samples, channels, 32000).unwrap();
        fs::read(path).unwrap()
    }

    #[test]
    fn scales_by_one_over_32768() {
        let clip = parse_wav(&wav_bytes(&[16384, -32768, 0], 1)).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0, 0.0]);
        assert_eq!(clip.sample_rate, 32000);
    }

    #[test]
    fn stereo_is_averaged() {
        let clip = parse_wav(&wav_bytes(&[-32768, 32767, 1000, 3000], 2)).unwrap();
        assert_eq!(clip.len(), 2);
        assert!(clip.samples[0].abs() < 1e-4);
        assert!((clip.samples[1] - 2000.0 / 32768.0).abs() < 1e-7);
    }

    #[test]
    fn truncated_header_is_malformed() {
        let bytes = wav_bytes(&[1, 2, 3], 1);
        assert!(matches!(parse_wav(&bytes[..10]), Err(DspError::MalformedWav(_))));
        assert!(matches!(parse_wav(&bytes[..30]), Err(DspError::MalformedWav(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_wav(&bad), Err(DspError::MalformedWav(_))));
    }

    #[test]
    fn non_pcm16_is_unsupported() {
        let mut bytes = wav_bytes(&[1, 2], 1);
        bytes[34] = 8; // bits per sample
        assert!(matches!(
            parse_wav(&bytes),
            Err(DspError::UnsupportedEncoding { bits_per_sample: 8, .. })
        ));
        let mut bytes = wav_bytes(&[1, 2], 1);
        bytes[20] = 3; // IEEE float
        assert!(matches!(
            parse_wav(&bytes),
            Err(DspError::UnsupportedEncoding { format_tag: 3, .. })
        ));
    }

    #[test]
    fn empty_data_is_its_own_error() {
        assert!(matches!(parse_wav(&wav_bytes(&[], 1)), Err(DspError::EmptyData)));
    }
}
