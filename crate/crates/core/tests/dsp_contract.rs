use clsr_core::dsp::{AudioClip, LogMelExtractor, MelConfig, LOG_FLOOR};
use clsr_core::rng::SplitMix64;

fn extractor() -> LogMelExtractor {
    LogMelExtractor::new(MelConfig::default()).unwrap()
}

fn tone(hz: f64, len: usize) -> AudioClip {
    let samples = (0..len)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / 32000.0).sin()) as f32)
        .collect();
    AudioClip::new(samples, 32000)
}

#[test]
fn frame_count_formula_on_random_lengths() {
    let ex = extractor();
    let mut rng = SplitMix64::new(8);
    for _ in 0..50 {
        let n = 1024 + rng.below(20000);
        let clip = AudioClip::new(vec![0.01; n], 32000);
        assert_eq!(ex.log_mel(&clip).unwrap().frames(), (n - 1024) / 320 + 1, "n = {n}");
    }
}

#[test]
fn tone_at_band_center_peaks_in_that_band() {
    let ex = extractor();
    for band in 0..64 {
        let spec = ex.log_mel(&tone(ex.filterbank().center_hz(band), 8000)).unwrap();
        for (f, row) in spec.values.iter_rows().enumerate() {
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, band, "frame {f}");
        }
    }
}

#[test]
fn silence_is_the_exact_floor() {
    let spec = extractor().log_mel(&AudioClip::new(vec![0.0; 9000], 32000)).unwrap();
    let floor = LOG_FLOOR.ln() as f32;
    assert!(spec.values.data().iter().all(|&v| v.to_bits() == floor.to_bits()));
}

#[test]
fn extraction_is_deterministic() {
    let ex = extractor();
    let clip = tone(440.0, 6000);
    assert_eq!(ex.log_mel(&clip).unwrap(), ex.log_mel(&clip).unwrap());
}
