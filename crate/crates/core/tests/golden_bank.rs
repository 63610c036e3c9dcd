use clsr_core::data::{FeatureBank, FeatureItem, Modality};
use clsr_core::rng::SplitMix64;

const GOLDEN: &[u8] = include_bytes!("data/golden.clsrfb");

fn golden_bank() -> FeatureBank {
    let item = |id: &str, v: [f32; 4]| FeatureItem {
        id: id.into(),
        vector: v.to_vec(),
    };
    FeatureBank::from_items(
        Modality::Text,
        4,
        vec![
            item("a00001", [0.0, 1.0, -2.5, 0.1]),
            item("café_7", [3.25, -0.0, 1e-3, 65504.0]),
            item("z", [-1.0, 0.5, 0.25, -0.125]),
        ],
    )
    .unwrap()
}

#[test]
fn golden_file_decodes_and_reencodes_byte_for_byte() {
    let decoded = FeatureBank::from_bytes(GOLDEN).unwrap();
    let expected = golden_bank();
    assert_eq!(decoded.modality(), Modality::Text);
    for (a, b) in decoded.items().iter().zip(expected.items()) {
        assert_eq!(a.id, b.id);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.vector), bits(&b.vector));
    }
    assert_eq!(expected.to_bytes(), GOLDEN);
}

#[test]
fn random_banks_roundtrip_bit_exactly() {
    let mut rng = SplitMix64::new(99);
    for case in 0..100 {
        let dim = 1 + rng.below(12);
        let n = rng.below(20);
        let modality = if case % 2 == 0 { Modality::Audio } else { Modality::Text };
        let items: Vec<FeatureItem> = (0..n)
            .map(|i| FeatureItem {
                id: format!("item{case}_{i}"),
                vector: (0..dim)
                    .map(|_| f32::from_bits(rng.next_u64() as u32 & 0xBFFF_FFFF))
                    .collect(),
            })
            .collect();
        let bank = FeatureBank::from_items(modality, dim, items).unwrap();
        let bytes = bank.to_bytes();
        let back = FeatureBank::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.len(), n);
    }
}
