use std::collections::HashSet;

use proptest::prelude::*;
use relpose_core::autodiff::{ParamStore, Tape, Tensor};
use relpose_core::extractor::{positional_encoding, AttentionLayer, Extractor, ExtractorConfig, Tap};
use relpose_core::init::rng;
use relpose_core::Image;

fn small() -> ExtractorConfig {
    ExtractorConfig {
        channels: 8,
        attn_layers: 2,
        heads: 2,
        pyramid_widths: [4, 8],
        ..ExtractorConfig::default()
    }
}

fn noise(seed: u64, h: usize, w: usize) -> Image {
    let t = relpose_core::init::uniform::<f32>(&mut rng(seed), &[1, h, w], 1.0);
    Image::new(t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_is_one_eighth_of_the_image(h in 8usize..40, w in 8usize..40, seed in 0u64..100) {
        let mut store = ParamStore::<f32>::new();
        let ex = Extractor::new(small(), &mut store, &mut rng(seed)).unwrap();
        let (a, b) = (noise(seed, h, w), noise(seed + 1, h, w));
        for tap in [Tap::Final, Tap::AfterFirstSelfAttn, Tap::CnnOnly] {
            let (fa, fb) = ex.extract_pair(&store, &a, &b, tap).unwrap();
            prop_assert_eq!(fa.shape(), &[8, h / 8, w / 8]);
            prop_assert_eq!(fb.shape(), &[8, h / 8, w / 8]);
        }
    }
}

#[test]
fn pair_order_only_swaps_outputs() {
    let mut store = ParamStore::<f64>::new();
    let ex = Extractor::new(small(), &mut store, &mut rng(3)).unwrap();
    let (a, b) = (noise(1, 24, 32), noise(2, 24, 32));
    for tap in [Tap::Final, Tap::AfterFirstSelfAttn, Tap::CnnOnly] {
        let (fa, fb) = ex.extract_pair(&store, &a, &b, tap).unwrap();
        let (gb, ga) = ex.extract_pair(&store, &b, &a, tap).unwrap();
        assert_eq!(fa, ga);
        assert_eq!(fb, gb);
    }
}

#[test]
fn early_taps_ignore_the_other_image() {
    let mut store = ParamStore::<f64>::new();
    let ex = Extractor::new(small(), &mut store, &mut rng(3)).unwrap();
    let a = noise(1, 24, 32);
    for tap in [Tap::CnnOnly, Tap::AfterFirstSelfAttn] {
        let (f1, _) = ex.extract_pair(&store, &a, &noise(2, 24, 32), tap).unwrap();
        let (f2, _) = ex.extract_pair(&store, &a, &noise(9, 24, 32), tap).unwrap();
        assert_eq!(f1, f2);
    }
    // cross-attention mixes the pair
    let (f1, _) = ex.extract_pair(&store, &a, &noise(2, 24, 32), Tap::Final).unwrap();
    let (f2, _) = ex.extract_pair(&store, &a, &noise(9, 24, 32), Tap::Final).unwrap();
    assert_ne!(f1, f2);
}

#[test]
fn positional_encoding_is_injective_on_toy_grids() {
    for (h, w) in [(64, 64), (8, 16), (1, 50)] {
        let pe = positional_encoding(h, w, 8).unwrap();
        let n = h * w;
        let mut seen = HashSet::new();
        for i in 0..n {
            let v: Vec<u64> = (0..8).map(|c| pe.data()[c * n + i].to_bits()).collect();
            assert!(seen.insert(v), "duplicate encoding at cell {i} of {h}x{w}");
        }
        assert_eq!(positional_encoding(h, w, 8).unwrap(), pe);
    }
}

#[test]
fn attention_weights_are_row_stochastic() {
    let mut store = ParamStore::<f64>::new();
    let layer = AttentionLayer::new(&mut store, &mut rng(4), "attn", 8, 2, 2);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let q = tape.constant(relpose_core::init::uniform(&mut rng(5), &[6, 8], 1.0));
    let s = tape.constant(relpose_core::init::uniform(&mut rng(6), &[9, 8], 1.0));
    let att = layer.attend(&mut tape, &p, q, s).unwrap();
    assert_eq!(att.weights.len(), 2);
    for w in att.weights {
        let t: &Tensor<f64> = tape.value(w);
        assert_eq!(t.shape(), &[6, 9]);
        for row in t.data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
