use std::path::Path;

use proptest::prelude::*;
use relpose_core::autodiff::{Checkpoint, Tensor};
use relpose_core::data::{load_pairs, synth_scene, write_scene, Convention, SynthConfig};
use relpose_core::image::{decode_tensor, encode_tensor, load_tensor, save_tensor};
use relpose_core::Image;

fn tensor() -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n)
            .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
    })
}

proptest! {
    #[test]
    fn checkpoint_bytes_round_trip(entries in prop::collection::vec(("[a-z.]{1,12}", tensor()), 0..6)) {
        let mut ck = Checkpoint::new();
        for (name, t) in &entries {
            ck.push(name.clone(), t.clone());
        }
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back.encode().unwrap(), bytes);
        prop_assert_eq!(back.entries.len(), entries.len());
    }

    #[test]
    fn tensor_bytes_round_trip(t in tensor()) {
        let bytes = encode_tensor(&t);
        let back = decode_tensor(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(encode_tensor(&back), bytes);
        prop_assert_eq!(back, t);
    }
}

#[test]
fn files_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(vec![2, 3], vec![0.0f32, -1.5, 3.25, f32::MIN_POSITIVE, 1e30, -0.0]).unwrap();
    let p1 = dir.path().join("a.rptn");
    let p2 = dir.path().join("b.rptn");
    save_tensor(&t, &p1).unwrap();
    save_tensor(&load_tensor(&p1).unwrap(), &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    let mut ck = Checkpoint::new();
    ck.push("w", t.clone());
    ck.push("b", Tensor::scalar(2.0));
    let c1 = dir.path().join("a.rpck");
    let c2 = dir.path().join("b.rpck");
    ck.save(&c1).unwrap();
    Checkpoint::load(&c1).unwrap().save(&c2).unwrap();
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
}

#[test]
fn synthetic_scene_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_pairs: 3,
        height: 24,
        width: 32,
        ..SynthConfig::default()
    };
    let (scene, records) = synth_scene(&cfg).unwrap();
    write_scene(&scene, &records, dir.path()).unwrap();
    let loaded = load_pairs(dir.path().join("pairs.txt"), Convention::Rectified, false).unwrap();
    assert_eq!(loaded.len(), 3);
    for (k, (a, b)) in loaded.iter().zip(&records).enumerate() {
        assert_eq!(a.pose_a, b.pose_a);
        assert_eq!(a.pose_b, b.pose_b);
        assert_eq!(a.target, b.target);
        assert_eq!(a.image_a.load(1).unwrap(), scene.images[2 * k]);
        assert_eq!(a.image_b.load(1).unwrap(), scene.images[2 * k + 1]);
    }
    let csv = std::fs::read_to_string(dir.path().join("correspondences.csv")).unwrap();
    assert!(csv.starts_with("pair_id,cell_a,cell_b\n"));
}

#[test]
fn png_and_rptn_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = image::GrayImage::new(5, 4);
    for (i, px) in raw.pixels_mut().enumerate() {
        px.0 = [(i * 12) as u8];
    }
    let png = dir.path().join("x.png");
    raw.save(&png).unwrap();
    let img = Image::load(&png, 1).unwrap();
    assert_eq!((img.channels(), img.height(), img.width()), (1, 4, 5));
    let rptn = dir.path().join("x.rptn");
    img.save_rptn(&rptn).unwrap();
    assert_eq!(Image::load(&rptn, 1).unwrap(), img);
}
