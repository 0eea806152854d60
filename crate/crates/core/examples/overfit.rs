//! Overfits the model on a small synthetic scene and reports training-set errors.
//!
//! `cargo run --release -p relpose-core --example overfit -- [epochs] [seed]`

use std::time::Instant;

use relpose_core::data::{synth_scene, SynthConfig};
use relpose_core::extractor::ExtractorConfig;
use relpose_core::geometry::{median, rotation_error_deg, translation_error};
use relpose_core::regressor::RegressorConfig;
use relpose_core::train::{load_train_pairs, TrainConfig, Trainer};
use relpose_core::{ModelConfig, PoseNet};

fn main() -> relpose_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (_, records) = synth_scene(&SynthConfig {
        seed,
        n_pairs: 32,
        ..SynthConfig::default()
    })?;
    let pairs = load_train_pairs(&records, 1)?;
    let cfg = ModelConfig {
        extractor: ExtractorConfig {
            channels: 32,
            attn_layers: 2,
            heads: 4,
            ..ExtractorConfig::default()
        },
        regressor: RegressorConfig::default(),
        ..ModelConfig::default()
    };
    let (net, store) = PoseNet::new::<f32>(cfg, seed)?;
    let mut trainer = Trainer::new(
        net,
        store,
        TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        },
    );
    let start = Instant::now();
    let logs = trainer.run(&pairs, &[], |log, t| {
        if log.epoch % 10 == 0 || log.epoch + 1 == t.cfg.epochs {
            println!(
                "epoch {:3} lr {:.2e} loss {:.4} comps {:.4?} s {:.3?} ({:.1}s)",
                log.epoch,
                log.lr,
                log.train_loss,
                log.components,
                log.s,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    let (mut r, mut t) = (Vec::new(), Vec::new());
    for p in &pairs {
        let (pred, _) = trainer.net.predict(&trainer.store, &p.image_a, &p.image_b)?;
        r.push(rotation_error_deg(&p.target.rotation, pred.quaternion)?);
        t.push(translation_error(&p.target.translation, &pred.translation));
    }
    println!(
        "median R {:.3} deg, median t {:.4} m, loss {:.4} -> {:.4}, {:.1}s",
        median(&r).unwrap(),
        median(&t).unwrap(),
        logs[0].train_loss,
        logs.last().unwrap().train_loss,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
