//! Mini-batch training with Adam, step decay and resumable checkpoints.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::autodiff::{adam_step, step_lr, AdamConfig, AdamState, Checkpoint, ParamStore, Tape, Tensor};
use crate::data::PairRecord;
use crate::error::{Error, Result};
use crate::geometry::RelativePose;
use crate::image::Image;
use crate::init::rng;
use crate::model::PoseNet;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs between learning-rate decays.
    pub step_size: usize,
    pub gamma: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            batch_size: 8,
            step_size: 6,
            gamma: 0.9,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// A pair with decoded images, ready for the network.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub image_a: Image,
    pub image_b: Image,
    pub target: RelativePose,
}

pub fn load_train_pairs(records: &[PairRecord], channels: usize) -> Result<Vec<TrainPair>> {
    records
        .iter()
        .map(|r| {
            Ok(TrainPair {
                image_a: r.image_a.load(channels)?,
                image_b: r.image_b.load(channels)?,
                target: r.target.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean learned-weight total over the epoch's pairs, before each update.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Mean unweighted rotation, translation and direction terms.
    pub components: [f64; 3],
    pub s: [f64; 3],
    /// Pairs whose direction term was skipped for a near-zero translation.
    pub skipped: usize,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_loss,s_q,s_t,s_tn,skipped";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let val = self.val_loss.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.train_loss, val, self.s[0], self.s[1], self.s[2], self.skipped
        )
    }
}

pub fn log_csv(logs: &[EpochLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for l in logs {
        let _ = writeln!(out, "{}", l.csv_row());
    }
    out
}

const EPOCH_KEY: &str = "train.epoch";
const STEP_KEY: &str = "train.adam_step";
const BEST_KEY: &str = "train.best_loss";

/// Training state: network, f32 parameters, Adam moments and epoch counter.
pub struct Trainer {
    pub net: PoseNet,
    pub store: ParamStore<f32>,
    pub cfg: TrainConfig,
    adam: AdamState<f32>,
    epoch: usize,
    best_loss: f64,
    best: Option<Checkpoint>,
}

fn tag_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFiniteValue { op } => Error::NonFiniteValue {
            op: format!("{op} (epoch {epoch}, batch {batch})"),
        },
        other => other,
    }
}

impl Trainer {
    pub fn new(net: PoseNet, store: ParamStore<f32>, cfg: TrainConfig) -> Self {
        let adam = AdamState::new(store.tensors());
        Self {
            net,
            store,
            cfg,
            adam,
            epoch: 0,
            best_loss: f64::INFINITY,
            best: None,
        }
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Parameters of the epoch with the lowest selection loss.
    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    /// Replaces the tracked best checkpoint, e.g. with the one saved by an
    /// earlier session. Its loss stays the one recorded at resume time.
    pub fn set_best_checkpoint(&mut self, ck: Checkpoint) {
        self.best = Some(ck);
    }

    fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mix = (self.epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut rng(self.cfg.seed ^ mix));
        order
    }

    /// One pass over `pairs` in a seeded order.
    ///
    /// Each batch's loss is the mean of its pair losses; gradients are
    /// accumulated pair by pair, which is the same sum without holding every
    /// pair's graph at once.
    pub fn train_epoch(&mut self, pairs: &[TrainPair]) -> Result<EpochLog> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let lr = step_lr(self.cfg.lr, self.epoch, self.cfg.step_size, self.cfg.gamma);
        let order = self.epoch_order(pairs.len());
        let (mut total, mut comps, mut n_dir, mut skipped) = (0.0, [0.0; 3], 0usize, 0usize);
        for (batch_id, batch) in order.chunks(self.cfg.batch_size.max(1)).enumerate() {
            let scale = 1.0 / batch.len() as f32;
            let mut acc: Vec<Tensor<f32>> = self.store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            for &i in batch {
                let pair = &pairs[i];
                let mut tape = Tape::new();
                let p = self.store.bind(&mut tape);
                let loss = self
                    .net
                    .pair_loss(&mut tape, &p, &pair.image_a, &pair.image_b, &pair.target)
                    .map_err(|e| tag_batch(e, self.epoch, batch_id))?;
                let grads = tape.backward(loss.total).map_err(|e| tag_batch(e, self.epoch, batch_id))?;
                for (a, g) in acc.iter_mut().zip(self.store.collect_grads(&p, &grads)) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += scale * y;
                    }
                }
                total += tape.value(loss.total).item() as f64;
                comps[0] += loss.rotation;
                comps[1] += loss.translation;
                match loss.direction {
                    Some(d) => {
                        comps[2] += d;
                        n_dir += 1;
                    }
                    None => skipped += 1,
                }
            }
            if acc.iter().any(|g| !g.is_finite()) {
                return Err(tag_batch(
                    Error::NonFiniteValue { op: "gradient".into() },
                    self.epoch,
                    batch_id,
                ));
            }
            adam_step(self.store.tensors_mut(), &acc, &mut self.adam, lr, self.cfg.adam)?;
        }
        let n = pairs.len() as f64;
        let log = EpochLog {
            epoch: self.epoch,
            lr,
            train_loss: total / n,
            val_loss: None,
            components: [comps[0] / n, comps[1] / n, comps[2] / n_dir.max(1) as f64],
            s: self.net.loss_weights().values(&self.store),
            skipped,
        };
        self.epoch += 1;
        Ok(log)
    }

    /// Mean total loss over `pairs` without updating anything.
    pub fn mean_loss(&self, pairs: &[TrainPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sum = 0.0;
        for pair in pairs {
            let mut tape = Tape::new();
            let p = self.store.bind_frozen(&mut tape);
            let loss = self
                .net
                .pair_loss(&mut tape, &p, &pair.image_a, &pair.image_b, &pair.target)?;
            sum += tape.value(loss.total).item() as f64;
        }
        Ok(sum / pairs.len() as f64)
    }

    /// Trains until `cfg.epochs` epochs are complete, calling `on_epoch` after
    /// each one. The best checkpoint is chosen by validation loss, or by
    /// training loss when there is no validation set.
    pub fn run(
        &mut self,
        train: &[TrainPair],
        val: &[TrainPair],
        mut on_epoch: impl FnMut(&EpochLog, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.cfg.epochs {
            let mut log = self.train_epoch(train)?;
            if !val.is_empty() {
                log.val_loss = Some(self.mean_loss(val)?);
            }
            let select = log.val_loss.unwrap_or(log.train_loss);
            if select < self.best_loss || self.best.is_none() {
                self.best_loss = select;
                self.best = Some(self.net.to_checkpoint(&self.store));
            }
            on_epoch(&log, self)?;
            logs.push(log);
        }
        Ok(logs)
    }

    /// Parameters, optimizer moments and counters, enough to resume exactly.
    pub fn resume_checkpoint(&self) -> Checkpoint {
        let mut ck = self.net.to_checkpoint(&self.store);
        ck.push(EPOCH_KEY, Tensor::scalar(self.epoch as f32));
        ck.push(STEP_KEY, Tensor::scalar(self.adam.step as f32));
        ck.push(BEST_KEY, Tensor::scalar(self.best_loss as f32));
        for (i, (name, _)) in self.store.iter().enumerate() {
            ck.push(format!("adam.m.{name}"), self.adam.m[i].clone());
            ck.push(format!("adam.v.{name}"), self.adam.v[i].clone());
        }
        ck
    }

    /// Restores a trainer from [`Trainer::resume_checkpoint`] output.
    pub fn resume(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let (net, store) = PoseNet::from_checkpoint::<f32>(ck)?;
        let scalar = |key: &str| {
            ck.get(key).map(|t| t.item()).ok_or_else(|| Error::CheckpointMismatch {
                msg: format!("missing `{key}`; not a resumable checkpoint"),
            })
        };
        let epoch = scalar(EPOCH_KEY)? as usize;
        let step = scalar(STEP_KEY)? as u64;
        let best_loss = scalar(BEST_KEY)? as f64;
        let mut adam = AdamState::new(store.tensors());
        adam.step = step;
        for (i, (name, t)) in store.iter().enumerate() {
            for (prefix, slot) in [("m", &mut adam.m[i]), ("v", &mut adam.v[i])] {
                let key = format!("adam.{prefix}.{name}");
                let src = ck.get(&key).ok_or_else(|| Error::CheckpointMismatch {
                    msg: format!("missing `{key}`"),
                })?;
                if src.shape() != t.shape() {
                    return Err(Error::CheckpointMismatch {
                        msg: format!("`{key}` has shape {:?}, expected {:?}", src.shape(), t.shape()),
                    });
                }
                *slot = src.clone();
            }
        }
        let best = net.to_checkpoint(&store);
        Ok(Self {
            net,
            store,
            cfg,
            adam,
            epoch,
            best_loss,
            best: Some(best),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_scene, SynthConfig};
    use crate::extractor::ExtractorConfig;
    use crate::model::ModelConfig;
    use crate::regressor::RegressorConfig;

    fn setup(n_pairs: usize) -> (Trainer, Vec<TrainPair>) {
        let (_, records) = synth_scene(&SynthConfig {
            n_pairs,
            height: 16,
            width: 16,
            n_points: 150,
            ..SynthConfig::default()
        })
        .unwrap();
        let pairs = load_train_pairs(&records, 1).unwrap();
        let cfg = ModelConfig {
            extractor: ExtractorConfig {
                channels: 8,
                attn_layers: 2,
                heads: 2,
                pyramid_widths: [4, 8],
                ..ExtractorConfig::default()
            },
            regressor: RegressorConfig {
                block_channels: None,
                hidden: 16,
            },
            ..ModelConfig::default()
        };
        let (net, store) = PoseNet::new::<f32>(cfg, 5).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        (Trainer::new(net, store, tc), pairs)
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (mut a, pairs) = setup(4);
        let full = a.run(&pairs, &[], |_, _| Ok(())).unwrap();

        let (mut b, _) = setup(4);
        b.train_epoch(&pairs).unwrap();
        let bytes = b.resume_checkpoint().encode().unwrap();
        let ck = Checkpoint::decode(&bytes, std::path::Path::new("mem")).unwrap();
        let mut c = Trainer::resume(&ck, b.cfg.clone()).unwrap();
        assert_eq!(c.epoch(), 1);
        let rest = c.run(&pairs, &[], |_, _| Ok(())).unwrap();
        assert_eq!(rest.len(), 2);
        assert_eq!(rest.last().unwrap().train_loss, full.last().unwrap().train_loss);
        assert_eq!(c.store, a.store);
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let (mut t, pairs) = setup(2);
        t.cfg.epochs = 2;
        let logs = t.run(&pairs, &pairs[..1], |_, _| Ok(())).unwrap();
        let csv = log_csv(&logs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], LOG_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(logs.iter().all(|l| l.val_loss.is_some()));
        assert!(t.best_checkpoint().is_some());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let (mut t, _) = setup(1);
        assert!(matches!(t.train_epoch(&[]), Err(Error::EmptyDataset)));
    }
}
