//! The end-to-end network: extractor, matcher/warper and pose regressor,
//! with the ablation variants wired through.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Bound, Checkpoint, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::extractor::{Extractor, ExtractorConfig, Tap};
use crate::geometry::RelativePose;
use crate::image::Image;
use crate::init::rng;
use crate::loss::{loss_rotation, loss_total, loss_translation, loss_translation_normalized, LossWeights};
use crate::matcher::{aligned_concat, match_and_warp, CorrespondenceMap, WarpedFeatureMap, EXTRA_CHANNELS};
use crate::regressor::{PosePrediction, PoseVars, Regressor, RegressorConfig};

/// Architecture variants used for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Variant {
    /// Final extractor features with matching and warping.
    #[default]
    Full,
    /// Final features concatenated at aligned cells, no matching.
    NoWarp,
    /// Conv-pyramid features with matching and warping.
    CnnOnly,
    /// Features after the first self-attention layer, with warping.
    SelfAttnOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoWarp, Variant::CnnOnly, Variant::SelfAttnOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoWarp => "no_warp",
            Variant::CnnOnly => "cnn_only",
            Variant::SelfAttnOnly => "self_attn_only",
        }
    }

    pub fn tap(self) -> Tap {
        match self {
            Variant::Full | Variant::NoWarp => Tap::Final,
            Variant::CnnOnly => Tap::CnnOnly,
            Variant::SelfAttnOnly => Tap::AfterFirstSelfAttn,
        }
    }

    fn code(self) -> u8 {
        Self::ALL.iter().position(|&v| v == self).unwrap() as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config {
                key: "variant".into(),
                msg: format!("unknown variant `{s}` (expected full, no_warp, cnn_only or self_attn_only)"),
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub regressor: RegressorConfig,
    pub variant: Variant,
    /// Softmax temperature of the match confidence.
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig::default(),
            regressor: RegressorConfig::default(),
            variant: Variant::Full,
            temperature: 1.0,
        }
    }
}

const META_KEY: &str = "meta.config";

impl ModelConfig {
    fn to_meta(&self) -> Tensor<f32> {
        let e = &self.extractor;
        let vals = [
            e.image_channels as f32,
            e.channels as f32,
            e.attn_layers as f32,
            e.heads as f32,
            e.pyramid_widths[0] as f32,
            e.pyramid_widths[1] as f32,
            e.ffn_mult as f32,
            self.regressor.block_channels.unwrap_or(0) as f32,
            self.regressor.hidden as f32,
            self.variant.code() as f32,
            self.temperature as f32,
        ];
        Tensor::new(vec![vals.len()], vals.to_vec()).expect("non-empty")
    }

    fn from_meta(t: &Tensor<f32>) -> Result<Self> {
        let d = t.data();
        if d.len() != 11 {
            return Err(Error::CheckpointMismatch {
                msg: format!("`{META_KEY}` has {} values, expected 11", d.len()),
            });
        }
        let u = |i: usize| d[i] as usize;
        Ok(Self {
            extractor: ExtractorConfig {
                image_channels: u(0),
                channels: u(1),
                attn_layers: u(2),
                heads: u(3),
                pyramid_widths: [u(4), u(5)],
                ffn_mult: u(6),
            },
            regressor: RegressorConfig {
                block_channels: (u(7) > 0).then(|| u(7)),
                hidden: u(8),
            },
            variant: Variant::from_code(d[9] as u8).ok_or_else(|| Error::CheckpointMismatch {
                msg: format!("unknown variant code {}", d[9]),
            })?,
            temperature: d[10] as f64,
        })
    }
}

/// Network outputs for one pair.
pub struct NetOutput {
    pub pose: PoseVars,
    pub warped: WarpedFeatureMap,
    /// `None` for the no-warp variant.
    pub matches: Option<CorrespondenceMap>,
}

/// Loss of one pair; component values are reported for logging.
pub struct PairLoss {
    pub total: Var,
    pub rotation: f64,
    pub translation: f64,
    /// `None` when the direction term was skipped for a degenerate translation.
    pub direction: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PoseNet {
    cfg: ModelConfig,
    extractor: Extractor,
    regressor: Regressor,
    weights: LossWeights,
}

impl PoseNet {
    /// Builds the network with seeded initialization.
    pub fn new<T: Scalar>(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        if !(cfg.temperature > 0.0) {
            return Err(Error::Config {
                key: "temperature".into(),
                msg: "must be positive".into(),
            });
        }
        let mut store = ParamStore::new();
        let mut r = rng(seed);
        let extractor = Extractor::new(cfg.extractor.clone(), &mut store, &mut r)?;
        let in_channels = 2 * cfg.extractor.channels + EXTRA_CHANNELS;
        let regressor = Regressor::new(cfg.regressor.clone(), in_channels, &mut store, &mut r)?;
        let weights = LossWeights::new(&mut store);
        Ok((
            Self {
                cfg,
                extractor,
                regressor,
                weights,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn extractor(&self) -> &Extractor {
        &self.extractor
    }

    pub fn regressor(&self) -> &Regressor {
        &self.regressor
    }

    pub fn loss_weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, image_a: Var, image_b: Var) -> Result<NetOutput> {
        let (fa, fb) = self
            .extractor
            .forward_pair(tape, p, image_a, image_b, self.cfg.variant.tap())?;
        let (warped, matches) = match self.cfg.variant {
            Variant::NoWarp => (aligned_concat(tape, &fa, &fb)?, None),
            _ => {
                let (w, m) = match_and_warp(tape, &fa, &fb, self.cfg.temperature)?;
                (w, Some(m))
            }
        };
        let pose = self.regressor.regress(tape, p, &warped)?;
        Ok(NetOutput { pose, warped, matches })
    }

    fn image_vars<T: Scalar>(tape: &mut Tape<T>, a: &Image, b: &Image) -> (Var, Var) {
        (tape.constant(a.tensor.cast()), tape.constant(b.tensor.cast()))
    }

    /// Inference on one pair.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, a: &Image, b: &Image) -> Result<(PosePrediction, Option<CorrespondenceMap>)> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let (ia, ib) = Self::image_vars(&mut tape, a, b);
        let out = self.forward(&mut tape, &p, ia, ib)?;
        Ok((out.pose.values(&tape), out.matches))
    }

    /// Forward pass plus learned-weight loss for one pair.
    pub fn pair_loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        a: &Image,
        b: &Image,
        target: &RelativePose,
    ) -> Result<PairLoss> {
        let (ia, ib) = Self::image_vars(tape, a, b);
        let out = self.forward(tape, p, ia, ib)?;
        let l_q = loss_rotation(tape, out.pose.quaternion, &target.rotation)?;
        let l_t = loss_translation(tape, out.pose.translation, &target.translation)?;
        let l_tn = match loss_translation_normalized(tape, out.pose.translation, &target.translation) {
            Ok(v) => Some(v),
            Err(Error::DegenerateDirection { .. }) => None,
            Err(e) => return Err(e),
        };
        let total = loss_total(tape, p, &self.weights, l_q, l_t, l_tn)?;
        let item = |tape: &Tape<T>, v: Var| tape.value(v).item().as_f64();
        Ok(PairLoss {
            total,
            rotation: item(tape, l_q),
            translation: item(tape, l_t),
            direction: l_tn.map(|v| item(tape, v)),
        })
    }

    /// Parameters plus the architecture record.
    pub fn to_checkpoint<T: Scalar>(&self, store: &ParamStore<T>) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push(META_KEY, self.cfg.to_meta());
        for (name, t) in store.iter() {
            ck.push(name, t.cast());
        }
        ck
    }

    /// Rebuilds the network described by a checkpoint and loads its parameters.
    pub fn from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<(Self, ParamStore<T>)> {
        let meta = ck.get(META_KEY).ok_or_else(|| Error::CheckpointMismatch {
            msg: format!("missing `{META_KEY}`"),
        })?;
        let cfg = ModelConfig::from_meta(meta)?;
        Self::from_checkpoint_with(cfg, ck)
    }

    /// Builds the network for `cfg` and loads matching parameters from `ck`.
    pub fn from_checkpoint_with<T: Scalar>(cfg: ModelConfig, ck: &Checkpoint) -> Result<(Self, ParamStore<T>)> {
        let (net, mut store) = Self::new::<T>(cfg, 0)?;
        let mut loaded = ParamStore::new();
        for (name, t) in &ck.entries {
            if store.id(name).is_some() {
                loaded.insert(name.clone(), t.cast::<T>());
            }
        }
        store.load_from(&loaded)?;
        Ok((net, store))
    }
}
