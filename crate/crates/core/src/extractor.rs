//! Coarse feature extraction at 1/8 resolution.
//!
//! Each image goes through three stride-2 convolutions, gets a sinusoidal
//! positional encoding added, and then both feature maps pass through an
//! alternating stack of self- and cross-attention layers that share weights
//! between the two images.

use crate::autodiff::{Bound, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::init::{kaiming, lecun, Rng64};

/// Spatial reduction of the pyramid.
pub const GRID_STRIDE: usize = 8;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractorConfig {
    /// Input image channels, 1 (grayscale) or 3.
    pub image_channels: usize,
    /// Feature channels `C` of the final grid.
    pub channels: usize,
    /// Number of attention layers, alternating self and cross.
    pub attn_layers: usize,
    pub heads: usize,
    /// Output widths of the first two pyramid stages; the third outputs `channels`.
    pub pyramid_widths: [usize; 2],
    /// Hidden width multiplier of the per-cell feed-forward.
    pub ffn_mult: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            image_channels: 1,
            channels: 64,
            attn_layers: 4,
            heads: 4,
            pyramid_widths: [16, 32],
            ffn_mult: 2,
        }
    }
}

impl ExtractorConfig {
    /// Feature dimensions of the full-size model (`C = 256`, 8 heads).
    pub fn full_scale() -> Self {
        Self {
            image_channels: 3,
            channels: 256,
            attn_layers: 4,
            heads: 8,
            pyramid_widths: [64, 128],
            ffn_mult: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::BadChannelCount {
                channels: self.channels,
                divisor: self.heads,
            });
        }
        if self.channels % 4 != 0 {
            return Err(Error::BadChannelCount {
                channels: self.channels,
                divisor: 4,
            });
        }
        if self.attn_layers % 2 != 0 {
            return Err(Error::Config {
                key: "attn_layers".into(),
                msg: format!("must be even, got {}", self.attn_layers),
            });
        }
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::Config {
                key: "image_channels".into(),
                msg: format!("must be 1 or 3, got {}", self.image_channels),
            });
        }
        if self.pyramid_widths.contains(&0) || self.ffn_mult == 0 {
            return Err(Error::Config {
                key: "pyramid_widths".into(),
                msg: "widths must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Where to stop the extractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tap {
    Final,
    AfterFirstSelfAttn,
    CnnOnly,
}

/// Per-image coarse features on the tape: `cells` is `(n, C)` with row `i`
/// the descriptor of grid cell `(i / width, i % width)`.
#[derive(Clone, Copy, Debug)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub cells: Var,
}

impl FeatureGrid {
    pub fn n(&self) -> usize {
        self.height * self.width
    }

    /// Values in `(C, h, w)` layout.
    pub fn to_chw<T: Scalar>(&self, tape: &Tape<T>) -> Tensor<T> {
        tape.value(self.cells)
            .transpose2()
            .and_then(|t| t.reshaped(&[self.channels, self.height, self.width]))
            .expect("grid shape is consistent")
    }
}

/// Sinusoidal `(C, h, w)` encoding in grid-cell units.
///
/// Channels are split into four equal blocks holding `sin(ω_k x)`,
/// `cos(ω_k x)`, `sin(ω_k y)` and `cos(ω_k y)` with `ω_k = 10000^(-4k/C)`.
pub fn positional_encoding(h: usize, w: usize, channels: usize) -> Result<Tensor<f64>> {
    if channels == 0 || channels % 4 != 0 {
        return Err(Error::BadChannelCount { channels, divisor: 4 });
    }
    let quarter = channels / 4;
    let mut data = vec![0.0; channels * h * w];
    for c in 0..channels {
        let (block, k) = (c / quarter, c % quarter);
        let omega = 1.0 / 10000f64.powf(4.0 * k as f64 / channels as f64);
        for y in 0..h {
            for x in 0..w {
                let v = match block {
                    0 => (omega * x as f64).sin(),
                    1 => (omega * x as f64).cos(),
                    2 => (omega * y as f64).sin(),
                    _ => (omega * y as f64).cos(),
                };
                data[(c * h + y) * w + x] = v;
            }
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Rng64, name: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            w: store.insert(format!("{name}.w"), lecun(rng, &[d_out, d_in], d_in)),
            b: store.insert(format!("{name}.b"), Tensor::zeros(&[d_out])),
        }
    }

    fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p.var(self.w), p.var(self.b))
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, ch: usize) -> Self {
        Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::full(&[ch], T::one())),
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[ch])),
        }
    }

    fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gamma), p.var(self.beta), LN_EPS)
    }
}

/// Multi-head attention block with residual, feed-forward and post-norm.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

/// Intermediate results of [`AttentionLayer::attend`].
pub struct Attended {
    /// Projected attention output, `(n, C)`, before the residual.
    pub message: Var,
    /// Row-stochastic attention weights per head, each `(n, m)`.
    pub weights: Vec<Var>,
}

impl AttentionLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng64,
        name: &str,
        channels: usize,
        heads: usize,
        ffn_mult: usize,
    ) -> Self {
        let hidden = channels * ffn_mult;
        Self {
            heads,
            q: Linear::new(store, rng, &format!("{name}.q"), channels, channels),
            k: Linear::new(store, rng, &format!("{name}.k"), channels, channels),
            v: Linear::new(store, rng, &format!("{name}.v"), channels, channels),
            out: Linear::new(store, rng, &format!("{name}.out"), channels, channels),
            norm1: Norm::new(store, &format!("{name}.norm1"), channels),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), channels, hidden),
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), hidden, channels),
            norm2: Norm::new(store, &format!("{name}.norm2"), channels),
        }
    }

    /// `softmax(Q Kᵀ / √d) V` per head, concatenated and projected.
    pub fn attend<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, queries: Var, source: Var) -> Result<Attended> {
        let (qs, ss) = (tape.shape(queries).to_vec(), tape.shape(source).to_vec());
        if qs.len() != 2 || ss.len() != 2 || qs[1] != ss[1] {
            return Err(Error::shape("attention", (qs, ss)));
        }
        let channels = qs[1];
        let d = channels / self.heads;
        let q = self.q.apply(tape, p, queries)?;
        let k = self.k.apply(tape, p, source)?;
        let v = self.v.apply(tape, p, source)?;
        let scale = 1.0 / (d as f64).sqrt();
        let mut head_out = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice(q, 1, h * d, d)?;
            let kh = tape.slice(k, 1, h * d, d)?;
            let vh = tape.slice(v, 1, h * d, d)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scalar_mul(scores, scale)?;
            let a = tape.softmax(scores, 1)?;
            head_out.push(tape.matmul(a, vh)?);
            weights.push(a);
        }
        let merged = if head_out.len() == 1 {
            head_out[0]
        } else {
            tape.concat(&head_out, 1)?
        };
        let message = self.out.apply(tape, p, merged)?;
        Ok(Attended { message, weights })
    }

    /// Full layer; self-attention when `source == queries`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, queries: Var, source: Var) -> Result<Var> {
        let att = self.attend(tape, p, queries, source)?;
        let x = tape.add(queries, att.message)?;
        let x = self.norm1.apply(tape, p, x)?;
        let h = self.ff1.apply(tape, p, x)?;
        let h = tape.relu(h)?;
        let h = self.ff2.apply(tape, p, h)?;
        let x = tape.add(x, h)?;
        self.norm2.apply(tape, p, x)
    }
}

#[derive(Clone, Debug)]
struct ConvStage {
    w: ParamId,
    b: ParamId,
}

const PYRAMID_KERNEL: usize = 4;

#[derive(Clone, Debug)]
pub struct Extractor {
    cfg: ExtractorConfig,
    stages: Vec<ConvStage>,
    layers: Vec<AttentionLayer>,
}

impl Extractor {
    pub fn new<T: Scalar>(cfg: ExtractorConfig, store: &mut ParamStore<T>, rng: &mut Rng64) -> Result<Self> {
        cfg.validate()?;
        let widths = [cfg.image_channels, cfg.pyramid_widths[0], cfg.pyramid_widths[1], cfg.channels];
        let stages = (0..3)
            .map(|s| {
                let (c_in, c_out) = (widths[s], widths[s + 1]);
                let fan_in = c_in * PYRAMID_KERNEL * PYRAMID_KERNEL;
                ConvStage {
                    w: store.insert(
                        format!("extractor.conv{s}.w"),
                        kaiming(rng, &[c_out, c_in, PYRAMID_KERNEL, PYRAMID_KERNEL], fan_in),
                    ),
                    b: store.insert(format!("extractor.conv{s}.b"), Tensor::zeros(&[c_out])),
                }
            })
            .collect();
        let layers = (0..cfg.attn_layers)
            .map(|l| {
                let kind = if l % 2 == 0 { "self" } else { "cross" };
                AttentionLayer::new(
                    store,
                    rng,
                    &format!("extractor.attn{l}_{kind}"),
                    cfg.channels,
                    cfg.heads,
                    cfg.ffn_mult,
                )
            })
            .collect();
        Ok(Self { cfg, stages, layers })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[AttentionLayer] {
        &self.layers
    }

    /// Conv pyramid of one image into a `(n, C)` grid, without positional encoding.
    pub fn cnn<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<FeatureGrid> {
        let shape = tape.shape(image).to_vec();
        if shape.len() != 3 || shape[0] != self.cfg.image_channels {
            return Err(Error::shape("extractor input", (&shape, self.cfg.image_channels)));
        }
        if shape[1] < GRID_STRIDE || shape[2] < GRID_STRIDE {
            return Err(Error::TooSmall {
                height: shape[1],
                width: shape[2],
            });
        }
        let mut x = image;
        for (s, stage) in self.stages.iter().enumerate() {
            x = tape.conv2d(x, p.var(stage.w), p.var(stage.b), 2, 1)?;
            if s + 1 < self.stages.len() {
                x = tape.relu(x)?;
            }
        }
        let out = tape.shape(x).to_vec();
        let (c, h, w) = (out[0], out[1], out[2]);
        let flat = tape.reshape(x, &[c, h * w])?;
        let cells = tape.transpose(flat)?;
        Ok(FeatureGrid {
            height: h,
            width: w,
            channels: c,
            cells,
        })
    }

    /// Features for both images of a pair.
    pub fn forward_pair<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        image_a: Var,
        image_b: Var,
        tap: Tap,
    ) -> Result<(FeatureGrid, FeatureGrid)> {
        if tape.shape(image_a) != tape.shape(image_b) {
            return Err(Error::shape(
                "extract_pair",
                (tape.shape(image_a), tape.shape(image_b)),
            ));
        }
        let mut a = self.cnn(tape, p, image_a)?;
        let mut b = self.cnn(tape, p, image_b)?;
        if tap == Tap::CnnOnly {
            return Ok((a, b));
        }
        let pe = positional_encoding(a.height, a.width, a.channels)?
            .transpose_chw_to_cells()
            .cast::<T>();
        let pe = tape.constant(pe);
        a.cells = tape.add(a.cells, pe)?;
        b.cells = tape.add(b.cells, pe)?;
        let depth = match tap {
            Tap::AfterFirstSelfAttn => self.layers.len().min(1),
            _ => self.layers.len(),
        };
        for (l, layer) in self.layers.iter().take(depth).enumerate() {
            let (next_a, next_b) = if l % 2 == 0 {
                (
                    layer.forward(tape, p, a.cells, a.cells)?,
                    layer.forward(tape, p, b.cells, b.cells)?,
                )
            } else {
                (
                    layer.forward(tape, p, a.cells, b.cells)?,
                    layer.forward(tape, p, b.cells, a.cells)?,
                )
            };
            a.cells = next_a;
            b.cells = next_b;
        }
        Ok((a, b))
    }

    /// Inference-only convenience: `(C, h, w)` feature tensors for both images.
    pub fn extract_pair<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        image_a: &Image,
        image_b: &Image,
        tap: Tap,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let a = tape.constant(image_a.tensor.cast());
        let b = tape.constant(image_b.tensor.cast());
        let (fa, fb) = self.forward_pair(&mut tape, &p, a, b, tap)?;
        Ok((fa.to_chw(&tape), fb.to_chw(&tape)))
    }
}

trait ChwToCells {
    fn transpose_chw_to_cells(self) -> Self;
}

impl ChwToCells for Tensor<f64> {
    /// `(C, h, w)` to `(h·w, C)`.
    fn transpose_chw_to_cells(self) -> Self {
        let s = self.shape().to_vec();
        self.reshaped(&[s[0], s[1] * s[2]])
            .and_then(|t| t.transpose2())
            .expect("3-D tensor")
    }
}
