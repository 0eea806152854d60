//! Pose head: residual conv block, global average pooling, MLP, split into
//! a raw quaternion and a metric translation.

use nalgebra::Vector3;

use crate::autodiff::{Bound, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::{kaiming, lecun, Rng64};
use crate::matcher::WarpedFeatureMap;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegressorConfig {
    /// Output channels of the residual block; `None` keeps the input width
    /// and uses an identity skip, otherwise the skip is a 1×1 projection.
    pub block_channels: Option<usize>,
    /// Width of the first MLP layer.
    pub hidden: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            block_channels: None,
            hidden: 1024,
        }
    }
}

/// Raw network outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosePrediction {
    /// Unnormalized quaternion `(w, x, y, z)`.
    pub quaternion: [f64; 4],
    /// Translation in meters.
    pub translation: Vector3<f64>,
}

/// Tape handles of the two output heads.
#[derive(Clone, Copy, Debug)]
pub struct PoseVars {
    pub quaternion: Var,
    pub translation: Var,
}

impl PoseVars {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> PosePrediction {
        let q = tape.value(self.quaternion).data();
        let t = tape.value(self.translation).data();
        PosePrediction {
            quaternion: [q[0].as_f64(), q[1].as_f64(), q[2].as_f64(), q[3].as_f64()],
            translation: Vector3::new(t[0].as_f64(), t[1].as_f64(), t[2].as_f64()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Regressor {
    cfg: RegressorConfig,
    in_channels: usize,
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    skip: Option<(ParamId, ParamId)>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

pub const POSE_OUTPUTS: usize = 7;

impl Regressor {
    pub fn new<T: Scalar>(
        cfg: RegressorConfig,
        in_channels: usize,
        store: &mut ParamStore<T>,
        rng: &mut Rng64,
    ) -> Result<Self> {
        let ch = cfg.block_channels.unwrap_or(in_channels);
        if ch == 0 || cfg.hidden == 0 || in_channels == 0 {
            return Err(Error::Config {
                key: "regressor".into(),
                msg: "widths must be positive".into(),
            });
        }
        let mut conv = |name: &str, c_in: usize, c_out: usize, k: usize, store: &mut ParamStore<T>| {
            (
                store.insert(format!("{name}.w"), kaiming(rng, &[c_out, c_in, k, k], c_in * k * k)),
                store.insert(format!("{name}.b"), Tensor::zeros(&[c_out])),
            )
        };
        let conv1 = conv("regressor.conv1", in_channels, ch, 3, store);
        let conv2 = conv("regressor.conv2", ch, ch, 3, store);
        let skip = (ch != in_channels).then(|| conv("regressor.skip", in_channels, ch, 1, store));
        let fc1 = (
            store.insert("regressor.fc1.w", kaiming(rng, &[cfg.hidden, ch], ch)),
            store.insert("regressor.fc1.b", Tensor::zeros(&[cfg.hidden])),
        );
        // identity rotation prior keeps the initial quaternion away from zero
        let mut head_bias = Tensor::zeros(&[POSE_OUTPUTS]);
        head_bias.data_mut()[0] = T::one();
        let fc2 = (
            store.insert("regressor.fc2.w", lecun(rng, &[POSE_OUTPUTS, cfg.hidden], cfg.hidden)),
            store.insert("regressor.fc2.b", head_bias),
        );
        Ok(Self {
            cfg,
            in_channels,
            conv1,
            conv2,
            skip,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.cfg
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Seven pre-split activations.
    pub fn head<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, g: &WarpedFeatureMap) -> Result<Var> {
        let shape = tape.shape(g.map).to_vec();
        if shape.len() != 3 || shape[0] != self.in_channels {
            return Err(Error::shape("regress", (&shape, self.in_channels)));
        }
        if !tape.value(g.map).is_finite() {
            return Err(Error::NonFiniteValue { op: "regress input".into() });
        }
        let x = g.map;
        let h = tape.conv2d(x, p.var(self.conv1.0), p.var(self.conv1.1), 1, 1)?;
        let h = tape.relu(h)?;
        let h = tape.conv2d(h, p.var(self.conv2.0), p.var(self.conv2.1), 1, 1)?;
        let skip = match self.skip {
            Some((w, b)) => tape.conv2d(x, p.var(w), p.var(b), 1, 0)?,
            None => x,
        };
        let h = tape.add(h, skip)?;
        let h = tape.relu(h)?;
        let s = tape.shape(h).to_vec();
        let flat = tape.reshape(h, &[s[0], s[1] * s[2]])?;
        let pooled = tape.mean_axis(flat, 1)?;
        let z = tape.linear(pooled, p.var(self.fc1.0), p.var(self.fc1.1))?;
        let z = tape.relu(z)?;
        tape.linear(z, p.var(self.fc2.0), p.var(self.fc2.1))
    }

    pub fn regress<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, g: &WarpedFeatureMap) -> Result<PoseVars> {
        let out = self.head(tape, p, g)?;
        Ok(PoseVars {
            quaternion: tape.slice(out, 0, 0, 4)?,
            translation: tape.slice(out, 0, 4, 3)?,
        })
    }
}
