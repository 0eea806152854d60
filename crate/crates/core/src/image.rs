//! Image loading: PNG files and `RPTN` raw tensors.
//!
//! `RPTN` layout, little-endian: magic `RPTN`, `u32` rank, `u32` dims, then
//! `f32` row-major data.

use std::path::Path;

use crate::autodiff::checkpoint::Reader;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"RPTN";

/// Float image `(channels, height, width)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub tensor: Tensor<f32>,
}

impl Image {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        if tensor.ndim() != 3 {
            return Err(Error::shape("Image::new", tensor.shape()));
        }
        Ok(Self { tensor })
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    /// Loads a PNG or RPTN file (chosen by magic bytes) with `channels` 1 or 3.
    pub fn load(path: impl AsRef<Path>, channels: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(TENSOR_MAGIC) {
            let t = decode_tensor(&bytes, path)?;
            let img = match t.ndim() {
                2 => {
                    let (h, w) = (t.shape()[0], t.shape()[1]);
                    Image::new(t.reshaped(&[1, h, w])?)?
                }
                _ => Image::new(t)?,
            };
            return img.with_channels(channels);
        }
        let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let tensor = match channels {
            1 => {
                let g = decoded.to_luma32f();
                Tensor::new(vec![1, h, w], g.into_raw())?
            }
            3 => {
                let rgb = decoded.to_rgb32f().into_raw();
                let mut planar = vec![0.0f32; 3 * h * w];
                for (i, px) in rgb.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        planar[c * h * w + i] = px[c];
                    }
                }
                Tensor::new(vec![3, h, w], planar)?
            }
            _ => return Err(Error::BadChannelCount { channels, divisor: 1 }),
        };
        Ok(Self { tensor })
    }

    /// Converts between grayscale and 3-channel layouts.
    pub fn with_channels(self, channels: usize) -> Result<Self> {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        if c == channels {
            return Ok(self);
        }
        let d = self.tensor.data();
        let data = match (c, channels) {
            (3, 1) => (0..h * w)
                .map(|i| (d[i] + d[h * w + i] + d[2 * h * w + i]) / 3.0)
                .collect(),
            (1, 3) => d.iter().chain(d).chain(d).copied().collect(),
            _ => return Err(Error::shape("Image::with_channels", (c, channels))),
        };
        Ok(Self {
            tensor: Tensor::new(vec![channels, h, w], data)?,
        })
    }

    pub fn save_rptn(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tensor(&self.tensor, path)
    }
}

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != TENSOR_MAGIC {
        return Err(r.fail("bad magic, expected RPTN"));
    }
    let ndim = r.u32()? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(r.fail("unsupported rank"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u32()? as usize);
    }
    let data = r.f32s(shape.iter().product())?;
    if !r.at_end() {
        return Err(r.fail("trailing bytes"));
    }
    Tensor::new(shape, data).map_err(|e| r.fail(&e.to_string()))
}

pub fn save_tensor(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}
