//! Dense loops behind matmul and convolution.

use super::tensor::Scalar;

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            out[i * k + kk] = out[i * k + kk] + acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(Self {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Source pixel index for output position `(oy, ox)` and kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

/// Unfolds `(c_in, h, w)` into `(c_in·k·k, h_out·w_out)` patches, zero padded.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, input: &[T]) -> Vec<T> {
    let n_out = g.out_len();
    let mut cols = vec![T::zero(); g.patch_len() * n_out];
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.h_out {
                    for ox in 0..g.w_out {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            dst[oy * g.w_out + ox] = input[(c * g.h + y) * g.w + x];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into the image.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], grad_in: &mut [T]) {
    let n_out = g.out_len();
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.h_out {
                    for ox in 0..g.w_out {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            let idx = (c * g.h + y) * g.w + x;
                            grad_in[idx] = grad_in[idx] + src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}
