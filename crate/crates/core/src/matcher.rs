//! Hard correlation matching and construction of the warped correspondence map.
//!
//! Every cell `i` of image A is paired with the cell of image B whose
//! descriptor has the largest dot product with it. The softmax of that
//! correlation row, read at the matched index, is the match confidence.
//! The regressor input stacks, per cell of A,
//! `[F_A(x_i) | x_i | F_B(x_i*) | x_i* | conf]`, i.e. `2C + 5` channels.

use std::fmt::Write as _;

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::extractor::FeatureGrid;

/// Extra channels appended to the two descriptor blocks.
pub const EXTRA_CHANNELS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceMap {
    /// Matched cell of B for every cell of A.
    pub indices: Vec<usize>,
    /// Row-softmax value at the matched index.
    pub confidence: Vec<f64>,
    /// `(h, w)` of the source grid (A).
    pub source_dims: (usize, usize),
    /// `(h, w)` of the target grid (B).
    pub target_dims: (usize, usize),
}

impl CorrespondenceMap {
    /// CSV dump: `i,row,col,match_row,match_col,confidence`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,row,col,match_row,match_col,confidence\n");
        let (_, ws) = self.source_dims;
        let (_, wt) = self.target_dims;
        for (i, (&j, &c)) in self.indices.iter().zip(&self.confidence).enumerate() {
            let _ = writeln!(out, "{i},{},{},{},{},{c}", i / ws, i % ws, j / wt, j % wt);
        }
        out
    }
}

/// Output of [`warp`]: a `(2C+5, h, w)` tensor on the tape.
#[derive(Clone, Copy, Debug)]
pub struct WarpedFeatureMap {
    pub map: Var,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Raw dot-product correlation `F_A F_Bᵀ`, `(n_A, n_B)`.
pub fn correlate<T: Scalar>(tape: &mut Tape<T>, fa: &FeatureGrid, fb: &FeatureGrid) -> Result<Var> {
    if fa.channels != fb.channels || (fa.height, fa.width) != (fb.height, fb.width) {
        return Err(Error::shape(
            "correlate",
            ((fa.channels, fa.height, fa.width), (fb.channels, fb.height, fb.width)),
        ));
    }
    let fbt = tape.transpose(fb.cells)?;
    tape.matmul(fa.cells, fbt)
}

/// Row-wise argmax (lowest index on ties) and softmax confidence at `temperature`.
pub fn match_rows<T: Scalar>(
    corr: &Tensor<T>,
    temperature: f64,
    source_dims: (usize, usize),
    target_dims: (usize, usize),
) -> Result<CorrespondenceMap> {
    let (rows, cols) = corr.dims2("match")?;
    if rows != source_dims.0 * source_dims.1 || cols != target_dims.0 * target_dims.1 {
        return Err(Error::shape("match", (corr.shape(), source_dims, target_dims)));
    }
    if !corr.is_finite() {
        return Err(Error::NonFiniteValue { op: "match".into() });
    }
    let mut indices = Vec::with_capacity(rows);
    let mut confidence = Vec::with_capacity(rows);
    for row in corr.data().chunks_exact(cols) {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        let max = row[best].as_f64();
        let total: f64 = row
            .iter()
            .map(|&v| ((v.as_f64() - max) / temperature).exp())
            .sum();
        indices.push(best);
        confidence.push(1.0 / total);
    }
    Ok(CorrespondenceMap {
        indices,
        confidence,
        source_dims,
        target_dims,
    })
}

/// Normalized `(col/(w-1), row/(h-1))` coordinates of every cell, `(n, 2)`.
fn cell_coordinates(h: usize, w: usize, cells: impl Iterator<Item = usize>) -> Vec<f64> {
    let norm = |v: usize, len: usize| if len > 1 { v as f64 / (len - 1) as f64 } else { 0.0 };
    cells
        .flat_map(|i| [norm(i % w, w), norm(i / w, h)])
        .collect()
}

/// Differentiable confidence: row softmax of `corr / temperature` picked at the matches.
pub fn confidence_var<T: Scalar>(
    tape: &mut Tape<T>,
    corr: Var,
    cmap: &CorrespondenceMap,
    temperature: f64,
) -> Result<Var> {
    let scaled = tape.scalar_mul(corr, 1.0 / temperature)?;
    let soft = tape.softmax(scaled, 1)?;
    tape.pick(soft, &cmap.indices)
}

/// Builds `G` from the features, the matches, and an `(n)` confidence vector.
pub fn warp<T: Scalar>(
    tape: &mut Tape<T>,
    fa: &FeatureGrid,
    fb: &FeatureGrid,
    cmap: &CorrespondenceMap,
    confidence: Var,
) -> Result<WarpedFeatureMap> {
    let n = fa.n();
    if cmap.indices.len() != n || tape.shape(confidence) != [n] || fa.channels != fb.channels {
        return Err(Error::shape(
            "warp",
            (n, cmap.indices.len(), tape.shape(confidence), fa.channels, fb.channels),
        ));
    }
    if let Some(&bad) = cmap.indices.iter().find(|&&j| j >= fb.n()) {
        return Err(Error::IndexOutOfRange { index: bad, len: fb.n() });
    }
    let coords_a = cell_coordinates(fa.height, fa.width, 0..n);
    let coords_b = cell_coordinates(fb.height, fb.width, cmap.indices.iter().copied());
    let coords_a = tape.constant(Tensor::from_f64(&[n, 2], &coords_a)?);
    let coords_b = tape.constant(Tensor::from_f64(&[n, 2], &coords_b)?);
    let matched = tape.gather(fb.cells, &cmap.indices)?;
    let conf = tape.reshape(confidence, &[n, 1])?;
    let rows = tape.concat(&[fa.cells, coords_a, matched, coords_b, conf], 1)?;
    to_map(tape, rows, fa)
}

/// Regressor input without matching: B's features at the same cell as A,
/// both coordinate blocks equal and confidence fixed to one.
pub fn aligned_concat<T: Scalar>(tape: &mut Tape<T>, fa: &FeatureGrid, fb: &FeatureGrid) -> Result<WarpedFeatureMap> {
    let n = fa.n();
    if (fa.height, fa.width, fa.channels) != (fb.height, fb.width, fb.channels) {
        return Err(Error::shape(
            "aligned_concat",
            ((fa.channels, fa.height, fa.width), (fb.channels, fb.height, fb.width)),
        ));
    }
    let coords = cell_coordinates(fa.height, fa.width, 0..n);
    let coords = tape.constant(Tensor::from_f64(&[n, 2], &coords)?);
    let ones = tape.constant(Tensor::full(&[n, 1], T::one()));
    let rows = tape.concat(&[fa.cells, coords, fb.cells, coords, ones], 1)?;
    to_map(tape, rows, fa)
}

fn to_map<T: Scalar>(tape: &mut Tape<T>, rows: Var, fa: &FeatureGrid) -> Result<WarpedFeatureMap> {
    let channels = 2 * fa.channels + EXTRA_CHANNELS;
    let cols = tape.transpose(rows)?;
    let map = tape.reshape(cols, &[channels, fa.height, fa.width])?;
    Ok(WarpedFeatureMap {
        map,
        channels,
        height: fa.height,
        width: fa.width,
    })
}

/// Correlate, match and warp in one step.
pub fn match_and_warp<T: Scalar>(
    tape: &mut Tape<T>,
    fa: &FeatureGrid,
    fb: &FeatureGrid,
    temperature: f64,
) -> Result<(WarpedFeatureMap, CorrespondenceMap)> {
    let corr = correlate(tape, fa, fb)?;
    let cmap = match_rows(
        tape.value(corr),
        temperature,
        (fa.height, fa.width),
        (fb.height, fb.width),
    )?;
    let conf = confidence_var(tape, corr, &cmap, temperature)?;
    let warped = warp(tape, fa, fb, &cmap, conf)?;
    Ok((warped, cmap))
}
