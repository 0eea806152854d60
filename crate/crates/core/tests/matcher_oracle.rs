use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relpose_core::autodiff::{Tape, Tensor};
use relpose_core::extractor::FeatureGrid;
use relpose_core::matcher::{correlate, match_and_warp, match_rows};

/// Brute-force argmax: first index attaining the row maximum.
fn oracle_argmax(row: &[f64]) -> usize {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.iter().position(|&v| v == max).unwrap()
}

fn oracle_softmax_at(row: &[f64], j: usize, tau: f64) -> f64 {
    let denom: f64 = row.iter().map(|&v| (v / tau).exp()).sum();
    (row[j] / tau).exp() / denom
}

fn grid(tape: &mut Tape<f64>, h: usize, w: usize, c: usize, data: Vec<f64>) -> FeatureGrid {
    let cells = tape.constant(Tensor::new(vec![h * w, c], data).unwrap());
    FeatureGrid {
        height: h,
        width: w,
        channels: c,
        cells,
    }
}

#[test]
fn argmax_and_confidence_match_oracle_on_200_grids() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let c = r.gen_range(1..=6);
        let tau = [0.5, 1.0, 2.0][case % 3];
        // quantized values so exact ties occur
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| r.gen_range(-3i32..=3) as f64 * 0.5).collect() };
        let (da, db) = (draw(h * w * c), draw(h * w * c));
        let mut tape = Tape::new();
        let fa = grid(&mut tape, h, w, c, da.clone());
        let fb = grid(&mut tape, h, w, c, db.clone());
        let corr = correlate(&mut tape, &fa, &fb).unwrap();
        let cmap = match_rows(tape.value(corr), tau, (h, w), (h, w)).unwrap();
        let n = h * w;
        for i in 0..n {
            let row: Vec<f64> = (0..n)
                .map(|j| (0..c).map(|k| da[i * c + k] * db[j * c + k]).sum())
                .collect();
            let j = oracle_argmax(&row);
            assert_eq!(cmap.indices[i], j, "case {case} row {i}");
            let conf = oracle_softmax_at(&row, j, tau);
            assert!((cmap.confidence[i] - conf).abs() <= 1e-6, "case {case} row {i}");
        }
    }
}

#[test]
fn planted_permutation_is_recovered_exactly() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (h, w, c) = (r.gen_range(1..=8), r.gen_range(1..=8), 8);
        let n = h * w;
        // distinct rows of equal norm: the dot product peaks only on the copy
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..c).map(|_| r.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        // B's cell perm[i] holds A's cell i
        let mut b_rows = vec![Vec::new(); n];
        for i in 0..n {
            b_rows[perm[i]] = rows[i].clone();
        }
        let mut tape = Tape::new();
        let fa = grid(&mut tape, h, w, c, rows.concat());
        let fb = grid(&mut tape, h, w, c, b_rows.concat());
        let (warped, cmap) = match_and_warp(&mut tape, &fa, &fb, 1.0).unwrap();
        assert_eq!(cmap.indices, perm);

        // warped B features at each A cell equal A's own features
        let g = tape.value(warped.map);
        assert_eq!(g.shape(), &[2 * c + 5, h, w]);
        for i in 0..n {
            for k in 0..c {
                let a = g.data()[k * n + i];
                let b = g.data()[(c + 2 + k) * n + i];
                assert_eq!(a, b);
            }
            let (row, col) = (perm[i] / w, perm[i] % w);
            let norm = |v: usize, len: usize| if len > 1 { v as f64 / (len - 1) as f64 } else { 0.0 };
            assert_eq!(g.data()[(2 * c + 2) * n + i], norm(col, w));
            assert_eq!(g.data()[(2 * c + 3) * n + i], norm(row, h));
        }
    }
}
