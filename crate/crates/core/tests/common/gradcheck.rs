//! Central finite-difference oracle for tape gradients, plus the op and
//! end-to-end cases used by the gradient suite.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relpose_core::autodiff::{Bound, ParamStore, Tape, Tensor, Var};
use relpose_core::data::{synth_scene, SynthConfig};
use relpose_core::extractor::{AttentionLayer, ExtractorConfig};
use relpose_core::geometry::UnitQuaternion;
use relpose_core::loss::{loss_rotation, loss_total, loss_translation, loss_translation_normalized, LossWeights};
use relpose_core::matcher::WarpedFeatureMap;
use relpose_core::model::{ModelConfig, PoseNet};
use relpose_core::regressor::{Regressor, RegressorConfig};
use relpose_core::Result;

pub const H: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct Check {
    /// Worst normwise relative error over the groups:
    /// `max |analytic - numeric| / max |numeric|`.
    pub rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h evaluation changed a discrete branch.
    pub skipped: usize,
}

type Graph<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn evaluate(inputs: &[Tensor<f64>], f: &Graph) -> (f64, Vec<usize>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let root = f(&mut tape, &vars).expect("graph builds");
    (tape.value(root).item(), tape.branch_signature())
}

/// Compares backprop against central differences with step `h`.
/// `groups` partitions input indices; each group gets one normwise error.
pub fn check_groups(inputs: &[Tensor<f64>], groups: &[Vec<usize>], h: f64, f: &Graph) -> Check {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars).expect("graph builds");
    let base_sig = tape.branch_signature();
    let grads = tape.backward(root).expect("backward");

    let mut work = inputs.to_vec();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for group in groups {
        let (mut max_diff, mut max_num) = (0.0f64, 0.0f64);
        for &i in group {
            let analytic = grads.get(vars[i]);
            for k in 0..inputs[i].len() {
                let x0 = inputs[i].data()[k];
                work[i].data_mut()[k] = x0 + h;
                let (fp, sp) = evaluate(&work, f);
                work[i].data_mut()[k] = x0 - h;
                let (fm, sm) = evaluate(&work, f);
                work[i].data_mut()[k] = x0;
                if sp != base_sig || sm != base_sig {
                    skipped += 1;
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * h);
                max_diff = max_diff.max((analytic.data()[k] - numeric).abs());
                max_num = max_num.max(numeric.abs());
                checked += 1;
            }
        }
        worst = worst.max(max_diff / max_num.max(1e-8));
    }
    Check {
        rel_error: worst,
        checked,
        skipped,
    }
}

/// One group per input.
pub fn check(inputs: &[Tensor<f64>], f: &Graph) -> Check {
    let groups: Vec<Vec<usize>> = (0..inputs.len()).map(|i| vec![i]).collect();
    check_groups(inputs, &groups, H, f)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Uniform magnitudes in `[0.1, 1)` with random sign, clear of `|x| = 0`.
pub fn rand_nonzero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = rand_tensor(r, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if r.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// `sum(x ⊙ w)` with a fixed random `w`, so every output element matters.
pub fn project(tape: &mut Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let w = rand_tensor(&mut rng(seed ^ 0xABCD), tape.shape(x), -1.0, 1.0);
    let w = tape.constant(w);
    let y = tape.mul(x, w)?;
    tape.sum(y)
}

fn dims(r: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    (0..n).map(|_| r.gen_range(1..=max)).collect()
}

/// Every differentiable op (and the small composites built on them), each
/// on a random shape drawn from `seed`.
pub fn op_suite(seed: u64) -> Vec<(&'static str, Check)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let s = seed;

    let shape = dims(&mut r, 2, 5);
    let (a, b) = (rand_tensor(&mut r, &shape, -1.0, 1.0), rand_tensor(&mut r, &shape, -1.0, 1.0));
    out.push(("add", check(&[a.clone(), b.clone()], &|t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, s)
    })));
    out.push(("sub", check(&[a.clone(), b.clone()], &|t, v| {
        let y = t.sub(v[0], v[1])?;
        project(t, y, s)
    })));
    out.push(("mul", check(&[a.clone(), b.clone()], &|t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, s)
    })));
    let c = r.gen_range(-2.0..2.0);
    out.push(("scalar_mul", check(&[a.clone()], &|t, v| {
        let y = t.scalar_mul(v[0], c)?;
        project(t, y, s)
    })));
    let d = rand_tensor(&mut r, &[1], 0.5, 2.0);
    out.push(("div_scalar", check(&[a.clone(), d], &|t, v| {
        let y = t.div_scalar(v[0], v[1])?;
        project(t, y, s)
    })));
    out.push(("exp", check(&[a.clone()], &|t, v| {
        let y = t.exp(v[0])?;
        project(t, y, s)
    })));
    let nz = rand_nonzero(&mut r, &shape);
    out.push(("relu", check(&[nz.clone()], &|t, v| {
        let y = t.relu(v[0])?;
        project(t, y, s)
    })));
    out.push(("sum", check(&[a.clone()], &|t, v| {
        let y = t.exp(v[0])?;
        t.sum(y)
    })));
    out.push(("mean", check(&[a.clone()], &|t, v| {
        let y = t.mul(v[0], v[0])?;
        t.mean(y)
    })));
    let axis = r.gen_range(0..2);
    out.push(("mean_axis", check(&[a.clone()], &|t, v| {
        let y = t.mean_axis(v[0], axis)?;
        project(t, y, s)
    })));
    out.push(("l1_norm", check(&[nz], &|t, v| t.l1_norm(v[0]))));
    out.push(("l2_norm", check(&[a.clone()], &|t, v| t.l2_norm(v[0]))));
    out.push(("transpose", check(&[a.clone()], &|t, v| {
        let y = t.transpose(v[0])?;
        project(t, y, s)
    })));
    let flat = [shape[0] * shape[1]];
    out.push(("reshape", check(&[a.clone()], &|t, v| {
        let y = t.reshape(v[0], &flat)?;
        project(t, y, s)
    })));
    let start = r.gen_range(0..shape[axis]);
    let len = r.gen_range(1..=shape[axis] - start);
    out.push(("slice", check(&[a.clone()], &|t, v| {
        let y = t.slice(v[0], axis, start, len)?;
        project(t, y, s)
    })));
    let sm = rand_tensor(&mut r, &shape, -2.0, 2.0);
    out.push(("softmax", check(&[sm], &|t, v| {
        let y = t.softmax(v[0], axis)?;
        project(t, y, s)
    })));

    // concat along a random axis of 3-D parts
    let base = dims(&mut r, 3, 3);
    let cat_axis = r.gen_range(0..3);
    let parts: Vec<Tensor<f64>> = (0..3)
        .map(|_| {
            let mut sh = base.clone();
            sh[cat_axis] = r.gen_range(1..=3);
            rand_tensor(&mut r, &sh, -1.0, 1.0)
        })
        .collect();
    out.push(("concat", check(&parts, &|t, v| {
        let y = t.concat(v, cat_axis)?;
        project(t, y, s)
    })));

    let rows = r.gen_range(1..=6);
    let index: Vec<usize> = (0..r.gen_range(1..=8)).map(|_| r.gen_range(0..rows)).collect();
    let cols = r.gen_range(1..=4);
    let src = rand_tensor(&mut r, &[rows, cols], -1.0, 1.0);
    out.push(("gather", check(&[src.clone()], &|t, v| {
        let y = t.gather(v[0], &index)?;
        project(t, y, s)
    })));
    let pick: Vec<usize> = (0..rows).map(|_| r.gen_range(0..cols)).collect();
    out.push(("pick", check(&[src], &|t, v| {
        let y = t.pick(v[0], &pick)?;
        project(t, y, s)
    })));

    let (m, k, n) = (r.gen_range(1..=5), r.gen_range(1..=5), r.gen_range(1..=5));
    let (ma, mb) = (rand_tensor(&mut r, &[m, k], -1.0, 1.0), rand_tensor(&mut r, &[k, n], -1.0, 1.0));
    out.push(("matmul", check(&[ma, mb], &|t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, s)
    })));

    let (ci, co, ks) = (r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=4));
    let stride = r.gen_range(1..=2);
    let pad = r.gen_range(0..=1);
    let hw = (r.gen_range(ks..=ks + 4), r.gen_range(ks..=ks + 4));
    let x = rand_tensor(&mut r, &[ci, hw.0, hw.1], -1.0, 1.0);
    let w = rand_tensor(&mut r, &[co, ci, ks, ks], -1.0, 1.0);
    let bias = rand_tensor(&mut r, &[co], -1.0, 1.0);
    out.push(("conv2d", check(&[x.clone(), w.clone(), bias.clone()], &|t, v| {
        let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
        project(t, y, s)
    })));
    // conv → relu → mean; skipped coordinates cover relu kinks
    out.push(("conv2d_relu_mean", check(&[x, w, bias], &|t, v| {
        let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
        let y = t.relu(y)?;
        t.mean(y)
    })));

    let (fin, fout, batch) = (r.gen_range(1..=5), r.gen_range(1..=5), r.gen_range(1..=4));
    let lw = rand_tensor(&mut r, &[fout, fin], -1.0, 1.0);
    let lb = rand_tensor(&mut r, &[fout], -1.0, 1.0);
    let x2 = rand_tensor(&mut r, &[batch, fin], -1.0, 1.0);
    let x1 = rand_tensor(&mut r, &[fin], -1.0, 1.0);
    out.push(("linear", check(&[x2, lw.clone(), lb.clone()], &|t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, s)
    })));
    out.push(("linear_vector", check(&[x1, lw, lb], &|t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, s)
    })));

    let ch = r.gen_range(3..=6);
    let ln_rows = r.gen_range(1..=4);
    let ln_x = rand_tensor(&mut r, &[ln_rows, ch], -2.0, 2.0);
    let gamma = rand_tensor(&mut r, &[ch], 0.5, 1.5);
    let beta = rand_tensor(&mut r, &[ch], -0.5, 0.5);
    out.push(("layer_norm", check(&[ln_x, gamma, beta], &|t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        project(t, y, s)
    })));

    out.extend(composite_suite(&mut r, s));
    out
}

fn store_check(store: &ParamStore<f64>, extra: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &Bound, &[Var]) -> Result<Var>) -> Check {
    let n = store.len();
    let mut inputs = store.tensors().to_vec();
    inputs.extend_from_slice(extra);
    let groups = vec![(0..n).collect(), (n..inputs.len()).collect()];
    check_groups(&inputs, &groups, H, &|t, v| {
        let p = Bound::from_vars(v[..n].to_vec());
        f(t, &p, &v[n..])
    })
}

fn composite_suite(r: &mut ChaCha8Rng, s: u64) -> Vec<(&'static str, Check)> {
    let mut out = Vec::new();
    let mut init = relpose_core::init::rng(s);

    // attention layer, self and cross
    let heads = r.gen_range(1..=2);
    let channels = 4 * heads;
    let mut store = ParamStore::<f64>::new();
    let layer = AttentionLayer::new(&mut store, &mut init, "attn", channels, heads, 2);
    let (nq, ns) = (r.gen_range(1..=5), r.gen_range(1..=5));
    let q = rand_tensor(r, &[nq, channels], -1.0, 1.0);
    let src = rand_tensor(r, &[ns, channels], -1.0, 1.0);
    out.push(("attention_cross", store_check(&store, &[q.clone(), src], &|t, p, v| {
        let y = layer.forward(t, p, v[0], v[1])?;
        project(t, y, s)
    })));
    out.push(("attention_self", store_check(&store, &[q], &|t, p, v| {
        let y = layer.forward(t, p, v[0], v[0])?;
        project(t, y, s)
    })));

    // regressor head, projected and per output
    let mut store = ParamStore::<f64>::new();
    let in_ch = r.gen_range(2..=5);
    let block = r.gen_bool(0.5).then(|| r.gen_range(2..=4));
    let reg = Regressor::new(RegressorConfig { block_channels: block, hidden: 6 }, in_ch, &mut store, &mut init).unwrap();
    let (gh, gw) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let g = rand_tensor(r, &[in_ch, gh, gw], -1.0, 1.0);
    let warped = |map: Var| WarpedFeatureMap {
        map,
        channels: in_ch,
        height: gh,
        width: gw,
    };
    out.push(("regressor", store_check(&store, &[g.clone()], &|t, p, v| {
        let y = reg.head(t, p, &warped(v[0]))?;
        project(t, y, s)
    })));
    let output = r.gen_range(0..7);
    out.push(("regressor_output", store_check(&store, &[g], &|t, p, v| {
        let y = reg.head(t, p, &warped(v[0]))?;
        let y = t.slice(y, 0, output, 1)?;
        t.sum(y)
    })));

    // losses
    let q_true = UnitQuaternion::new([r.gen_range(0.1..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).unwrap();
    let t_true = nalgebra::Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
    let q_hat = rand_nonzero(r, &[4]);
    let t_hat = rand_nonzero(r, &[3]);
    out.push(("loss_rotation", check(&[q_hat], &|t, v| loss_rotation(t, v[0], &q_true))));
    out.push(("loss_translation", check(&[t_hat.clone()], &|t, v| loss_translation(t, v[0], &t_true))));
    out.push(("loss_translation_normalized", check(&[t_hat], &|t, v| {
        loss_translation_normalized(t, v[0], &t_true)
    })));
    let mut ws = ParamStore::<f64>::new();
    let weights = LossWeights::new(&mut ws);
    for (id, v) in ws.ids().collect::<Vec<_>>().into_iter().zip([r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]) {
        ws.get_mut(id).data_mut()[0] = v;
    }
    let comps = rand_tensor(r, &[3], 0.1, 2.0);
    out.push(("loss_total", store_check(&ws, &[comps], &|t, p, v| {
        let parts: Vec<Var> = (0..3).map(|i| t.slice(v[0], 0, i, 1)).collect::<Result<_>>()?;
        loss_total(t, p, &weights, parts[0], parts[1], Some(parts[2]))
    })));
    out
}

/// Gradient of the full training loss on a 16×16 synthetic pair, with one
/// normwise error per parameter group (extractor, regressor, loss weights).
pub fn end_to_end(seed: u64) -> (Check, [f64; 3]) {
    let (_, records) = synth_scene(&SynthConfig {
        seed,
        n_pairs: 1,
        height: 16,
        width: 16,
        n_points: 150,
        ..SynthConfig::default()
    })
    .unwrap();
    let rec = &records[0];
    let (a, b) = (rec.image_a.load(1).unwrap(), rec.image_b.load(1).unwrap());
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
    let (net, mut store) = PoseNet::new::<f64>(cfg, seed).unwrap();
    // move the loss weights off zero so their gradients are generic
    for (i, id) in [net.loss_weights().s_q, net.loss_weights().s_t, net.loss_weights().s_tn].into_iter().enumerate() {
        store.get_mut(id).data_mut()[0] = 0.1 * (i as f64 + 1.0);
    }
    let group_of = |name: &str| {
        if name.starts_with("extractor.") {
            0
        } else if name.starts_with("regressor.") {
            1
        } else {
            2
        }
    };
    let mut groups = vec![Vec::new(), Vec::new(), Vec::new()];
    for id in store.ids() {
        groups[group_of(store.name(id))].push(id.index());
    }
    let f = |t: &mut Tape<f64>, v: &[Var]| {
        let p = Bound::from_vars(v.to_vec());
        Ok(net.pair_loss(t, &p, &a, &b, &rec.target)?.total)
    };
    let per_group: Vec<Check> = groups
        .iter()
        .map(|g| check_groups(store.tensors(), &[g.clone()], H, &f))
        .collect();
    let combined = Check {
        rel_error: per_group.iter().map(|c| c.rel_error).fold(0.0, f64::max),
        checked: per_group.iter().map(|c| c.checked).sum(),
        skipped: per_group.iter().map(|c| c.skipped).sum(),
    };
    (combined, [per_group[0].rel_error, per_group[1].rel_error, per_group[2].rel_error])
}
