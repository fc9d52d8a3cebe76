//! Finite-difference checks of the tape against the `f64` reference ops.
//!
//! Each check builds random inputs, takes analytic gradients from the tape
//! (in `f32`) and central differences of the `f64` oracle at the same point,
//! and returns the norm-wise relative error. Inputs are kept away from the
//! kinks of `relu`, `max` and `|.|` so the difference quotient is exact up to
//! rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use irisloc::nets::{LossWeights, ModelConfig, NetworkParams};
use irisloc::tensor::{Tape, Tensor};

use super::{conv3x3, global_avg_pool, linear, maxpool2, numeric_grad, relative_error, relu, weighted_l1, Arr};

/// Finite-difference step, in `f64`.
pub const EPS: f64 = 1e-6;
/// Norm floor in the relative error, guarding all-zero gradients.
pub const FLOOR: f64 = 1e-8;

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Normal values pushed at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, gap: f32) -> Vec<f32> {
    normal(rng, n)
        .into_iter()
        .map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
        .collect()
}

fn t(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tape gradients of `sum(r * op(inputs))` for the given differentiable inputs.
fn tape_grads(
    inputs: &[Tensor],
    r: &Tensor,
    op: impl for<'a> Fn(&mut Tape<'a>, &[irisloc::tensor::NodeId]) -> irisloc::tensor::NodeId,
) -> Vec<f64> {
    let mut tape = Tape::new();
    let ids: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let y = op(&mut tape, &ids);
    let rc = tape.constant(r.clone());
    let prod = tape.mul(y, rc).expect("shapes agree");
    let loss = tape.sum(prod).expect("sum");
    tape.backward(loss).expect("scalar loss");
    ids.iter()
        .zip(inputs)
        .flat_map(|(&id, x)| match tape.grad(id) {
            Some(g) => to64(g),
            None => vec![0.0; x.numel()],
        })
        .collect()
}

pub fn conv(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w, k) = (2, 3, 5, 4, 4);
    let x = t(&[n, c, h, w], normal(&mut rng, n * c * h * w));
    let wt = t(&[k, c, 3, 3], normal(&mut rng, k * c * 9));
    let b = t(&[k], normal(&mut rng, k));
    let r = t(&[n, k, h, w], normal(&mut rng, n * k * h * w));
    let analytic = tape_grads(&[x.clone(), wt.clone(), b.clone()], &r, |tp, ids| {
        tp.conv2d(ids[0], ids[1], ids[2]).expect("conv")
    });
    let (nx, nw) = (x.numel(), wt.numel());
    let r64 = to64(r.data());
    let flat: Vec<f64> = [to64(x.data()), to64(wt.data()), to64(b.data())].concat();
    let numeric = numeric_grad(&flat, EPS, |v| {
        let xa = Arr::new(&[n, c, h, w], v[..nx].to_vec());
        let wa = Arr::new(&[k, c, 3, 3], v[nx..nx + nw].to_vec());
        dot(&conv3x3(&xa, &wa, &v[nx + nw..]).data, &r64)
    });
    relative_error(&analytic, &numeric, FLOOR)
}

pub fn relu_op(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 3, 4, 4];
    let n: usize = shape.iter().product();
    let x = t(&shape, away_from_zero(&mut rng, n, 0.05));
    let r = t(&shape, normal(&mut rng, n));
    let analytic = tape_grads(&[x.clone()], &r, |tp, ids| tp.relu(ids[0]).expect("relu"));
    let r64 = to64(r.data());
    let numeric = numeric_grad(&to64(x.data()), EPS, |v| {
        dot(&relu(&Arr::new(&shape, v.to_vec())).data, &r64)
    });
    relative_error(&analytic, &numeric, FLOOR)
}

pub fn maxpool(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // odd extents exercise the dropped trailing row and column
    let shape = [2, 2, 5, 7];
    let n: usize = shape.iter().product();
    // distinct values spaced 0.1 apart, shuffled: no ties within a window
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * 0.1 - 3.0).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = t(&shape, vals);
    let out_shape = [2, 2, 2, 3];
    let r = t(&out_shape, normal(&mut rng, out_shape.iter().product()));
    let analytic = tape_grads(&[x.clone()], &r, |tp, ids| tp.maxpool2(ids[0]).expect("pool"));
    let r64 = to64(r.data());
    let numeric = numeric_grad(&to64(x.data()), EPS, |v| {
        dot(&maxpool2(&Arr::new(&shape, v.to_vec())).data, &r64)
    });
    relative_error(&analytic, &numeric, FLOOR)
}

pub fn linear_op(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, f, d) = (3, 7, 5);
    let x = t(&[n, f], normal(&mut rng, n * f));
    let wt = t(&[d, f], normal(&mut rng, d * f));
    let b = t(&[d], normal(&mut rng, d));
    let r = t(&[n, d], normal(&mut rng, n * d));
    let analytic = tape_grads(&[x.clone(), wt.clone(), b.clone()], &r, |tp, ids| {
        tp.linear(ids[0], ids[1], ids[2]).expect("linear")
    });
    let r64 = to64(r.data());
    let flat: Vec<f64> = [to64(x.data()), to64(wt.data()), to64(b.data())].concat();
    let numeric = numeric_grad(&flat, EPS, |v| {
        let xa = Arr::new(&[n, f], v[..n * f].to_vec());
        let wa = Arr::new(&[d, f], v[n * f..n * f + d * f].to_vec());
        dot(&linear(&xa, &wa, &v[n * f + d * f..]).data, &r64)
    });
    relative_error(&analytic, &numeric, FLOOR)
}

pub fn gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 3, 4, 5];
    let n: usize = shape.iter().product();
    let x = t(&shape, normal(&mut rng, n));
    let r = t(&[2, 3], normal(&mut rng, 6));
    let analytic = tape_grads(&[x.clone()], &r, |tp, ids| tp.global_avg_pool(ids[0]).expect("gap"));
    let r64 = to64(r.data());
    let numeric = numeric_grad(&to64(x.data()), EPS, |v| {
        dot(&global_avg_pool(&Arr::new(&shape, v.to_vec())).data, &r64)
    });
    relative_error(&analytic, &numeric, FLOOR)
}

pub fn reshape(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = t(&[2, 3, 4], normal(&mut rng, 24));
    let r = t(&[6, 4], normal(&mut rng, 24));
    let analytic = tape_grads(&[x.clone()], &r, |tp, ids| tp.reshape(ids[0], &[6, 4]).expect("reshape"));
    let r64 = to64(r.data());
    let numeric = numeric_grad(&to64(x.data()), EPS, |v| dot(v, &r64));
    relative_error(&analytic, &numeric, FLOOR)
}

/// `sum(a * b * r)`, differentiated in both factors.
pub fn mul(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = t(&[3, 4], normal(&mut rng, 12));
    let b = t(&[3, 4], normal(&mut rng, 12));
    let r = t(&[3, 4], normal(&mut rng, 12));
    let analytic = tape_grads(&[a.clone(), b.clone()], &r, |tp, ids| tp.mul(ids[0], ids[1]).expect("mul"));
    let r64 = to64(r.data());
    let flat = [to64(a.data()), to64(b.data())].concat();
    let numeric = numeric_grad(&flat, EPS, |v| {
        (0..12).map(|i| v[i] * v[12 + i] * r64[i]).sum()
    });
    relative_error(&analytic, &numeric, FLOOR)
}

pub fn weighted_l1_op(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (3, 5);
    let target = normal(&mut rng, n * d);
    let offs = away_from_zero(&mut rng, n * d, 0.05);
    let pred: Vec<f32> = target.iter().zip(&offs).map(|(a, b)| a + b).collect();
    let weights: Vec<f32> = (0..d).map(|_| rng.random_range(0.5f32..3.0)).collect();
    let p = t(&[n, d], pred);
    let mut tape = Tape::new();
    let id = tape.leaf(p.clone(), true);
    let loss = tape.weighted_l1(id, &target, &weights).expect("loss");
    tape.backward(loss).expect("backward");
    let analytic = to64(tape.grad(id).expect("grad"));
    let (t64, w64) = (to64(&target), to64(&weights));
    let numeric = numeric_grad(&to64(p.data()), EPS, |v| {
        weighted_l1(&Arr::new(&[n, d], v.to_vec()), &t64, &w64)
    });
    relative_error(&analytic, &numeric, FLOOR)
}

/// Per-op checks by name.
pub const OPS: &[(&str, fn(u64) -> f64)] = &[
    ("conv2d", conv),
    ("relu", relu_op),
    ("maxpool2", maxpool),
    ("linear", linear_op),
    ("global_avg_pool", gap),
    ("reshape", reshape),
    ("mul", mul),
    ("weighted_l1", weighted_l1_op),
];

/// `f64` forward of the ILN-shaped stack using the parameters of `p`.
fn stack_forward(p: &NetworkParams, params: &[Vec<f64>], x: &Arr) -> Arr {
    let mut x = x.clone();
    let mut li = 0;
    let shape = |i: usize| p.tensors()[i].shape().to_vec();
    let convs = (p.tensors().len() - 2) / 2;
    let per_stage = convs / 5;
    for _ in 0..5 {
        for _ in 0..per_stage {
            let w = Arr::new(&shape(li), params[li].clone());
            x = relu(&conv3x3(&x, &w, &params[li + 1]));
            li += 2;
        }
        x = maxpool2(&x);
    }
    x = global_avg_pool(&x);
    linear(&x, &Arr::new(&shape(li), params[li].clone()), &params[li + 1])
}

/// Full ILN-shaped network (five conv-relu-conv-relu-pool stages, global
/// average pool, linear head, weighted L1 loss) on a small input. Checks a
/// random subset of `samples` parameter coordinates plus every input pixel
/// of a few random locations.
pub fn composite(seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let config = ModelConfig::iln(0.1, 0.125);
    let mut p = NetworkParams::init(config, seed).expect("valid config");
    // non-zero biases so the check also covers their gradients
    for (name, tensor) in p.names().to_vec().iter().zip(p.tensors_mut()) {
        if name.ends_with("bias") {
            for v in tensor.data_mut() {
                *v = 0.1 * rng.sample::<f32, _>(StandardNormal);
            }
        }
    }
    let (w, h) = config.input_dims();
    let n = 1;
    let input = t(&[n, 1, h, w], (0..n * h * w).map(|_| rng.random_range(0.0f32..1.0)).collect());
    let weights = LossWeights::iln();
    let target: Vec<f32> = normal(&mut rng, n * config.out_dim);

    let mut tape = Tape::new();
    let xin = tape.leaf(input.clone(), true);
    let (out, leaves) = p.forward_tape(&mut tape, xin).expect("forward");
    let loss = tape.weighted_l1(out, &target, &weights.0).expect("loss");
    tape.backward(loss).expect("backward");

    let params: Vec<Vec<f64>> = p.tensors().iter().map(|t| to64(t.data())).collect();
    let x64 = Arr::from_f32(input.shape(), input.data());
    let t64 = to64(&target);
    let w64 = to64(&weights.0);

    // coordinates: (tensor index or usize::MAX for the input, element)
    let mut coords = Vec::with_capacity(samples + 4);
    for _ in 0..samples {
        let ti = rng.random_range(0..params.len());
        coords.push((ti, rng.random_range(0..params[ti].len())));
    }
    for _ in 0..4 {
        coords.push((usize::MAX, rng.random_range(0..x64.data.len())));
    }
    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    for &(ti, ei) in &coords {
        let g = if ti == usize::MAX {
            tape.grad(xin).map_or(0.0, |g| f64::from(g[ei]))
        } else {
            tape.grad(leaves[ti]).map_or(0.0, |g| f64::from(g[ei]))
        };
        analytic.push(g);
        let eval = |delta: f64| {
            let mut pp = params.clone();
            let mut xx = x64.clone();
            if ti == usize::MAX {
                xx.data[ei] += delta;
            } else {
                pp[ti][ei] += delta;
            }
            weighted_l1(&stack_forward(&p, &pp, &xx), &t64, &w64)
        };
        numeric.push((eval(EPS) - eval(-EPS)) / (2.0 * EPS));
    }
    relative_error(&analytic, &numeric, FLOOR)
}

/// Convolution on an image large enough for the row-band code path,
/// checked at `samples` random coordinates of input, weight and bias.
pub fn conv_large(seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w, k) = (2, 2, 70, 66, 3);
    let x = t(&[n, c, h, w], normal(&mut rng, n * c * h * w));
    let wt = t(&[k, c, 3, 3], normal(&mut rng, k * c * 9));
    let b = t(&[k], normal(&mut rng, k));
    let r = t(&[n, k, h, w], normal(&mut rng, n * k * h * w));
    let analytic = tape_grads(&[x.clone(), wt.clone(), b.clone()], &r, |tp, ids| {
        tp.conv2d(ids[0], ids[1], ids[2]).expect("conv")
    });
    let (nx, nw) = (x.numel(), wt.numel());
    let r64 = to64(r.data());
    let flat: Vec<f64> = [to64(x.data()), to64(wt.data()), to64(b.data())].concat();
    let f = |v: &[f64]| {
        let xa = Arr::new(&[n, c, h, w], v[..nx].to_vec());
        let wa = Arr::new(&[k, c, 3, 3], v[nx..nx + nw].to_vec());
        dot(&conv3x3(&xa, &wa, &v[nx + nw..]).data, &r64)
    };
    // forward values agree too
    let fwd = irisloc::tensor::ops::conv2d(&x, &wt, &b).expect("conv");
    let xa = Arr::new(&[n, c, h, w], flat[..nx].to_vec());
    let wa = Arr::new(&[k, c, 3, 3], flat[nx..nx + nw].to_vec());
    let want = conv3x3(&xa, &wa, &flat[nx + nw..]);
    let fwd_err = relative_error(&to64(fwd.data()), &want.data, FLOOR);
    let mut coords: Vec<usize> = (0..samples).map(|_| rng.random_range(0..flat.len())).collect();
    // always include every weight and bias element plus image corners
    coords.extend(nx..flat.len());
    coords.extend([0, w - 1, (h - 1) * w, nx - 1]);
    let mut a = Vec::new();
    let mut num = Vec::new();
    let mut v = flat.clone();
    for &i in &coords {
        a.push(analytic[i]);
        let orig = v[i];
        v[i] = orig + EPS;
        let hi = f(&v);
        v[i] = orig - EPS;
        let lo = f(&v);
        v[i] = orig;
        num.push((hi - lo) / (2.0 * EPS));
    }
    relative_error(&a, &num, FLOOR).max(fwd_err)
}
