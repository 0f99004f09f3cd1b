#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wdcgan_core::autodiff::{
    batch_norm1d, conv1d, conv_transpose1d, instance_norm1d, Mode, Reduction, RunningStats, Tape,
    Tensor,
};
use wdcgan_core::gradcheck::{check_gradients, rel_error};
use wdcgan_core::Result;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, random sign: keeps kinks out of the FD stencil.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..2.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

/// Scalarizes an op output with a fixed random weighting.
pub fn weighted(y: &Tensor, weights: &Tensor) -> Result<Tensor> {
    y.mul(weights)?.sum()
}

type Scalar = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

struct Case {
    inputs: Vec<Tensor>,
    f: Scalar,
}

fn with_weights(out_shape: Vec<usize>, seed: u64, op: impl Fn(&[Tensor]) -> Result<Tensor> + 'static) -> Scalar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(&mut rng, &out_shape, -1.0, 1.0);
    Box::new(move |xs| weighted(&op(xs)?, &w))
}

fn make_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let seed: u64 = rng.random();
    let s3 = |rng: &mut ChaCha8Rng| {
        vec![
            rng.random_range(1..4usize),
            rng.random_range(1..4usize),
            rng.random_range(2..7usize),
        ]
    };
    match name {
        "add" | "sub" | "mul" | "div" => {
            let shape = s3(rng);
            let a = uniform(rng, &shape, -2.0, 2.0);
            let b = if name == "div" {
                away_from_zero(rng, &shape)
            } else {
                uniform(rng, &shape, -2.0, 2.0)
            };
            let which = name.to_string();
            Case {
                inputs: vec![a, b],
                f: with_weights(shape, seed, move |x| match which.as_str() {
                    "add" => x[0].add(&x[1]),
                    "sub" => x[0].sub(&x[1]),
                    "mul" => x[0].mul(&x[1]),
                    _ => x[0].div(&x[1]),
                }),
            }
        }
        "neg" | "scale" | "add_scalar" | "exp" | "tanh" | "sigmoid" | "relu" | "leaky_relu"
        | "clamp" | "square" => {
            let shape = s3(rng);
            let a = away_from_zero(rng, &shape);
            let c: f64 = rng.random_range(-2.0..2.0);
            let which = name.to_string();
            Case {
                inputs: vec![a],
                f: with_weights(shape, seed, move |x| match which.as_str() {
                    "neg" => x[0].neg(),
                    "scale" => x[0].scale(c),
                    "add_scalar" => x[0].add_scalar(c),
                    "exp" => x[0].exp(),
                    "tanh" => x[0].tanh(),
                    "sigmoid" => x[0].sigmoid(),
                    "relu" => x[0].relu(),
                    "leaky_relu" => x[0].leaky_relu(0.2),
                    "clamp" => x[0].clamp(-0.6, 0.7),
                    _ => x[0].square(),
                }),
            }
        }
        "ln" | "pow" => {
            let shape = s3(rng);
            let a = uniform(rng, &shape, 0.2, 3.0);
            let p: f64 = rng.random_range(-1.5..2.5);
            let ln = name == "ln";
            Case {
                inputs: vec![a],
                f: with_weights(shape, seed, move |x| if ln { x[0].ln() } else { x[0].powf(p) }),
            }
        }
        "sum_keep" | "broadcast" | "reshape" => {
            let shape = s3(rng);
            let which = name.to_string();
            let axis = rng.random_range(0..3usize);
            let (in_shape, out_shape) = match which.as_str() {
                "sum_keep" => {
                    let mut o = shape.clone();
                    o[axis] = 1;
                    (shape.clone(), o)
                }
                "broadcast" => {
                    let mut i = shape.clone();
                    i[axis] = 1;
                    (i, shape.clone())
                }
                _ => (shape.clone(), vec![shape.iter().product()]),
            };
            let a = uniform(rng, &in_shape, -2.0, 2.0);
            let target = out_shape.clone();
            Case {
                inputs: vec![a],
                f: with_weights(out_shape, seed, move |x| match which.as_str() {
                    "sum_keep" => x[0].sum_keep(&[axis]),
                    "broadcast" => x[0].broadcast_to(&target),
                    _ => x[0].reshape(&target),
                }),
            }
        }
        "mean" | "sum" | "sq_l2_norm" => {
            let shape = s3(rng);
            let a = uniform(rng, &shape, -2.0, 2.0);
            let kind = match name {
                "mean" => Reduction::Mean,
                "sum" => Reduction::Sum,
                _ => Reduction::SqL2Norm,
            };
            let axes: Vec<usize> = if rng.random::<bool>() { vec![0, 2] } else { vec![1] };
            let kept: Vec<usize> = (0..3).filter(|a| !axes.contains(a)).map(|a| shape[a]).collect();
            Case {
                inputs: vec![a],
                f: with_weights(kept, seed, move |x| x[0].reduce(kind, Some(&axes))),
            }
        }
        "conv1d" | "conv_transpose1d" => {
            let b = rng.random_range(1..3usize);
            let cin = rng.random_range(1..4usize);
            let cout = rng.random_range(1..4usize);
            let k = rng.random_range(1..5usize);
            let s = rng.random_range(1..4usize);
            let p = rng.random_range(0..3usize);
            let transposed = name == "conv_transpose1d";
            let (l, p, kshape) = if transposed {
                let l = rng.random_range(1..6usize);
                // keeps (l - 1) * s + k - 2p >= 1
                (l, p.min(((l - 1) * s + k - 1) / 2), vec![cin, cout, k])
            } else {
                let l = k.saturating_sub(2 * p).max(1) + rng.random_range(0..6usize);
                (l, p, vec![cout, cin, k])
            };
            let x = uniform(rng, &[b, cin, l], -1.0, 1.0);
            let w = uniform(rng, &kshape, -1.0, 1.0);
            let bias = uniform(rng, &[cout], -1.0, 1.0);
            let out_shape = if transposed {
                conv_transpose1d(&x, &w, None, s, p).unwrap().shape().to_vec()
            } else {
                conv1d(&x, &w, None, s, p).unwrap().shape().to_vec()
            };
            Case {
                inputs: vec![x, w, bias],
                f: with_weights(out_shape, seed, move |t| {
                    if transposed {
                        conv_transpose1d(&t[0], &t[1], Some(&t[2]), s, p)
                    } else {
                        conv1d(&t[0], &t[1], Some(&t[2]), s, p)
                    }
                }),
            }
        }
        "batch_norm1d" | "instance_norm1d" => {
            let shape = vec![
                rng.random_range(2..4usize),
                rng.random_range(1..4usize),
                rng.random_range(2..6usize),
            ];
            let c = shape[1];
            let x = uniform(rng, &shape, -2.0, 2.0);
            let gamma = uniform(rng, &[c], 0.5, 1.5);
            let beta = uniform(rng, &[c], -0.5, 0.5);
            let batch = name == "batch_norm1d";
            Case {
                inputs: vec![x, gamma, beta],
                f: with_weights(shape, seed, move |t| {
                    if batch {
                        let mut stats = RunningStats::new(c);
                        batch_norm1d(&t[0], &t[1], &t[2], &mut stats, Mode::Train)
                    } else {
                        instance_norm1d(&t[0], &t[1], &t[2])
                    }
                }),
            }
        }
        "dropout" => {
            let shape = s3(rng);
            let x = uniform(rng, &shape, -2.0, 2.0);
            Case {
                inputs: vec![x],
                f: with_weights(shape, seed, move |t| {
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
                    t[0].dropout(0.7, Mode::Train, &mut mask_rng)
                }),
            }
        }
        other => panic!("unknown op {other}"),
    }
}

pub const GRADIENT_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "add_scalar",
    "square",
    "pow",
    "exp",
    "ln",
    "tanh",
    "sigmoid",
    "relu",
    "leaky_relu",
    "clamp",
    "sum_keep",
    "broadcast",
    "reshape",
    "mean",
    "sum",
    "sq_l2_norm",
    "conv1d",
    "conv_transpose1d",
    "batch_norm1d",
    "instance_norm1d",
    "dropout",
];

/// Worst relative error per op over `instances` random draws.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GRADIENT_OPS
        .iter()
        .map(|name| {
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                let case = make_case(name, &mut rng);
                let all: Vec<usize> = (0..case.inputs.len()).collect();
                let r = check_gradients(&*case.f, &case.inputs, &all, 1e-6)
                    .unwrap_or_else(|e| panic!("{name}: {e}"));
                worst = worst.max(r.max_rel_error);
            }
            (*name, worst)
        })
        .collect()
}

/// A two-layer critic `conv -> leaky relu -> instance norm -> conv` used by
/// the second-order checks. Parameters: w1 [3,1,4], b1 [3], gamma [3], beta [3], w2 [1,3,4], b2 [1].
pub fn two_layer_critic(x: &Tensor, theta: &[Tensor]) -> Result<Tensor> {
    let h = conv1d(x, &theta[0], Some(&theta[1]), 2, 1)?.leaky_relu(0.2)?;
    let h = instance_norm1d(&h, &theta[2], &theta[3])?;
    let out = conv1d(&h, &theta[4], Some(&theta[5]), 2, 0)?;
    let b = x.shape()[0];
    out.reshape(&[b])
}

pub fn two_layer_theta(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![
        uniform(rng, &[3, 1, 4], -0.8, 0.8),
        uniform(rng, &[3], -0.2, 0.2),
        uniform(rng, &[3], 0.7, 1.3),
        uniform(rng, &[3], -0.2, 0.2),
        uniform(rng, &[1, 3, 4], -0.8, 0.8),
        uniform(rng, &[1], -0.2, 0.2),
    ]
}

/// mean_b (||d critic / d x_b|| - 1)^2 with the gradient recorded for a second pass.
pub fn penalty_of(x: &Tensor, theta: &[Tensor]) -> Result<Tensor> {
    let x = match x.tape() {
        Some(_) => x.clone(),
        None => match theta.iter().find_map(|t| t.tape()) {
            Some(tape) => tape.leaf(x),
            None => Tape::new().leaf(x),
        },
    };
    let score = two_layer_critic(&x, theta)?.sum()?;
    let g = score.grad(&[&x], true)?.remove(0);
    let norms = g.reduce(Reduction::SqL2Norm, Some(&[1, 2]))?.add_scalar(1e-12)?.sqrt()?;
    norms.add_scalar(-1.0)?.square()?.mean()
}

/// Worst relative error of d(penalty)/d(theta) against finite differences.
pub fn second_order_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[2, 1, 8], -1.0, 1.0);
    let theta = two_layer_theta(&mut rng);
    let f = |t: &[Tensor]| penalty_of(&t[0], &t[1..]);
    let mut inputs = vec![x];
    inputs.extend(theta);
    let check: Vec<usize> = (1..inputs.len()).collect();
    let r = check_gradients(&f, &inputs, &check, 1e-6).unwrap();
    r.max_rel_error
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_error(*x, *y, 1e-12))
        .fold(0.0, f64::max)
}
