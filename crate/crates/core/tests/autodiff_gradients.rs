mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wdcgan_core::autodiff::{conv1d, conv_transpose1d, set_deterministic_reductions, Tape, Tensor};
use wdcgan_core::Error;

#[test]
fn every_op_matches_finite_differences() {
    for (name, err) in gradient_suite(20, 7) {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let err = second_order_check(seed);
        assert!(err < 1e-3, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn square_derivative() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::scalar(3.0));
    let y = x.square().unwrap();
    let g = y.backward(false).unwrap();
    assert_eq!(g.get(&x).unwrap().item().unwrap(), 6.0);
}

#[test]
fn gradient_of_squared_gradient_norm() {
    // g(x) = x^3, g' = 3x^2 = 12 at x = 2, f = (g')^2 = 144, df/dx = 2 g' * 6x = 288
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::scalar(2.0));
    let g = x.powf(3.0).unwrap();
    let dg = g.grad(&[&x], true).unwrap().remove(0);
    assert!((dg.item().unwrap() - 12.0).abs() < 1e-12);
    let f = dg.sq_l2_norm().unwrap();
    assert!((f.item().unwrap() - 144.0).abs() < 1e-10);
    let df = f.backward(false).unwrap();
    assert!((df.get(&x).unwrap().item().unwrap() - 288.0).abs() < 1e-9);
}

#[test]
fn backward_contract_errors() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(&[3]));
    assert!(matches!(x.backward(false), Err(Error::Contract(_))));
    assert!(matches!(Tensor::scalar(1.0).backward(false), Err(Error::NoTape)));
}

#[test]
fn replaying_backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tape = Tape::new();
    let theta: Vec<Tensor> = two_layer_theta(&mut rng).iter().map(|t| tape.leaf(t)).collect();
    let x = uniform(&mut rng, &[3, 1, 8], -1.0, 1.0);
    let out = penalty_of(&x, &theta).unwrap();
    let a = out.backward(false).unwrap();
    let b = out.backward(false).unwrap();
    for t in &theta {
        assert_eq!(a.get_or_zeros(t), b.get_or_zeros(t));
    }
}

#[test]
fn parallel_kernels_agree_with_sequential() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = uniform(&mut rng, &[8, 3, 32], -1.0, 1.0);
    let w = uniform(&mut rng, &[4, 3, 4], -1.0, 1.0);
    let seq = conv1d(&x, &w, None, 2, 1).unwrap();
    set_deterministic_reductions(false);
    let par = conv1d(&x, &w, None, 2, 1).unwrap();
    set_deterministic_reductions(true);
    assert_eq!(seq, par);
}

fn inner(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transpose_is_adjoint(
        seed in any::<u64>(),
        b in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        k in 1usize..6, s in 1usize..4, p in 0usize..3, out_len in 1usize..10,
    ) {
        // input length whose transpose maps back to exactly the same length
        let full = (out_len - 1) * s + k;
        prop_assume!(full > 2 * p);
        let l = full - 2 * p;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[b, cin, l], -1.0, 1.0);
        let w = uniform(&mut rng, &[cout, cin, k], -1.0, 1.0);
        let y = uniform(&mut rng, &[b, cout, out_len], -1.0, 1.0);
        let lhs = inner(&conv1d(&x, &w, None, s, p).unwrap(), &y);
        let rhs = inner(&x, &conv_transpose1d(&y, &w, None, s, p).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn activation_ranges(v in -50.0f64..50.0) {
        let t = Tensor::scalar(v);
        let s = t.sigmoid().unwrap().item().unwrap();
        prop_assert!(s > 0.0 && s < 1.0 || (v.abs() > 36.0));
        let h = t.tanh().unwrap().item().unwrap();
        prop_assert!(h.abs() <= 1.0);
        prop_assert!(t.relu().unwrap().item().unwrap() >= 0.0);
    }
}
