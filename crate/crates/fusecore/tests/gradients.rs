//! Finite-difference verification of every differentiable operation.
//! Central differences with eps 1e-5 against reverse-mode gradients,
//! 20+ random instances per op.

mod common;

use common::{check_gradients, matmul_oracle, random_data};
use fusecore::rng::Rng;
use fusecore::tensor::{Tape, Tensor};

const EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

#[test]
fn matmul_matches_finite_differences() {
    let mut rng = Rng::new(101);
    for _ in 0..20 {
        let m = 1 + rng.below(4);
        let k = 1 + rng.below(4);
        let n = 1 + rng.below(4);
        let a = (vec![m, k], random_data(&mut rng, m * k));
        let b = (vec![k, n], random_data(&mut rng, k * n));
        check_gradients("matmul", &[a, b], EPS, REL_TOL, |tape, xs| {
            let out = tape.matmul(&xs[0], &xs[1]).unwrap();
            tape.sum(&out)
        });
    }
}

#[test]
fn matmul_sum_gradient_equals_ones_times_b_transposed() {
    // For y = sum(a.b), dy/da = ones(m, n) . b^T. Checked both against the
    // closed form and against finite differences on a random 4x3 . 3x2.
    let mut rng = Rng::new(102);
    let a_data = random_data(&mut rng, 12);
    let b_data = random_data(&mut rng, 6);

    let tape = Tape::new();
    let a = Tensor::leaf(&[4, 3], a_data.clone()).unwrap();
    let b = Tensor::new(&[3, 2], b_data.clone()).unwrap();
    let out = tape.matmul(&a, &b).unwrap();
    let total = tape.sum(&out);
    tape.backward(&total).unwrap();
    let grad = a.grad().unwrap();

    // ones(4, 2) . b^T, via the independent triple-loop oracle.
    let b_t: Vec<f64> = (0..2)
        .flat_map(|j| (0..3).map(move |i| (i, j)))
        .map(|(i, j)| b_data[i * 2 + j])
        .collect();
    let closed_form = matmul_oracle(&vec![1.0; 8], &b_t, 4, 2, 3);
    for (g, c) in grad.iter().zip(&closed_form) {
        assert!((g - c).abs() < 1e-12);
    }

    check_gradients(
        "matmul 4x3.3x2",
        &[(vec![4, 3], a_data)],
        EPS,
        REL_TOL,
        |tape, xs| {
            let b = Tensor::new(&[3, 2], b_data.clone()).unwrap();
            let out = tape.matmul(&xs[0], &b).unwrap();
            tape.sum(&out)
        },
    );
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = Rng::new(103);
    for _ in 0..20 {
        let a = random_data(&mut rng, 25);
        let b = random_data(&mut rng, 25);
        let tape = Tape::inference();
        let out = tape
            .matmul(
                &Tensor::new(&[5, 5], a.clone()).unwrap(),
                &Tensor::new(&[5, 5], b.clone()).unwrap(),
            )
            .unwrap();
        let expected = matmul_oracle(&a, &b, 5, 5, 5);
        for (x, y) in out.data().iter().zip(&expected) {
            assert!((x - y).abs() <= 1e-10);
        }
    }
}

#[test]
fn softmax_rows_vjp_matches_finite_differences() {
    let mut rng = Rng::new(104);
    for _ in 0..20 {
        let x = (vec![2, 4], random_data(&mut rng, 8));
        let cot = random_data(&mut rng, 8);
        check_gradients("softmax_rows", &[x], EPS, REL_TOL, |tape, xs| {
            let s = tape.softmax_rows(&xs[0]);
            let v = Tensor::new(&[2, 4], cot.clone()).unwrap();
            let weighted = tape.mul(&s, &v).unwrap();
            tape.sum(&weighted)
        });
    }
}

#[test]
fn causal_softmax_vjp_matches_finite_differences() {
    let mut rng = Rng::new(105);
    for _ in 0..20 {
        let n = 2 + rng.below(3);
        let x = (vec![n, n], random_data(&mut rng, n * n));
        let cot = random_data(&mut rng, n * n);
        check_gradients("causal_softmax_rows", &[x], EPS, REL_TOL, |tape, xs| {
            let s = tape.causal_softmax_rows(&xs[0]).unwrap();
            let v = Tensor::new(&[n, n], cot.clone()).unwrap();
            let weighted = tape.mul(&s, &v).unwrap();
            tape.sum(&weighted)
        });
    }
}

#[test]
fn layer_norm_matches_finite_differences() {
    let mut rng = Rng::new(106);
    for _ in 0..20 {
        let n = 1 + rng.below(3);
        let d = 2 + rng.below(4);
        let x = (vec![n, d], random_data(&mut rng, n * d));
        let gain = (vec![d], random_data(&mut rng, d));
        let bias = (vec![d], random_data(&mut rng, d));
        let cot = random_data(&mut rng, n * d);
        check_gradients("layer_norm", &[x, gain, bias], EPS, REL_TOL, |tape, xs| {
            let out = tape.layer_norm(&xs[0], &xs[1], &xs[2]).unwrap();
            let v = Tensor::new(out.shape(), cot.clone()).unwrap();
            let weighted = tape.mul(&out, &v).unwrap();
            tape.sum(&weighted)
        });
    }
}

#[test]
fn cross_entropy_matches_finite_differences() {
    let mut rng = Rng::new(107);
    for _ in 0..20 {
        let n = 2 + rng.below(3);
        let v = 3 + rng.below(5);
        let logits = (vec![n, v], random_data(&mut rng, n * v));
        let targets: Vec<usize> = (0..n).map(|_| rng.below(v)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.7).collect();
        mask[0] = true;
        check_gradients("cross_entropy_rows", &[logits], EPS, REL_TOL, |tape, xs| {
            tape.cross_entropy_rows(&xs[0], &targets, &mask).unwrap()
        });
    }
}

#[test]
fn gelu_matches_finite_differences() {
    let mut rng = Rng::new(108);
    for _ in 0..20 {
        let n = 1 + rng.below(8);
        let x = (vec![n], random_data(&mut rng, n));
        check_gradients("gelu", &[x], EPS, REL_TOL, |tape, xs| {
            let out = tape.gelu(&xs[0]);
            tape.sum(&out)
        });
    }
}

#[test]
fn elementwise_and_structural_ops_match_finite_differences() {
    let mut rng = Rng::new(109);
    for _ in 0..20 {
        let a = (vec![2, 3], random_data(&mut rng, 6));
        let b = (vec![2, 3], random_data(&mut rng, 6));
        let bias = (vec![3], random_data(&mut rng, 3));
        check_gradients(
            "composed elementwise",
            &[a, b, bias],
            EPS,
            REL_TOL,
            |tape, xs| {
                let sum = tape.add(&xs[0], &xs[1]).unwrap();
                let diff = tape.sub(&sum, &xs[1]).unwrap();
                let prod = tape.mul(&diff, &xs[0]).unwrap();
                let biased = tape.add_bias(&prod, &xs[2]).unwrap();
                let scaled = tape.scale(&biased, 0.5);
                let t = tape.transpose(&scaled);
                let picked = tape.select_rows(&t, &[0, 2, 0]).unwrap();
                let mean = tape.mean_rows(&picked);
                let wide = tape.concat_cols(&[&mean, &mean]).unwrap();
                let narrow = tape.slice_cols(&wide, 1, 2).unwrap();
                let stacked = tape.concat_rows(&[&narrow, &narrow]).unwrap();
                tape.sum(&stacked)
            },
        );
    }
}

#[test]
fn attention_module_matches_finite_differences() {
    common::check_attention_gradients(20);
}

#[test]
fn layer_norm_module_matches_finite_differences() {
    common::check_layer_norm_gradients(20);
}

#[test]
fn projection_module_matches_finite_differences() {
    common::check_projection_gradients(20);
}

#[test]
fn lm_head_matches_finite_differences() {
    common::check_lm_head_gradients(20);
}

#[test]
fn lora_path_matches_finite_differences() {
    common::check_lora_gradients(20);
}

#[test]
fn fusion_composite_matches_finite_differences() {
    common::check_fusion_composite_gradients(20);
}

#[test]
fn fixed_seed_forward_backward_is_bit_identical() {
    let run = || {
        let mut rng = Rng::new(41);
        let tape = Tape::new();
        let x = Tensor::leaf(&[3, 4], random_data(&mut rng, 12)).unwrap();
        let w = Tensor::leaf(&[4, 2], random_data(&mut rng, 8)).unwrap();
        let gain = Tensor::leaf(&[2], vec![1.0, 1.0]).unwrap();
        let bias = Tensor::leaf(&[2], vec![0.0, 0.0]).unwrap();
        let h = tape.matmul(&x, &w).unwrap();
        let n = tape.layer_norm(&h, &gain, &bias).unwrap();
        let s = tape.softmax_rows(&n);
        let g = tape.gelu(&s);
        let loss = tape.sum(&g);
        tape.backward(&loss).unwrap();
        (
            loss.item().to_bits(),
            x.grad().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            w.grad().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}
