//! Forward results against independent loop oracles, and analytic
//! gradients of every differentiable op against central differences.

mod common;

use duet_core::ndgrad::{
    gradient_check, AdamConfig, AdamState, GradCheckOptions, Graph, Padding, ParamSet, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rand_vec(rng, n)).unwrap()
}

// ---- forward oracles ----

fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f64],
    k: &[f64],
    channels: usize,
    length: usize,
    filters: usize,
    width: usize,
    pad_left: usize,
    out_len: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; filters * out_len];
    for f in 0..filters {
        for t in 0..out_len {
            let mut s = 0.0;
            for c in 0..channels {
                for w in 0..width {
                    let pos = t as isize + w as isize - pad_left as isize;
                    if pos >= 0 && (pos as usize) < length {
                        s += k[(f * channels + c) * width + w] * x[c * length + pos as usize];
                    }
                }
            }
            out[f * out_len + t] = s;
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let expected = matmul_oracle(a.data(), b.data(), 3, 4, 2);
        let mut g = Graph::new();
        let (na, nb) = (g.input(a).unwrap(), g.input(b).unwrap());
        let c = g.matmul(na, nb).unwrap();
        assert_eq!(g.shape(c), &[3, 2]);
        for (x, y) in g.value(c).data().iter().zip(&expected) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn conv1d_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let x = rand_tensor(&mut rng, &[3, 10]);
        let k = rand_tensor(&mut rng, &[2, 3, 3]);
        for (padding, pad_left, out_len) in [(Padding::Valid, 0, 8), (Padding::Same, 1, 10)] {
            let expected = conv_oracle(x.data(), k.data(), 3, 10, 2, 3, pad_left, out_len);
            let mut g = Graph::new();
            let (nx, nk) = (g.input(x.clone()).unwrap(), g.input(k.clone()).unwrap());
            let y = g.conv1d(nx, nk, padding).unwrap();
            assert_eq!(g.shape(y), &[2, out_len]);
            for (a, b) in g.value(y).data().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn conv1d_even_width_same_padding_keeps_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[2, 7]);
    let k = rand_tensor(&mut rng, &[3, 2, 4]);
    let expected = conv_oracle(x.data(), k.data(), 2, 7, 3, 4, 1, 7);
    let mut g = Graph::new();
    let (nx, nk) = (g.input(x).unwrap(), g.input(k).unwrap());
    let y = g.conv1d(nx, nk, Padding::Same).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn max_pool_matches_sliding_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let x = rand_tensor(&mut rng, &[2, 8]);
        let mut expected = Vec::new();
        for c in 0..2 {
            let row = &x.data()[c * 8..(c + 1) * 8];
            let mut start = 0;
            while start + 3 <= 8 {
                expected.push(
                    row[start..start + 3]
                        .iter()
                        .cloned()
                        .fold(f64::MIN, f64::max),
                );
                start += 2;
            }
        }
        let mut g = Graph::new();
        let nx = g.input(x).unwrap();
        let y = g.max_pool(nx, 3, 2).unwrap();
        assert_eq!(g.shape(y), &[2, 3]);
        assert_eq!(g.value(y).data(), expected.as_slice());
    }
}

#[test]
fn embedding_gather_matches_row_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let table = rand_tensor(&mut rng, &[7, 3]);
    let ids: Vec<usize> = (0..12).map(|_| rng.random_range(0..7)).collect();
    let mut expected = Vec::new();
    for &id in &ids {
        for j in 0..3 {
            expected.push(table.data()[id * 3 + j]);
        }
    }
    let mut g = Graph::new();
    let t = g.input(table).unwrap();
    let y = g.embedding_gather(t, &ids).unwrap();
    assert_eq!(g.value(y).data(), expected.as_slice());
}

#[test]
fn dropout_survivor_fraction() {
    let mut g = Graph::new();
    let x = g.input(Tensor::filled([100_000], 1.5f64).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
    let out = g.value(y).data();
    let survivors = out.iter().filter(|&&v| v != 0.0).count();
    let frac = survivors as f64 / out.len() as f64;
    assert!((frac - 0.5).abs() < 0.02, "survivor fraction {frac}");
    assert!(out.iter().all(|&v| v == 0.0 || v == 3.0));
}

#[test]
fn shared_input_gradients_accumulate() {
    // y = x + x and y = 2x must produce identical gradients
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[4]);
    let mut g1 = Graph::new();
    let a = g1.leaf(x.clone()).unwrap();
    let s = g1.add(a, a).unwrap();
    let l1 = g1.sum(s).unwrap();
    let gr1 = g1.backward(l1).unwrap();

    let mut g2 = Graph::new();
    let b = g2.leaf(x).unwrap();
    let s = g2.scale(b, 2.0).unwrap();
    let l2 = g2.sum(s).unwrap();
    let gr2 = g2.backward(l2).unwrap();
    assert_eq!(gr1.wrt(a).unwrap(), gr2.wrt(b).unwrap());
    assert_eq!(gr1.wrt(a).unwrap(), &[2.0; 4]);
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&mut rng, &[3, 12]);
        let k = rand_tensor(&mut rng, &[4, 3, 3]);
        let mut g = Graph::new();
        let (nx, nk) = (g.input(x).unwrap(), g.input(k).unwrap());
        let y = g.conv1d(nx, nk, Padding::Same).unwrap();
        let y = g.relu(y).unwrap();
        let y = g.dropout(y, 0.5, true, &mut rng).unwrap();
        let y = g.max_pool(y, 4, 1).unwrap();
        g.value(y)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

// ---- gradient checks ----

#[test]
fn every_op_passes_gradient_check() {
    for case in common::opgrad::cases() {
        if let Err(e) = common::opgrad::check(&case) {
            panic!("{e}");
        }
    }
}

#[test]
fn grad_three_layer_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut params = ParamSet::new();
    let dims = [6, 5, 4, 1];
    let mut layers = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let wid = params
            .add(format!("w{i}"), rand_tensor(&mut rng, &[w[0], w[1]]))
            .unwrap();
        let bid = params
            .add(format!("b{i}"), rand_tensor(&mut rng, &[w[1]]))
            .unwrap();
        layers.push((wid, bid));
    }
    let x = rand_tensor(&mut rng, &[2, 6]);
    let report = gradient_check(&mut params, GradCheckOptions::default(), |g| {
        let mut h = g.input(x.clone())?;
        for (i, &(w, b)) in layers.iter().enumerate() {
            let (w, b) = (g.param(w)?, g.param(b)?);
            h = g.linear(h, w, b)?;
            if i + 1 < layers.len() {
                h = g.tanh(h)?;
            }
        }
        g.sum(h)
    })
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.checked, params.scalar_count());
}

#[test]
fn gradient_check_detects_a_corrupted_backward_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut params = ParamSet::new();
    let p = params.add("x", rand_tensor(&mut rng, &[5])).unwrap();
    // derivative of sin reported as 2·cos
    let report = gradient_check(&mut params, GradCheckOptions::default(), |g| {
        let x = g.param(p)?;
        let y = g.map(x, |v| v.sin(), |v| 2.0 * v.cos())?;
        g.sum(y)
    })
    .unwrap();
    assert!(!report.passed);
    assert!(report.max_rel_error > report.tolerance);
}

#[test]
fn linear_layer_gradient_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut params = ParamSet::new();
    let w = params.add("w", rand_tensor(&mut rng, &[4, 3])).unwrap();
    let x = rand_tensor(&mut rng, &[1, 4]);
    let report = gradient_check(&mut params, GradCheckOptions::with_tolerance(1e-9), |g| {
        let xi = g.input(x.clone())?;
        let wn = g.param(w)?;
        let y = g.matmul(xi, wn)?;
        g.sum(y)
    })
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn adam_reduces_quadratic_gap() {
    let mut params = ParamSet::new();
    let p = params.add("x", Tensor::scalar(0.0f64)).unwrap();
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        },
    );
    let mut gaps = Vec::new();
    for _ in 0..100 {
        params.zero_grad();
        let grads = {
            let mut g = Graph::with_params(&params);
            let x = g.param(p).unwrap();
            let d = g
                .map(x, |v| (v - 5.0) * (v - 5.0), |v| 2.0 * (v - 5.0))
                .unwrap();
            let l = g.sum(d).unwrap();
            g.backward(l).unwrap()
        };
        params.accumulate(&grads, 1.0);
        adam.step(&mut params).unwrap();
        gaps.push((params.value(p).data()[0] - 5.0).abs());
    }
    assert!(gaps[99] < 0.5 * 5.0);
    assert_eq!(adam.step_count(), 100);
}
