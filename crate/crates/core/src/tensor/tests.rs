use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_examples() {
    let g = Graph::<f64>::new(Mode::Eval);
    let i2 = g.constant(Tensor::eye(2));
    let m = g.constant_from(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(i2.matmul(m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    let v = g.constant_from(&[2, 1], &[5.0, 6.0]).unwrap();
    assert_eq!(m.matmul(v).unwrap().value().data(), &[17.0, 39.0]);
    let a = g.constant(Tensor::zeros(&[2, 3]));
    match a.matmul(a) {
        Err(TensorError::Shape { detail, .. }) => {
            assert!(detail.contains("[2, 3]"), "{detail}")
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn conv1d_examples() {
    let g = Graph::<f64>::new(Mode::Eval);
    let x = g.constant_from(&[1, 4], &[1.0, 1.0, 1.0, 1.0]).unwrap();
    let k = g.constant_from(&[1, 1, 1], &[1.0]).unwrap();
    assert_eq!(x.conv1d(k, 1, 0).unwrap().value().data(), &[1.0; 4]);
    let x = g.constant_from(&[1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let k = g.constant_from(&[1, 1, 2], &[1.0, 1.0]).unwrap();
    assert_eq!(x.conv1d(k, 1, 0).unwrap().value().data(), &[3.0, 5.0, 7.0]);
    let long = g.constant_from(&[1, 1, 5], &[1.0; 5]).unwrap();
    assert!(matches!(
        x.conv1d(long, 1, 0),
        Err(TensorError::Shape { .. })
    ));
    // len_out = floor((4 + 2 - 2) / 2) + 1 = 3
    let out = x.conv1d(k, 2, 1).unwrap();
    assert_eq!(out.value().data(), &[1.0, 5.0, 4.0]);
}

#[test]
fn conv1d_kernel_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&[2, 3, 11], &mut rng);
    let w = rand_tensor(&[4, 3, 5], &mut rng);
    let b = rand_tensor(&[4], &mut rng);
    let err = grad_check::<_, TensorError>(
        |_, v| {
            Ok(v[0]
                .conv1d_padded(v[1], Some(v[2]), 2, 2, 1)?
                .square()
                .sum())
        },
        &[x, w, b],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn layer_norm_examples() {
    let g = Graph::<f64>::new(Mode::Eval);
    let ones = g.constant_from(&[3], &[1.0; 3]).unwrap();
    let zeros = g.constant_from(&[3], &[0.0; 3]).unwrap();
    let x = g.constant_from(&[3], &[5.0; 3]).unwrap();
    assert_eq!(
        x.layer_norm(ones, zeros, 1e-5).unwrap().value().data(),
        &[0.0; 3]
    );

    let g2 = Graph::<f64>::new(Mode::Eval);
    let x = g2.constant_from(&[2], &[1.0, 3.0]).unwrap();
    let ones = g2.constant_from(&[2], &[1.0; 2]).unwrap();
    let zeros = g2.constant_from(&[2], &[0.0; 2]).unwrap();
    let y = x.layer_norm(ones, zeros, 1e-12).unwrap();
    assert!(close(y.value().data(), &[-1.0, 1.0], 1e-9));

    let zeros = g.constant_from(&[3], &[0.0; 3]).unwrap();
    let ones = g.constant_from(&[3], &[1.0; 3]).unwrap();
    let x = g
        .constant_from(&[2, 3], &[1.0, -4.0, 9.0, 0.5, 0.25, 3.0])
        .unwrap();
    let seven = g.constant_from(&[3], &[7.0; 3]).unwrap();
    let y = x.layer_norm(zeros, seven, 1e-5).unwrap();
    assert_eq!(y.value().data(), &[7.0; 6]);
    assert!(matches!(
        x.layer_norm(ones, zeros, 0.0),
        Err(TensorError::Config(_))
    ));
}

#[test]
fn attention_examples() {
    let g = Graph::<f64>::new(Mode::Eval);
    let q = g.constant_from(&[1, 2], &[0.3, -1.2]).unwrap();
    let k = g.constant_from(&[1, 2], &[2.0, 0.5]).unwrap();
    let v = g.constant_from(&[1, 2], &[4.0, -5.0]).unwrap();
    assert_eq!(
        softmax_attention(q, k, v).unwrap().value().data(),
        &[4.0, -5.0]
    );

    let q = g
        .constant_from(&[3, 2], &[1.0, 2.0, -3.0, 0.1, 0.0, 5.0])
        .unwrap();
    let k = g
        .constant_from(&[3, 2], &[0.7, -0.2, 0.7, -0.2, 0.7, -0.2])
        .unwrap();
    let v = g
        .constant_from(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 8.0, 0.0])
        .unwrap();
    let out = softmax_attention(q, k, v).unwrap();
    assert!(close(
        out.value().data(),
        &[4.0, 2.0, 4.0, 2.0, 4.0, 2.0],
        1e-12
    ));

    // Two tokens, d_h = 1: logits q·k / 1 for q = 1, keys 0 and ln 3.
    let q = g.constant_from(&[1, 1], &[1.0]).unwrap();
    let k = g.constant_from(&[2, 1], &[0.0, 3f64.ln()]).unwrap();
    let v = g.constant_from(&[2, 1], &[10.0, 2.0]).unwrap();
    // weights 1/4, 3/4
    let out = softmax_attention(q, k, v).unwrap();
    assert!((out.item() - 4.0).abs() < 1e-12);
}

#[test]
fn attention_rows_are_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Graph::<f64>::new(Mode::Eval);
    let q = g.constant(
        rand_tensor(&[4, 7, 8], &mut rng)
            .reshape(&[4, 7, 8])
            .unwrap(),
    );
    let k = g.constant(rand_tensor(&[4, 9, 8], &mut rng));
    let w = attention_weights(q, k).unwrap();
    for row in w.value().data().chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn elementwise_examples() {
    let g = Graph::<f64>::new(Mode::Eval);
    let x = g.constant_from(&[2], &[0.0, -20.0]).unwrap();
    let y = x.elu();
    assert_eq!(y.value().data()[0], 0.0);
    assert!((y.value().data()[1] + 1.0).abs() < 1e-8);
    let d = x.dropout(0.5).unwrap();
    assert_eq!(d.value().data(), x.value().data());
    assert!(matches!(x.dropout(1.0), Err(TensorError::Config(_))));
    assert!(matches!(x.dropout(-0.1), Err(TensorError::Config(_))));
}

#[test]
fn dropout_scales_kept_entries() {
    let g = Graph::<f64>::with_seed(Mode::Train, 11, 4);
    let x = g.constant(Tensor::full(&[1000], 1.0));
    let y = x.dropout(0.25).unwrap().value();
    assert!(y
        .data()
        .iter()
        .all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
    let dropped = y.data().iter().filter(|&&v| v == 0.0).count();
    assert!((150..350).contains(&dropped), "{dropped}");
}

#[test]
fn fft_of_cosine_peaks_at_its_cycle_count() {
    let n = 200;
    let k = 13;
    let data: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64).cos())
        .collect();
    // independent oracle: direct O(n²) DFT
    let direct: Vec<f64> = (0..n)
        .map(|f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in data.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (f * t) as f64 / n as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect();
    let g = Graph::<f64>::new(Mode::Eval);
    let mag = g
        .constant_from(&[n], &data)
        .unwrap()
        .fft_magnitude()
        .value();
    assert!(close(mag.data(), &direct, 1e-9));
    let half = &mag.data()[..n / 2 + 1];
    let peak = (0..half.len())
        .max_by(|&a, &b| half[a].partial_cmp(&half[b]).unwrap())
        .unwrap();
    assert_eq!(peak, k);
    assert!((mag.data()[n - k] - mag.data()[k]).abs() < 1e-9);
}

#[test]
fn fft_magnitude_blocks_gradient() {
    let g = Graph::<f64>::new(Mode::Train);
    let x = g.param_from(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let loss = x.fft_magnitude().sum().add(x.sum()).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).data(), &[1.0; 4]);
}

#[test]
fn backward_contract() {
    let g = Graph::<f64>::new(Mode::Train);
    let x = g.param_from(&[3], &[1.0, -2.0, 0.5]).unwrap();
    let unused = g.param_from(&[2], &[9.0, 9.0]).unwrap();
    let loss = x.square().sum();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).data(), &[2.0, -4.0, 1.0]);
    assert_eq!(grads.get(unused).data(), &[0.0, 0.0]);
    assert!(matches!(g.backward(loss), Err(TensorError::Contract(_))));

    let g = Graph::<f64>::new(Mode::Train);
    let x = g.param_from(&[3], &[1.0, -2.0, 0.5]).unwrap();
    assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));
}

#[test]
fn mean_pool_then_repeat_is_identity_on_constants() {
    let g = Graph::<f64>::new(Mode::Eval);
    let x = g.constant(Tensor::full(&[2, 64, 3], 1.75));
    let y = x.mean_pool(1, 16).unwrap().upsample_repeat(1, 16).unwrap();
    assert_eq!(y.value().data(), x.value().data());
    assert!(x.mean_pool(1, 7).is_err());
}

#[test]
fn quadratic_grad_check_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[4, 2], &mut rng);
    let err =
        grad_check::<_, TensorError>(|_, v| Ok(v[0].matmul(v[1])?.square().sum()), &[a, b], 1e-5)
            .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn grad_check_through_frozen_dropout() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&[5, 6], &mut rng);
    let err = grad_check::<_, TensorError>(
        |_, v| Ok(v[0].dropout(0.3)?.gelu().square().sum()),
        &[a],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn graph_replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Graph::<f32>::with_seed(Mode::Train, 99, 3);
        let x = g.param(rand_tensor(&[4, 8], &mut rng).cast());
        let w = g.param(rand_tensor(&[8, 8], &mut rng).cast());
        let y = x
            .matmul(w)
            .unwrap()
            .gelu()
            .dropout(0.5)
            .unwrap()
            .softmax()
            .square()
            .sum();
        let grads = g.backward(y).unwrap();
        (y.item(), grads.get(w).into_data())
    };
    assert_eq!(run(), run());
}

/// Every differentiable op, checked on 10 random shapes × 3 seeds.
#[test]
fn every_op_passes_grad_check() {
    for check in op_checks() {
        for seed in 0..3u64 {
            let err = check.run(seed, 10).unwrap();
            assert!(err < 1e-4, "{} seed {seed}: {err}", check.name);
        }
    }
}
