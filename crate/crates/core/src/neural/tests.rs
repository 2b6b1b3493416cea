use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut r = rng(seed);
    let data = (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

#[test]
fn zero_weights_give_zero_output() {
    let mut net = NetworkParams::<f32>::zeros(&[5, 4, 4, 3]);
    let x = Matrix::from_rows(&[[1.0f32, 2.0, 3.0, 4.0, 5.0], [0.5, 0.0, -1.0, 2.0, 7.0]]).unwrap();
    assert!(net.predict(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    assert!(net.forward(&x, Mode::Train).unwrap().as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_norm_train_output_is_standardized() {
    let net = NetworkParams::<f64>::random(&[6, 16, 4], &mut rng(1));
    let x = random_batch(64, 6, 2);
    let (_, cache) = net.forward_train(&x);
    let xhat = &cache.hidden[0].normalized;
    for u in 0..16 {
        let col: Vec<f64> = (0..64).map(|b| xhat.row(b)[u]).collect();
        let mean = col.iter().sum::<f64>() / 64.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-6, "unit {u} mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "unit {u} var {var}");
    }
}

#[test]
fn running_stats_follow_momentum() {
    let mut net = NetworkParams::<f64>::zeros(&[1, 1, 1]);
    net.dense[0].weight = vec![1.0];
    let x = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
    net.forward(&x, Mode::Train).unwrap();
    // Batch mean 2, biased variance 1.
    assert!((net.norms[0].running_mean[0] - 0.02).abs() < 1e-12);
    assert!((net.norms[0].running_var[0] - (0.99 + 0.01)).abs() < 1e-12);
    net.forward(&x, Mode::Train).unwrap();
    assert!((net.norms[0].running_mean[0] - (0.99 * 0.02 + 0.02)).abs() < 1e-12);
}

#[test]
fn train_mode_rejects_single_row() {
    let mut net = NetworkParams::<f32>::zeros(&[2, 3, 1]);
    let x = Matrix::from_rows(&[[1.0f32, 2.0]]).unwrap();
    assert!(matches!(net.forward(&x, Mode::Train), Err(NeuralError::BatchTooSmall(1))));
    assert!(net.forward(&x, Mode::Eval).is_ok());
}

#[test]
fn rejects_bad_inputs() {
    let net = NetworkParams::<f32>::zeros(&[2, 3, 1]);
    let wide = Matrix::from_rows(&[[1.0f32, 2.0, 3.0]]).unwrap();
    assert!(matches!(net.predict(&wide), Err(NeuralError::Shape(_))));
    let nan = Matrix::from_rows(&[[f32::NAN, 2.0]]).unwrap();
    assert!(matches!(net.predict(&nan), Err(NeuralError::NonFiniteInput)));
}

/// Written out scalar by scalar for a 2-2-1 network.
#[test]
fn matches_hand_written_forward() {
    let mut net = NetworkParams::<f64>::zeros(&[2, 2, 1]);
    // weight[i * out + o]
    net.dense[0].weight = vec![0.5, -1.0, 2.0, 0.25];
    net.dense[0].bias = vec![0.1, -0.2];
    net.norms[0].gamma = vec![1.5, 0.5];
    net.norms[0].beta = vec![0.0, 0.3];
    net.norms[0].running_mean = vec![0.2, -0.1];
    net.norms[0].running_var = vec![4.0, 0.25];
    net.dense[1].weight = vec![1.0, -2.0];
    net.dense[1].bias = vec![0.7];

    let rows = [[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]];
    let x = Matrix::from_rows(&rows).unwrap();
    let eps = 1e-5;
    let relu = |v: f64| if v > 0.0 { v } else { 0.0 };

    let mut z = [[0.0; 2]; 3];
    for (b, r) in rows.iter().enumerate() {
        z[b][0] = 0.5 * r[0] + 2.0 * r[1] + 0.1;
        z[b][1] = -1.0 * r[0] + 0.25 * r[1] - 0.2;
    }

    // Eval mode.
    let q = net.predict(&x).unwrap();
    for b in 0..3 {
        let h0 = relu(1.5 * (z[b][0] - 0.2) / (4.0f64 + eps).sqrt());
        let h1 = relu(0.5 * (z[b][1] + 0.1) / (0.25f64 + eps).sqrt() + 0.3);
        let expect = h0 - 2.0 * h1 + 0.7;
        assert!((q.row(b)[0] - expect).abs() < 1e-12, "eval row {b}");
    }

    // Train mode.
    let mean0 = (z[0][0] + z[1][0] + z[2][0]) / 3.0;
    let mean1 = (z[0][1] + z[1][1] + z[2][1]) / 3.0;
    let var0 = ((z[0][0] - mean0).powi(2) + (z[1][0] - mean0).powi(2) + (z[2][0] - mean0).powi(2)) / 3.0;
    let var1 = ((z[0][1] - mean1).powi(2) + (z[1][1] - mean1).powi(2) + (z[2][1] - mean1).powi(2)) / 3.0;
    let q = net.forward(&x, Mode::Train).unwrap();
    for b in 0..3 {
        let h0 = relu(1.5 * (z[b][0] - mean0) / (var0 + eps).sqrt());
        let h1 = relu(0.5 * (z[b][1] - mean1) / (var1 + eps).sqrt() + 0.3);
        let expect = h0 - 2.0 * h1 + 0.7;
        assert!((q.row(b)[0] - expect).abs() < 1e-12, "train row {b}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    let net = NetworkParams::<f64>::random(&[4, 2, 2, 3], &mut rng(11));
    let x = random_batch(8, 4, 12);
    let actions = [0, 1, 2, 0, 1, 2, 2, 1];
    let targets = [0.5, -1.0, 2.0, 0.0, 1.5, -0.5, 0.25, 3.0];
    let (_, grads, _) = net.loss_and_gradients(&x, &actions, &targets).unwrap();

    let loss_of = |p: &NetworkParams<f64>| p.loss_and_gradients(&x, &actions, &targets).unwrap().0;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let tensor_count = net.trainable().len();
    for t in 0..tensor_count {
        for i in 0..grads[t].len() {
            let mut plus = net.clone();
            plus.trainable_mut()[t][i] += h;
            let mut minus = net.clone();
            minus.trainable_mut()[t][i] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let analytic = grads[t][i];
            // Dense biases ahead of batch norm have exactly zero gradient, so
            // the denominator needs a floor.
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "tensor {t} index {i}: analytic {analytic} numeric {numeric}");
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn first_adam_step_is_closed_form() {
    let mut net = NetworkParams::<f64>::random(&[3, 4, 2], &mut rng(5));
    let before = net.clone();
    let grads: Gradients<f64> = net
        .trainable()
        .iter()
        .enumerate()
        .map(|(t, v)| (0..v.len()).map(|i| (t as f64 + 1.0) * 0.01 * (i as f64 - 1.5)).collect())
        .collect();
    let mut adam = Adam::new(&net, AdamConfig::default());
    adam.step(&mut net, &grads);
    // m_hat = g and v_hat = g^2 after one step, so the move is lr * g / (|g| + eps).
    for ((after, prev), g) in net.trainable().iter().zip(before.trainable()).zip(&grads) {
        for ((&a, &p), &gi) in after.iter().zip(prev).zip(g) {
            let expect = p - 1e-3 * gi / (gi.abs() + 1e-8);
            assert!((a - expect).abs() < 1e-12);
        }
    }
    assert_eq!(adam.steps(), 1);
}

#[test]
fn zero_residual_leaves_weights_unchanged() {
    let mut net = NetworkParams::<f64>::random(&[3, 4, 2], &mut rng(8));
    let x = random_batch(5, 3, 9);
    let actions = [0, 1, 1, 0, 1];
    let (q, _) = net.forward_train(&x);
    let targets: Vec<f64> = actions.iter().enumerate().map(|(b, &a)| q.row(b)[a]).collect();
    let before = net.clone();
    let mut adam = Adam::new(&net, AdamConfig::default());
    let loss = train_step(&mut net, &mut adam, &x, &actions, &targets).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(net.trainable(), before.trainable());
}

#[test]
fn training_reduces_loss_on_fixed_batch() {
    let mut net = NetworkParams::<f32>::random(&[4, 16, 16, 3], &mut rng(3));
    let x: Matrix<f32> = {
        let m = random_batch(16, 4, 4);
        Matrix::from_vec(16, 4, m.as_slice().iter().map(|&v| v as f32).collect()).unwrap()
    };
    let actions: Vec<usize> = (0..16).map(|b| b % 3).collect();
    let targets: Vec<f32> = (0..16).map(|b| x.row(b)[0] * 2.0 - x.row(b)[1]).collect();
    let mut adam = Adam::new(&net, AdamConfig::default());
    let first = train_step(&mut net, &mut adam, &x, &actions, &targets).unwrap();
    let mut last = first;
    for _ in 0..500 {
        last = train_step(&mut net, &mut adam, &x, &actions, &targets).unwrap();
    }
    assert!(last < first * 0.1, "loss {first} -> {last}");
}

#[test]
fn non_finite_loss_is_an_error() {
    let mut net = NetworkParams::<f32>::zeros(&[2, 2, 1]);
    let x = Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
    let mut adam = Adam::new(&net, AdamConfig::default());
    let err = train_step(&mut net, &mut adam, &x, &[0, 0], &[f32::INFINITY, 0.0]).unwrap_err();
    assert!(matches!(err, NeuralError::NonFiniteLoss(_)));
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[0.0f64; 4]), 0);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    let mut net = NetworkParams::<f32>::random(&[11, 32, 32, 25], &mut rng(21));
    net.norms[1].running_var[3] = 0.123;
    save_params(&net, &path).unwrap();
    let back = load_params(&path).unwrap();
    assert_eq!(back, net);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    let net = NetworkParams::<f32>::random(&[11, 32, 32, 25], &mut rng(22));
    save_params(&net, &path).unwrap();

    let err = load_params_expecting(&path, &[20, 32, 32, 25]).unwrap_err();
    match err {
        NeuralError::TensorShape { tensor, .. } => assert_eq!(tensor, "hidden0.weight"),
        other => panic!("unexpected {other}"),
    }

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_params(&cut), Err(NeuralError::Format(_))));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&cut, &bad).unwrap();
    assert!(matches!(load_params(&cut), Err(NeuralError::Format(_))));

    assert!(matches!(
        load_params(&dir.path().join("missing.bin")),
        Err(NeuralError::Io(_))
    ));
}
