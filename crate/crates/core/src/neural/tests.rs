use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar objective `Σ c ⊙ out` so every output contributes.
fn objective(mlp: &Mlp, x: &Tensor, c: &Tensor) -> f64 {
    let out = mlp.output(x).unwrap();
    out.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().zip(b).map(|(x, y)| (x + y).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

fn check_gradients(mlp: &Mlp, x: &Tensor, c: &Tensor) -> f64 {
    let eps = 1e-5;
    let (_, cache) = mlp.forward(x).unwrap();
    let (grads, dx) = mlp.backward(&cache, c).unwrap();
    let mut worst: f64 = 0.0;
    for li in 0..mlp.layers.len() {
        for which in 0..2 {
            let n = if which == 0 {
                mlp.layers[li].weights.data().len()
            } else {
                mlp.layers[li].bias.data().len()
            };
            let mut fd = Vec::with_capacity(n);
            for k in 0..n {
                let bump = |delta: f64| {
                    let mut m = mlp.clone();
                    let t = if which == 0 {
                        &mut m.layers[li].weights
                    } else {
                        &mut m.layers[li].bias
                    };
                    t.data_mut()[k] += delta;
                    objective(&m, x, c)
                };
                fd.push((bump(eps) - bump(-eps)) / (2.0 * eps));
            }
            let an = if which == 0 { &grads[li].weights } else { &grads[li].bias };
            worst = worst.max(rel_err(&fd, an.data()));
        }
    }
    let mut fdx = Vec::new();
    for k in 0..x.data().len() {
        let mut up = x.clone();
        up.data_mut()[k] += eps;
        let mut down = x.clone();
        down.data_mut()[k] -= eps;
        fdx.push((objective(mlp, &up, c) - objective(mlp, &down, c)) / (2.0 * eps));
    }
    worst.max(rel_err(&fdx, dx.data()))
}

#[test]
fn finite_difference_all_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for act in [Activation::Sigmoid, Activation::Relu, Activation::Identity] {
        for _ in 0..20 {
            let mut mlp = Mlp::init(&[4, 5, 3, 2], act, &mut rng);
            for l in &mut mlp.layers {
                l.bias = random(1, l.outputs(), &mut rng);
            }
            let x = random(6, 4, &mut rng);
            let c = random(6, 2, &mut rng);
            let err = check_gradients(&mlp, &x, &c);
            assert!(err < 1e-4, "{act:?}: relative error {err}");
        }
    }
}

#[test]
fn finite_difference_through_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mlp = Mlp::init(&[3, 4, 2], Activation::Sigmoid, &mut rng);
    let x = random(5, 3, &mut rng);
    let labels = [0, 1, 1, 0, 1];
    let loss = |m: &Mlp| loss_and_grad(&m.output(&x).unwrap(), &labels, HeadKind::Softmax).unwrap().0 * 5.0;
    let (logits, cache) = mlp.forward(&x).unwrap();
    let (_, dlogits) = loss_and_grad(&logits, &labels, HeadKind::Softmax).unwrap();
    let (grads, _) = mlp.backward(&cache, &dlogits).unwrap();
    let mut fd = Vec::new();
    for k in 0..12 {
        let mut up = mlp.clone();
        up.layers[0].weights.data_mut()[k] += 1e-5;
        let mut down = mlp.clone();
        down.layers[0].weights.data_mut()[k] -= 1e-5;
        fd.push((loss(&up) - loss(&down)) / 2e-5);
    }
    assert!(rel_err(&fd, grads[0].weights.data()) < 1e-4);
}

#[test]
fn identity_layer_passes_input_through() {
    let layer = AffineLayer::new(Tensor::identity(3), Tensor::zeros(1, 3), Activation::Identity).unwrap();
    let mlp = Mlp::new(vec![layer]).unwrap();
    let x = random(4, 3, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(mlp.output(&x).unwrap(), x);
}

#[test]
fn zero_weights_sigmoid_is_half() {
    let layer = AffineLayer::new(Tensor::zeros(3, 2), Tensor::zeros(1, 2), Activation::Sigmoid).unwrap();
    let out = Mlp::new(vec![layer]).unwrap().output(&Tensor::zeros(5, 3)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn two_layer_matches_independent_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mlp = Mlp::init(&[3, 4, 2], Activation::Sigmoid, &mut rng);
    let x = random(5, 3, &mut rng);
    let out = mlp.output(&x).unwrap();
    let (l1, l2) = (&mlp.layers[0], &mlp.layers[1]);
    for r in 0..5 {
        let h: Vec<f64> = (0..4)
            .map(|j| {
                let z: f64 = (0..3).map(|k| x.get(r, k) * l1.weights.get(k, j)).sum::<f64>() + l1.bias.get(0, j);
                1.0 / (1.0 + (-z).exp())
            })
            .collect();
        for j in 0..2 {
            let z: f64 = (0..4).map(|k| h[k] * l2.weights.get(k, j)).sum::<f64>() + l2.bias.get(0, j);
            assert!((z - out.get(r, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_loss_gradient_gives_zero_updates() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mlp = Mlp::init(&[3, 4, 2], Activation::Relu, &mut rng);
    let x = random(5, 3, &mut rng);
    let (_, cache) = mlp.forward(&x).unwrap();
    let (grads, dx) = mlp.backward(&cache, &Tensor::zeros(5, 2)).unwrap();
    for g in grads {
        assert!(g.weights.data().iter().chain(g.bias.data()).all(|&v| v == 0.0));
    }
    assert!(dx.data().iter().all(|&v| v == 0.0));
}

#[test]
fn linear_squared_loss_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let x = random(8, 3, &mut rng);
    let y = random(8, 1, &mut rng);
    let layer = AffineLayer::new(random(3, 1, &mut rng), Tensor::zeros(1, 1), Activation::Identity).unwrap();
    let mlp = Mlp::new(vec![layer.clone()]).unwrap();
    let (out, cache) = mlp.forward(&x).unwrap();
    // L = Σ (xθ - y)^2 / (2|B|)
    let resid = out.sub(&y).unwrap();
    let (grads, _) = mlp.backward(&cache, &resid.scale(1.0 / 8.0)).unwrap();
    for j in 0..3 {
        let expect: f64 = (0..8).map(|i| x.get(i, j) * resid.get(i, 0)).sum::<f64>() / 8.0;
        assert!((grads[0].weights.get(j, 0) - expect).abs() < 1e-14);
    }
}

#[test]
fn forward_is_deterministic_per_seed() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mlp = Mlp::init(&[6, 5, 2], Activation::Sigmoid, &mut rng);
        mlp.output(&random(4, 6, &mut rng)).unwrap()
    };
    assert_eq!(build(), build());
}

#[test]
fn stale_cache_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let a = Mlp::init(&[3, 4, 2], Activation::Sigmoid, &mut rng);
    let b = Mlp::init(&[3, 4, 4, 2], Activation::Sigmoid, &mut rng);
    let (_, cache) = a.forward(&random(2, 3, &mut rng)).unwrap();
    assert!(matches!(b.backward(&cache, &Tensor::zeros(2, 2)), Err(NeuralError::StaleCache(_))));
    assert!(a.forward(&random(2, 5, &mut rng)).is_err());
}

#[test]
fn training_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let mut mlp = Mlp::init(&[2, 6, 2], Activation::Sigmoid, &mut rng);
    let x = random(64, 2, &mut rng);
    let labels: Vec<usize> = (0..64).map(|r| usize::from(x.get(r, 0) + x.get(r, 1) > 0.0)).collect();
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.5, 64), false, 0);
    let loss = |m: &Mlp| loss_and_grad(&m.output(&x).unwrap(), &labels, HeadKind::Softmax).unwrap().0;
    let start = loss(&mlp);
    for _ in 0..300 {
        let (logits, cache) = mlp.forward(&x).unwrap();
        let (_, g) = loss_and_grad(&logits, &labels, HeadKind::Softmax).unwrap();
        let (grads, _) = mlp.backward(&cache, &g).unwrap();
        for (l, lg) in mlp.layers.iter_mut().zip(&grads) {
            opt.update_layer(l, lg, 64);
        }
    }
    assert!(loss(&mlp) < 0.5 * start);
}
