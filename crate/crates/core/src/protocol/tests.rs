use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::OnceLock;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::message::Endpoint;
use super::*;
use crate::fixedpoint::{FixedPointCodec, Ring};
use crate::neural::{loss_and_grad, sgd_step, Activation, HeadKind, Mlp, OptimizerConfig, Tensor};
use crate::paillier::{keygen, PaillierKeypair};
use crate::secretshare::{PairwiseChannel, TrustedDealer};
use crate::transport::{inproc_mesh, Frame, MsgType, Role, TcpOptions, TcpTransport, TraceEvent, Transport};

fn codec() -> FixedPointCodec {
    FixedPointCodec::new(Ring::new(64).unwrap(), 16).unwrap()
}

fn keys() -> &'static PaillierKeypair {
    static KEYS: OnceLock<PaillierKeypair> = OnceLock::new();
    KEYS.get_or_init(|| keygen(512, &mut ChaCha8Rng::seed_from_u64(5)).unwrap())
}

fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Two Gaussian blobs, one per class, with the features split `d_a | d_b`.
fn blobs(rows: usize, d_a: usize, d_b: usize, sep: f64, seed: u64) -> (Tensor, Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let labels: Vec<usize> = (0..rows).map(|i| i % 2).collect();
    let mut full = Vec::with_capacity(rows * (d_a + d_b));
    for &y in &labels {
        let shift = if y == 1 { sep } else { -sep };
        for _ in 0..d_a + d_b {
            full.push(shift + normal.sample(&mut rng));
        }
    }
    let x = Tensor::from_vec(rows, d_a + d_b, full).unwrap();
    (x.col_block(0, d_a), x.col_block(d_a, d_a + d_b), labels)
}

fn toy_data(train: usize, test: usize, d_a: usize, d_b: usize, sep: f64, seed: u64) -> SessionData {
    let (a, b, y) = blobs(train + test, d_a, d_b, sep, seed);
    SessionData {
        a_train: a.row_block(0, train),
        a_test: a.row_block(train, train + test),
        b_train: b.row_block(0, train),
        b_test: b.row_block(train, train + test),
        y_train: y[..train].to_vec(),
        y_test: y[train..].to_vec(),
    }
}

fn config(mode: ProtocolMode, hidden: &[usize], lr: f64, batch: usize, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(mode, hidden.to_vec(), OptimizerConfig::sgd(lr, batch), epochs, 7);
    cfg.key_bits = 512;
    cfg
}

fn session(cfg: &TrainConfig, data: &SessionData, capture: bool) -> SessionResult {
    let plan = cfg.plan(data.a_train.cols(), data.b_train.cols()).unwrap();
    let init = init_partition(&plan, cfg.seed);
    run_inproc(cfg, &plan, data, &init, capture).unwrap()
}

/// The batch orders the coordinator announced, read from the frames the
/// server received.
fn announced_orders(res: &SessionResult) -> Vec<Vec<usize>> {
    res.traces[&Role::Server]
        .received
        .iter()
        .filter(|(from, f)| *from == Role::Coordinator && f.msg_type == MsgType::Control)
        .filter_map(|(_, f)| match Control::from_bytes(&f.payload).unwrap() {
            Control::EpochStart { permutation, .. } => Some(permutation),
            _ => None,
        })
        .collect()
}

/// Plain monolithic training over the same batches.
fn train_monolithic(mut mlp: Mlp, data: &SessionData, orders: &[Vec<usize>], lr: f64, batch: usize) -> Mlp {
    let x = data.a_train.hconcat(&data.b_train).unwrap();
    let kind = HeadKind::for_outputs(mlp.layers.last().unwrap().outputs());
    for order in orders {
        for idx in order.chunks(batch) {
            let xb = x.select_rows(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| data.y_train[i]).collect();
            let (logits, cache) = mlp.forward(&xb).unwrap();
            let (_, g) = loss_and_grad(&logits, &yb, kind).unwrap();
            let (grads, _) = mlp.backward(&cache, &g).unwrap();
            for (layer, g) in mlp.layers.iter_mut().zip(&grads) {
                sgd_step(layer.weights.data_mut(), g.weights.data(), lr, idx.len());
                sgd_step(layer.bias.data_mut(), g.bias.data(), lr, idx.len());
            }
        }
    }
    mlp
}

fn max_param_diff(a: &Mlp, b: &Mlp) -> f64 {
    a.layers
        .iter()
        .zip(&b.layers)
        .map(|(x, y)| x.weights.max_abs_diff(&y.weights).max(x.bias.max_abs_diff(&y.bias)))
        .fold(0.0, f64::max)
}

/// Row-by-row product with the concatenation done explicitly.
fn concat_product(x_a: &Tensor, x_b: &Tensor, t_a: &Tensor, t_b: &Tensor) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..x_a.rows() {
        let row: Vec<f64> = x_a.row(r).iter().chain(x_b.row(r)).copied().collect();
        for c in 0..t_a.cols() {
            let col: Vec<f64> = (0..t_a.rows()).map(|k| t_a.get(k, c)).chain((0..t_b.rows()).map(|k| t_b.get(k, c))).collect();
            out.push(row.iter().zip(&col).map(|(x, w)| x * w).sum());
        }
    }
    out
}

fn run_ss(x_a: &Tensor, x_b: &Tensor, t_a: &Tensor, t_b: &Tensor, seed: u64) -> Tensor {
    let codec = codec();
    let mut dealer = TrustedDealer::new(codec.ring(), ChaCha8Rng::seed_from_u64(seed));
    let mut ch = PairwiseChannel::new(codec.ring());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    first_hidden_ss(x_a, x_b, t_a, t_b, &codec, &mut dealer, &mut ch, &mut rng).unwrap()
}

#[test]
fn ss_first_hidden_matches_concatenated_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..10 {
        let (n, d_a, d_b, m) = (8, 5, 4, 6);
        let x_a = random_tensor(n, d_a, 3.0, &mut rng);
        let x_b = random_tensor(n, d_b, 3.0, &mut rng);
        let t_a = random_tensor(d_a, m, 1.0, &mut rng);
        let t_b = random_tensor(d_b, m, 1.0, &mut rng);
        let h = run_ss(&x_a, &x_b, &t_a, &t_b, trial);
        let want = concat_product(&x_a, &x_b, &t_a, &t_b);
        let tol = n as f64 * 2f64.powi(-15);
        for (got, want) in h.data().iter().zip(&want) {
            assert!((got - want).abs() <= tol, "{got} vs {want}");
        }
    }
}

#[test]
fn ss_first_hidden_with_silent_second_client() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x_a = random_tensor(6, 3, 2.0, &mut rng);
    let t_a = random_tensor(3, 4, 1.0, &mut rng);
    let h = run_ss(&x_a, &Tensor::zeros(6, 2), &t_a, &Tensor::zeros(2, 4), 3);
    let want = x_a.matmul(&t_a).unwrap();
    assert!(h.max_abs_diff(&want) <= 6.0 * 2f64.powi(-15));
}

#[test]
fn ss_first_hidden_counts_share_traffic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, d_a, d_b, m) = (5, 2, 3, 4);
    let d = d_a + d_b;
    let codec = codec();
    let mut dealer = TrustedDealer::new(codec.ring(), ChaCha8Rng::seed_from_u64(1));
    let mut ch = PairwiseChannel::new(codec.ring());
    first_hidden_ss(
        &random_tensor(n, d_a, 1.0, &mut rng),
        &random_tensor(n, d_b, 1.0, &mut rng),
        &random_tensor(d_a, m, 1.0, &mut rng),
        &random_tensor(d_b, m, 1.0, &mut rng),
        &codec,
        &mut dealer,
        &mut ch,
        &mut rng,
    )
    .unwrap();
    // weights and inputs once, then two openings of n*d + d*m each
    let sharing_a = (d_a * m + n * d_a) as u64;
    let sharing_b = (d_b * m + n * d_b) as u64;
    let openings = 2 * (n * d + d * m) as u64;
    assert_eq!(ch.stats(crate::secretshare::Party::P0).elements_sent, sharing_a + openings);
    assert_eq!(ch.stats(crate::secretshare::Party::P1).elements_sent, sharing_b + openings);
}

#[test]
fn first_hidden_rejects_misaligned_rows() {
    let codec = codec();
    let mut dealer = TrustedDealer::new(codec.ring(), ChaCha8Rng::seed_from_u64(1));
    let mut ch = PairwiseChannel::new(codec.ring());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = first_hidden_ss(
        &Tensor::zeros(3, 2),
        &Tensor::zeros(4, 2),
        &Tensor::zeros(2, 2),
        &Tensor::zeros(2, 2),
        &codec,
        &mut dealer,
        &mut ch,
        &mut rng,
    )
    .unwrap_err();
    assert!(matches!(err, ProtocolError::RowCountMismatch(_)));
    let err = first_hidden_he(
        &Tensor::zeros(3, 2),
        &Tensor::zeros(4, 2),
        &Tensor::zeros(2, 2),
        &Tensor::zeros(2, 2),
        &codec,
        keys(),
        false,
        &mut rng,
    )
    .unwrap_err();
    assert!(matches!(err, ProtocolError::RowCountMismatch(_)));
}

#[test]
fn he_first_hidden_agrees_with_ss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for packed in [false, true] {
        let x_a = random_tensor(7, 4, 3.0, &mut rng);
        let x_b = random_tensor(7, 3, 3.0, &mut rng);
        let t_a = random_tensor(4, 5, 1.0, &mut rng);
        let t_b = random_tensor(3, 5, 1.0, &mut rng);
        let he = first_hidden_he(&x_a, &x_b, &t_a, &t_b, &codec(), keys(), packed, &mut rng).unwrap();
        let ss = run_ss(&x_a, &x_b, &t_a, &t_b, 9);
        assert!(he.max_abs_diff(&ss) <= 2f64.powi(-14), "packed={packed}");
        let want = Tensor::from_vec(7, 5, concat_product(&x_a, &x_b, &t_a, &t_b)).unwrap();
        assert!(he.max_abs_diff(&want) <= 7.0 * 2f64.powi(-15));
    }
}

#[test]
fn he_first_hidden_of_zero_inputs_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t_a = random_tensor(2, 3, 1.0, &mut rng);
    let t_b = random_tensor(2, 3, 1.0, &mut rng);
    let h = first_hidden_he(&Tensor::zeros(4, 2), &Tensor::zeros(4, 2), &t_a, &t_b, &codec(), keys(), false, &mut rng).unwrap();
    assert!(h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn he_ciphertexts_reject_foreign_keys_and_bad_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pk = &keys().pk;
    let hc = HeCiphertexts::encrypt(pk, &[1, -2, 3, 4], 2, 2, false, &mut rng).unwrap();
    let mut bytes = hc.to_bytes(pk).unwrap();
    assert_eq!(HeCiphertexts::from_bytes(pk, &bytes).unwrap(), hc);
    // claim three rows
    bytes[0] = 3;
    assert!(matches!(HeCiphertexts::from_bytes(pk, &bytes), Err(ProtocolError::Malformed(..))));
    let other = keygen(512, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let foreign = HeCiphertexts::encrypt(&other.pk, &[1, 2, 3, 4], 2, 2, false, &mut rng).unwrap();
    assert!(hc.add(pk, &foreign).is_err());
}

#[test]
fn server_shares_look_uniform() {
    // one client's truncated output share for a fixed secret, over many runs
    let x = Tensor::from_vec(1, 1, vec![1.5]).unwrap();
    let t = Tensor::from_vec(1, 1, vec![-0.75]).unwrap();
    let codec = codec();
    let mut counts = [0usize; 16];
    let trials = 4000;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dealer = TrustedDealer::new(codec.ring(), ChaCha8Rng::seed_from_u64(seed + 1_000_000));
        let (ta0, ta1) = SsFirstLayer::share_block(&codec, &t, &mut rng).unwrap();
        let (tb0, tb1) = SsFirstLayer::share_block(&codec, &Tensor::zeros(1, 1), &mut rng).unwrap();
        let (xa0, xa1) = SsFirstLayer::share_block(&codec, &x, &mut rng).unwrap();
        let (xb0, xb1) = SsFirstLayer::share_block(&codec, &Tensor::zeros(1, 1), &mut rng).unwrap();
        let a = SsFirstLayer::new(crate::secretshare::Party::P0, codec, 24, &ta0, &tb0).unwrap();
        let b = SsFirstLayer::new(crate::secretshare::Party::P1, codec, 24, &ta1, &tb1).unwrap();
        let x0 = SsFirstLayer::join(&xa0, &xb0).unwrap();
        let x1 = SsFirstLayer::join(&xa1, &xb1).unwrap();
        let shape = a.triple_shape(1);
        let (mut u0, mut u1) = dealer.triple(shape);
        let (mut v0, mut v1) = dealer.triple(shape);
        let ca = a.start(&x0, [&mut u0, &mut v0]).unwrap();
        let cb = b.start(&x1, [&mut u1, &mut v1]).unwrap();
        let (oa, ob) = (ca.openings().map(Clone::clone), cb.openings().map(Clone::clone));
        let share = a.finish(ca, [&ob[0], &ob[1]]).unwrap();
        let other = b.finish(cb, [&oa[0], &oa[1]]).unwrap();
        let sum = share.add(&other).unwrap().decode(&codec)[0];
        assert!((sum + 1.125).abs() <= 2f64.powi(-15));
        // truncation leaves 48 uniform low bits
        counts[((share.raw()[0] >> 44) & 15) as usize] += 1;
    }
    let expected = trials as f64 / 16.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 15 degrees of freedom, p = 0.001
    assert!(chi2 < 37.7, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn float_path_matches_monolithic_bit_for_bit() {
    for (hidden, act) in [(vec![6, 5], Activation::Sigmoid), (vec![7, 4, 3], Activation::Relu), (vec![5], Activation::Sigmoid)] {
        let data = toy_data(80, 0, 3, 2, 1.0, 11);
        let mut cfg = config(ProtocolMode::Ss, &hidden, 0.3, 8, 1);
        cfg.activation = act;
        cfg.float_path = true;
        cfg.evaluate = false;
        let res = session(&cfg, &data, true);
        assert_eq!(res.coordinator.steps, 10);
        let orders = announced_orders(&res);
        let plan = cfg.plan(3, 2).unwrap();
        let oracle = train_monolithic(plan::init_mlp(&plan, cfg.seed), &data, &orders, 0.3, 8);
        let got = res.partition().unwrap().to_mlp().unwrap();
        assert_eq!(got, oracle, "hidden {hidden:?}");
    }
}

#[test]
fn secure_modes_track_monolithic_after_one_step() {
    for mode in [ProtocolMode::Ss, ProtocolMode::He] {
        let data = toy_data(16, 0, 3, 3, 1.0, 12);
        let mut cfg = config(mode, &[6, 4], 0.5, 16, 1);
        cfg.evaluate = false;
        let res = session(&cfg, &data, true);
        let orders = announced_orders(&res);
        let plan = cfg.plan(3, 3).unwrap();
        let init = plan::init_mlp(&plan, cfg.seed);
        let oracle = train_monolithic(init.clone(), &data, &orders, 0.5, 16);
        let got = res.partition().unwrap().to_mlp().unwrap();
        let drift = max_param_diff(&got, &oracle);
        assert!(drift <= 2f64.powi(-12), "{mode}: {drift}");
        assert!(max_param_diff(&init, &oracle) > 1e-3, "the step must move the parameters");
    }
}

#[test]
fn ss_and_he_training_trajectories_agree() {
    let data = toy_data(48, 16, 2, 2, 1.0, 13);
    let run = |mode| {
        let cfg = config(mode, &[4, 3], 0.5, 16, 2);
        session(&cfg, &data, false)
    };
    let (ss, he) = (run(ProtocolMode::Ss), run(ProtocolMode::He));
    let (p_ss, p_he) = (ss.partition().unwrap().to_mlp().unwrap(), he.partition().unwrap().to_mlp().unwrap());
    assert!(max_param_diff(&p_ss, &p_he) < 1e-3);
    for (a, b) in ss.metrics().iter().zip(he.metrics()) {
        assert!((a.train_loss - b.train_loss).abs() < 1e-3);
    }
}

#[test]
fn ss_training_halves_the_loss() {
    let data = toy_data(400, 0, 2, 2, 1.5, 14);
    let mut cfg = config(ProtocolMode::Ss, &[4], 0.5, 20, 10);
    cfg.evaluate = false;
    let plan = cfg.plan(2, 2).unwrap();
    let init = init_partition(&plan, cfg.seed);
    let x = data.a_train.hconcat(&data.b_train).unwrap();
    let logits = init.to_mlp().unwrap().output(&x).unwrap();
    let (initial, _) = loss_and_grad(&logits, &data.y_train, HeadKind::Softmax).unwrap();
    let res = run_inproc(&cfg, &plan, &data, &init, false).unwrap();
    assert_eq!(res.coordinator.steps, 200);
    let trained = res.partition().unwrap().to_mlp().unwrap().output(&x).unwrap();
    let (last, _) = loss_and_grad(&trained, &data.y_train, HeadKind::Softmax).unwrap();
    assert!(last <= 0.5 * initial, "{initial} -> {last}");
}

#[test]
fn zero_network_predicts_uniformly() {
    let data = toy_data(8, 6, 2, 2, 1.0, 15);
    let mut cfg = config(ProtocolMode::Ss, &[3], 1e-300, 8, 1);
    cfg.optimizer.learning_rate = 1e-300;
    let plan = cfg.plan(2, 2).unwrap();
    let mut init = init_partition(&plan, 1);
    init.theta_a = Tensor::zeros(2, 3);
    init.theta_b = Tensor::zeros(2, 3);
    init.theta_y.weights = Tensor::zeros(3, 2);
    let res = run_inproc(&cfg, &plan, &data, &init, false).unwrap();
    assert_eq!(res.client_a.test_scores.len(), 6);
    assert!(res.client_a.test_scores.iter().all(|&p| (p - 0.5).abs() < 1e-12));
}

#[test]
fn sessions_are_deterministic() {
    let data = toy_data(40, 20, 3, 2, 1.0, 16);
    let mut cfg = config(ProtocolMode::Ss, &[4, 3], 0.2, 10, 2);
    cfg.optimizer = OptimizerConfig::sgld(0.01, 10, 3);
    cfg.sgld_targets = vec![SgldTarget::Server, SgldTarget::Head, SgldTarget::Clients];
    let a = session(&cfg, &data, false);
    let b = session(&cfg, &data, false);
    assert_eq!(a.metrics(), b.metrics());
    assert_eq!(a.client_a.test_scores, b.client_a.test_scores);
    assert_eq!(a.partition().unwrap(), b.partition().unwrap());
}

#[test]
fn metrics_cover_every_epoch() {
    let data = toy_data(60, 30, 2, 3, 1.5, 17);
    let cfg = config(ProtocolMode::Ss, &[4], 0.5, 16, 3);
    let res = session(&cfg, &data, false);
    let m = res.metrics();
    assert_eq!(m.len(), 3);
    for (e, row) in m.iter().enumerate() {
        assert_eq!(row.epoch, e);
        assert!(row.train_auc.is_some() && row.test_auc.is_some() && row.test_loss.is_some());
    }
    assert!(m[2].test_auc.unwrap() > 0.9);
    // four training batches and two test batches per epoch, two triples each
    assert_eq!(res.coordinator.steps, 18);
    assert_eq!(res.coordinator.triples_dealt, 36);
}

#[test]
fn early_stop_ends_the_session() {
    let data = toy_data(60, 0, 2, 2, 2.0, 18);
    let mut cfg = config(ProtocolMode::Ss, &[4], 1.0, 10, 50);
    cfg.evaluate = false;
    cfg.early_stop_loss = Some(0.3);
    let res = session(&cfg, &data, false);
    assert!(res.coordinator.early_stopped);
    assert!(res.coordinator.epochs_run < 50);
    assert!(res.metrics().last().unwrap().train_loss < 0.3);
}

#[test]
fn config_validation() {
    let data = toy_data(10, 0, 2, 2, 1.0, 19);
    let cfg = config(ProtocolMode::Ss, &[3], 0.1, 5, 0);
    let plan = cfg.plan(2, 2).unwrap();
    let init = init_partition(&plan, 1);
    assert!(matches!(run_inproc(&cfg, &plan, &data, &init, false), Err(ProtocolError::InvalidConfig(_))));
    let mut he = config(ProtocolMode::He, &[3], 0.1, 5, 1);
    he.key_bits = 256;
    assert!(he.validate().is_err());
    let ok = config(ProtocolMode::Ss, &[3], 0.1, 5, 1);
    let json = serde_json::to_string(&ok).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), ok);
    assert!(!json.contains("float_path"));
}

#[test]
fn misaligned_blocks_are_rejected() {
    let mut data = toy_data(10, 4, 2, 2, 1.0, 20);
    data.b_train = data.b_train.row_block(0, 9);
    let cfg = config(ProtocolMode::Ss, &[3], 0.1, 5, 1);
    let plan = cfg.plan(2, 2).unwrap();
    let init = init_partition(&plan, 1);
    assert!(matches!(run_inproc(&cfg, &plan, &data, &init, false), Err(ProtocolError::RowCountMismatch(_))));
}

#[test]
fn bad_client_input_stops_every_role() {
    let data = toy_data(10, 4, 2, 2, 1.0, 21);
    let cfg = config(ProtocolMode::Ss, &[3], 0.1, 5, 1);
    let plan = cfg.plan(2, 2).unwrap();
    let mut init = init_partition(&plan, 1);
    init.theta_b = Tensor::zeros(3, 3);
    let err = run_inproc(&cfg, &plan, &data, &init, false).unwrap_err();
    assert!(matches!(err, ProtocolError::ShapeMismatch(_)), "{err}");
}

#[test]
fn endpoint_flags_out_of_order_frames() {
    let mut mesh = inproc_mesh(Duration::from_secs(5));
    let mut b = mesh.remove(3);
    let mut a = mesh.remove(2);
    a.send(Role::ClientB, &Frame::new(1, 4, MsgType::HeadGradDown, vec![])).unwrap();
    a.send(Role::ClientB, &Frame::new(1, 3, MsgType::ShareTransfer, vec![])).unwrap();
    a.send(Role::ClientB, &Frame::new(2, 5, MsgType::ShareTransfer, vec![])).unwrap();
    let mut ep = Endpoint::new(&mut b, 1);
    assert!(matches!(
        ep.recv(Role::ClientA, 4, MsgType::ShareTransfer),
        Err(ProtocolError::SequenceViolation { got: MsgType::HeadGradDown, .. })
    ));
    // step went backwards
    assert!(matches!(ep.recv(Role::ClientA, 3, MsgType::ShareTransfer), Err(ProtocolError::SequenceViolation { .. })));
    assert!(matches!(ep.recv(Role::ClientA, 5, MsgType::ShareTransfer), Err(ProtocolError::SessionMismatch { .. })));
}

/// Position of a message type in the per-step grammar.
fn grammar_rank(t: MsgType) -> Option<usize> {
    match t {
        MsgType::TripleDeal => Some(0),
        MsgType::ShareTransfer | MsgType::CiphertextTransfer => Some(1),
        MsgType::HiddenLayerUp => Some(2),
        MsgType::LastHiddenToA => Some(3),
        MsgType::HeadGradDown => Some(4),
        MsgType::InputGradDown => Some(5),
        _ => None,
    }
}

pub(crate) fn assert_grammar(res: &SessionResult) {
    for (role, log) in &res.traces {
        let mut current: Option<(u64, usize)> = None;
        for ev in &log.events {
            let (t, step) = match ev {
                TraceEvent::Send { msg_type, step, .. } | TraceEvent::Recv { msg_type, step, .. } => (*msg_type, *step),
                _ => continue,
            };
            let Some(rank) = grammar_rank(t) else { continue };
            assert!(step > 0 || t == MsgType::ShareTransfer, "{role}: {t:?} during setup");
            match current {
                Some((s, r)) if s == step => assert!(rank >= r, "{role} step {step}: {t:?} after rank {r}"),
                Some((s, _)) => assert!(step > s, "{role}: step {step} after {s}"),
                None => {}
            }
            current = Some((step, rank));
        }
    }
}

#[test]
fn message_types_follow_the_grammar() {
    let data = toy_data(30, 10, 2, 2, 1.0, 22);
    for mode in [ProtocolMode::Ss, ProtocolMode::He] {
        let res = session(&config(mode, &[3, 2], 0.1, 8, 2), &data, false);
        assert_grammar(&res);
    }
}

#[test]
fn server_receives_only_hidden_material() {
    let data = toy_data(30, 10, 2, 2, 1.0, 23);
    for mode in [ProtocolMode::Ss, ProtocolMode::He] {
        let res = session(&config(mode, &[3, 2], 0.1, 8, 1), &data, true);
        for (from, f) in &res.traces[&Role::Server].received {
            let allowed = match from {
                Role::Coordinator => f.msg_type == MsgType::Control,
                Role::ClientA => matches!(f.msg_type, MsgType::HiddenLayerUp | MsgType::HeadGradDown),
                Role::ClientB => f.msg_type == MsgType::HiddenLayerUp,
                Role::Server => false,
            };
            assert!(allowed, "{mode}: {:?} from {from}", f.msg_type);
        }
    }
}

#[test]
fn recorded_hidden_layer_matches_test_rows() {
    let data = toy_data(20, 12, 2, 2, 1.0, 24);
    let mut cfg = config(ProtocolMode::Ss, &[3], 0.1, 5, 1);
    cfg.record_hidden = true;
    let res = session(&cfg, &data, false);
    let h = res.server.hidden.as_ref().unwrap();
    let p = res.partition().unwrap();
    let want = data.a_test.matmul(&p.theta_a).unwrap().add(&data.b_test.matmul(&p.theta_b).unwrap()).unwrap();
    assert!(h.max_abs_diff(&want) < 1e-3);
}

fn free_endpoints() -> BTreeMap<Role, String> {
    Role::ALL
        .iter()
        .map(|&r| (r, format!("127.0.0.1:{}", TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port())))
        .collect()
}

fn session_over_tcp(cfg: &TrainConfig, data: &SessionData) -> SessionResult {
    let plan = cfg.plan(data.a_train.cols(), data.b_train.cols()).unwrap();
    let init = init_partition(&plan, cfg.seed);
    let opts = TcpOptions::new(cfg.session_id, free_endpoints());
    run_session(cfg, &plan, data, &init, true, |role| {
        Ok(Box::new(TcpTransport::establish(role, &opts)?) as Box<dyn Transport>)
    })
    .unwrap()
}

#[test]
fn tcp_and_inproc_sessions_agree() {
    let data = toy_data(40, 10, 3, 2, 1.0, 25);
    let mut float = config(ProtocolMode::Ss, &[4, 3], 0.3, 8, 1);
    float.float_path = true;
    float.evaluate = false;
    let res = session_over_tcp(&float, &data);
    let orders = announced_orders(&res);
    let plan = float.plan(3, 2).unwrap();
    let oracle = train_monolithic(plan::init_mlp(&plan, float.seed), &data, &orders, 0.3, 8);
    assert_eq!(res.partition().unwrap().to_mlp().unwrap(), oracle);

    for mode in [ProtocolMode::Ss, ProtocolMode::He] {
        let cfg = config(mode, &[4, 3], 0.3, 8, 2);
        let over_tcp = session_over_tcp(&cfg, &data);
        let local = session(&cfg, &data, false);
        assert_eq!(over_tcp.metrics(), local.metrics());
        assert_eq!(over_tcp.partition().unwrap(), local.partition().unwrap());
        assert_grammar(&over_tcp);
    }
}
