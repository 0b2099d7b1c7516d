use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::first_hidden::{he_partial, HeCiphertexts, SsFirstLayer};
use super::message::{batches, matrices_from, tensor_from, tensor_payload, Control, Endpoint, EpochMetrics, SessionSetup};
use super::{ProtocolError, ProtocolMode, Result, SgldTarget};
use crate::fixedpoint::{FixedPointCodec, Ring, RingMatrix};
use crate::neural::{
    auc_from_classes, cross_entropy, head_probabilities, loss_and_grad, positive_scores, AffineLayer, HeadKind,
    Optimizer, Tensor,
};
use crate::paillier::PublicKey;
use crate::secretshare::{encode_matrices, BeaverOpening, BeaverTriple, Party};
use crate::transport::{MsgType, Role};

/// Private inputs of one client.
#[derive(Clone, Debug)]
pub struct ClientInputs {
    pub x_train: Tensor,
    pub x_test: Tensor,
    /// `(train, test)` labels; client A only.
    pub labels: Option<(Vec<usize>, Vec<usize>)>,
    /// This client's block of the first-layer weights.
    pub theta: Tensor,
    /// The prediction head; client A only.
    pub head: Option<AffineLayer>,
}

/// The first-layer weights a client ends the session with.
#[derive(Clone, Debug)]
pub enum FirstLayerState {
    /// The client's own block in the clear.
    Plain(Tensor),
    /// The client's share of both blocks.
    Shared(SsFirstLayer),
}

#[derive(Clone, Debug)]
pub struct ClientOutcome {
    pub role: Role,
    pub first_layer: FirstLayerState,
    pub head: Option<AffineLayer>,
    pub metrics: Vec<EpochMetrics>,
    /// Positive-class scores of the test rows from the last evaluation.
    pub test_scores: Vec<f64>,
    pub steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Path {
    Ss,
    He,
    Float,
}

struct Client<'e, 'a> {
    ep: &'e mut Endpoint<'a>,
    role: Role,
    peer: Role,
    party: Party,
    setup: SessionSetup,
    path: Path,
    codec: FixedPointCodec,
    pk: Option<PublicKey>,
    rng: ChaCha8Rng,
    first: FirstLayerState,
    first_opt: Optimizer,
    head: Option<AffineLayer>,
    head_opt: Optimizer,
    kind: HeadKind,
    step: u64,
}

/// What the forward pass leaves behind for the update.
enum FirstCache {
    Shared(RingMatrix),
    Plain,
}

pub(crate) fn run_client(ep: &mut Endpoint<'_>, inputs: ClientInputs) -> Result<ClientOutcome> {
    let role = ep.role();
    let setup = match ep.recv_control(Role::Coordinator)? {
        Control::Config(s) => s,
        Control::Stop { reason } => return Err(ProtocolError::Stopped(reason)),
        other => return Err(ProtocolError::Malformed("control", format!("expected config, got {other:?}"))),
    };
    check_inputs(role, &setup, &inputs)?;
    let cfg = &setup.config;
    let codec = FixedPointCodec::new(Ring::new(cfg.ring_bits)?, cfg.frac_bits)?;
    let path = match (cfg.float_path, cfg.protocol_mode) {
        (true, _) => Path::Float,
        (false, ProtocolMode::Ss) => Path::Ss,
        (false, ProtocolMode::He) => Path::He,
    };
    let (peer, party, stream) = match role {
        Role::ClientA => (Role::ClientB, Party::P0, 3),
        _ => (Role::ClientA, Party::P1, 4),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(16 + stream);
    let first_opt = Optimizer::new(cfg.optimizer.clone(), cfg.langevin_on(SgldTarget::Clients), stream)
        .with_dataset_rows(setup.train_rows);
    let head_opt =
        Optimizer::new(cfg.optimizer.clone(), cfg.langevin_on(SgldTarget::Head), 2).with_dataset_rows(setup.train_rows);
    let kind = HeadKind::for_outputs(setup.plan.head_outputs);

    let pk = if path == Path::He {
        let bytes = ep.recv(Role::Server, 0, MsgType::KeyDistribution)?;
        Some(PublicKey::from_bytes(&bytes)?)
    } else {
        None
    };
    let ClientInputs {
        x_train,
        x_test,
        labels,
        theta,
        head,
    } = inputs;
    let mut client = Client {
        ep,
        role,
        peer,
        party,
        path,
        codec,
        pk,
        rng,
        first: FirstLayerState::Plain(theta),
        first_opt,
        head,
        head_opt,
        kind,
        step: 0,
        setup,
    };
    if path == Path::Ss {
        client.share_weights()?;
    }
    let mut metrics = Vec::new();
    let mut test_scores = Vec::new();
    let mut pending: Option<EpochMetrics> = None;
    loop {
        match client.ep.recv_control(Role::Coordinator)? {
            Control::EpochStart { epoch, permutation } => {
                client.ep.mark(&format!("epoch_begin:{epoch}"));
                if permutation.len() != x_train.rows() || permutation.iter().any(|&i| i >= x_train.rows()) {
                    return Err(ProtocolError::Malformed("epoch start", "permutation does not index the training rows".into()));
                }
                let m = client.train_epoch(epoch, &x_train, labels.as_ref().map(|l| &l.0[..]), &permutation)?;
                client.ep.mark(&format!("train_end:{epoch}"));
                if role == Role::ClientA {
                    if client.setup.config.evaluate {
                        pending = m;
                    } else if let Some(m) = m {
                        client.report(&m)?;
                        metrics.push(m);
                    }
                }
            }
            Control::EvalStart { epoch } => {
                let scores = client.evaluate(&x_test)?;
                if let (Some((_, y_test)), Some(mut m)) = (labels.as_ref(), pending.take()) {
                    let probs = scores.ok_or_else(|| ProtocolError::Malformed("eval", "no head output".into()))?;
                    let s = positive_scores(&probs, client.kind);
                    if y_test.is_empty() {
                        m.test_loss = None;
                        m.test_auc = None;
                    } else {
                        m.test_loss = Some(cross_entropy(&probs, y_test, client.kind)?);
                        m.test_auc = auc_from_classes(&s, y_test).ok();
                    }
                    debug_assert_eq!(m.epoch, epoch);
                    client.report(&m)?;
                    metrics.push(m);
                    test_scores = s;
                }
            }
            Control::Stop { .. } => break,
            other => {
                return Err(ProtocolError::Malformed("control", format!("unexpected {other:?}")));
            }
        }
    }
    Ok(ClientOutcome {
        role,
        first_layer: client.first,
        head: client.head,
        metrics,
        test_scores,
        steps: client.step,
    })
}

fn check_inputs(role: Role, setup: &SessionSetup, inputs: &ClientInputs) -> Result<()> {
    let plan = &setup.plan;
    let width = if role == Role::ClientA { plan.d_a } else { plan.d_b };
    let shape_err = |what: &str, got: (usize, usize), want: (usize, usize)| {
        Err(ProtocolError::ShapeMismatch(format!("{role} {what} is {got:?}, expected {want:?}")))
    };
    if inputs.x_train.shape() != (setup.train_rows, width) {
        return shape_err("training block", inputs.x_train.shape(), (setup.train_rows, width));
    }
    if inputs.x_test.shape() != (setup.test_rows, width) {
        return shape_err("test block", inputs.x_test.shape(), (setup.test_rows, width));
    }
    if inputs.theta.shape() != (width, plan.first_width) {
        return shape_err("first-layer block", inputs.theta.shape(), (width, plan.first_width));
    }
    if role == Role::ClientA {
        let (tr, te) = inputs
            .labels
            .as_ref()
            .ok_or_else(|| ProtocolError::InvalidConfig("client A needs labels".into()))?;
        if tr.len() != setup.train_rows || te.len() != setup.test_rows {
            return Err(ProtocolError::RowCountMismatch(format!("{} / {} labels", tr.len(), te.len())));
        }
        let head = inputs
            .head
            .as_ref()
            .ok_or_else(|| ProtocolError::InvalidConfig("client A needs the head".into()))?;
        if (head.inputs(), head.outputs()) != (plan.head_inputs(), plan.head_outputs) {
            return shape_err("head", (head.inputs(), head.outputs()), (plan.head_inputs(), plan.head_outputs));
        }
    }
    Ok(())
}

fn opening_payload(ring: Ring, o: [&BeaverOpening; 2]) -> Vec<u8> {
    encode_matrices(ring, &[&o[0].e, &o[0].f, &o[1].e, &o[1].f])
}

impl Client<'_, '_> {
    fn ring(&self) -> Ring {
        self.codec.ring()
    }

    /// Splits this client's weight block; the peer's share goes out once and
    /// both clients keep their shares for the whole session.
    fn share_weights(&mut self) -> Result<()> {
        let FirstLayerState::Plain(theta) = &self.first else {
            unreachable!("weights are shared once");
        };
        let (s0, s1) = SsFirstLayer::share_block(&self.codec, theta, &mut self.rng)?;
        let (keep, give) = match self.party {
            Party::P0 => (s0, s1),
            Party::P1 => (s1, s0),
        };
        self.ep
            .send(self.peer, 0, MsgType::ShareTransfer, encode_matrices(self.ring(), &[&give]))?;
        let got = matrices_from("weight share", self.ring(), &self.ep.recv(self.peer, 0, MsgType::ShareTransfer)?, 1)?;
        let grad_bits = self.setup.config.grad_frac_bits;
        let layer = match self.party {
            Party::P0 => SsFirstLayer::new(self.party, self.codec, grad_bits, &keep, &got[0])?,
            Party::P1 => SsFirstLayer::new(self.party, self.codec, grad_bits, &got[0], &keep)?,
        };
        self.first = FirstLayerState::Shared(layer);
        Ok(())
    }

    /// Runs this client's half of the first layer for `x` at the current
    /// step; the result goes to the server.
    fn forward_first(&mut self, x: &Tensor) -> Result<FirstCache> {
        let step = self.step;
        match (&self.first, self.path) {
            (FirstLayerState::Shared(layer), Path::Ss) => {
                let ring = self.ring();
                let deal = self.ep.recv(Role::Coordinator, step, MsgType::TripleDeal)?;
                let m = matrices_from("triple deal", ring, &deal, 6).map_err(|_| ProtocolError::TripleExhausted(step))?;
                let mut it = m.into_iter();
                let mut next = || -> Result<BeaverTriple> {
                    let (u, v, w) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
                    Ok(BeaverTriple::new(self.party, u, v, w)?)
                };
                let (mut t0, mut t1) = (next()?, next()?);
                if t0.dims() != (x.rows(), layer.theta_share().rows(), layer.theta_share().cols()) {
                    return Err(ProtocolError::TripleExhausted(step));
                }

                let (s0, s1) = SsFirstLayer::share_block(&self.codec, x, &mut self.rng)?;
                let (keep, give) = match self.party {
                    Party::P0 => (s0, s1),
                    Party::P1 => (s1, s0),
                };
                self.ep
                    .send(self.peer, step, MsgType::ShareTransfer, encode_matrices(ring, &[&give]))?;
                let got = matrices_from("input share", ring, &self.ep.recv(self.peer, step, MsgType::ShareTransfer)?, 1)?;
                let x_share = match self.party {
                    Party::P0 => SsFirstLayer::join(&keep, &got[0])?,
                    Party::P1 => SsFirstLayer::join(&got[0], &keep)?,
                };

                let cross = layer.start(&x_share, [&mut t0, &mut t1])?;
                self.ep
                    .send(self.peer, step, MsgType::ShareTransfer, opening_payload(ring, cross.openings()))?;
                let peer = matrices_from("opening", ring, &self.ep.recv(self.peer, step, MsgType::ShareTransfer)?, 4)?;
                let mut it = peer.into_iter();
                let mut open = || BeaverOpening {
                    e: it.next().unwrap(),
                    f: it.next().unwrap(),
                };
                let (p0, p1) = (open(), open());
                let h = layer.finish(cross, [&p0, &p1])?;
                self.ep
                    .send(Role::Server, step, MsgType::HiddenLayerUp, encode_matrices(ring, &[&h]))?;
                Ok(FirstCache::Shared(x_share))
            }
            (FirstLayerState::Plain(theta), Path::He) => {
                let pk = self.pk.as_ref().expect("key received during setup");
                let packed = self.setup.config.he_packing;
                let partial = he_partial(&self.codec, x, theta)?;
                let own = HeCiphertexts::encrypt(pk, &partial, x.rows(), theta.cols(), packed, &mut self.rng)?;
                if self.role == Role::ClientA {
                    self.ep
                        .send(Role::ClientB, step, MsgType::CiphertextTransfer, own.to_bytes(pk)?)?;
                } else {
                    let bytes = self.ep.recv(Role::ClientA, step, MsgType::CiphertextTransfer)?;
                    let from_a = HeCiphertexts::from_bytes(pk, &bytes)?;
                    if (from_a.rows, from_a.cols) != (x.rows(), theta.cols()) || from_a.addends != 1 {
                        return Err(ProtocolError::RowCountMismatch(format!("{}x{} from A", from_a.rows, from_a.cols)));
                    }
                    let sum = from_a.add(pk, &own)?;
                    self.ep
                        .send(Role::Server, step, MsgType::HiddenLayerUp, sum.to_bytes(pk)?)?;
                }
                Ok(FirstCache::Plain)
            }
            (FirstLayerState::Plain(theta), Path::Float) => {
                if self.role == Role::ClientA {
                    let partial = x.matmul(theta)?;
                    self.ep
                        .send(Role::ClientB, step, MsgType::CiphertextTransfer, tensor_payload(&partial))?;
                } else {
                    let bytes = self.ep.recv(Role::ClientA, step, MsgType::CiphertextTransfer)?;
                    let mut acc = tensor_from("partial product", &bytes)?;
                    if acc.shape() != (x.rows(), theta.cols()) {
                        return Err(ProtocolError::RowCountMismatch(format!("{:?} from A", acc.shape())));
                    }
                    acc.matmul_acc(x, theta)?;
                    self.ep
                        .send(Role::Server, step, MsgType::HiddenLayerUp, tensor_payload(&acc))?;
                }
                Ok(FirstCache::Plain)
            }
            _ => unreachable!("first-layer state matches the protocol path"),
        }
    }

    fn update_first(&mut self, x: &Tensor, cache: FirstCache, grad: &Tensor) -> Result<()> {
        let batch = x.rows();
        match (&mut self.first, cache) {
            (FirstLayerState::Shared(layer), FirstCache::Shared(x_share)) => {
                let scaled = grad.scale(self.first_opt.gradient_scale(batch));
                let noise = if self.first_opt.is_langevin() {
                    Some(self.first_opt.noise(x.cols(), grad.cols()))
                } else {
                    None
                };
                layer.update(&x_share, &scaled, noise.as_ref())
            }
            (FirstLayerState::Plain(theta), FirstCache::Plain) => {
                let g = x.tr_matmul(grad)?;
                self.first_opt.step(theta, &g, batch);
                Ok(())
            }
            _ => unreachable!("cache matches the first-layer state"),
        }
    }

    fn train_epoch(
        &mut self,
        epoch: usize,
        x_train: &Tensor,
        labels: Option<&[usize]>,
        order: &[usize],
    ) -> Result<Option<EpochMetrics>> {
        let batch_size = self.setup.config.optimizer.batch_size;
        let mut loss_sum = 0.0;
        let mut scores = Vec::with_capacity(order.len());
        let mut classes = Vec::with_capacity(order.len());
        for idx in batches(order, batch_size) {
            self.step += 1;
            let step = self.step;
            let x = x_train.select_rows(idx);
            let cache = self.forward_first(&x)?;
            if let (Some(head), Some(labels)) = (self.head.as_mut(), labels) {
                let h_last = tensor_from("last hidden", &self.ep.recv(Role::Server, step, MsgType::LastHiddenToA)?)?;
                let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let (z, logits) = head.forward(&h_last)?;
                let (loss, dlogits) = loss_and_grad(&logits, &y, self.kind)?;
                let grads = head.backward(&h_last, &z, &dlogits)?;
                self.ep
                    .send(Role::Server, step, MsgType::HeadGradDown, tensor_payload(&grads.input))?;
                self.head_opt.update_layer(head, &grads, idx.len());
                loss_sum += loss * idx.len() as f64;
                scores.extend(positive_scores(&head_probabilities(&logits, self.kind), self.kind));
                classes.extend(y);
            }
            let grad = tensor_from("input gradient", &self.ep.recv(Role::Server, step, MsgType::InputGradDown)?)?;
            if grad.shape() != (x.rows(), self.setup.plan.first_width) {
                return Err(ProtocolError::ShapeMismatch(format!("input gradient {:?}", grad.shape())));
            }
            self.update_first(&x, cache, &grad)?;
        }
        if labels.is_none() {
            return Ok(None);
        }
        Ok(Some(EpochMetrics {
            epoch,
            train_loss: loss_sum / order.len().max(1) as f64,
            train_auc: auc_from_classes(&scores, &classes).ok(),
            test_loss: None,
            test_auc: None,
        }))
    }

    /// Scores the test rows in order. Returns the head probabilities at
    /// client A.
    fn evaluate(&mut self, x_test: &Tensor) -> Result<Option<Tensor>> {
        let order: Vec<usize> = (0..x_test.rows()).collect();
        let batch_size = self.setup.config.optimizer.batch_size;
        let mut probs: Option<Tensor> = None;
        for idx in batches(&order, batch_size) {
            self.step += 1;
            let step = self.step;
            let x = x_test.select_rows(idx);
            self.forward_first(&x)?;
            if let Some(head) = &self.head {
                let h_last = tensor_from("last hidden", &self.ep.recv(Role::Server, step, MsgType::LastHiddenToA)?)?;
                let p = head_probabilities(&head.forward(&h_last)?.1, self.kind);
                probs = Some(match probs {
                    None => p,
                    Some(acc) => acc.vconcat(&p)?,
                });
            }
        }
        if self.head.is_some() && probs.is_none() {
            probs = Some(Tensor::zeros(0, self.setup.plan.head_outputs));
        }
        Ok(probs)
    }

    fn report(&mut self, m: &EpochMetrics) -> Result<()> {
        self.ep
            .send_control(Role::Coordinator, self.step, &Control::EpochReport(m.clone()))
    }
}

/// Reconstructs `[theta_A; theta_B]` from the two clients' final states.
pub(crate) fn combine_first_layer(
    a: &FirstLayerState,
    b: &FirstLayerState,
    codec: &FixedPointCodec,
) -> Result<Tensor> {
    match (a, b) {
        (FirstLayerState::Plain(ta), FirstLayerState::Plain(tb)) => Ok(ta.vconcat(tb)?),
        (FirstLayerState::Shared(sa), FirstLayerState::Shared(sb)) => {
            let sum = sa.theta_share().add(sb.theta_share())?;
            Ok(Tensor::from_vec(sum.rows(), sum.cols(), sum.decode(codec))?)
        }
        _ => Err(ProtocolError::InvalidConfig("clients ended in different modes".into())),
    }
}
