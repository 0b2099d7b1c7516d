use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::first_hidden::{decrypt_hidden, HeCiphertexts};
use super::message::{batches, matrices_from, tensor_from, tensor_payload, Control, Endpoint, SessionSetup};
use super::{ProtocolError, ProtocolMode, Result, SgldTarget};
use crate::fixedpoint::{FixedPointCodec, Ring};
use crate::neural::{Activation, AffineLayer, Mlp, Optimizer, Tensor};
use crate::paillier::{keygen, SecretKey};
use crate::transport::{MsgType, Role};

/// The server's parameters: the hidden stack plus the bias and activation
/// of the first layer.
#[derive(Clone, Debug)]
pub struct ServerInputs {
    pub first_bias: Tensor,
    pub first_activation: Activation,
    pub stack: Mlp,
}

#[derive(Clone, Debug)]
pub struct ServerOutcome {
    pub first_bias: Tensor,
    pub stack: Mlp,
    /// First-layer products received for the test rows in the last
    /// evaluation, before the bias, when recording was requested.
    pub hidden: Option<Tensor>,
    pub steps: u64,
}

enum Source {
    Shares(FixedPointCodec),
    Cipher(SecretKey, u32),
    Float,
}

pub(crate) fn run_server(ep: &mut Endpoint<'_>, inputs: ServerInputs) -> Result<ServerOutcome> {
    let setup: SessionSetup = match ep.recv_control(Role::Coordinator)? {
        Control::Config(s) => s,
        Control::Stop { reason } => return Err(ProtocolError::Stopped(reason)),
        other => return Err(ProtocolError::Malformed("control", format!("expected config, got {other:?}"))),
    };
    let cfg = &setup.config;
    let plan = &setup.plan;
    if inputs.first_bias.shape() != (1, plan.first_width) || inputs.stack.layers.len() + 1 != plan.server_dims.len() {
        return Err(ProtocolError::ShapeMismatch("server parameters do not match the plan".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(17);
    let source = match (cfg.float_path, cfg.protocol_mode) {
        (true, _) => Source::Float,
        (false, ProtocolMode::Ss) => Source::Shares(FixedPointCodec::new(Ring::new(cfg.ring_bits)?, cfg.frac_bits)?),
        (false, ProtocolMode::He) => {
            let keys = keygen(cfg.key_bits, &mut rng)?;
            let pk = keys.pk.to_bytes();
            ep.send(Role::ClientA, 0, MsgType::KeyDistribution, pk.clone())?;
            ep.send(Role::ClientB, 0, MsgType::KeyDistribution, pk)?;
            Source::Cipher(keys.sk, cfg.frac_bits)
        }
    };
    let noisy = cfg.langevin_on(SgldTarget::Server);
    let mut opt = Optimizer::new(cfg.optimizer.clone(), noisy, 1).with_dataset_rows(setup.train_rows);
    // the first layer's weights live at the clients; only its bias is here
    let mut first = AffineLayer {
        weights: Tensor::zeros(0, plan.first_width),
        bias: inputs.first_bias,
        activation: inputs.first_activation,
    };
    let mut stack = inputs.stack;
    let batch_size = cfg.optimizer.batch_size;
    let mut step = 0u64;
    let mut hidden = None;
    loop {
        match ep.recv_control(Role::Coordinator)? {
            Control::EpochStart { permutation, .. } => {
                for idx in batches(&permutation, batch_size) {
                    step += 1;
                    let h = receive_hidden(ep, &source, step, idx.len(), plan.first_width)?;
                    let z1 = h.add_row(&first.bias)?;
                    let h1 = first.activate(&z1);
                    let (h_last, cache) = stack.forward(&h1)?;
                    ep.send(Role::ClientA, step, MsgType::LastHiddenToA, tensor_payload(&h_last))?;
                    let g_last = tensor_from("head gradient", &ep.recv(Role::ClientA, step, MsgType::HeadGradDown)?)?;
                    if g_last.shape() != h_last.shape() {
                        return Err(ProtocolError::ShapeMismatch(format!("head gradient {:?}", g_last.shape())));
                    }
                    let (grads, g1) = stack.backward(&cache, &g_last)?;
                    let dz1 = first.pre_gradient(&z1, &g1)?;
                    let payload = tensor_payload(&dz1);
                    ep.send(Role::ClientA, step, MsgType::InputGradDown, payload.clone())?;
                    ep.send(Role::ClientB, step, MsgType::InputGradDown, payload)?;
                    for (layer, g) in stack.layers.iter_mut().zip(&grads) {
                        opt.update_layer(layer, g, idx.len());
                    }
                    opt.step(&mut first.bias, &dz1.sum_rows(), idx.len());
                }
            }
            Control::EvalStart { .. } => {
                let mut seen: Option<Tensor> = None;
                for idx in batches(&(0..setup.test_rows).collect::<Vec<_>>(), batch_size) {
                    step += 1;
                    let h = receive_hidden(ep, &source, step, idx.len(), plan.first_width)?;
                    let h1 = first.activate(&h.add_row(&first.bias)?);
                    let h_last = stack.output(&h1)?;
                    ep.send(Role::ClientA, step, MsgType::LastHiddenToA, tensor_payload(&h_last))?;
                    if cfg.record_hidden {
                        seen = Some(match seen {
                            None => h,
                            Some(acc) => acc.vconcat(&h)?,
                        });
                    }
                }
                if cfg.record_hidden {
                    hidden = Some(seen.unwrap_or_else(|| Tensor::zeros(0, plan.first_width)));
                }
            }
            Control::Stop { .. } => break,
            other => return Err(ProtocolError::Malformed("control", format!("unexpected {other:?}"))),
        }
    }
    Ok(ServerOutcome {
        first_bias: first.bias,
        stack,
        hidden,
        steps: step,
    })
}

/// The first-layer product `X theta` for one batch.
fn receive_hidden(ep: &mut Endpoint<'_>, source: &Source, step: u64, rows: usize, width: usize) -> Result<Tensor> {
    let h = match source {
        Source::Shares(codec) => {
            let ring = codec.ring();
            let a = matrices_from("hidden share", ring, &ep.recv(Role::ClientA, step, MsgType::HiddenLayerUp)?, 1)?;
            let b = matrices_from("hidden share", ring, &ep.recv(Role::ClientB, step, MsgType::HiddenLayerUp)?, 1)?;
            let sum = a[0].add(&b[0])?;
            Tensor::from_vec(sum.rows(), sum.cols(), sum.decode(codec))?
        }
        Source::Cipher(sk, frac_bits) => {
            let bytes = ep.recv(Role::ClientB, step, MsgType::HiddenLayerUp)?;
            let hc = HeCiphertexts::from_bytes(sk.public_key(), &bytes)?;
            if hc.addends != 2 {
                return Err(ProtocolError::Malformed("hidden ciphertext", format!("{} addends", hc.addends)));
            }
            decrypt_hidden(sk, &hc, *frac_bits)?
        }
        Source::Float => tensor_from("hidden", &ep.recv(Role::ClientB, step, MsgType::HiddenLayerUp)?)?,
    };
    if h.shape() != (rows, width) {
        return Err(ProtocolError::RowCountMismatch(format!("hidden layer {:?}, expected {rows}x{width}", h.shape())));
    }
    Ok(h)
}
