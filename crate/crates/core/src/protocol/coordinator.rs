use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::message::{batches, Control, Endpoint, EpochMetrics, SessionSetup};
use super::{ProtocolError, ProtocolMode, Result};
use crate::fixedpoint::Ring;
use crate::secretshare::{encode_matrices, BeaverTriple, TripleShape, TrustedDealer};
use crate::transport::{MsgType, Role};

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinatorOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub epochs_run: usize,
    pub early_stopped: bool,
    /// Matrix triples handed to each client.
    pub triples_dealt: u64,
    pub steps: u64,
}

/// The per-epoch batch orders a session with `seed` uses over `rows`
/// training rows.
#[derive(Clone, Debug)]
pub struct EpochOrders {
    rng: ChaCha8Rng,
    rows: usize,
}

impl EpochOrders {
    pub fn new(seed: u64, rows: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(19);
        EpochOrders { rng, rows }
    }
}

impl Iterator for EpochOrders {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.rows).collect();
        order.shuffle(&mut self.rng);
        Some(order)
    }
}

const WORKERS: [Role; 3] = [Role::Server, Role::ClientA, Role::ClientB];

fn deal_payload(ring: Ring, t: &[BeaverTriple; 2]) -> Vec<u8> {
    encode_matrices(ring, &[t[0].u(), t[0].v(), t[0].w(), t[1].u(), t[1].v(), t[1].w()])
}

pub(crate) fn run_coordinator(ep: &mut Endpoint<'_>, setup: SessionSetup) -> Result<CoordinatorOutcome> {
    let cfg = setup.config.clone();
    cfg.validate()?;
    for r in WORKERS {
        ep.send_control(r, 0, &Control::Config(setup.clone()))?;
    }
    let ring = Ring::new(cfg.ring_bits)?;
    let secret_shared = cfg.protocol_mode == ProtocolMode::Ss && !cfg.float_path;
    let mut dealer_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dealer_rng.set_stream(18);
    let mut dealer = TrustedDealer::new(ring, dealer_rng);
    let mut orders = EpochOrders::new(cfg.seed, setup.train_rows);

    let (d, m) = (setup.plan.input_width(), setup.plan.first_width);
    let batch_size = cfg.optimizer.batch_size;
    let mut step = 0u64;
    let mut triples = 0u64;
    let mut metrics = Vec::new();
    let mut early_stopped = false;

    let mut deal = |ep: &mut Endpoint<'_>, step: u64, rows: usize, triples: &mut u64| -> Result<()> {
        let shape = TripleShape::Matrix { n: rows, d, m };
        let (a0, b0) = dealer.triple(shape);
        let (a1, b1) = dealer.triple(shape);
        ep.send(Role::ClientA, step, MsgType::TripleDeal, deal_payload(ring, &[a0, a1]))?;
        ep.send(Role::ClientB, step, MsgType::TripleDeal, deal_payload(ring, &[b0, b1]))?;
        *triples += 2;
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let order = orders.next().expect("endless");
        ep.mark(&format!("epoch_start:{epoch}"));
        let msg = Control::EpochStart {
            epoch,
            permutation: order.clone(),
        };
        for r in WORKERS {
            ep.send_control(r, step, &msg)?;
        }
        for idx in batches(&order, batch_size) {
            step += 1;
            if secret_shared {
                deal(ep, step, idx.len(), &mut triples)?;
            }
        }
        if cfg.evaluate {
            for r in WORKERS {
                ep.send_control(r, step, &Control::EvalStart { epoch })?;
            }
            let test: Vec<usize> = (0..setup.test_rows).collect();
            for idx in batches(&test, batch_size) {
                step += 1;
                if secret_shared {
                    deal(ep, step, idx.len(), &mut triples)?;
                }
            }
        }
        let report = match ep.recv_control(Role::ClientA)? {
            Control::EpochReport(m) => m,
            Control::Stop { reason } => return Err(ProtocolError::Stopped(reason)),
            other => return Err(ProtocolError::Malformed("control", format!("expected report, got {other:?}"))),
        };
        let loss = report.train_loss;
        metrics.push(report);
        if cfg.early_stop_loss.is_some_and(|t| loss < t) {
            early_stopped = true;
            break;
        }
    }
    let reason = if early_stopped { "early stop" } else { "completed" };
    for r in WORKERS {
        ep.send_control(r, step, &Control::Stop { reason: reason.into() })?;
    }
    Ok(CoordinatorOutcome {
        epochs_run: metrics.len(),
        metrics,
        early_stopped,
        triples_dealt: triples,
        steps: step,
    })
}
