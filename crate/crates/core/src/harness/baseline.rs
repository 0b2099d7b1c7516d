use super::Result;
use crate::neural::{
    auc_from_classes, cross_entropy, head_probabilities, loss_and_grad, positive_scores, HeadKind, Optimizer, Tensor,
};
use crate::protocol::{EpochMetrics, EpochOrders, ModelPartition, SessionData, SgldTarget, TrainConfig};

/// A plaintext model trained on the same batches as a session.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOutcome {
    pub model: ModelPartition,
    pub metrics: Vec<EpochMetrics>,
    /// Positive-class scores on the test rows after the last epoch.
    pub test_scores: Vec<f64>,
}

/// Trains the whole network in one place, step for step the way a session
/// with the same config does: same batch orders, same operation order and
/// the same optimizer noise streams per parameter block.
pub fn train_plaintext(cfg: &TrainConfig, data: &SessionData, init: &ModelPartition) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let mut model = init.clone();
    let kind = HeadKind::for_outputs(model.theta_y.outputs());
    let n = data.y_train.len();
    let opt = |target: SgldTarget, stream: u64| {
        Optimizer::new(cfg.optimizer.clone(), cfg.langevin_on(target), stream).with_dataset_rows(n)
    };
    let mut server_opt = opt(SgldTarget::Server, 1);
    let mut head_opt = opt(SgldTarget::Head, 2);
    let mut a_opt = opt(SgldTarget::Clients, 3);
    let mut b_opt = opt(SgldTarget::Clients, 4);
    let batch_size = cfg.optimizer.batch_size;
    let mut metrics = Vec::new();
    let mut test_scores = Vec::new();

    for (epoch, order) in EpochOrders::new(cfg.seed, data.a_train.rows()).take(cfg.epochs).enumerate() {
        let mut loss_sum = 0.0;
        let mut scores = Vec::with_capacity(order.len());
        let mut classes = Vec::with_capacity(order.len());
        for idx in order.chunks(batch_size) {
            let xa = data.a_train.select_rows(idx);
            let xb = data.b_train.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.y_train[i]).collect();
            let mut h = xa.matmul(&model.theta_a)?;
            h.matmul_acc(&xb, &model.theta_b)?;
            let z1 = h.add_row(&model.first_bias)?;
            let h1 = z1.map(|v| model.first_activation.apply(v));
            let (h_last, cache) = model.theta_s.forward(&h1)?;
            let (z, logits) = model.theta_y.forward(&h_last)?;
            let (loss, dlogits) = loss_and_grad(&logits, &y, kind)?;
            let head_grads = model.theta_y.backward(&h_last, &z, &dlogits)?;
            head_opt.update_layer(&mut model.theta_y, &head_grads, idx.len());
            loss_sum += loss * idx.len() as f64;
            scores.extend(positive_scores(&head_probabilities(&logits, kind), kind));
            classes.extend(y);

            let (grads, g1) = model.theta_s.backward(&cache, &head_grads.input)?;
            let act = model.first_activation;
            let dz1 = z1.zip_map(&g1, |z, g| g * act.derivative(z))?;
            for (layer, g) in model.theta_s.layers.iter_mut().zip(&grads) {
                server_opt.update_layer(layer, g, idx.len());
            }
            server_opt.step(&mut model.first_bias, &dz1.sum_rows(), idx.len());
            a_opt.step(&mut model.theta_a, &xa.tr_matmul(&dz1)?, idx.len());
            b_opt.step(&mut model.theta_b, &xb.tr_matmul(&dz1)?, idx.len());
        }
        let mut m = EpochMetrics {
            epoch,
            train_loss: loss_sum / order.len().max(1) as f64,
            train_auc: auc_from_classes(&scores, &classes).ok(),
            test_loss: None,
            test_auc: None,
        };
        if cfg.evaluate && !data.y_test.is_empty() {
            let probs = predict(&model, &data.a_test, &data.b_test, batch_size, kind)?;
            let s = positive_scores(&probs, kind);
            m.test_loss = Some(cross_entropy(&probs, &data.y_test, kind)?);
            m.test_auc = auc_from_classes(&s, &data.y_test).ok();
            test_scores = s;
        }
        let loss = m.train_loss;
        metrics.push(m);
        if cfg.early_stop_loss.is_some_and(|t| loss < t) {
            break;
        }
    }
    Ok(BaselineOutcome {
        model,
        metrics,
        test_scores,
    })
}

/// Head probabilities for row-aligned client blocks.
pub(crate) fn predict(model: &ModelPartition, xa: &Tensor, xb: &Tensor, batch_size: usize, kind: HeadKind) -> Result<Tensor> {
    let mut out: Option<Tensor> = None;
    let rows: Vec<usize> = (0..xa.rows()).collect();
    for idx in rows.chunks(batch_size.max(1)) {
        let mut h = xa.select_rows(idx).matmul(&model.theta_a)?;
        h.matmul_acc(&xb.select_rows(idx), &model.theta_b)?;
        let h1 = h.add_row(&model.first_bias)?.map(|v| model.first_activation.apply(v));
        let logits = model.theta_y.forward(&model.theta_s.output(&h1)?)?.1;
        let p = head_probabilities(&logits, kind);
        out = Some(match out {
            None => p,
            Some(acc) => acc.vconcat(&p)?,
        });
    }
    Ok(out.unwrap_or_else(|| Tensor::zeros(0, model.theta_y.outputs())))
}
