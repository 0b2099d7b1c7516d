use super::NeuralError;

/// Rank-based ROC AUC (Mann-Whitney U) with tied scores sharing the
/// average rank.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, NeuralError> {
    if scores.len() != labels.len() {
        return Err(NeuralError::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(NeuralError::Malformed("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(NeuralError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC for `0/1` class indices.
pub fn auc_from_classes(scores: &[f64], classes: &[usize]) -> Result<f64, NeuralError> {
    let labels: Vec<bool> = classes.iter().map(|&c| c == 1).collect();
    auc(scores, &labels)
}
