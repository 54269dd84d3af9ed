//! Softmax cross-entropy loss: L = (1/N) Σ_i -log softmax(f_i)[y_i].

use crate::error::{Error, Result};
use crate::tensor::{tape, Element, Tensor};

/// Everything the loss evaluation produced, alongside the scalar loss
/// tensor that participates in the gradient tape.
#[derive(Debug)]
pub struct LossReport<E: Element> {
    /// Mean loss over the batch, differentiable w.r.t. the logits.
    pub loss: Tensor<E>,
    /// Per-sample losses L_i (each >= 0).
    pub per_sample: Vec<E>,
    /// Row-major N x K softmax probabilities (rows sum to 1).
    pub probs: Vec<E>,
    pub batch: usize,
    pub class_count: usize,
    pub logits: Tensor<E>,
    pub labels: Vec<usize>,
}

/// Row-wise softmax of an N x K logit matrix, numerically stabilized by
/// max subtraction. Pure function of its input; never recorded on a tape.
pub fn softmax_rows<E: Element>(logits: &[E], class_count: usize) -> Vec<E> {
    debug_assert_eq!(logits.len() % class_count, 0);
    let mut out = vec![E::ZERO; logits.len()];
    for (row, orow) in logits
        .chunks_exact(class_count)
        .zip(out.chunks_exact_mut(class_count))
    {
        let mut m = row[0];
        for &v in row {
            m = m.maximum(v);
        }
        let mut denom = E::ZERO;
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - m).exp();
            *o = e;
            denom += e;
        }
        for o in orow.iter_mut() {
            *o = *o / denom;
        }
    }
    out
}

/// Softmax cross-entropy over a batch of logits (N x K) and integer labels.
/// The gradient w.r.t. the logits is (softmax - onehot) / N.
pub fn softmax_cross_entropy<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
) -> Result<LossReport<E>> {
    let ls = logits.shape();
    if ls.len() != 2 {
        return Err(Error::InvalidShape(format!(
            "logits must be N x K, got {ls:?}"
        )));
    }
    let (n, k) = (ls[0], ls[1]);
    if n == 0 || labels.len() != n {
        return Err(Error::Contract(format!(
            "expected {n} labels, got {}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for {k} classes"
        )));
    }

    let probs = softmax_rows(logits.data(), k);
    let mut per_sample = Vec::with_capacity(n);
    let mut total = E::ZERO;
    for (i, (&y, row)) in labels.iter().zip(logits.data().chunks_exact(k)).enumerate() {
        // L_i = logsumexp(f) - f_y, evaluated with max subtraction.
        let mut m = row[0];
        for &v in row {
            m = m.maximum(v);
        }
        let mut denom = E::ZERO;
        for &v in row {
            denom += (v - m).exp();
        }
        let li = denom.ln() + m - row[y];
        // exp/ln keep this >= 0 mathematically; clamp tiny negative rounding.
        let li = li.maximum(E::ZERO);
        if !li.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss for sample {i}")));
        }
        per_sample.push(li);
        total += li;
    }
    let mean = total / E::from_f64(n as f64);
    let loss = Tensor::scalar(mean);

    if tape::should_record(&[logits]) {
        let lg = logits.clone();
        let probs_cl = probs.clone();
        let labels_cl = labels.to_vec();
        tape::record(&loss, move |g| {
            let scale = g[0] / E::from_f64(n as f64);
            let mut dl = vec![E::ZERO; n * k];
            for i in 0..n {
                for j in 0..k {
                    let onehot = if labels_cl[i] == j { E::ONE } else { E::ZERO };
                    dl[i * k + j] = (probs_cl[i * k + j] - onehot) * scale;
                }
            }
            lg.accumulate_grad(&dl);
        });
    }

    Ok(LossReport {
        loss,
        per_sample,
        probs,
        batch: n,
        class_count: k,
        logits: logits.clone(),
        labels: labels.to_vec(),
    })
}
