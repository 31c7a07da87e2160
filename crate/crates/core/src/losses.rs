//! Every training loss as a pure function returning a value and the exact
//! gradient with respect to its direct inputs.
//!
//! Contrastive terms differentiate through cosine similarity back to the
//! embedding rows; probability-space terms (mutual learning, distillation,
//! cross-entropy) return gradients the caller chains through softmax or
//! applies to logits directly.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::EmbeddingBatch;
use crate::numeric::{
    kl_divergence, l2_norm, softmax_with_temperature, temper_distribution, ProbVec, NORM_FLOOR,
    PROB_FLOOR,
};
use crate::{Error, Matrix, Result};

/// Scalar loss value plus the gradient with respect to its direct inputs.
#[derive(Debug, Clone)]
pub struct LossResult<G> {
    pub value: f64,
    pub grad: G,
}

/// The margin band (delta_plus, delta_minus) in normalized-distance space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginConfig {
    delta_plus: f64,
    delta_minus: f64,
}

impl MarginConfig {
    pub fn new(delta_plus: f64, delta_minus: f64) -> Result<Self> {
        if !(0.0 < delta_plus && delta_plus < delta_minus && delta_minus < 1.0) {
            return Err(Error::InvalidMargin(delta_plus, delta_minus));
        }
        Ok(Self {
            delta_plus,
            delta_minus,
        })
    }

    pub fn delta_plus(&self) -> f64 {
        self.delta_plus
    }

    pub fn delta_minus(&self) -> f64 {
        self.delta_minus
    }

    /// Strict interior of the margin band.
    pub fn contains(&self, d: f64) -> bool {
        self.delta_plus < d && d < self.delta_minus
    }
}

/// Pairwise cosine similarity matrix plus row norms. The diagonal is set to
/// exactly 1 and off-diagonal entries are mirrored.
fn cosine_matrix(rows: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let m = rows.rows();
    let mut norms = Vec::with_capacity(m);
    for i in 0..m {
        let n = l2_norm(rows.row(i));
        if n <= NORM_FLOOR {
            return Err(Error::ZeroNorm { index: i });
        }
        norms.push(n);
    }
    let mut s = Matrix::zeros(m, m);
    for i in 0..m {
        s.set(i, i, 1.0);
        for j in (i + 1)..m {
            let mut dot = 0.0;
            for (a, b) in rows.row(i).iter().zip(rows.row(j)) {
                dot += a * b;
            }
            let v = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    Ok((s, norms))
}

/// Chain per-ordered-pair similarity coefficients back to the rows:
/// out[a] += sum over b != a of (c[a][b] + c[b][a]) * d s(h_a, h_b) / d h_a,
/// realized by walking ordered pairs once. Diagonal coefficients are ignored
/// (s_ii is constant).
fn accumulate_cosine_chain(
    rows: &Matrix,
    norms: &[f64],
    s: &Matrix,
    coeffs: &Matrix,
    out: &mut Matrix,
) {
    let m = rows.rows();
    let d = rows.cols();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let c = coeffs.get(i, j);
            if c == 0.0 {
                continue;
            }
            let sij = s.get(i, j);
            let inv_ij = 1.0 / (norms[i] * norms[j]);
            let inv_ii = 1.0 / (norms[i] * norms[i]);
            let inv_jj = 1.0 / (norms[j] * norms[j]);
            for k in 0..d {
                let hi = rows.get(i, k);
                let hj = rows.get(j, k);
                out.set(i, k, out.get(i, k) + c * (hj * inv_ij - sij * hi * inv_ii));
                out.set(j, k, out.get(j, k) + c * (hi * inv_ij - sij * hj * inv_jj));
            }
        }
    }
}

/// Log-sum-exp over the non-diagonal entries of row `i` of `s` scaled by
/// `1/tau`, with the softmax weights written into `sigma` (diagonal weight 0).
fn row_lse_sigma(s: &Matrix, i: usize, tau: f64, sigma: &mut [f64]) -> f64 {
    let m = s.cols();
    let mut max = f64::NEG_INFINITY;
    for j in 0..m {
        if j != i {
            max = max.max(s.get(i, j) / tau);
        }
    }
    let mut sum = 0.0;
    for j in 0..m {
        sigma[j] = if j == i {
            0.0
        } else {
            let e = libm::exp(s.get(i, j) / tau - max);
            sum += e;
            e
        };
    }
    for v in sigma.iter_mut() {
        *v /= sum;
    }
    max + libm::log(sum)
}

/// Self-supervised contrastive loss over a paired batch: each of the 2N rows
/// anchors one term whose positive is its pair partner and whose denominator
/// runs over every other row in the batch (positive included). Returns the
/// gradient with respect to all 2N rows.
pub fn self_supervised_contrastive(
    batch: &EmbeddingBatch,
    tau_sc: f64,
) -> Result<LossResult<Matrix>> {
    if batch.num_pairs() < 2 {
        return Err(Error::BatchTooSmall {
            got: batch.num_pairs(),
            need: 2,
        });
    }
    self_supervised_contrastive_unchecked(batch, tau_sc)
}

/// [`self_supervised_contrastive`] without the N >= 2 guard, for exercising
/// the degenerate single-pair case (whose loss is identically 0 because the
/// denominator equals the numerator).
#[doc(hidden)]
pub fn self_supervised_contrastive_unchecked(
    batch: &EmbeddingBatch,
    tau_sc: f64,
) -> Result<LossResult<Matrix>> {
    if tau_sc <= 0.0 {
        return Err(Error::NonPositiveTemperature(tau_sc));
    }
    let rows = batch.rows();
    let m = rows.rows();
    let (s, norms) = cosine_matrix(rows)?;
    let mut value = 0.0;
    let mut coeffs = Matrix::zeros(m, m);
    let mut sigma = vec![0.0; m];
    let inv_m = 1.0 / m as f64;
    for i in 0..m {
        let pos = batch.pair(i);
        let lse = row_lse_sigma(&s, i, tau_sc, &mut sigma);
        value += inv_m * (lse - s.get(i, pos) / tau_sc);
        for j in 0..m {
            if j == i {
                continue;
            }
            let indicator = if j == pos { 1.0 } else { 0.0 };
            coeffs.set(i, j, inv_m / tau_sc * (sigma[j] - indicator));
        }
    }
    let mut grad = Matrix::zeros(m, rows.cols());
    accumulate_cosine_chain(rows, &norms, &s, &coeffs, &mut grad);
    Ok(LossResult { value, grad })
}

/// Penalty and derivative for one normalized-distance entry:
/// |min((d - delta_plus)(d - delta_minus), 0)|. Nonzero only strictly inside
/// the margin band; the subgradient at the two kinks is 0.
pub fn polarization_penalty(d: f64, margin: &MarginConfig) -> (f64, f64) {
    if margin.contains(d) {
        let a = d - margin.delta_plus;
        let b = d - margin.delta_minus;
        (-(a * b), margin.delta_plus + margin.delta_minus - 2.0 * d)
    } else {
        (0.0, 0.0)
    }
}

/// Distance polarization regularizer summed over every matrix entry
/// (diagonal included; it contributes 0 since D_ii = 1 lies past the band).
/// The gradient is per ordered entry of D; callers chaining to embeddings
/// use [`polarization_row_grads`].
pub fn distance_polarization(
    d: &crate::numeric::DistanceMatrix,
    margin: &MarginConfig,
) -> LossResult<Matrix> {
    let m = d.size();
    let mut value = 0.0;
    let mut grad = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let (v, g) = polarization_penalty(d.get(i, j), margin);
            value += v;
            grad.set(i, j, g);
        }
    }
    LossResult { value, grad }
}

/// Distance polarization evaluated on the pairwise distances of `rows`,
/// with the gradient chained through D = (1 + s)/2 back to the rows.
pub fn polarization_row_grads(rows: &Matrix, margin: &MarginConfig) -> Result<LossResult<Matrix>> {
    let m = rows.rows();
    let (s, norms) = cosine_matrix(rows)?;
    let mut value = 0.0;
    let mut coeffs = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let dij = (1.0 + s.get(i, j)) / 2.0;
            let (v, g) = polarization_penalty(dij, margin);
            value += v;
            if i != j {
                // dD/ds = 1/2 per ordered entry.
                coeffs.set(i, j, g * 0.5);
            }
        }
    }
    let mut grad = Matrix::zeros(m, rows.cols());
    accumulate_cosine_chain(rows, &norms, &s, &coeffs, &mut grad);
    Ok(LossResult { value, grad })
}

/// Supervised contrastive loss over one side's rows. Every ordered
/// same-label pair (i, j), i != j, contributes one term with anchor i; the
/// normalization is 1/N regardless of how many positives each anchor has,
/// and anchors without positives contribute nothing.
pub fn supervised_contrastive(
    rows: &Matrix,
    labels: &[usize],
    tau_c: f64,
) -> Result<LossResult<Matrix>> {
    let n = rows.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall { got: n, need: 2 });
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    if tau_c <= 0.0 {
        return Err(Error::NonPositiveTemperature(tau_c));
    }
    let (s, norms) = cosine_matrix(rows)?;
    let mut value = 0.0;
    let mut coeffs = Matrix::zeros(n, n);
    let mut sigma = vec![0.0; n];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let n_pos = (0..n).filter(|&j| j != i && labels[j] == labels[i]).count();
        if n_pos == 0 {
            continue;
        }
        let lse = row_lse_sigma(&s, i, tau_c, &mut sigma);
        for j in 0..n {
            if j == i {
                continue;
            }
            let positive = labels[j] == labels[i];
            if positive {
                value += inv_n * (lse - s.get(i, j) / tau_c);
            }
            let indicator = if positive { 1.0 } else { 0.0 };
            coeffs.set(
                i,
                j,
                inv_n / tau_c * (n_pos as f64 * sigma[j] - indicator),
            );
        }
    }
    let mut grad = Matrix::zeros(n, rows.cols());
    accumulate_cosine_chain(rows, &norms, &s, &coeffs, &mut grad);
    Ok(LossResult { value, grad })
}

/// Gradients of the mutual-learning loss with respect to both probability
/// lists, one vector per example per side.
#[derive(Debug, Clone)]
pub struct MutualGrads {
    pub clean: Vec<Vec<f64>>,
    pub noisy: Vec<Vec<f64>>,
}

/// Jensen-Shannon mimicry loss summed over aligned pairs (a sum, not a
/// mean). Gradients are with respect to the probabilities themselves;
/// chain them through softmax to reach each model's logits.
pub fn mutual_learning(
    probs_clean: &[ProbVec],
    probs_noisy: &[ProbVec],
) -> Result<LossResult<MutualGrads>> {
    if probs_clean.len() != probs_noisy.len() {
        return Err(Error::DimensionMismatch(
            probs_clean.len(),
            probs_noisy.len(),
        ));
    }
    if probs_clean.is_empty() {
        return Err(Error::BatchTooSmall { got: 0, need: 1 });
    }
    let mut value = 0.0;
    let mut grads_p = Vec::with_capacity(probs_clean.len());
    let mut grads_q = Vec::with_capacity(probs_noisy.len());
    for (p, q) in probs_clean.iter().zip(probs_noisy) {
        if p.len() != q.len() {
            return Err(Error::DimensionMismatch(p.len(), q.len()));
        }
        value += crate::numeric::js_divergence(p, q)?;
        let mut gp = Vec::with_capacity(p.len());
        let mut gq = Vec::with_capacity(q.len());
        for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
            let mi = ((pi + qi) / 2.0).max(PROB_FLOOR);
            gp.push(0.5 * libm::log(pi.max(PROB_FLOOR) / mi));
            gq.push(0.5 * libm::log(qi.max(PROB_FLOOR) / mi));
        }
        grads_p.push(gp);
        grads_q.push(gq);
    }
    Ok(LossResult {
        value,
        grad: MutualGrads {
            clean: grads_p,
            noisy: grads_q,
        },
    })
}

/// Temperature-scaled self-distillation against cached previous-epoch
/// predictions: mean over rows of tau_d^2 * KL(prev_tempered || current
/// tempered softmax). One-hot cache entries (the epoch-0 seed) are used
/// as-is; everything else is re-tempered. The gradient is with respect to
/// the current logits; the cache is a constant.
pub fn self_distillation(
    prev: &[ProbVec],
    current_logits: &Matrix,
    tau_d: f64,
) -> Result<LossResult<Matrix>> {
    if tau_d <= 0.0 {
        return Err(Error::NonPositiveTemperature(tau_d));
    }
    let n = current_logits.rows();
    if prev.len() != n {
        return Err(Error::DimensionMismatch(prev.len(), n));
    }
    if n == 0 {
        return Err(Error::BatchTooSmall { got: 0, need: 1 });
    }
    let c = current_logits.cols();
    let mut value = 0.0;
    let mut grad = Matrix::zeros(n, c);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let target = prev[i].clone();
        if target.len() != c {
            return Err(Error::DimensionMismatch(target.len(), c));
        }
        let a = if target.is_one_hot() {
            target
        } else {
            temper_distribution(&target, tau_d)?
        };
        let b = softmax_with_temperature(current_logits.row(i), tau_d)?;
        value += inv_n * tau_d * tau_d * kl_divergence(&a, &b)?;
        for (k, (bk, ak)) in b.as_slice().iter().zip(a.as_slice()).enumerate() {
            grad.set(i, k, inv_n * tau_d * (bk - ak));
        }
    }
    Ok(LossResult { value, grad })
}

/// Cross-entropy over logit rows with integer labels. Sum reduction by
/// default, matching the training objective; `mean` divides value and
/// gradient by the row count. Gradient per row is softmax(z) - onehot(y).
pub fn cross_entropy(logits: &Matrix, labels: &[usize], mean: bool) -> Result<LossResult<Matrix>> {
    let n = logits.rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    let c = logits.cols();
    let mut value = 0.0;
    let mut grad = Matrix::zeros(n, c);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: c,
            });
        }
        let row = logits.row(i);
        let mut max = f64::NEG_INFINITY;
        for &z in row {
            max = max.max(z);
        }
        let mut sum = 0.0;
        for &z in row {
            sum += libm::exp(z - max);
        }
        let lse = max + libm::log(sum);
        value += lse - row[y];
        for (k, &z) in row.iter().enumerate() {
            let p = libm::exp(z - max) / sum;
            grad.set(i, k, p - if k == y { 1.0 } else { 0.0 });
        }
    }
    if mean {
        let inv = 1.0 / n as f64;
        value *= inv;
        grad.scale(inv);
    }
    Ok(LossResult { value, grad })
}

/// Masked-token prediction loss: mean cross-entropy over the masked slots.
pub fn mlm_loss(logits: &Matrix, target_ids: &[usize]) -> Result<LossResult<Matrix>> {
    if target_ids.is_empty() || logits.rows() == 0 {
        return Err(Error::EmptyTargets);
    }
    cross_entropy(logits, target_ids, true)
}

/// Pre-training composite: the contrastive pair (gradients over the same
/// 2N rows) weighted against the MLM term.
#[derive(Debug, Clone)]
pub struct PretrainGrads {
    /// d L_pt / d(representation rows), 2N x d_out.
    pub rows: Matrix,
    /// d L_pt / d(mlm logits), one row per mask target.
    pub mlm: Matrix,
}

/// L_pt = lambda_pt * (L_sc + lambda_reg * L_reg) + (1 - lambda_pt) * L_mlm,
/// with gradients combined by the same coefficients. `sc` and `reg` must
/// carry gradients over the same rows.
pub fn compose_pretrain(
    sc: &LossResult<Matrix>,
    reg: &LossResult<Matrix>,
    mlm: &LossResult<Matrix>,
    lambda_reg: f64,
    lambda_pt: f64,
) -> Result<LossResult<PretrainGrads>> {
    if sc.grad.rows() != reg.grad.rows() || sc.grad.cols() != reg.grad.cols() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "contrastive gradient {}x{} vs regularizer gradient {}x{}",
            sc.grad.rows(),
            sc.grad.cols(),
            reg.grad.rows(),
            reg.grad.cols()
        )));
    }
    let value = lambda_pt * (sc.value + lambda_reg * reg.value) + (1.0 - lambda_pt) * mlm.value;
    let mut rows = Matrix::zeros(sc.grad.rows(), sc.grad.cols());
    rows.axpy(lambda_pt, &sc.grad);
    rows.axpy(lambda_pt * lambda_reg, &reg.grad);
    let mut mlm_grad = Matrix::zeros(mlm.grad.rows(), mlm.grad.cols());
    mlm_grad.axpy(1.0 - lambda_pt, &mlm.grad);
    Ok(LossResult {
        value,
        grad: PretrainGrads {
            rows,
            mlm: mlm_grad,
        },
    })
}

/// Gradients of one fine-tuning term over the four input spaces it can
/// touch: each model's class logits and each model's representation rows.
/// Spaces a term does not touch hold zeros.
#[derive(Debug, Clone)]
pub struct TwoSidedGrads {
    pub logits_clean: Matrix,
    pub logits_noisy: Matrix,
    pub rows_clean: Matrix,
    pub rows_noisy: Matrix,
}

impl TwoSidedGrads {
    pub fn zeros(n: usize, num_classes: usize, d_out: usize) -> Self {
        Self {
            logits_clean: Matrix::zeros(n, num_classes),
            logits_noisy: Matrix::zeros(n, num_classes),
            rows_clean: Matrix::zeros(n, d_out),
            rows_noisy: Matrix::zeros(n, d_out),
        }
    }

    fn axpy(&mut self, a: f64, other: &Self) {
        self.logits_clean.axpy(a, &other.logits_clean);
        self.logits_noisy.axpy(a, &other.logits_noisy);
        self.rows_clean.axpy(a, &other.rows_clean);
        self.rows_noisy.axpy(a, &other.rows_noisy);
    }
}

/// Fine-tuning composite L_ft = L_ce + alpha * L_mut + beta * L_creg +
/// gamma * L_d, values and gradients combined with the same coefficients.
pub fn compose_finetune(
    ce: &LossResult<TwoSidedGrads>,
    mutual: &LossResult<TwoSidedGrads>,
    creg: &LossResult<TwoSidedGrads>,
    distill: &LossResult<TwoSidedGrads>,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> LossResult<TwoSidedGrads> {
    let value = ce.value + alpha * mutual.value + beta * creg.value + gamma * distill.value;
    let mut grad = TwoSidedGrads::zeros(
        ce.grad.logits_clean.rows(),
        ce.grad.logits_clean.cols(),
        ce.grad.rows_clean.cols(),
    );
    grad.axpy(1.0, &ce.grad);
    grad.axpy(alpha, &mutual.grad);
    grad.axpy(beta, &creg.grad);
    grad.axpy(gamma, &distill.grad);
    LossResult { value, grad }
}
