//! Two-stage training: contrastive + masked-token pre-training of one
//! encoder, then mutual fine-tuning of two clones — one on clean text, one
//! on noisy text — with supervised contrastive terms and annealed
//! self-distillation against cached previous-epoch predictions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{make_batches, mask_rows, tokenize, Batch, Corpus, TokenRows, Vocab};
use crate::encoder::{
    backward, classify, encode, mlm_logits, EmbeddingBatch, ModelParams, Side, Upstream,
};
use crate::losses::{
    compose_finetune, compose_pretrain, cross_entropy, mlm_loss, mutual_learning,
    polarization_row_grads, self_distillation, self_supervised_contrastive,
    supervised_contrastive, LossResult, MarginConfig, TwoSidedGrads,
};
use crate::metrics::{
    cluster_distances, evaluate_accuracy, margin_occupancy, per_class_accuracy,
    projection_rows, MetricsReport, ProjectionRow,
};
use crate::numeric::{
    pairwise_distance_matrix, softmax_backward, softmax_with_temperature, ProbVec,
};
use crate::optim::{
    adam_step, annealing_coefficient, warmup_lr, AdamConfig, AnnealConfig, OptimState,
};
use crate::seed::{stream, stream_seed};
use crate::{Error, Matrix, Result};

/// Rows encoded per forward pass during full-corpus prediction.
const PREDICT_CHUNK: usize = 64;

/// Every hyperparameter of both stages. Field names double as the config
/// file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    // Model shape.
    pub d: usize,
    pub d_out: usize,
    pub max_len: usize,
    // Pre-training.
    pub mask_ratio: f64,
    pub tau_sc: f64,
    pub lambda_reg: f64,
    pub lambda_pt: f64,
    pub pretrain_steps: u64,
    pub pretrain_batch_pairs: usize,
    // Margin band shared by both stages.
    pub delta_plus: f64,
    pub delta_minus: f64,
    // Fine-tuning.
    pub tau_c: f64,
    pub lambda_reg_p: f64,
    pub lambda_reg_q: f64,
    pub tau_d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub distill: bool,
    pub anneal: bool,
    pub anneal_r: f64,
    pub anneal_g: u64,
    pub finetune_epochs: u64,
    pub finetune_batch_pairs: usize,
    pub use_manual_transcripts: bool,
    pub ce_mean: bool,
    // Optimizer and schedule.
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 32,
            d_out: 16,
            max_len: 16,
            mask_ratio: 0.15,
            tau_sc: 0.2,
            lambda_reg: 0.1,
            lambda_pt: 0.5,
            pretrain_steps: 200,
            pretrain_batch_pairs: 8,
            delta_plus: 0.2,
            delta_minus: 0.5,
            tau_c: 0.2,
            lambda_reg_p: 0.15,
            lambda_reg_q: 0.15,
            tau_d: 5.0,
            alpha: 1.0,
            beta: 0.1,
            distill: true,
            anneal: true,
            anneal_r: 0.5,
            anneal_g: 5000,
            finetune_epochs: 3,
            finetune_batch_pairs: 32,
            use_manual_transcripts: true,
            ce_mean: false,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            warmup_steps: 4000,
            peak_lr: 1e-3,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.margin()?;
        for tau in [self.tau_sc, self.tau_c, self.tau_d] {
            if tau <= 0.0 || !tau.is_finite() {
                return Err(Error::NonPositiveTemperature(tau));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::InvalidConfig(format!(
                "mask_ratio must be in [0, 1], got {}",
                self.mask_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_pt) {
            return Err(Error::InvalidConfig(format!(
                "lambda_pt must be in [0, 1], got {}",
                self.lambda_pt
            )));
        }
        for (name, v) in [
            ("lambda_reg", self.lambda_reg),
            ("lambda_reg_p", self.lambda_reg_p),
            ("lambda_reg_q", self.lambda_reg_q),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        AnnealConfig::new(self.anneal_r, self.anneal_g)?;
        self.adam()?;
        if self.peak_lr <= 0.0 || !self.peak_lr.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "peak_lr must be positive, got {}",
                self.peak_lr
            )));
        }
        if self.warmup_steps < 1 {
            return Err(Error::InvalidConfig("warmup_steps must be >= 1".into()));
        }
        if self.pretrain_steps < 1 {
            return Err(Error::InvalidConfig("pretrain_steps must be >= 1".into()));
        }
        if self.finetune_epochs < 1 {
            return Err(Error::InvalidConfig("finetune_epochs must be >= 1".into()));
        }
        for (name, pairs) in [
            ("pretrain_batch_pairs", self.pretrain_batch_pairs),
            ("finetune_batch_pairs", self.finetune_batch_pairs),
        ] {
            if pairs < 2 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be >= 2, got {pairs}"
                )));
            }
        }
        if self.d < 1 {
            return Err(Error::InvalidConfig("d must be >= 1".into()));
        }
        if self.d_out < 2 {
            return Err(Error::InvalidConfig(
                "d_out must be >= 2 (2-d projection export)".into(),
            ));
        }
        if self.max_len < 2 {
            return Err(Error::InvalidConfig("max_len must be >= 2".into()));
        }
        Ok(())
    }

    pub fn margin(&self) -> Result<MarginConfig> {
        MarginConfig::new(self.delta_plus, self.delta_minus)
    }

    fn adam(&self) -> Result<AdamConfig> {
        let mut adam = AdamConfig::new(self.adam_beta1, self.adam_beta2)?;
        if self.adam_eps <= 0.0 || !self.adam_eps.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        adam.eps = self.adam_eps;
        Ok(adam)
    }
}

/// Previous-epoch class distributions keyed by example id, one per model.
/// Seeded with exact one-hot label vectors before the first epoch; after
/// each epoch it holds that epoch's full-pass softmax outputs. Gradients
/// never flow through these values.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCache {
    entries: BTreeMap<u64, ProbVec>,
}

impl PredictionCache {
    pub fn from_labels(corpus: &Corpus) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for ex in corpus.examples() {
            entries.insert(ex.id, ProbVec::one_hot(ex.label, corpus.num_classes())?);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, example_id: u64) -> Option<&ProbVec> {
        self.entries.get(&example_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replace the whole cache with a fresh full-pass prediction set.
    pub fn replace(&mut self, example_ids: &[u64], probs: Vec<ProbVec>) -> Result<()> {
        if example_ids.len() != probs.len() {
            return Err(Error::LengthMismatch(example_ids.len(), probs.len()));
        }
        let mut entries = BTreeMap::new();
        for (&id, p) in example_ids.iter().zip(probs) {
            entries.insert(id, p);
        }
        self.entries = entries;
        Ok(())
    }

    fn batch(&self, example_ids: &[u64]) -> Result<Vec<ProbVec>> {
        example_ids
            .iter()
            .map(|id| {
                self.get(*id).cloned().ok_or_else(|| {
                    Error::SchemaMismatch(format!("example {id} missing from prediction cache"))
                })
            })
            .collect()
    }
}

/// One pre-training iteration as logged.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainRecord {
    pub iter: u64,
    pub epoch: u64,
    pub l_sc: f64,
    pub l_reg: f64,
    pub l_mlm: f64,
    pub lr: f64,
    pub total: f64,
}

/// One fine-tuning iteration as logged, with the clean- and noisy-side
/// components kept separate so the zeroed-side conditions are auditable.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: u64,
    pub epoch: u64,
    pub l_ce_clean: f64,
    pub l_ce_noisy: f64,
    pub l_mut: f64,
    pub l_creg_clean: f64,
    pub l_creg_noisy: f64,
    pub l_d_clean: f64,
    pub l_d_noisy: f64,
    pub gamma: f64,
    pub lr: f64,
    pub total: f64,
}

impl IterRecord {
    pub fn l_ce(&self) -> f64 {
        self.l_ce_clean + self.l_ce_noisy
    }

    pub fn l_creg(&self) -> f64 {
        self.l_creg_clean + self.l_creg_noisy
    }

    pub fn l_d(&self) -> f64 {
        self.l_d_clean + self.l_d_noisy
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParams,
    pub log: Vec<PretrainRecord>,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub m_clean: ModelParams,
    pub m_asr: ModelParams,
    pub log: Vec<IterRecord>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct Predictions {
    pub example_ids: Vec<u64>,
    pub probs: Vec<ProbVec>,
    pub labels: Vec<usize>,
}

fn check_schema(params: &ModelParams, corpus: &Corpus, vocab: &Vocab) -> Result<()> {
    if params.vocab_size() != vocab.len() {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint vocab size {} vs vocabulary {}",
            params.vocab_size(),
            vocab.len()
        )));
    }
    if params.num_classes() != corpus.num_classes() {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint has {} classes, corpus {}",
            params.num_classes(),
            corpus.num_classes()
        )));
    }
    Ok(())
}

fn rows_slice(m: &Matrix, from: usize, to: usize) -> Matrix {
    let mut out = Matrix::zeros(to - from, m.cols());
    for r in from..to {
        out.row_mut(r - from).copy_from_slice(m.row(r));
    }
    out
}

/// Stage 1: train one encoder on aligned pairs with the contrastive
/// objective, the margin regularizer, and masked-token prediction on both
/// sides, combined as
/// `lambda_pt * (L_sc + lambda_reg * L_reg) + (1 - lambda_pt) * L_mlm`.
pub fn pretrain(cfg: &TrainConfig, corpus: &Corpus, vocab: &Vocab) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let margin = cfg.margin()?;
    let adam = cfg.adam()?;
    let mut params = ModelParams::init(
        vocab.len(),
        cfg.d,
        cfg.d_out,
        corpus.num_classes(),
        cfg.seed,
    )?;
    let mut opt = OptimState::new(params.num_params());
    // Masking draws from its own stream so the mask ratio can change
    // without perturbing batch order or initialization.
    let mut mask_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, stream::MASK));
    let mut log = Vec::with_capacity(cfg.pretrain_steps as usize);
    let mut t: u64 = 0;
    let mut epoch: u64 = 0;
    'steps: loop {
        let batches = make_batches(
            corpus,
            vocab,
            cfg.max_len,
            cfg.pretrain_batch_pairs,
            cfg.seed,
            epoch,
        )?;
        for batch in &batches {
            if t >= cfg.pretrain_steps {
                break 'steps;
            }
            t += 1;
            log.push(pretrain_step(
                cfg,
                &margin,
                &adam,
                vocab.len(),
                &mut params,
                &mut opt,
                &mut mask_rng,
                batch,
                t,
                epoch,
            )?);
        }
        epoch += 1;
    }
    Ok(PretrainOutcome { params, log })
}

#[allow(clippy::too_many_arguments)]
fn pretrain_step(
    cfg: &TrainConfig,
    margin: &MarginConfig,
    adam: &AdamConfig,
    vocab_size: usize,
    params: &mut ModelParams,
    opt: &mut OptimState,
    mask_rng: &mut ChaCha8Rng,
    batch: &Batch,
    t: u64,
    epoch: u64,
) -> Result<PretrainRecord> {
    // Contrastive pair over the unmasked sides, stacked clean-then-noisy.
    let fwd_clean = encode(params, &batch.clean)?;
    let fwd_noisy = encode(params, &batch.noisy)?;
    let emb = EmbeddingBatch::paired(fwd_clean.rows(), fwd_noisy.rows(), &batch.example_ids)?;
    let sc = self_supervised_contrastive(&emb, cfg.tau_sc)?;
    let reg = polarization_row_grads(emb.rows(), margin)?;

    // Masked-token prediction on both sides; the mask stream is consumed
    // clean side first, then noisy, in batch order.
    let (masked_clean, targets_clean) = mask_rows(&batch.clean, cfg.mask_ratio, mask_rng);
    let (masked_noisy, targets_noisy) = mask_rows(&batch.noisy, cfg.mask_ratio, mask_rng);
    let fwd_mc = encode(params, &masked_clean)?;
    let fwd_mn = encode(params, &masked_noisy)?;
    let logits_mc = mlm_logits(params, &masked_clean, &fwd_mc, &targets_clean)?;
    let logits_mn = mlm_logits(params, &masked_noisy, &fwd_mn, &targets_noisy)?;
    let all_logits = logits_mc.vstack(&logits_mn)?;
    let all_targets: Vec<usize> = targets_clean
        .iter()
        .chain(&targets_noisy)
        .map(|tgt| tgt.token)
        .collect();
    // A batch of [CLS]-only rows yields no mask targets; the term is then 0.
    let mlm = if all_targets.is_empty() {
        LossResult {
            value: 0.0,
            grad: Matrix::zeros(0, vocab_size),
        }
    } else {
        mlm_loss(&all_logits, &all_targets)?
    };

    let composed = compose_pretrain(&sc, &reg, &mlm, cfg.lambda_reg, cfg.lambda_pt)?;

    // Accumulate one parameter gradient across all four forward passes.
    let (g_clean, g_noisy) = emb.split_row_grads(&composed.grad.rows)?;
    let mut grads = backward(
        params,
        &batch.clean,
        &fwd_clean,
        &Upstream {
            rows: Some(&g_clean),
            ..Upstream::default()
        },
    )?;
    grads.axpy(
        1.0,
        &backward(
            params,
            &batch.noisy,
            &fwd_noisy,
            &Upstream {
                rows: Some(&g_noisy),
                ..Upstream::default()
            },
        )?,
    );
    let tc = targets_clean.len();
    if tc > 0 {
        let g_mlm_clean = rows_slice(&composed.grad.mlm, 0, tc);
        grads.axpy(
            1.0,
            &backward(
                params,
                &masked_clean,
                &fwd_mc,
                &Upstream {
                    mlm: Some((&targets_clean, &g_mlm_clean)),
                    ..Upstream::default()
                },
            )?,
        );
    }
    if !targets_noisy.is_empty() {
        let g_mlm_noisy = rows_slice(&composed.grad.mlm, tc, composed.grad.mlm.rows());
        grads.axpy(
            1.0,
            &backward(
                params,
                &masked_noisy,
                &fwd_mn,
                &Upstream {
                    mlm: Some((&targets_noisy, &g_mlm_noisy)),
                    ..Upstream::default()
                },
            )?,
        );
    }

    let lr = warmup_lr(t, cfg.peak_lr, cfg.warmup_steps);
    adam_step(opt, params, &grads, lr, adam)?;
    Ok(PretrainRecord {
        iter: t,
        epoch,
        l_sc: sc.value,
        l_reg: reg.value,
        l_mlm: mlm.value,
        lr,
        total: composed.value,
    })
}

/// Stage 2: clone the pre-trained encoder into a clean-side and a
/// noisy-side model and train them jointly. Per iteration the composite is
/// `L_ce + alpha * L_mut + beta * L_creg + gamma(t) * L_d`; with
/// `use_manual_transcripts` off, every clean-side term and the mutual term
/// are exactly zero and the clean model is never stepped.
pub fn finetune(
    cfg: &TrainConfig,
    pretrained: &ModelParams,
    train: &Corpus,
    dev: &Corpus,
    vocab: &Vocab,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let margin = cfg.margin()?;
    let adam = cfg.adam()?;
    let anneal = AnnealConfig::new(cfg.anneal_r, cfg.anneal_g)?;
    check_schema(pretrained, train, vocab)?;
    check_schema(pretrained, dev, vocab)?;

    let mut state = FinetuneState {
        m_clean: pretrained.clone(),
        m_asr: pretrained.clone(),
        opt_clean: OptimState::new(pretrained.num_params()),
        opt_asr: OptimState::new(pretrained.num_params()),
        cache_clean: PredictionCache::from_labels(train)?,
        cache_asr: PredictionCache::from_labels(train)?,
    };
    let mut log = Vec::new();
    let mut t: u64 = 0;
    for epoch in 0..cfg.finetune_epochs {
        let batches = make_batches(
            train,
            vocab,
            cfg.max_len,
            cfg.finetune_batch_pairs,
            cfg.seed,
            epoch,
        )?;
        for batch in &batches {
            t += 1;
            log.push(state.step(cfg, &margin, &adam, &anneal, batch, t, epoch)?);
        }
        // Refresh each cache from a full pass with this epoch's params —
        // the same code path as predict().
        if cfg.use_manual_transcripts {
            let preds = predict(&state.m_clean, train, vocab, Side::Clean, cfg.max_len)?;
            state.cache_clean.replace(&preds.example_ids, preds.probs)?;
        }
        let preds = predict(&state.m_asr, train, vocab, Side::Noisy, cfg.max_len)?;
        state.cache_asr.replace(&preds.example_ids, preds.probs)?;
    }
    let (metrics, _) = evaluate(&state.m_clean, &state.m_asr, dev, vocab, &margin, cfg.max_len)?;
    Ok(FinetuneOutcome {
        m_clean: state.m_clean,
        m_asr: state.m_asr,
        log,
        metrics,
    })
}

struct FinetuneState {
    m_clean: ModelParams,
    m_asr: ModelParams,
    opt_clean: OptimState,
    opt_asr: OptimState,
    cache_clean: PredictionCache,
    cache_asr: PredictionCache,
}

impl FinetuneState {
    fn step(
        &mut self,
        cfg: &TrainConfig,
        margin: &MarginConfig,
        adam: &AdamConfig,
        anneal: &AnnealConfig,
        batch: &Batch,
        t: u64,
        epoch: u64,
    ) -> Result<IterRecord> {
        let n = batch.pairs();
        let c = self.m_asr.num_classes();
        let d_out = self.m_asr.d_out();
        let manual = cfg.use_manual_transcripts;
        let gamma = if !cfg.distill {
            0.0
        } else if cfg.anneal {
            annealing_coefficient(t, anneal)
        } else {
            1.0
        };

        let fwd_p = encode(&self.m_clean, &batch.clean)?;
        let logits_p = classify(&self.m_clean, fwd_p.rows())?;
        let fwd_q = encode(&self.m_asr, &batch.noisy)?;
        let logits_q = classify(&self.m_asr, fwd_q.rows())?;

        // Classification term, one per trained side.
        let ce_q = cross_entropy(&logits_q, &batch.labels, cfg.ce_mean)?;
        let mut ce_grads = TwoSidedGrads::zeros(n, c, d_out);
        let mut l_ce_clean = 0.0;
        if manual {
            let ce_p = cross_entropy(&logits_p, &batch.labels, cfg.ce_mean)?;
            l_ce_clean = ce_p.value;
            ce_grads.logits_clean = ce_p.grad;
        }
        let l_ce_noisy = ce_q.value;
        ce_grads.logits_noisy = ce_q.grad;
        let ce = LossResult {
            value: l_ce_clean + l_ce_noisy,
            grad: ce_grads,
        };

        // Mimicry term between the two class distributions, chained
        // through each model's softmax.
        let mut mut_grads = TwoSidedGrads::zeros(n, c, d_out);
        let mut l_mut = 0.0;
        if manual {
            let probs_p = softmax_rows(&logits_p)?;
            let probs_q = softmax_rows(&logits_q)?;
            let mutual = mutual_learning(&probs_p, &probs_q)?;
            l_mut = mutual.value;
            for i in 0..n {
                let gp = softmax_backward(&probs_p[i], &mutual.grad.clean[i])?;
                mut_grads.logits_clean.row_mut(i).copy_from_slice(&gp);
                let gq = softmax_backward(&probs_q[i], &mutual.grad.noisy[i])?;
                mut_grads.logits_noisy.row_mut(i).copy_from_slice(&gq);
            }
        }
        let mutual = LossResult {
            value: l_mut,
            grad: mut_grads,
        };

        // Per-side supervised contrastive plus margin regularizer, each
        // side over its own embeddings only.
        let mut creg_grads = TwoSidedGrads::zeros(n, c, d_out);
        let mut l_creg_clean = 0.0;
        if manual {
            let side = side_contrastive(fwd_p.rows(), &batch.labels, cfg, cfg.lambda_reg_p, margin)?;
            l_creg_clean = side.value;
            creg_grads.rows_clean = side.grad;
        }
        let side = side_contrastive(fwd_q.rows(), &batch.labels, cfg, cfg.lambda_reg_q, margin)?;
        let l_creg_noisy = side.value;
        creg_grads.rows_noisy = side.grad;
        let creg = LossResult {
            value: l_creg_clean + l_creg_noisy,
            grad: creg_grads,
        };

        // Self-distillation against each model's previous-epoch cache.
        // With the term disabled the caches are never consulted.
        let mut dist_grads = TwoSidedGrads::zeros(n, c, d_out);
        let mut l_d_clean = 0.0;
        let mut l_d_noisy = 0.0;
        if cfg.distill {
            if manual {
                let prev = self.cache_clean.batch(&batch.example_ids)?;
                let d_p = self_distillation(&prev, &logits_p, cfg.tau_d)?;
                l_d_clean = d_p.value;
                dist_grads.logits_clean = d_p.grad;
            }
            let prev = self.cache_asr.batch(&batch.example_ids)?;
            let d_q = self_distillation(&prev, &logits_q, cfg.tau_d)?;
            l_d_noisy = d_q.value;
            dist_grads.logits_noisy = d_q.grad;
        }
        let distill = LossResult {
            value: l_d_clean + l_d_noisy,
            grad: dist_grads,
        };

        let composed = compose_finetune(&ce, &mutual, &creg, &distill, cfg.alpha, cfg.beta, gamma);
        let lr = warmup_lr(t, cfg.peak_lr, cfg.warmup_steps);

        if manual {
            let g = backward(
                &self.m_clean,
                &batch.clean,
                &fwd_p,
                &Upstream {
                    rows: Some(&composed.grad.rows_clean),
                    logits: Some(&composed.grad.logits_clean),
                    mlm: None,
                },
            )?;
            adam_step(&mut self.opt_clean, &mut self.m_clean, &g, lr, adam)?;
        }
        let g = backward(
            &self.m_asr,
            &batch.noisy,
            &fwd_q,
            &Upstream {
                rows: Some(&composed.grad.rows_noisy),
                logits: Some(&composed.grad.logits_noisy),
                mlm: None,
            },
        )?;
        adam_step(&mut self.opt_asr, &mut self.m_asr, &g, lr, adam)?;

        Ok(IterRecord {
            iter: t,
            epoch,
            l_ce_clean,
            l_ce_noisy,
            l_mut,
            l_creg_clean,
            l_creg_noisy,
            l_d_clean,
            l_d_noisy,
            gamma,
            lr,
            total: composed.value,
        })
    }
}

fn softmax_rows(logits: &Matrix) -> Result<Vec<ProbVec>> {
    (0..logits.rows())
        .map(|i| softmax_with_temperature(logits.row(i), 1.0))
        .collect()
}

/// One side's `L_c + lambda_side * L_reg` with gradients over that side's
/// embedding rows.
fn side_contrastive(
    rows: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
    lambda_side: f64,
    margin: &MarginConfig,
) -> Result<LossResult<Matrix>> {
    let sc = supervised_contrastive(rows, labels, cfg.tau_c)?;
    let reg = polarization_row_grads(rows, margin)?;
    let mut grad = sc.grad;
    grad.axpy(lambda_side, &reg.grad);
    Ok(LossResult {
        value: sc.value + lambda_side * reg.value,
        grad,
    })
}

fn side_text(ex: &crate::corpus::PairedExample, side: Side) -> &str {
    match side {
        Side::Clean => &ex.clean,
        Side::Noisy => &ex.noisy,
    }
}

/// Encode one text side of a whole corpus in fixed-size chunks. Padding is
/// per chunk; mean-pooling over non-PAD tokens makes the result identical
/// to any other chunking.
fn encode_side(
    params: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocab,
    side: Side,
    max_len: usize,
) -> Result<Matrix> {
    let mut out = Matrix::zeros(corpus.len(), params.d_out());
    for (idx, chunk) in corpus.examples().chunks(PREDICT_CHUNK).enumerate() {
        let token_rows: Vec<Vec<usize>> = chunk
            .iter()
            .map(|ex| tokenize(side_text(ex, side), vocab, max_len))
            .collect();
        let tokens = TokenRows::from_unpadded(&token_rows);
        let fwd = encode(params, &tokens)?;
        let start = idx * PREDICT_CHUNK;
        for r in 0..chunk.len() {
            out.row_mut(start + r).copy_from_slice(fwd.rows().row(r));
        }
    }
    Ok(out)
}

/// Deterministic full-corpus inference on one text side: class
/// distributions plus argmax labels (ties to the lowest class index).
pub fn predict(
    params: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocab,
    side: Side,
    max_len: usize,
) -> Result<Predictions> {
    check_schema(params, corpus, vocab)?;
    let rows = encode_side(params, corpus, vocab, side, max_len)?;
    let logits = classify(params, &rows)?;
    let mut example_ids = Vec::with_capacity(corpus.len());
    let mut probs = Vec::with_capacity(corpus.len());
    let mut labels = Vec::with_capacity(corpus.len());
    for (i, ex) in corpus.examples().iter().enumerate() {
        let p = softmax_with_temperature(logits.row(i), 1.0)?;
        labels.push(p.argmax());
        probs.push(p);
        example_ids.push(ex.id);
    }
    Ok(Predictions {
        example_ids,
        probs,
        labels,
    })
}

/// Pair every example's clean and noisy representations under one set of
/// params (the deployed noisy-side model, unless measuring a pre-trained
/// encoder).
pub fn embed_corpus(
    params: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocab,
    max_len: usize,
) -> Result<EmbeddingBatch> {
    check_schema(params, corpus, vocab)?;
    let clean = encode_side(params, corpus, vocab, Side::Clean, max_len)?;
    let noisy = encode_side(params, corpus, vocab, Side::Noisy, max_len)?;
    let ids: Vec<u64> = corpus.examples().iter().map(|ex| ex.id).collect();
    EmbeddingBatch::paired(&clean, &noisy, &ids)
}

/// Full evaluation: accuracies from each model on its own side, geometry
/// diagnostics and the 2-d projection from the noisy-side model's
/// embeddings of both sides.
pub fn evaluate(
    m_clean: &ModelParams,
    m_asr: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocab,
    margin: &MarginConfig,
    max_len: usize,
) -> Result<(MetricsReport, Vec<ProjectionRow>)> {
    let gold: Vec<usize> = corpus.examples().iter().map(|ex| ex.label).collect();
    let noisy = predict(m_asr, corpus, vocab, Side::Noisy, max_len)?;
    let clean = predict(m_clean, corpus, vocab, Side::Clean, max_len)?;
    let accuracy_noisy = evaluate_accuracy(&noisy.labels, &gold)?;
    let accuracy_clean = evaluate_accuracy(&clean.labels, &gold)?;
    let per_class = per_class_accuracy(&noisy.labels, &gold, corpus.num_classes())?;
    let batch = embed_corpus(m_asr, corpus, vocab, max_len)?;
    let dist = pairwise_distance_matrix(batch.rows())?;
    let occupancy = margin_occupancy(&dist, margin);
    let (intra, inter) = cluster_distances(&batch, &gold)?;
    let projection = projection_rows(&batch, &gold)?;
    Ok((
        MetricsReport {
            accuracy_noisy,
            accuracy_clean,
            margin_occupancy: occupancy,
            mean_intra_pair_distance: intra,
            mean_inter_distance: inter,
            per_class_accuracy: per_class,
        },
        projection,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, synthesize_corpus, NoiseConfig, PairedExample};
    use alloc::string::ToString;
    use alloc::vec;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            d: 8,
            d_out: 4,
            max_len: 8,
            pretrain_steps: 6,
            pretrain_batch_pairs: 4,
            finetune_epochs: 2,
            finetune_batch_pairs: 4,
            warmup_steps: 10,
            peak_lr: 5e-3,
            anneal_g: 8,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn noisy_corpus(seed: u64) -> Corpus {
        let noise = NoiseConfig::new(0.08, 0.04, 0.04, 0.0, Default::default(), 0.0).unwrap();
        synthesize_corpus(3, 6, &noise, seed).unwrap()
    }

    fn setup() -> (Corpus, Vocab) {
        let corpus = noisy_corpus(11);
        let vocab = build_vocab(&corpus, 1).unwrap();
        (corpus, vocab)
    }

    #[test]
    fn pretrain_is_deterministic_and_well_formed() {
        let (corpus, vocab) = setup();
        let cfg = small_cfg();
        let a = pretrain(&cfg, &corpus, &vocab).unwrap();
        let b = pretrain(&cfg, &corpus, &vocab).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params.flatten(), b.params.flatten());

        assert_eq!(a.log.len(), cfg.pretrain_steps as usize);
        for (i, rec) in a.log.iter().enumerate() {
            assert_eq!(rec.iter, i as u64 + 1);
            assert_eq!(rec.lr, warmup_lr(rec.iter, cfg.peak_lr, cfg.warmup_steps));
            let expect = cfg.lambda_pt * (rec.l_sc + cfg.lambda_reg * rec.l_reg)
                + (1.0 - cfg.lambda_pt) * rec.l_mlm;
            assert!((rec.total - expect).abs() < 1e-12);
            assert!(rec.l_sc >= 0.0 && rec.l_reg >= 0.0 && rec.l_mlm >= 0.0);
        }
        // Two passes over 18 pairs in batches of 4 pairs: epoch advances.
        assert_eq!(a.log.first().unwrap().epoch, 0);
        assert_eq!(a.log.last().unwrap().epoch, 1);
    }

    #[test]
    fn mlm_gradients_never_applied_at_full_contrastive_weight() {
        let (corpus, vocab) = setup();
        let base = TrainConfig {
            lambda_pt: 1.0,
            lambda_reg: 0.0,
            ..small_cfg()
        };
        let other = TrainConfig {
            mask_ratio: 0.9,
            ..base.clone()
        };
        let a = pretrain(&base, &corpus, &vocab).unwrap();
        let b = pretrain(&other, &corpus, &vocab).unwrap();
        assert_eq!(a.params.flatten(), b.params.flatten());
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.l_sc, rb.l_sc);
            assert_eq!(ra.l_reg, rb.l_reg);
            assert_eq!(ra.total, rb.total);
            assert_eq!(ra.total, ra.l_sc);
        }
    }

    #[test]
    fn finetune_is_deterministic() {
        let (corpus, vocab) = setup();
        let cfg = small_cfg();
        let pre = pretrain(&cfg, &corpus, &vocab).unwrap();
        let a = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();
        let b = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.m_clean.flatten(), b.m_clean.flatten());
        assert_eq!(a.m_asr.flatten(), b.m_asr.flatten());
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn finetune_logs_schedule_and_composition() {
        let (corpus, vocab) = setup();
        let cfg = small_cfg();
        let pre = pretrain(&cfg, &corpus, &vocab).unwrap();
        let out = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();
        let anneal = AnnealConfig::new(cfg.anneal_r, cfg.anneal_g).unwrap();
        for rec in &out.log {
            assert_eq!(rec.gamma, annealing_coefficient(rec.iter, &anneal));
            let expect = rec.l_ce()
                + cfg.alpha * rec.l_mut
                + cfg.beta * rec.l_creg()
                + rec.gamma * rec.l_d();
            assert!((rec.total - expect).abs() < 1e-9, "iter {}", rec.iter);
        }
        // Both models moved away from the shared initialization.
        assert_ne!(out.m_clean.flatten(), pre.params.flatten());
        assert_ne!(out.m_asr.flatten(), pre.params.flatten());
        assert_ne!(out.m_clean.flatten(), out.m_asr.flatten());
    }

    #[test]
    fn disabled_annealing_pins_gamma_to_one() {
        let (corpus, vocab) = setup();
        let cfg = TrainConfig {
            anneal: false,
            ..small_cfg()
        };
        let pre = pretrain(&cfg, &corpus, &vocab).unwrap();
        let out = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();
        assert!(out.log.iter().all(|r| r.gamma == 1.0));
    }

    #[test]
    fn disabled_distillation_zeroes_gamma_and_the_distillation_term() {
        let (corpus, vocab) = setup();
        let cfg = TrainConfig {
            distill: false,
            ..small_cfg()
        };
        let pre = pretrain(&cfg, &corpus, &vocab).unwrap();
        let out = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();
        for rec in &out.log {
            assert_eq!(rec.gamma, 0.0);
            assert_eq!(rec.l_d_clean, 0.0);
            assert_eq!(rec.l_d_noisy, 0.0);
            let expect = rec.l_ce() + cfg.alpha * rec.l_mut + cfg.beta * rec.l_creg();
            assert!((rec.total - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn manual_transcripts_off_freezes_clean_model_and_zeroes_its_losses() {
        let (corpus, vocab) = setup();
        let cfg = TrainConfig {
            use_manual_transcripts: false,
            ..small_cfg()
        };
        let pre = pretrain(&cfg, &corpus, &vocab).unwrap();
        let out = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();
        assert_eq!(out.m_clean.flatten(), pre.params.flatten());
        assert_ne!(out.m_asr.flatten(), pre.params.flatten());
        for rec in &out.log {
            assert_eq!(rec.l_ce_clean, 0.0);
            assert_eq!(rec.l_mut, 0.0);
            assert_eq!(rec.l_creg_clean, 0.0);
            assert_eq!(rec.l_d_clean, 0.0);
            assert!(rec.l_ce_noisy > 0.0);
        }
    }

    #[test]
    fn clean_model_ignores_noisy_text_when_mutual_is_off() {
        let (corpus, vocab) = setup();
        // Same clean sides, ids, and labels; unrecognizably different
        // noisy sides.
        let scrambled: Vec<PairedExample> = corpus
            .examples()
            .iter()
            .map(|ex| PairedExample {
                id: ex.id,
                clean: ex.clean.clone(),
                noisy: {
                    let mut s = ex.clean.replace(' ', "x");
                    s.push_str(" zz");
                    s
                },
                label: ex.label,
            })
            .collect();
        let other = Corpus::new(
            scrambled,
            corpus.num_classes(),
            corpus.class_names().to_vec(),
        )
        .unwrap();
        let cfg = TrainConfig {
            alpha: 0.0,
            ..small_cfg()
        };
        let pre = pretrain(&cfg, &corpus, &vocab).unwrap();
        let a = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();
        let b = finetune(&cfg, &pre.params, &other, &other, &vocab).unwrap();
        assert_eq!(a.m_clean.flatten(), b.m_clean.flatten());
        assert_ne!(a.m_asr.flatten(), b.m_asr.flatten());
    }

    #[test]
    fn cache_seeds_one_hot_and_replaces() {
        let (corpus, _) = setup();
        let cache = PredictionCache::from_labels(&corpus).unwrap();
        assert_eq!(cache.len(), corpus.len());
        for ex in corpus.examples() {
            let p = cache.get(ex.id).unwrap();
            assert!(p.is_one_hot());
            assert_eq!(p.argmax(), ex.label);
        }
        let mut cache = cache;
        let ids: Vec<u64> = corpus.examples().iter().map(|e| e.id).collect();
        let uniform = ProbVec::new(vec![1.0 / 3.0; 3]).unwrap();
        cache
            .replace(&ids, vec![uniform.clone(); ids.len()])
            .unwrap();
        assert_eq!(cache.get(ids[0]).unwrap(), &uniform);
        assert_eq!(
            cache.replace(&ids, vec![uniform; 2]).err(),
            Some(Error::LengthMismatch(ids.len(), 2))
        );
    }

    #[test]
    fn predict_is_deterministic_and_input_keyed() {
        let (corpus, vocab) = setup();
        let cfg = small_cfg();
        let params = ModelParams::init(vocab.len(), cfg.d, cfg.d_out, 3, 5).unwrap();
        let a = predict(&params, &corpus, &vocab, Side::Noisy, cfg.max_len).unwrap();
        let b = predict(&params, &corpus, &vocab, Side::Noisy, cfg.max_len).unwrap();
        assert_eq!(a.labels, b.labels);
        for (pa, pb) in a.probs.iter().zip(&b.probs) {
            assert_eq!(pa.as_slice(), pb.as_slice());
        }

        // Two examples with identical text get identical distributions.
        let twin = Corpus::new(
            vec![
                PairedExample {
                    id: 0,
                    clean: "play jazz".to_string(),
                    noisy: "play jaz".to_string(),
                    label: 0,
                },
                PairedExample {
                    id: 1,
                    clean: "play jazz".to_string(),
                    noisy: "play jaz".to_string(),
                    label: 1,
                },
            ],
            3,
            vec!["a".to_string(), "b".to_string(), "c".to_string()],
        )
        .unwrap();
        let p = predict(&params, &twin, &vocab, Side::Noisy, cfg.max_len).unwrap();
        assert_eq!(p.probs[0].as_slice(), p.probs[1].as_slice());
        assert_eq!(p.example_ids, vec![0, 1]);
    }

    #[test]
    fn zeroed_classifier_predicts_uniform_class_zero() {
        let (corpus, vocab) = setup();
        let mut params = ModelParams::init(vocab.len(), 8, 4, 3, 5).unwrap();
        params.wc.scale(0.0);
        for b in &mut params.bc {
            *b = 0.0;
        }
        let p = predict(&params, &corpus, &vocab, Side::Clean, 8).unwrap();
        for (probs, label) in p.probs.iter().zip(&p.labels) {
            assert_eq!(*label, 0, "tie must break to the lowest class");
            for &v in probs.as_slice() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn schema_mismatches_are_rejected() {
        let (corpus, vocab) = setup();
        let wrong_vocab = ModelParams::init(vocab.len() + 3, 8, 4, 3, 5).unwrap();
        assert!(matches!(
            predict(&wrong_vocab, &corpus, &vocab, Side::Clean, 8),
            Err(Error::SchemaMismatch(_))
        ));
        let wrong_classes = ModelParams::init(vocab.len(), 8, 4, 5, 5).unwrap();
        assert!(matches!(
            predict(&wrong_classes, &corpus, &vocab, Side::Clean, 8),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn chunked_prediction_matches_whole_corpus_encode() {
        // A corpus larger than one chunk: padding per chunk must not leak
        // into the representations.
        let noise = NoiseConfig::new(0.1, 0.0, 0.0, 0.0, Default::default(), 0.0).unwrap();
        let corpus = synthesize_corpus(3, PREDICT_CHUNK / 2, &noise, 3).unwrap();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let params = ModelParams::init(vocab.len(), 8, 4, 3, 9).unwrap();
        let rows = encode_side(&params, &corpus, &vocab, Side::Clean, 10).unwrap();
        let token_rows: Vec<Vec<usize>> = corpus
            .examples()
            .iter()
            .map(|ex| tokenize(&ex.clean, &vocab, 10))
            .collect();
        let all = TokenRows::from_unpadded(&token_rows);
        let fwd = encode(&params, &all).unwrap();
        for i in 0..corpus.len() {
            for j in 0..4 {
                assert!((rows.get(i, j) - fwd.rows().get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_reports_ranges_and_projection() {
        let (corpus, vocab) = setup();
        let cfg = small_cfg();
        let pre = pretrain(&cfg, &corpus, &vocab).unwrap();
        let out = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();
        let margin = cfg.margin().unwrap();
        let (report, projection) =
            evaluate(&out.m_clean, &out.m_asr, &corpus, &vocab, &margin, cfg.max_len).unwrap();
        assert_eq!(report, out.metrics);
        for rate in [
            report.accuracy_noisy,
            report.accuracy_clean,
            report.margin_occupancy,
            report.mean_intra_pair_distance,
            report.mean_inter_distance,
        ] {
            assert!((0.0..=1.0).contains(&rate), "out of range: {rate}");
        }
        assert_eq!(report.per_class_accuracy.len(), 3);
        assert_eq!(projection.len(), 2 * corpus.len());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let good = small_cfg();
        assert!(good.validate().is_ok());
        for bad in [
            TrainConfig { delta_plus: 0.6, ..good.clone() },
            TrainConfig { tau_c: 0.0, ..good.clone() },
            TrainConfig { mask_ratio: 1.5, ..good.clone() },
            TrainConfig { lambda_pt: -0.1, ..good.clone() },
            TrainConfig { alpha: -1.0, ..good.clone() },
            TrainConfig { anneal_r: 0.0, ..good.clone() },
            TrainConfig { anneal_g: 0, ..good.clone() },
            TrainConfig { adam_beta1: 1.0, ..good.clone() },
            TrainConfig { adam_eps: 0.0, ..good.clone() },
            TrainConfig { peak_lr: 0.0, ..good.clone() },
            TrainConfig { warmup_steps: 0, ..good.clone() },
            TrainConfig { pretrain_batch_pairs: 1, ..good.clone() },
            TrainConfig { d_out: 1, ..good.clone() },
            TrainConfig { max_len: 1, ..good.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
