//! End-to-end behavior of the two training stages: progress, degenerate
//! configurations, and hand recomputation of the first logged iteration.

use lmcl_core::corpus::{build_vocab, make_batches, synthesize_corpus, NoiseConfig};
use lmcl_core::encoder::{backward, classify, encode, Upstream};
use lmcl_core::losses::{cross_entropy, mutual_learning, self_distillation};
use lmcl_core::numeric::{softmax_with_temperature, ProbVec};
use lmcl_core::optim::{adam_step, warmup_lr, AdamConfig, OptimState};
use lmcl_core::trainer::{finetune, pretrain, TrainConfig};

fn corpus_and_vocab(seed: u64) -> (lmcl_core::corpus::Corpus, lmcl_core::corpus::Vocab) {
    let noise = NoiseConfig::new(0.1, 0.05, 0.05, 0.0, Default::default(), 0.0).unwrap();
    let corpus = synthesize_corpus(4, 24, &noise, seed).unwrap();
    let vocab = build_vocab(&corpus, 1).unwrap();
    (corpus, vocab)
}

#[test]
fn contrastive_loss_decreases_over_two_hundred_steps() {
    // Defaults: 200 steps, 8 pairs per batch, seed 7.
    let cfg = TrainConfig::default();
    assert_eq!(cfg.pretrain_steps, 200);
    assert_eq!(cfg.pretrain_batch_pairs, 8);
    assert_eq!(cfg.seed, 7);
    let (corpus, vocab) = corpus_and_vocab(7);
    let out = pretrain(&cfg, &corpus, &vocab).unwrap();
    assert_eq!(out.log.len(), 200);
    let first = out.log.first().unwrap().l_sc;
    let last = out.log.last().unwrap().l_sc;
    assert!(
        last < first,
        "contrastive loss did not improve: step 1 {first}, step 200 {last}"
    );
}

#[test]
fn all_extras_off_reduces_to_plain_cross_entropy_on_the_noisy_side() {
    // alpha = beta = 0, distillation off, no manual transcripts: the full
    // fine-tune must equal this independently written loop that does
    // nothing but cross-entropy steps on the noisy model.
    let (corpus, vocab) = corpus_and_vocab(13);
    let cfg = TrainConfig {
        d: 8,
        d_out: 4,
        max_len: 8,
        pretrain_steps: 10,
        pretrain_batch_pairs: 4,
        finetune_epochs: 2,
        finetune_batch_pairs: 4,
        warmup_steps: 20,
        peak_lr: 5e-3,
        alpha: 0.0,
        beta: 0.0,
        distill: false,
        use_manual_transcripts: false,
        seed: 13,
        ..TrainConfig::default()
    };
    let pre = pretrain(&cfg, &corpus, &vocab).unwrap();
    let out = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();

    let mut params = pre.params.clone();
    let mut opt = OptimState::new(params.num_params());
    let mut adam = AdamConfig::new(cfg.adam_beta1, cfg.adam_beta2).unwrap();
    adam.eps = cfg.adam_eps;
    let mut t = 0u64;
    let mut ce_log = Vec::new();
    for epoch in 0..cfg.finetune_epochs {
        let batches = make_batches(
            &corpus,
            &vocab,
            cfg.max_len,
            cfg.finetune_batch_pairs,
            cfg.seed,
            epoch,
        )
        .unwrap();
        for batch in &batches {
            t += 1;
            let fwd = encode(&params, &batch.noisy).unwrap();
            let logits = classify(&params, fwd.rows()).unwrap();
            let ce = cross_entropy(&logits, &batch.labels, cfg.ce_mean).unwrap();
            ce_log.push(ce.value);
            let grads = backward(
                &params,
                &batch.noisy,
                &fwd,
                &Upstream {
                    logits: Some(&ce.grad),
                    ..Default::default()
                },
            )
            .unwrap();
            let lr = warmup_lr(t, cfg.peak_lr, cfg.warmup_steps);
            adam_step(&mut opt, &mut params, &grads, lr, &adam).unwrap();
        }
    }

    assert_eq!(out.m_asr.flatten(), params.flatten());
    assert_eq!(out.m_clean.flatten(), pre.params.flatten());
    assert_eq!(out.log.len(), ce_log.len());
    for (rec, ce) in out.log.iter().zip(&ce_log) {
        assert_eq!(rec.l_ce_noisy, *ce);
        assert_eq!(rec.total, *ce);
        assert_eq!(rec.l_ce_clean, 0.0);
        assert_eq!(rec.l_mut, 0.0);
        assert_eq!(rec.l_creg_clean, 0.0);
        assert_eq!(rec.l_d_clean, 0.0);
        assert_eq!(rec.l_d_noisy, 0.0);
    }
}

#[test]
fn first_iteration_losses_match_hand_recomputation() {
    // At iteration 1 both models still hold the cloned pre-trained params
    // and both caches hold one-hot label vectors, so every logged term is
    // recomputable from public pieces.
    let (corpus, vocab) = corpus_and_vocab(29);
    let cfg = TrainConfig {
        d: 8,
        d_out: 4,
        max_len: 8,
        pretrain_steps: 10,
        pretrain_batch_pairs: 4,
        finetune_epochs: 1,
        finetune_batch_pairs: 4,
        warmup_steps: 20,
        peak_lr: 5e-3,
        seed: 29,
        ..TrainConfig::default()
    };
    let pre = pretrain(&cfg, &corpus, &vocab).unwrap();
    let out = finetune(&cfg, &pre.params, &corpus, &corpus, &vocab).unwrap();
    let rec = &out.log[0];

    let batches = make_batches(
        &corpus,
        &vocab,
        cfg.max_len,
        cfg.finetune_batch_pairs,
        cfg.seed,
        0,
    )
    .unwrap();
    let batch = &batches[0];
    let logits_p = classify(&pre.params, encode(&pre.params, &batch.clean).unwrap().rows()).unwrap();
    let logits_q = classify(&pre.params, encode(&pre.params, &batch.noisy).unwrap().rows()).unwrap();

    let one_hots: Vec<ProbVec> = batch
        .labels
        .iter()
        .map(|&l| ProbVec::one_hot(l, corpus.num_classes()).unwrap())
        .collect();
    let d_p = self_distillation(&one_hots, &logits_p, cfg.tau_d).unwrap();
    let d_q = self_distillation(&one_hots, &logits_q, cfg.tau_d).unwrap();
    assert_eq!(rec.l_d_clean, d_p.value);
    assert_eq!(rec.l_d_noisy, d_q.value);

    let ce_p = cross_entropy(&logits_p, &batch.labels, cfg.ce_mean).unwrap();
    let ce_q = cross_entropy(&logits_q, &batch.labels, cfg.ce_mean).unwrap();
    assert_eq!(rec.l_ce_clean, ce_p.value);
    assert_eq!(rec.l_ce_noisy, ce_q.value);

    let probs = |m: &lmcl_core::Matrix| -> Vec<ProbVec> {
        (0..m.rows())
            .map(|r| softmax_with_temperature(m.row(r), 1.0).unwrap())
            .collect()
    };
    let l_mut = mutual_learning(&probs(&logits_p), &probs(&logits_q)).unwrap();
    assert_eq!(rec.l_mut, l_mut.value);

    assert_eq!(rec.iter, 1);
    assert_eq!(rec.lr, warmup_lr(1, cfg.peak_lr, cfg.warmup_steps));
}
