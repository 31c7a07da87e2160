//! One function per subcommand. Each takes the parsed config and the output
//! directory; `resolved_config.txt` is already written by the dispatcher.

use std::collections::BTreeMap;
use std::path::Path;

use lmcl_core::corpus::{build_vocab, synthesize_corpus, NoiseConfig};
use lmcl_core::gradcheck::{run_gradient_checks, worst, DEFAULT_INSTANCES, TOLERANCE};
use lmcl_core::trainer::{evaluate, finetune, pretrain};

use crate::config::{require_path, CliConfig};
use crate::error::{validation, CliError};
use crate::formats::{
    load_checkpoint, load_corpus, load_vocab, save_checkpoint, save_corpus, save_vocab,
    write_finetune_log, write_metrics, write_pretrain_log, write_projection,
};

/// Word-frequency cutoff for vocabulary construction; at desk scale every
/// word seen once is kept.
const VOCAB_MIN_COUNT: usize = 1;

pub fn gen_data(cfg: &CliConfig, out: &Path) -> Result<(), CliError> {
    let g = &cfg.gen;
    let noise = NoiseConfig::new(
        g.char_sub_rate,
        g.char_del_rate,
        g.char_ins_rate,
        g.word_confusion_rate,
        BTreeMap::new(),
        g.label_flip_rate,
    )?;
    let corpus = synthesize_corpus(g.num_classes, g.per_class, &noise, cfg.train.seed)?;
    save_corpus(&corpus, &out.join("corpus.jsonl"))?;
    println!(
        "wrote {} paired examples across {} classes to {}",
        corpus.len(),
        corpus.num_classes(),
        out.join("corpus.jsonl").display()
    );
    Ok(())
}

pub fn pretrain_cmd(cfg: &CliConfig, out: &Path) -> Result<(), CliError> {
    let corpus_path = require_path(&cfg.paths.train_corpus, "pretrain", "train_corpus")?;
    let corpus = load_corpus(corpus_path)?;
    let vocab = build_vocab(&corpus, VOCAB_MIN_COUNT)?;
    let outcome = pretrain(&cfg.train, &corpus, &vocab)?;
    save_vocab(&vocab, &out.join("vocab.txt"))?;
    save_checkpoint(&outcome.params, &out.join("pretrained.ckpt"))?;
    write_pretrain_log(&outcome.log, &out.join("losses.csv"))?;
    let last = outcome.log.last().expect("pretrain logs at least one step");
    println!(
        "pre-trained {} steps (vocab {}); final losses: contrastive {:.4}, regularizer {:.4}, mlm {:.4}",
        last.iter,
        vocab.len(),
        last.l_sc,
        last.l_reg,
        last.l_mlm
    );
    Ok(())
}

pub fn finetune_cmd(cfg: &CliConfig, out: &Path) -> Result<(), CliError> {
    let train_path = require_path(&cfg.paths.train_corpus, "finetune", "train_corpus")?;
    let dev_path = require_path(&cfg.paths.dev_corpus, "finetune", "dev_corpus")?;
    let vocab_path = require_path(&cfg.paths.vocab, "finetune", "vocab")?;
    let ckpt_path = require_path(&cfg.paths.checkpoint, "finetune", "checkpoint")?;
    let train_corpus = load_corpus(train_path)?;
    let dev_corpus = load_corpus(dev_path)?;
    let vocab = load_vocab(vocab_path)?;
    let pretrained = load_checkpoint(ckpt_path)?;
    let outcome = finetune(&cfg.train, &pretrained, &train_corpus, &dev_corpus, &vocab)?;
    save_checkpoint(&outcome.m_clean, &out.join("m_clean.ckpt"))?;
    save_checkpoint(&outcome.m_asr, &out.join("m_asr.ckpt"))?;
    write_finetune_log(&outcome.log, &out.join("losses.csv"))?;
    write_metrics(&outcome.metrics, &out.join("metrics.txt"))?;
    println!(
        "fine-tuned {} iterations; dev accuracy: noisy {:.4}, clean {:.4}",
        outcome.log.len(),
        outcome.metrics.accuracy_noisy,
        outcome.metrics.accuracy_clean
    );
    Ok(())
}

pub fn eval_cmd(cfg: &CliConfig, out: &Path) -> Result<(), CliError> {
    let corpus_path = require_path(&cfg.paths.dev_corpus, "eval", "dev_corpus")?;
    let vocab_path = require_path(&cfg.paths.vocab, "eval", "vocab")?;
    let clean_path = require_path(&cfg.paths.checkpoint_clean, "eval", "checkpoint_clean")?;
    let asr_path = require_path(&cfg.paths.checkpoint_asr, "eval", "checkpoint_asr")?;
    let corpus = load_corpus(corpus_path)?;
    let vocab = load_vocab(vocab_path)?;
    let m_clean = load_checkpoint(clean_path)?;
    let m_asr = load_checkpoint(asr_path)?;
    let margin = cfg.train.margin()?;
    let (report, projection) = evaluate(
        &m_clean,
        &m_asr,
        &corpus,
        &vocab,
        &margin,
        cfg.train.max_len,
    )?;
    write_metrics(&report, &out.join("metrics.txt"))?;
    write_projection(&projection, &out.join("projection.csv"))?;
    println!(
        "evaluated {} pairs; accuracy: noisy {:.4}, clean {:.4}; margin occupancy {:.4}",
        corpus.len(),
        report.accuracy_noisy,
        report.accuracy_clean,
        report.margin_occupancy
    );
    Ok(())
}

pub fn gradcheck_cmd(cfg: &CliConfig, _out: &Path) -> Result<(), CliError> {
    let checks = run_gradient_checks(cfg.train.seed, DEFAULT_INSTANCES)?;
    for c in &checks {
        let status = if c.max_rel_err < TOLERANCE { "ok" } else { "FAIL" };
        println!(
            "{status}  {:<28} max relative error {:.3e} over {} instances",
            c.name, c.max_rel_err, c.instances
        );
    }
    let w = worst(&checks);
    if w >= TOLERANCE {
        return Err(validation(format!(
            "gradient check failed: worst relative error {w:.3e} >= {TOLERANCE:e}"
        )));
    }
    println!("all gradients within {TOLERANCE:e} (worst {w:.3e})");
    Ok(())
}
