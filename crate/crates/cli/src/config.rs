//! Flat `key = value` configuration: every hyperparameter key is a
//! `TrainConfig` field name, plus corpus-generation knobs and input paths.
//! Unknown and duplicate keys are hard errors so typos never pass silently.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use lmcl_core::trainer::TrainConfig;

use crate::error::{io_error, validation, CliError};

/// Synthetic-corpus knobs used by `gen-data` (the RNG seed is the shared
/// `seed` key).
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub char_sub_rate: f64,
    pub char_del_rate: f64,
    pub char_ins_rate: f64,
    pub word_confusion_rate: f64,
    pub label_flip_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 50,
            char_sub_rate: 0.1,
            char_del_rate: 0.03,
            char_ins_rate: 0.03,
            word_confusion_rate: 0.0,
            label_flip_rate: 0.0,
        }
    }
}

/// Input-file locations. Each subcommand states which of these it requires;
/// none has a default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathConfig {
    pub train_corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_clean: Option<PathBuf>,
    pub checkpoint_asr: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub paths: PathConfig,
}

pub fn load_config(path: &Path) -> Result<CliConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error("read config", path, e))?;
    parse_config(&text)
}

/// Lines of `key = value`; `#` starts a comment; blank lines are ignored.
pub fn parse_config(text: &str) -> Result<CliConfig, CliError> {
    let mut cfg = CliConfig::default();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let Some((key, value)) = line.split_once('=') else {
            return Err(validation(format!(
                "config line {lineno}: expected 'key = value', got '{line}'"
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(validation(format!("config line {lineno}: empty key")));
        }
        if !seen.insert(key.to_string()) {
            return Err(validation(format!(
                "config line {lineno}: duplicate config key '{key}'"
            )));
        }
        set_key(&mut cfg, key, value)
            .map_err(|msg| validation(format!("config line {lineno}: {msg}")))?;
    }
    Ok(cfg)
}

fn parse_f64(key: &str, value: &str) -> Result<f64, String> {
    value
        .parse::<f64>()
        .map_err(|_| format!("key '{key}' expects a number, got '{value}'"))
}

fn parse_usize(key: &str, value: &str) -> Result<usize, String> {
    value
        .parse::<usize>()
        .map_err(|_| format!("key '{key}' expects a non-negative integer, got '{value}'"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, String> {
    value
        .parse::<u64>()
        .map_err(|_| format!("key '{key}' expects a non-negative integer, got '{value}'"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "on" => Ok(true),
        "false" | "off" => Ok(false),
        _ => Err(format!(
            "key '{key}' expects true/false (or on/off), got '{value}'"
        )),
    }
}

fn parse_path(key: &str, value: &str) -> Result<PathBuf, String> {
    if value.is_empty() {
        return Err(format!("key '{key}' expects a file path"));
    }
    Ok(PathBuf::from(value))
}

fn set_key(cfg: &mut CliConfig, key: &str, value: &str) -> Result<(), String> {
    let t = &mut cfg.train;
    let g = &mut cfg.gen;
    let p = &mut cfg.paths;
    match key {
        // Model shape.
        "d" => t.d = parse_usize(key, value)?,
        "d_out" => t.d_out = parse_usize(key, value)?,
        "max_len" => t.max_len = parse_usize(key, value)?,
        // Pre-training.
        "mask_ratio" => t.mask_ratio = parse_f64(key, value)?,
        "tau_sc" => t.tau_sc = parse_f64(key, value)?,
        "lambda_reg" => t.lambda_reg = parse_f64(key, value)?,
        "lambda_pt" => t.lambda_pt = parse_f64(key, value)?,
        "pretrain_steps" => t.pretrain_steps = parse_u64(key, value)?,
        "pretrain_batch_pairs" => t.pretrain_batch_pairs = parse_usize(key, value)?,
        // Margin band.
        "delta_plus" => t.delta_plus = parse_f64(key, value)?,
        "delta_minus" => t.delta_minus = parse_f64(key, value)?,
        // Fine-tuning.
        "tau_c" => t.tau_c = parse_f64(key, value)?,
        "lambda_reg_p" => t.lambda_reg_p = parse_f64(key, value)?,
        "lambda_reg_q" => t.lambda_reg_q = parse_f64(key, value)?,
        "tau_d" => t.tau_d = parse_f64(key, value)?,
        "alpha" => t.alpha = parse_f64(key, value)?,
        "beta" => t.beta = parse_f64(key, value)?,
        "distill" => t.distill = parse_bool(key, value)?,
        "anneal" => t.anneal = parse_bool(key, value)?,
        "anneal_r" => t.anneal_r = parse_f64(key, value)?,
        "anneal_g" => t.anneal_g = parse_u64(key, value)?,
        "finetune_epochs" => t.finetune_epochs = parse_u64(key, value)?,
        "finetune_batch_pairs" => t.finetune_batch_pairs = parse_usize(key, value)?,
        "use_manual_transcripts" => t.use_manual_transcripts = parse_bool(key, value)?,
        "ce_mean" => t.ce_mean = parse_bool(key, value)?,
        // Optimizer and schedule.
        "adam_beta1" => t.adam_beta1 = parse_f64(key, value)?,
        "adam_beta2" => t.adam_beta2 = parse_f64(key, value)?,
        "adam_eps" => t.adam_eps = parse_f64(key, value)?,
        "warmup_steps" => t.warmup_steps = parse_u64(key, value)?,
        "peak_lr" => t.peak_lr = parse_f64(key, value)?,
        "seed" => t.seed = parse_u64(key, value)?,
        // Corpus generation.
        "num_classes" => g.num_classes = parse_usize(key, value)?,
        "per_class" => g.per_class = parse_usize(key, value)?,
        "char_sub_rate" => g.char_sub_rate = parse_f64(key, value)?,
        "char_del_rate" => g.char_del_rate = parse_f64(key, value)?,
        "char_ins_rate" => g.char_ins_rate = parse_f64(key, value)?,
        "word_confusion_rate" => g.word_confusion_rate = parse_f64(key, value)?,
        "label_flip_rate" => g.label_flip_rate = parse_f64(key, value)?,
        // Input paths.
        "train_corpus" => p.train_corpus = Some(parse_path(key, value)?),
        "dev_corpus" => p.dev_corpus = Some(parse_path(key, value)?),
        "vocab" => p.vocab = Some(parse_path(key, value)?),
        "checkpoint" => p.checkpoint = Some(parse_path(key, value)?),
        "checkpoint_clean" => p.checkpoint_clean = Some(parse_path(key, value)?),
        "checkpoint_asr" => p.checkpoint_asr = Some(parse_path(key, value)?),
        _ => return Err(format!("unknown config key '{key}'")),
    }
    Ok(())
}

/// The full configuration with every default filled in, in the flat file
/// format. Floats use Rust's shortest round-trip form, so parsing this text
/// reproduces the run exactly. Unset paths are omitted.
pub fn resolved_text(cfg: &CliConfig) -> String {
    let t = &cfg.train;
    let g = &cfg.gen;
    let mut s = String::new();
    s.push_str("# model shape\n");
    push_usize(&mut s, "d", t.d);
    push_usize(&mut s, "d_out", t.d_out);
    push_usize(&mut s, "max_len", t.max_len);
    s.push_str("# pre-training\n");
    push_f64(&mut s, "mask_ratio", t.mask_ratio);
    push_f64(&mut s, "tau_sc", t.tau_sc);
    push_f64(&mut s, "lambda_reg", t.lambda_reg);
    push_f64(&mut s, "lambda_pt", t.lambda_pt);
    push_u64(&mut s, "pretrain_steps", t.pretrain_steps);
    push_usize(&mut s, "pretrain_batch_pairs", t.pretrain_batch_pairs);
    s.push_str("# margin band\n");
    push_f64(&mut s, "delta_plus", t.delta_plus);
    push_f64(&mut s, "delta_minus", t.delta_minus);
    s.push_str("# fine-tuning\n");
    push_f64(&mut s, "tau_c", t.tau_c);
    push_f64(&mut s, "lambda_reg_p", t.lambda_reg_p);
    push_f64(&mut s, "lambda_reg_q", t.lambda_reg_q);
    push_f64(&mut s, "tau_d", t.tau_d);
    push_f64(&mut s, "alpha", t.alpha);
    push_f64(&mut s, "beta", t.beta);
    push_bool(&mut s, "distill", t.distill);
    push_bool(&mut s, "anneal", t.anneal);
    push_f64(&mut s, "anneal_r", t.anneal_r);
    push_u64(&mut s, "anneal_g", t.anneal_g);
    push_u64(&mut s, "finetune_epochs", t.finetune_epochs);
    push_usize(&mut s, "finetune_batch_pairs", t.finetune_batch_pairs);
    push_bool(&mut s, "use_manual_transcripts", t.use_manual_transcripts);
    push_bool(&mut s, "ce_mean", t.ce_mean);
    s.push_str("# optimizer and schedule\n");
    push_f64(&mut s, "adam_beta1", t.adam_beta1);
    push_f64(&mut s, "adam_beta2", t.adam_beta2);
    push_f64(&mut s, "adam_eps", t.adam_eps);
    push_u64(&mut s, "warmup_steps", t.warmup_steps);
    push_f64(&mut s, "peak_lr", t.peak_lr);
    push_u64(&mut s, "seed", t.seed);
    s.push_str("# corpus generation\n");
    push_usize(&mut s, "num_classes", g.num_classes);
    push_usize(&mut s, "per_class", g.per_class);
    push_f64(&mut s, "char_sub_rate", g.char_sub_rate);
    push_f64(&mut s, "char_del_rate", g.char_del_rate);
    push_f64(&mut s, "char_ins_rate", g.char_ins_rate);
    push_f64(&mut s, "word_confusion_rate", g.word_confusion_rate);
    push_f64(&mut s, "label_flip_rate", g.label_flip_rate);
    let paths: [(&str, &Option<PathBuf>); 6] = [
        ("train_corpus", &cfg.paths.train_corpus),
        ("dev_corpus", &cfg.paths.dev_corpus),
        ("vocab", &cfg.paths.vocab),
        ("checkpoint", &cfg.paths.checkpoint),
        ("checkpoint_clean", &cfg.paths.checkpoint_clean),
        ("checkpoint_asr", &cfg.paths.checkpoint_asr),
    ];
    if paths.iter().any(|(_, v)| v.is_some()) {
        s.push_str("# input paths\n");
        for (key, value) in paths {
            if let Some(path) = value {
                s.push_str(&format!("{key} = {}\n", path.display()));
            }
        }
    }
    s
}

fn push_f64(s: &mut String, key: &str, v: f64) {
    s.push_str(&format!("{key} = {v:?}\n"));
}

fn push_usize(s: &mut String, key: &str, v: usize) {
    s.push_str(&format!("{key} = {v}\n"));
}

fn push_u64(s: &mut String, key: &str, v: u64) {
    s.push_str(&format!("{key} = {v}\n"));
}

fn push_bool(s: &mut String, key: &str, v: bool) {
    s.push_str(&format!("{key} = {v}\n"));
}

/// The path a subcommand needs, or a validation error naming the key.
pub fn require_path<'a>(
    value: &'a Option<PathBuf>,
    subcommand: &str,
    key: &str,
) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or_else(|| {
        validation(format!("{subcommand} requires the config key '{key}'"))
    })
}
