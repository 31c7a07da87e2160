//! File formats: line-delimited JSON corpora, token-per-line vocabularies,
//! checkpoints (one text header line, then little-endian f64 parameters in
//! flatten order), CSV loss logs, and flat key-value metrics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use lmcl_core::corpus::{Corpus, PairedExample, Vocab};
use lmcl_core::encoder::ModelParams;
use lmcl_core::metrics::{MetricsReport, ProjectionRow};
use lmcl_core::trainer::{IterRecord, PretrainRecord};

use crate::error::{io_error, validation, CliError};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusLine {
    id: u64,
    clean: String,
    noisy: String,
    label: usize,
}

/// One JSON object per example, LF-terminated.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    for ex in corpus.examples() {
        let line = CorpusLine {
            id: ex.id,
            clean: ex.clean.clone(),
            noisy: ex.noisy.clone(),
            label: ex.label,
        };
        out.push_str(&serde_json::to_string(&line).expect("corpus line serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_error("write corpus", path, e))
}

/// The file carries no class metadata, so the label set is inferred: class
/// count = max label + 1, with positional class names. The only writer is
/// `gen-data`, which always emits every class.
pub fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error("read corpus", path, e))?;
    let mut examples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: CorpusLine = serde_json::from_str(raw).map_err(|e| {
            validation(format!("corpus line {}: {e}", idx + 1))
        })?;
        examples.push(PairedExample {
            id: line.id,
            clean: line.clean,
            noisy: line.noisy,
            label: line.label,
        });
    }
    let num_classes = examples.iter().map(|ex| ex.label + 1).max().unwrap_or(0);
    let class_names = (0..num_classes).map(|i| format!("class_{i}")).collect();
    Corpus::new(examples, num_classes.max(1), class_names).map_err(|e| {
        validation(format!("corpus file {}: {e}", path.display()))
    })
}

/// One token per line; the line number is the token id.
pub fn save_vocab(vocab: &Vocab, path: &Path) -> Result<(), CliError> {
    let mut out = vocab.ordered_tokens().join("\n");
    out.push('\n');
    fs::write(path, out).map_err(|e| io_error("write vocabulary", path, e))
}

pub fn load_vocab(path: &Path) -> Result<Vocab, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error("read vocabulary", path, e))?;
    let tokens: Vec<String> = text.lines().map(str::to_string).collect();
    Vocab::from_ordered_tokens(tokens).map_err(|e| {
        validation(format!("vocabulary file {}: {e}", path.display()))
    })
}

const CKPT_MAGIC: &str = "lmcl-ckpt-v1";

/// Header line with dims and seed, then `num_params` little-endian f64
/// values in flatten order (token embeddings, mlp layer 1, mlp layer 2,
/// classifier, mlm head).
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CliError> {
    let flat = params.flatten();
    let header = format!(
        "{CKPT_MAGIC} vocab_size={} d={} d_out={} num_classes={} seed={} num_params={}\n",
        params.vocab_size(),
        params.d(),
        params.d_out(),
        params.num_classes(),
        params.seed(),
        flat.len(),
    );
    let mut bytes = Vec::with_capacity(header.len() + flat.len() * 8);
    bytes.extend_from_slice(header.as_bytes());
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_error("write checkpoint", path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CliError> {
    let bytes = fs::read(path).map_err(|e| io_error("read checkpoint", path, e))?;
    let bad = |msg: String| validation(format!("checkpoint {}: {msg}", path.display()));
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| bad("header is not UTF-8".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(CKPT_MAGIC) {
        return Err(bad(format!("not a {CKPT_MAGIC} file")));
    }
    let mut dims = [None::<u64>; 6];
    let names = [
        "vocab_size",
        "d",
        "d_out",
        "num_classes",
        "seed",
        "num_params",
    ];
    for field in fields {
        let Some((key, value)) = field.split_once('=') else {
            return Err(bad(format!("malformed header field '{field}'")));
        };
        let slot = names
            .iter()
            .position(|n| *n == key)
            .ok_or_else(|| bad(format!("unknown header field '{key}'")))?;
        let parsed = value
            .parse::<u64>()
            .map_err(|_| bad(format!("header field '{key}' has non-integer value '{value}'")))?;
        dims[slot] = Some(parsed);
    }
    let value = |slot: usize| {
        dims[slot].ok_or_else(|| bad(format!("header missing field '{}'", names[slot])))
    };
    let (vocab_size, d, d_out, num_classes) = (
        value(0)? as usize,
        value(1)? as usize,
        value(2)? as usize,
        value(3)? as usize,
    );
    let seed = value(4)?;
    let num_params = value(5)? as usize;

    let payload = &bytes[nl + 1..];
    if payload.len() != num_params * 8 {
        return Err(bad(format!(
            "payload is {} bytes, expected {} for {num_params} parameters",
            payload.len(),
            num_params * 8
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = ModelParams::init(vocab_size, d, d_out, num_classes, seed)
        .map_err(|e| bad(e.to_string()))?;
    if params.num_params() != num_params {
        return Err(bad(format!(
            "header claims {num_params} parameters but the dims give {}",
            params.num_params()
        )));
    }
    params.assign_from_flat(&flat).map_err(|e| bad(e.to_string()))?;
    Ok(params)
}

/// Shortest round-trip decimal form, so logs are reproducible byte-for-byte
/// and parse back to the exact float.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_pretrain_log(log: &[PretrainRecord], path: &Path) -> Result<(), CliError> {
    let mut out = String::from("iter,epoch,L_sc,L_reg,L_mlm,lr,total\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iter,
            r.epoch,
            fmt_f64(r.l_sc),
            fmt_f64(r.l_reg),
            fmt_f64(r.l_mlm),
            fmt_f64(r.lr),
            fmt_f64(r.total),
        ));
    }
    fs::write(path, out).map_err(|e| io_error("write loss log", path, e))
}

pub fn write_finetune_log(log: &[IterRecord], path: &Path) -> Result<(), CliError> {
    let mut out = String::from("iter,epoch,L_ce,L_mut,L_creg,L_d,gamma,lr,total\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.iter,
            r.epoch,
            fmt_f64(r.l_ce()),
            fmt_f64(r.l_mut),
            fmt_f64(r.l_creg()),
            fmt_f64(r.l_d()),
            fmt_f64(r.gamma),
            fmt_f64(r.lr),
            fmt_f64(r.total),
        ));
    }
    fs::write(path, out).map_err(|e| io_error("write loss log", path, e))
}

pub fn write_metrics(report: &MetricsReport, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("accuracy_noisy = {}\n", fmt_f64(report.accuracy_noisy)));
    out.push_str(&format!("accuracy_clean = {}\n", fmt_f64(report.accuracy_clean)));
    out.push_str(&format!(
        "margin_occupancy = {}\n",
        fmt_f64(report.margin_occupancy)
    ));
    out.push_str(&format!(
        "mean_intra_pair_distance = {}\n",
        fmt_f64(report.mean_intra_pair_distance)
    ));
    out.push_str(&format!(
        "mean_inter_distance = {}\n",
        fmt_f64(report.mean_inter_distance)
    ));
    for (i, acc) in report.per_class_accuracy.iter().enumerate() {
        out.push_str(&format!("per_class_accuracy_{i} = {}\n", fmt_f64(*acc)));
    }
    fs::write(path, out).map_err(|e| io_error("write metrics", path, e))
}

pub fn write_projection(rows: &[ProjectionRow], path: &Path) -> Result<(), CliError> {
    let mut out = String::from("example_id,side,label,pc1,pc2\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.example_id,
            r.side.as_str(),
            r.label,
            fmt_f64(r.pc1),
            fmt_f64(r.pc2),
        ));
    }
    fs::write(path, out).map_err(|e| io_error("write projection", path, e))
}
