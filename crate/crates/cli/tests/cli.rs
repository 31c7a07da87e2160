//! Black-box tests of the `lmcl` binary: exit codes, diagnostics, output
//! files, and the full pipeline wiring.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn lmcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmcl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).trim().to_string()
}

fn write_config(path: &Path, body: &str) {
    fs::write(path, body).unwrap();
}

#[test]
fn unknown_config_key_exits_one_naming_it() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    write_config(&cfg, "tua_sc = 0.2\n");
    let out = lmcl(&[
        "pretrain",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr_line(&out);
    assert!(msg.contains("tua_sc"), "{msg}");
    assert_eq!(msg.lines().count(), 1);
}

#[test]
fn missing_checkpoint_key_exits_one_naming_the_field() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    write_config(
        &cfg,
        "train_corpus = x.jsonl\ndev_corpus = y.jsonl\nvocab = v.txt\n",
    );
    let out = lmcl(&[
        "finetune",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr_line(&out);
    assert!(msg.contains("'checkpoint'"), "{msg}");
}

#[test]
fn unreadable_input_exits_two() {
    let dir = tempdir().unwrap();
    let out = lmcl(&[
        "pretrain",
        "--config",
        dir.path().join("absent.txt").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!stderr_line(&out).is_empty());
}

#[test]
fn invalid_hyperparameter_exits_one() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    // Margin bounds out of order.
    write_config(&cfg, "delta_plus = 0.6\ndelta_minus = 0.5\n");
    let out = lmcl(&[
        "gradcheck",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_on_a_correct_build() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    write_config(&cfg, "seed = 41\n");
    let out = lmcl(&[
        "gradcheck",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_line(&out));
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(stdout.contains("all gradients within"), "{stdout}");
    // One report line per audited gradient path.
    assert!(stdout.matches("max relative error").count() >= 10, "{stdout}");
}

#[test]
fn pipeline_runs_and_writes_the_fixed_output_names() {
    let dir = tempdir().unwrap();
    let root = dir.path();
    let base = "num_classes = 3\nper_class = 20\nseed = 11\nd = 12\nd_out = 6\nmax_len = 12\npretrain_steps = 30\npretrain_batch_pairs = 4\nfinetune_epochs = 2\nfinetune_batch_pairs = 8\nwarmup_steps = 50\n";

    let gen_cfg = root.join("gen.txt");
    write_config(&gen_cfg, base);
    let data = root.join("data");
    let out = lmcl(&[
        "gen-data",
        "--config",
        gen_cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_line(&out));
    assert!(data.join("corpus.jsonl").is_file());
    assert!(data.join("resolved_config.txt").is_file());

    let pre_cfg = root.join("pre.txt");
    write_config(
        &pre_cfg,
        &format!("{base}train_corpus = {}\n", data.join("corpus.jsonl").display()),
    );
    let pre = root.join("pre");
    let out = lmcl(&[
        "pretrain",
        "--config",
        pre_cfg.to_str().unwrap(),
        "--out",
        pre.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_line(&out));
    for name in ["pretrained.ckpt", "vocab.txt", "losses.csv", "resolved_config.txt"] {
        assert!(pre.join(name).is_file(), "missing {name}");
    }
    let log = fs::read_to_string(pre.join("losses.csv")).unwrap();
    assert!(log.starts_with("iter,epoch,L_sc,L_reg,L_mlm,lr,total\n"), "{log}");
    assert_eq!(log.lines().count(), 31); // header + one row per step

    let ft_cfg = root.join("ft.txt");
    write_config(
        &ft_cfg,
        &format!(
            "{base}train_corpus = {}\ndev_corpus = {}\nvocab = {}\ncheckpoint = {}\n",
            data.join("corpus.jsonl").display(),
            data.join("corpus.jsonl").display(),
            pre.join("vocab.txt").display(),
            pre.join("pretrained.ckpt").display(),
        ),
    );
    let ft = root.join("ft");
    let out = lmcl(&[
        "finetune",
        "--config",
        ft_cfg.to_str().unwrap(),
        "--out",
        ft.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_line(&out));
    for name in ["m_clean.ckpt", "m_asr.ckpt", "losses.csv", "metrics.txt", "resolved_config.txt"] {
        assert!(ft.join(name).is_file(), "missing {name}");
    }
    let log = fs::read_to_string(ft.join("losses.csv")).unwrap();
    assert!(
        log.starts_with("iter,epoch,L_ce,L_mut,L_creg,L_d,gamma,lr,total\n"),
        "{log}"
    );
    let metrics = fs::read_to_string(ft.join("metrics.txt")).unwrap();
    for key in [
        "accuracy_noisy",
        "accuracy_clean",
        "margin_occupancy",
        "mean_intra_pair_distance",
        "mean_inter_distance",
        "per_class_accuracy_0",
        "per_class_accuracy_2",
    ] {
        assert!(metrics.contains(key), "metrics.txt missing {key}:\n{metrics}");
    }

    let ev_cfg = root.join("ev.txt");
    write_config(
        &ev_cfg,
        &format!(
            "{base}dev_corpus = {}\nvocab = {}\ncheckpoint_clean = {}\ncheckpoint_asr = {}\n",
            data.join("corpus.jsonl").display(),
            pre.join("vocab.txt").display(),
            ft.join("m_clean.ckpt").display(),
            ft.join("m_asr.ckpt").display(),
        ),
    );
    let ev = root.join("ev");
    let out = lmcl(&[
        "eval",
        "--config",
        ev_cfg.to_str().unwrap(),
        "--out",
        ev.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_line(&out));
    assert!(ev.join("metrics.txt").is_file());
    let proj = fs::read_to_string(ev.join("projection.csv")).unwrap();
    assert!(proj.starts_with("example_id,side,label,pc1,pc2\n"), "{proj}");
    // Two rows (clean + noisy) per example, plus the header.
    assert_eq!(proj.lines().count(), 1 + 2 * 60);
    assert!(proj.contains(",clean,"), "{proj}");
    assert!(proj.contains(",noisy,"), "{proj}");
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    write_config(&cfg, "num_classes = 3\nper_class = 5\nseed = 1\n");

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    for (out, seed) in [(&out_a, None), (&out_b, Some("2")), (&out_c, Some("1"))] {
        let mut args = vec![
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let res = lmcl(&args);
        assert_eq!(res.status.code(), Some(0), "{}", stderr_line(&res));
    }
    let a = fs::read(out_a.join("corpus.jsonl")).unwrap();
    let b = fs::read(out_b.join("corpus.jsonl")).unwrap();
    let c = fs::read(out_c.join("corpus.jsonl")).unwrap();
    assert_ne!(a, b, "different seeds must change the corpus");
    assert_eq!(a, c, "--seed equal to the config seed must be a no-op");
    let resolved = fs::read_to_string(out_b.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("seed = 2"), "{resolved}");
}
