//! Finite-difference verification battery: every analytic gradient in the
//! crate checked against central differences on small random instances.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{MaskTarget, TokenRows, CLS_ID, PAD_ID};
use crate::encoder::{backward, classify, encode, mlm_logits, EmbeddingBatch, ModelParams, Upstream};
use crate::losses::{
    compose_pretrain, cross_entropy, mlm_loss, mutual_learning, polarization_row_grads,
    self_distillation, self_supervised_contrastive, supervised_contrastive, MarginConfig,
};
use crate::numeric::{
    finite_difference_check, pairwise_distance_matrix, softmax_backward,
    softmax_with_temperature, ProbVec,
};
use crate::{Matrix, Result};

/// One named check: the worst relative error seen across its instances.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

/// Instances per check used by the command-line report.
pub const DEFAULT_INSTANCES: usize = 20;

/// A gradient passes when its worst relative error stays below this.
pub const TOLERANCE: f64 = 1e-4;

const H: f64 = 1e-5;

/// Worst error across the whole battery.
pub fn worst(checks: &[GradCheck]) -> f64 {
    checks.iter().fold(0.0, |w, c| w.max(c.max_rel_err))
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>() * 2.0 - 1.0
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = uniform(rng);
    }
    m
}

fn rand_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn rand_probs(rng: &mut ChaCha8Rng, classes: usize) -> ProbVec {
    let logits: Vec<f64> = (0..classes).map(|_| 2.0 * uniform(rng)).collect();
    softmax_with_temperature(&logits, 1.0).expect("finite logits")
}

/// Random rows whose norms stay well away from zero and, when a margin is
/// given, whose pairwise distances stay clear of the kinks, so the central
/// difference never straddles a non-smooth point.
fn safe_rows(
    rng: &mut ChaCha8Rng,
    m: usize,
    d: usize,
    margin: Option<&MarginConfig>,
) -> Matrix {
    'retry: for _ in 0..10_000 {
        let rows = rand_matrix(rng, m, d);
        for i in 0..m {
            let norm: f64 = rows.row(i).iter().map(|v| v * v).sum::<f64>();
            if norm < 0.09 {
                continue 'retry;
            }
        }
        if let Some(margin) = margin {
            let dist = pairwise_distance_matrix(&rows).expect("norms checked");
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    let v = dist.get(i, j);
                    if (v - margin.delta_plus()).abs() < 1e-3
                        || (v - margin.delta_minus()).abs() < 1e-3
                    {
                        continue 'retry;
                    }
                }
            }
        }
        return rows;
    }
    panic!("could not draw rows away from kinks");
}

fn matrix_from_flat(flat: &[f64], rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    m.data_mut().copy_from_slice(&flat[..rows * cols]);
    m
}

fn paired_from_flat(flat: &[f64], n: usize, d: usize) -> EmbeddingBatch {
    let clean = matrix_from_flat(&flat[..n * d], n, d);
    let noisy = matrix_from_flat(&flat[n * d..], n, d);
    let ids: Vec<u64> = (0..n as u64).collect();
    EmbeddingBatch::paired(&clean, &noisy, &ids).expect("aligned halves")
}

fn check_self_supervised(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = 2 + k % 3;
        let d = 2 + k % 7;
        let tau = [0.2, 0.5, 1.0][k % 3];
        let rows = safe_rows(rng, 2 * n, d, None);
        let point = rows.data().to_vec();
        let batch = paired_from_flat(&point, n, d);
        let analytic = self_supervised_contrastive(&batch, tau)
            .expect("valid batch")
            .grad;
        let err = finite_difference_check(
            |x| {
                self_supervised_contrastive(&paired_from_flat(x, n, d), tau)
                    .expect("valid batch")
                    .value
            },
            &point,
            analytic.data(),
            H,
        );
        worst = worst.max(err);
    }
    GradCheck {
        name: "self_supervised_contrastive",
        instances,
        max_rel_err: worst,
    }
}

fn check_polarization(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let margin = MarginConfig::new(0.2, 0.5).expect("valid margin");
    let mut worst = 0.0f64;
    for k in 0..instances {
        let m = 2 + k % 7;
        let d = 2 + k % 7;
        let rows = safe_rows(rng, m, d, Some(&margin));
        let point = rows.data().to_vec();
        let analytic = polarization_row_grads(&rows, &margin)
            .expect("norms checked")
            .grad;
        let err = finite_difference_check(
            |x| {
                polarization_row_grads(&matrix_from_flat(x, m, d), &margin)
                    .expect("norms checked")
                    .value
            },
            &point,
            analytic.data(),
            H,
        );
        worst = worst.max(err);
    }
    GradCheck {
        name: "distance_polarization",
        instances,
        max_rel_err: worst,
    }
}

fn check_supervised(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = 2 + k % 7;
        let d = 2 + k % 7;
        let classes = 2 + k % 3;
        let rows = safe_rows(rng, n, d, None);
        let labels = rand_labels(rng, n, classes);
        let point = rows.data().to_vec();
        let analytic = supervised_contrastive(&rows, &labels, 0.2)
            .expect("valid batch")
            .grad;
        let err = finite_difference_check(
            |x| {
                supervised_contrastive(&matrix_from_flat(x, n, d), &labels, 0.2)
                    .expect("valid batch")
                    .value
            },
            &point,
            analytic.data(),
            H,
        );
        worst = worst.max(err);
    }
    GradCheck {
        name: "supervised_contrastive",
        instances,
        max_rel_err: worst,
    }
}

fn check_mutual(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = 1 + k % 4;
        let classes = 2 + k % 3;
        let logits = rand_matrix(rng, 2 * n, classes);
        let point = logits.data().to_vec();
        let eval = |x: &[f64]| -> (Vec<ProbVec>, Vec<ProbVec>) {
            let m = matrix_from_flat(x, 2 * n, classes);
            let side = |off: usize| -> Vec<ProbVec> {
                (0..n)
                    .map(|i| softmax_with_temperature(m.row(off + i), 1.0).expect("finite"))
                    .collect()
            };
            (side(0), side(n))
        };
        let (p, q) = eval(&point);
        let res = mutual_learning(&p, &q).expect("aligned");
        let mut analytic = Vec::with_capacity(point.len());
        for i in 0..n {
            analytic.extend(softmax_backward(&p[i], &res.grad.clean[i]).expect("aligned"));
        }
        for i in 0..n {
            analytic.extend(softmax_backward(&q[i], &res.grad.noisy[i]).expect("aligned"));
        }
        let err = finite_difference_check(
            |x| {
                let (p, q) = eval(x);
                mutual_learning(&p, &q).expect("aligned").value
            },
            &point,
            &analytic,
            H,
        );
        worst = worst.max(err);
    }
    GradCheck {
        name: "mutual_learning",
        instances,
        max_rel_err: worst,
    }
}

fn check_distillation(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = 1 + k % 4;
        let classes = 2 + k % 3;
        let tau = [2.0, 5.0][k % 2];
        // Alternate soft previous-epoch distributions with the one-hot
        // bootstrap used on the first fine-tuning epoch.
        let prev: Vec<ProbVec> = (0..n)
            .map(|i| {
                if k % 2 == 0 {
                    rand_probs(rng, classes)
                } else {
                    ProbVec::one_hot((i + k) % classes, classes).expect("valid class")
                }
            })
            .collect();
        let logits = rand_matrix(rng, n, classes);
        let point = logits.data().to_vec();
        let analytic = self_distillation(&prev, &logits, tau)
            .expect("aligned")
            .grad;
        let err = finite_difference_check(
            |x| {
                self_distillation(&prev, &matrix_from_flat(x, n, classes), tau)
                    .expect("aligned")
                    .value
            },
            &point,
            analytic.data(),
            H,
        );
        worst = worst.max(err);
    }
    GradCheck {
        name: "self_distillation",
        instances,
        max_rel_err: worst,
    }
}

fn check_cross_entropy(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = 1 + k % 8;
        let classes = 2 + k % 3;
        let mean = k % 2 == 0;
        let logits = rand_matrix(rng, n, classes);
        let labels = rand_labels(rng, n, classes);
        let point = logits.data().to_vec();
        let analytic = cross_entropy(&logits, &labels, mean).expect("aligned").grad;
        let err = finite_difference_check(
            |x| {
                cross_entropy(&matrix_from_flat(x, n, classes), &labels, mean)
                    .expect("aligned")
                    .value
            },
            &point,
            analytic.data(),
            H,
        );
        worst = worst.max(err);
    }
    GradCheck {
        name: "cross_entropy",
        instances,
        max_rel_err: worst,
    }
}

fn check_mlm(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let t = 1 + k % 6;
        let vocab = 6 + (k % 2) * 2;
        let logits = rand_matrix(rng, t, vocab);
        let targets = rand_labels(rng, t, vocab);
        let point = logits.data().to_vec();
        let analytic = mlm_loss(&logits, &targets).expect("targets").grad;
        let err = finite_difference_check(
            |x| {
                mlm_loss(&matrix_from_flat(x, t, vocab), &targets)
                    .expect("targets")
                    .value
            },
            &point,
            analytic.data(),
            H,
        );
        worst = worst.max(err);
    }
    GradCheck {
        name: "mlm_loss",
        instances,
        max_rel_err: worst,
    }
}

fn check_pretrain_objective(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let margin = MarginConfig::new(0.2, 0.5).expect("valid margin");
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = 2 + k % 2;
        let d = 2 + k % 4;
        let t = 1 + k % 3;
        let vocab = 8;
        let eval = |x: &[f64],
                    targets: &[usize]|
         -> crate::losses::LossResult<crate::losses::PretrainGrads> {
            let batch = paired_from_flat(&x[..2 * n * d], n, d);
            let ml = matrix_from_flat(&x[2 * n * d..], t, vocab);
            let sc = self_supervised_contrastive(&batch, 0.2).expect("valid batch");
            let reg = polarization_row_grads(batch.rows(), &margin).expect("norms checked");
            let mlm = mlm_loss(&ml, targets).expect("targets");
            compose_pretrain(&sc, &reg, &mlm, 0.1, 0.5).expect("shapes agree")
        };
        // The contrastive and band terms can cancel a composed component
        // into the central-difference noise floor; redraw as in the
        // classifier chain check.
        let mut drawn = None;
        for _ in 0..10_000 {
            let rows = safe_rows(rng, 2 * n, d, Some(&margin));
            let mlm_logits = rand_matrix(rng, t, vocab);
            let targets = rand_labels(rng, t, vocab);
            let mut point = rows.data().to_vec();
            point.extend_from_slice(mlm_logits.data());
            let res = eval(&point, &targets);
            let mut analytic = res.grad.rows.data().to_vec();
            analytic.extend_from_slice(res.grad.mlm.data());
            if analytic.iter().all(|&a| a == 0.0 || a.abs() >= 1e-5) {
                drawn = Some((point, targets, analytic));
                break;
            }
        }
        let (point, targets, analytic) =
            drawn.expect("could not draw a well-conditioned batch");
        let err = finite_difference_check(|x| eval(x, &targets).value, &point, &analytic, H);
        worst = worst.max(err);
    }
    GradCheck {
        name: "pretrain_objective",
        instances,
        max_rel_err: worst,
    }
}

/// Random short token rows over a tiny vocabulary: a leading sentinel, a
/// few word ids, PAD tails via ragged lengths.
fn rand_tokens(rng: &mut ChaCha8Rng, rows: usize, vocab: usize) -> TokenRows {
    let unpadded: Vec<Vec<usize>> = (0..rows)
        .map(|_| {
            let len = rng.random_range(1..=4usize);
            let mut row = vec![CLS_ID];
            for _ in 1..len {
                let id = rng.random_range(4..vocab);
                row.push(id);
            }
            row
        })
        .collect();
    TokenRows::from_unpadded(&unpadded)
}

fn mask_targets_for(rng: &mut ChaCha8Rng, tokens: &TokenRows, vocab: usize) -> Vec<MaskTarget> {
    let mut out = Vec::new();
    for r in 0..tokens.rows() {
        for c in 1..tokens.cols() {
            if tokens.get(r, c) != PAD_ID && rng.random::<f64>() < 0.5 {
                out.push(MaskTarget {
                    row: r,
                    pos: c,
                    token: rng.random_range(0..vocab),
                });
            }
        }
    }
    out
}

fn check_encoder_backward(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let (vocab, d, d_out, classes) = (8, 2 + k % 3, 2 + k % 2, 2 + k % 3);
        let base = ModelParams::init(vocab, d, d_out, classes, 900 + k as u64)
            .expect("valid dims");
        let tokens = rand_tokens(rng, 2 + k % 2, vocab);
        let targets = mask_targets_for(rng, &tokens, vocab);
        let g_rows = rand_matrix(rng, tokens.rows(), d_out);
        let g_logits = rand_matrix(rng, tokens.rows(), classes);
        let g_mlm = rand_matrix(rng, targets.len(), vocab);
        let objective = |flat: &[f64]| -> f64 {
            let mut p = base.clone();
            p.assign_from_flat(flat).expect("same layout");
            let fwd = encode(&p, &tokens).expect("tokens valid");
            let mut total = 0.0;
            for (a, b) in fwd.rows().data().iter().zip(g_rows.data()) {
                total += a * b;
            }
            let logits = classify(&p, fwd.rows()).expect("width matches");
            for (a, b) in logits.data().iter().zip(g_logits.data()) {
                total += a * b;
            }
            if !targets.is_empty() {
                let ml = mlm_logits(&p, &tokens, &fwd, &targets).expect("targets valid");
                for (a, b) in ml.data().iter().zip(g_mlm.data()) {
                    total += a * b;
                }
            }
            total
        };
        let point = base.flatten();
        let fwd = encode(&base, &tokens).expect("tokens valid");
        let upstream = Upstream {
            rows: Some(&g_rows),
            logits: Some(&g_logits),
            mlm: if targets.is_empty() {
                None
            } else {
                Some((&targets, &g_mlm))
            },
        };
        let analytic = backward(&base, &tokens, &fwd, &upstream)
            .expect("consistent shapes")
            .flatten();
        let err = finite_difference_check(objective, &point, &analytic, H);
        worst = worst.max(err);
    }
    GradCheck {
        name: "encoder_backward",
        instances,
        max_rel_err: worst,
    }
}

fn check_classifier_chain(rng: &mut ChaCha8Rng, instances: usize) -> GradCheck {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let (vocab, d, d_out, classes) = (8, 4, 3, 3);
        let base = ModelParams::init(vocab, d, d_out, classes, 1700 + k as u64)
            .expect("valid dims");
        // The deep chain multiplies several sub-unit factors and sums with
        // cancellation, so a random batch can leave a gradient component
        // near the central-difference noise floor, where per-component
        // relative error is meaningless. Redraw until every nonzero
        // component clears the floor; structural zeros (untouched
        // embedding rows) stay exact on both sides.
        let mut drawn = None;
        for _ in 0..10_000 {
            let tokens = rand_tokens(rng, 2 + k % 3, vocab);
            let labels = rand_labels(rng, tokens.rows(), classes);
            let fwd = encode(&base, &tokens).expect("tokens valid");
            let logits = classify(&base, fwd.rows()).expect("width matches");
            let ce = cross_entropy(&logits, &labels, false).expect("aligned");
            let upstream = Upstream {
                logits: Some(&ce.grad),
                ..Upstream::default()
            };
            let analytic = backward(&base, &tokens, &fwd, &upstream)
                .expect("consistent shapes")
                .flatten();
            if analytic.iter().all(|&a| a == 0.0 || a.abs() >= 1e-5) {
                drawn = Some((tokens, labels, analytic));
                break;
            }
        }
        let (tokens, labels, analytic) =
            drawn.expect("could not draw a well-conditioned batch");
        let objective = |flat: &[f64]| -> f64 {
            let mut p = base.clone();
            p.assign_from_flat(flat).expect("same layout");
            let fwd = encode(&p, &tokens).expect("tokens valid");
            let logits = classify(&p, fwd.rows()).expect("width matches");
            cross_entropy(&logits, &labels, false).expect("aligned").value
        };
        let point = base.flatten();
        let err = finite_difference_check(objective, &point, &analytic, H);
        worst = worst.max(err);
    }
    GradCheck {
        name: "classifier_chain",
        instances,
        max_rel_err: worst,
    }
}

/// Run the whole battery. Deterministic in `seed`; every gradient the
/// trainer applies is exercised by at least one named entry.
pub fn run_gradient_checks(seed: u64, instances: usize) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        check_self_supervised(&mut rng, instances),
        check_polarization(&mut rng, instances),
        check_supervised(&mut rng, instances),
        check_mutual(&mut rng, instances),
        check_distillation(&mut rng, instances),
        check_cross_entropy(&mut rng, instances),
        check_mlm(&mut rng, instances),
        check_pretrain_objective(&mut rng, instances),
        check_encoder_backward(&mut rng, instances),
        check_classifier_chain(&mut rng, instances),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_at_tolerance() {
        let checks = run_gradient_checks(11, DEFAULT_INSTANCES).unwrap();
        assert_eq!(checks.len(), 10);
        for c in &checks {
            assert_eq!(c.instances, DEFAULT_INSTANCES);
            assert!(
                c.max_rel_err < TOLERANCE,
                "{} failed: {}",
                c.name,
                c.max_rel_err
            );
        }
        assert!(worst(&checks) < TOLERANCE);
    }

    #[test]
    fn battery_is_deterministic() {
        let a = run_gradient_checks(7, 5).unwrap();
        let b = run_gradient_checks(7, 5).unwrap();
        assert_eq!(a, b);
    }

}
