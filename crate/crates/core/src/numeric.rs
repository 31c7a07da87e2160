//! Deterministic numeric primitives: similarities, divergences, distance
//! matrices, finite-difference gradient checking, and PCA projection.
//!
//! All reductions run sequentially in fixed index order so that a fixed seed
//! reproduces results bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Matrix, Result};

/// Norms below this are treated as degenerate rather than normalized.
pub const NORM_FLOOR: f64 = 1e-12;

/// Floor applied to the second argument of `ln(p/q)` so one-hot targets
/// never produce NaN.
pub const PROB_FLOOR: f64 = 1e-12;

/// A probability vector: nonnegative entries summing to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let mut sum = 0.0;
        for &p in &probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbVec(alloc::format!(
                    "entry {p} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbVec(alloc::format!("sum {sum} != 1")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: usize, len: usize) -> Result<Self> {
        if class >= len {
            return Err(Error::LabelOutOfRange {
                label: class,
                num_classes: len,
            });
        }
        let mut v = vec![0.0; len];
        v[class] = 1.0;
        Ok(Self(v))
    }

    /// True when exactly one entry is 1 and the rest are 0.
    pub fn is_one_hot(&self) -> bool {
        let mut ones = 0;
        for &p in &self.0 {
            if p == 1.0 {
                ones += 1;
            } else if p != 0.0 {
                return false;
            }
        }
        ones == 1
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest entry, ties broken toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

pub fn l2_norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity `<a,b> / (|a||b|)`, clamped into `[-1, 1]` against
/// floating-point spill.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    let na = l2_norm(a);
    if na <= NORM_FLOOR {
        return Err(Error::ZeroNorm { index: 0 });
    }
    let nb = l2_norm(b);
    if nb <= NORM_FLOOR {
        return Err(Error::ZeroNorm { index: 1 });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Normalized cosine distance `(1 + s(a,b)) / 2` in `[0, 1]`. Larger means
/// more similar; identical directions map to 1, opposite directions to 0.
pub fn normalized_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok((1.0 + cosine_similarity(a, b)?) / 2.0)
}

/// Symmetric matrix of pairwise normalized distances over batch rows.
///
/// The diagonal is exactly 1 (self-similarity) and entries stay in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    entries: Matrix,
}

impl DistanceMatrix {
    /// Wrap a precomputed matrix, checking the type's invariants.
    pub fn new(entries: Matrix) -> Result<Self> {
        let m = entries.rows();
        if entries.cols() != m {
            return Err(Error::ShapeMismatch(alloc::format!(
                "distance matrix must be square, got {}x{}",
                m,
                entries.cols()
            )));
        }
        for i in 0..m {
            if (entries.get(i, i) - 1.0).abs() > 1e-12 {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "diagonal entry ({i},{i}) = {} != 1",
                    entries.get(i, i)
                )));
            }
            for j in 0..m {
                let v = entries.get(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::ShapeMismatch(alloc::format!(
                        "entry ({i},{j}) = {v} outside [0, 1]"
                    )));
                }
                if (v - entries.get(j, i)).abs() > 1e-12 {
                    return Err(Error::ShapeMismatch(alloc::format!(
                        "asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }
}

/// All pairwise normalized distances between rows of `rows`.
///
/// Each off-diagonal entry is computed once and mirrored, so the result is
/// exactly symmetric; the diagonal is set to exactly 1.
pub fn pairwise_distance_matrix(rows: &Matrix) -> Result<DistanceMatrix> {
    let m = rows.rows();
    if m == 0 {
        return Err(Error::InsufficientPoints { got: 0, need: 1 });
    }
    let mut norms = Vec::with_capacity(m);
    for i in 0..m {
        let n = l2_norm(rows.row(i));
        if n <= NORM_FLOOR {
            return Err(Error::ZeroNorm { index: i });
        }
        norms.push(n);
    }
    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        out.set(i, i, 1.0);
        for j in (i + 1)..m {
            let s = (dot(rows.row(i), rows.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            let d = (1.0 + s) / 2.0;
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    Ok(DistanceMatrix { entries: out })
}

/// Numerically stable tempered softmax `exp(z_i/tau) / sum_j exp(z_j/tau)`.
pub fn softmax_with_temperature(logits: &[f64], tau: f64) -> Result<ProbVec> {
    if tau <= 0.0 {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if logits.is_empty() {
        return Err(Error::DimensionMismatch(0, 1));
    }
    let mut max = f64::NEG_INFINITY;
    for &z in logits {
        if !z.is_finite() {
            return Err(Error::NonFinite("softmax logits"));
        }
        max = max.max(z / tau);
    }
    let mut out = Vec::with_capacity(logits.len());
    let mut sum = 0.0;
    for &z in logits {
        let e = libm::exp(z / tau - max);
        out.push(e);
        sum += e;
    }
    for e in &mut out {
        *e /= sum;
    }
    Ok(ProbVec(out))
}

/// `KL(p || q) = sum_i p_i ln(p_i / q_i)` with natural log. Terms with
/// `p_i = 0` contribute zero and `q_i` is floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &ProbVec, q: &ProbVec) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(p.len(), q.len()));
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        if pi > 0.0 {
            acc += pi * libm::log(pi / qi.max(PROB_FLOOR));
        }
    }
    Ok(acc)
}

/// Jensen-Shannon divergence `(KL(p||m) + KL(q||m)) / 2` with `m = (p+q)/2`.
/// Symmetric in its arguments and bounded by `ln 2`.
pub fn js_divergence(p: &ProbVec, q: &ProbVec) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(p.len(), q.len()));
    }
    let m: Vec<f64> = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(&a, &b)| (a + b) / 2.0)
        .collect();
    let m = ProbVec(m);
    Ok(0.5 * kl_divergence(p, &m)? + 0.5 * kl_divergence(q, &m)?)
}

/// Chain an upstream gradient on softmax outputs back to the logits:
/// `g_z = p .* (g_p - <g_p, p>)`.
pub fn softmax_backward(probs: &ProbVec, grad_probs: &[f64]) -> Result<Vec<f64>> {
    if probs.len() != grad_probs.len() {
        return Err(Error::DimensionMismatch(probs.len(), grad_probs.len()));
    }
    let inner = dot(probs.as_slice(), grad_probs);
    Ok(probs
        .as_slice()
        .iter()
        .zip(grad_probs)
        .map(|(&p, &g)| p * (g - inner))
        .collect())
}

/// Re-temper a probability vector: `softmax(ln(max(p, floor)) / tau)`.
pub fn temper_distribution(p: &ProbVec, tau: f64) -> Result<ProbVec> {
    let logs: Vec<f64> = p
        .as_slice()
        .iter()
        .map(|&x| libm::log(x.max(PROB_FLOOR)))
        .collect();
    softmax_with_temperature(&logs, tau)
}

/// Compare an analytic gradient against central finite differences of `f`
/// at `point`, returning the worst per-component relative error
/// `|fd - a| / max(|fd|, |a|, 1e-8)`.
pub fn finite_difference_check<F>(mut f: F, point: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "step size must be positive");
    assert_eq!(point.len(), analytic.len());
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// Mean-centered projection of `points` (one per row) onto the top-`k`
/// principal directions, via power iteration with deflation.
pub fn pca_project(points: &Matrix, k: usize) -> Result<Matrix> {
    let n = points.rows();
    let dim = points.cols();
    if n < 2 {
        return Err(Error::InsufficientPoints { got: n, need: 2 });
    }
    if k == 0 || k > dim {
        return Err(Error::InvalidConfig(alloc::format!(
            "k = {k} must be in 1..={dim}"
        )));
    }

    let mut mean = vec![0.0; dim];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(points.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = Matrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..dim {
            centered.set(i, j, points.get(i, j) - mean[j]);
        }
    }

    // Covariance of the centered cloud.
    let mut cov = Matrix::zeros(dim, dim);
    for r in 0..n {
        cov.add_outer(1.0 / (n as f64 - 1.0), centered.row(r), centered.row(r));
    }

    let components = top_eigenvectors(&cov, k);

    let mut out = Matrix::zeros(n, k);
    for i in 0..n {
        for (c, comp) in components.iter().enumerate() {
            out.set(i, c, dot(centered.row(i), comp));
        }
    }
    Ok(out)
}

const POWER_ITERATIONS: usize = 200;
const POWER_TOLERANCE: f64 = 1e-10;

/// Top-`k` eigenvectors of a symmetric PSD matrix by power iteration,
/// deflating each found component out of the working matrix.
fn top_eigenvectors(sym: &Matrix, k: usize) -> Vec<Vec<f64>> {
    let dim = sym.rows();
    let mut work = sym.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x70_63_61); // fixed internal stream
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);

    for _ in 0..k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize_or_basis(&mut v, 0);
        let mut next = vec![0.0; dim];
        for _ in 0..POWER_ITERATIONS {
            work.mul_vec(&v, &mut next);
            // Keep the iterate orthogonal to components already found.
            for prev in &found {
                let proj = dot(&next, prev);
                for (n, p) in next.iter_mut().zip(prev) {
                    *n -= proj * p;
                }
            }
            let norm = l2_norm(&next);
            if norm <= NORM_FLOOR {
                // Remaining spectrum is numerically zero; keep the current
                // direction, which already lies in the orthogonal complement.
                break;
            }
            for x in &mut next {
                *x /= norm;
            }
            let mut delta = 0.0f64;
            for (a, b) in next.iter().zip(&v) {
                delta = delta.max((a - b).abs());
            }
            v.copy_from_slice(&next);
            if delta < POWER_TOLERANCE {
                break;
            }
        }
        // Deflate: work -= lambda v v^T.
        work.mul_vec(&v, &mut next);
        let lambda = dot(&v, &next);
        work.add_outer(-lambda, &v.clone(), &v);
        found.push(v);
    }
    found
}

fn normalize_or_basis(v: &mut [f64], basis: usize) {
    let n = l2_norm(v);
    if n <= NORM_FLOOR {
        v.fill(0.0);
        v[basis] = 1.0;
    } else {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}
