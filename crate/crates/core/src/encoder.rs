//! Mean-pooling sentence encoder with a tanh MLP body, a classification
//! head, and an MLM head; forward values plus exact analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{MaskTarget, TokenRows, PAD_ID};
use crate::seed::{stream, stream_seed};
use crate::{Error, Matrix, Result};

/// Which half of a transcript pair a row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Clean,
    Noisy,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Clean => "clean",
            Side::Noisy => "noisy",
        }
    }
}

const INIT_RANGE: f64 = 0.1;

/// All trainable arrays of one encoder-plus-heads instance.
///
/// Shapes: token embeddings |V|xd; layer 1 dxd with bias d (tanh); layer 2
/// d_out x d with bias d_out (identity); classifier C x d_out with bias C;
/// MLM head |V| x d_out with bias |V| (untied from the embeddings).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    vocab_size: usize,
    d: usize,
    d_out: usize,
    num_classes: usize,
    seed: u64,
    pub(crate) emb: Matrix,
    pub(crate) w1: Matrix,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Matrix,
    pub(crate) b2: Vec<f64>,
    pub(crate) wc: Matrix,
    pub(crate) bc: Vec<f64>,
    pub(crate) wm: Matrix,
    pub(crate) bm: Vec<f64>,
}

impl ModelParams {
    /// Fresh parameters, every entry uniform in [-0.1, 0.1], fully
    /// determined by the seed. Array fill order is fixed and matches the
    /// flattened layout.
    pub fn init(
        vocab_size: usize,
        d: usize,
        d_out: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        for (name, dim) in [
            ("vocab_size", vocab_size),
            ("d", d),
            ("d_out", d_out),
            ("num_classes", num_classes),
        ] {
            if dim == 0 {
                return Err(Error::InvalidConfig(alloc::format!("{name} must be positive")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, stream::INIT));
        let fill_matrix = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let mut m = Matrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    m.set(i, j, rng.random_range(-INIT_RANGE..INIT_RANGE));
                }
            }
            m
        };
        let emb = fill_matrix(vocab_size, d, &mut rng);
        let w1 = fill_matrix(d, d, &mut rng);
        let b1 = (0..d).map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE)).collect();
        let w2 = fill_matrix(d_out, d, &mut rng);
        let b2 = (0..d_out).map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE)).collect();
        let wc = fill_matrix(num_classes, d_out, &mut rng);
        let bc = (0..num_classes)
            .map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))
            .collect();
        let wm = fill_matrix(vocab_size, d_out, &mut rng);
        let bm = (0..vocab_size)
            .map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))
            .collect();
        Ok(Self {
            vocab_size,
            d,
            d_out,
            num_classes,
            seed,
            emb,
            w1,
            b1,
            w2,
            b2,
            wc,
            bc,
            wm,
            bm,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.vocab_size * self.d
            + self.d * self.d
            + self.d
            + self.d_out * self.d
            + self.d_out
            + self.num_classes * self.d_out
            + self.num_classes
            + self.vocab_size * self.d_out
            + self.vocab_size
    }

    /// All arrays as one vector in the fixed field order; the checkpoint
    /// format and the optimizer both use this layout.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.emb.data());
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(self.wc.data());
        out.extend_from_slice(&self.bc);
        out.extend_from_slice(self.wm.data());
        out.extend_from_slice(&self.bm);
        out
    }

    /// Overwrite all arrays from a flat vector in the [`flatten`] layout.
    ///
    /// [`flatten`]: ModelParams::flatten
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch(flat.len(), self.num_params()));
        }
        let mut at = 0;
        let mut take = |len: usize| {
            let s = &flat[at..at + len];
            at += len;
            s
        };
        self.emb.data_mut().copy_from_slice(take(self.vocab_size * self.d));
        self.w1.data_mut().copy_from_slice(take(self.d * self.d));
        self.b1.copy_from_slice(take(self.d));
        self.w2.data_mut().copy_from_slice(take(self.d_out * self.d));
        self.b2.copy_from_slice(take(self.d_out));
        self.wc.data_mut().copy_from_slice(take(self.num_classes * self.d_out));
        self.bc.copy_from_slice(take(self.num_classes));
        self.wm.data_mut().copy_from_slice(take(self.vocab_size * self.d_out));
        self.bm.copy_from_slice(take(self.vocab_size));
        Ok(())
    }
}

/// Forward-pass intermediates kept for the backward pass.
///
/// `pooled` holds the mean token embedding per row, `hidden` the tanh layer
/// output, and `rows` the final sentence representations h.
#[derive(Debug, Clone)]
pub struct Forward {
    pooled: Matrix,
    hidden: Matrix,
    rows: Matrix,
    token_counts: Vec<usize>,
}

impl Forward {
    /// Sentence representations, one row per input row.
    pub fn rows(&self) -> &Matrix {
        &self.rows
    }
}

/// Mean-pool the non-PAD token embeddings of each row (the [CLS] id is an
/// ordinary token here) and push the mean through the two-layer body.
pub fn encode(params: &ModelParams, tokens: &TokenRows) -> Result<Forward> {
    let m = tokens.rows();
    let mut pooled = Matrix::zeros(m, params.d);
    let mut hidden = Matrix::zeros(m, params.d);
    let mut rows = Matrix::zeros(m, params.d_out);
    let mut token_counts = vec![0usize; m];
    let mut a = vec![0.0; params.d];
    let mut h = vec![0.0; params.d_out];
    for r in 0..m {
        let mut count = 0usize;
        for &id in tokens.row(r) {
            if id == PAD_ID {
                continue;
            }
            if id >= params.vocab_size {
                return Err(Error::TokenIdOutOfRange {
                    id,
                    vocab_size: params.vocab_size,
                });
            }
            for (x, &e) in pooled.row_mut(r).iter_mut().zip(params.emb.row(id)) {
                *x += e;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::ShapeMismatch(alloc::format!(
                "token row {r} is entirely padding"
            )));
        }
        token_counts[r] = count;
        let inv = 1.0 / count as f64;
        for x in pooled.row_mut(r) {
            *x *= inv;
        }
        params.w1.mul_vec(pooled.row(r), &mut a);
        for (t, (&ai, &bi)) in hidden.row_mut(r).iter_mut().zip(a.iter().zip(&params.b1)) {
            *t = libm::tanh(ai + bi);
        }
        params.w2.mul_vec(hidden.row(r), &mut h);
        for (o, (&hi, &bi)) in rows.row_mut(r).iter_mut().zip(h.iter().zip(&params.b2)) {
            *o = hi + bi;
        }
    }
    Ok(Forward {
        pooled,
        hidden,
        rows,
        token_counts,
    })
}

/// Class logits for each representation row: `Wc h + bc`.
pub fn classify(params: &ModelParams, rows: &Matrix) -> Result<Matrix> {
    if rows.cols() != params.d_out {
        return Err(Error::ShapeMismatch(alloc::format!(
            "representation width {} does not match d_out {}",
            rows.cols(),
            params.d_out
        )));
    }
    let mut logits = Matrix::zeros(rows.rows(), params.num_classes);
    let mut z = vec![0.0; params.num_classes];
    for r in 0..rows.rows() {
        params.wc.mul_vec(rows.row(r), &mut z);
        for (o, (&zi, &bi)) in logits.row_mut(r).iter_mut().zip(z.iter().zip(&params.bc)) {
            *o = zi + bi;
        }
    }
    Ok(logits)
}

/// Vocabulary logits for every masked slot: each target row scores
/// `Wm h_row + bm` where `h_row` is the shared representation of the row
/// holding the masked position. `forward` must come from [`encode`] on the
/// same (masked) `tokens`.
pub fn mlm_logits(
    params: &ModelParams,
    tokens: &TokenRows,
    forward: &Forward,
    targets: &[MaskTarget],
) -> Result<Matrix> {
    let mut logits = Matrix::zeros(targets.len(), params.vocab_size);
    let mut z = vec![0.0; params.vocab_size];
    for (k, t) in targets.iter().enumerate() {
        if t.row >= tokens.rows()
            || t.pos >= tokens.cols()
            || tokens.get(t.row, t.pos) == PAD_ID
        {
            return Err(Error::PositionOutOfRange {
                row: t.row,
                col: t.pos,
            });
        }
        params.wm.mul_vec(forward.rows().row(t.row), &mut z);
        for (o, (&zi, &bi)) in logits.row_mut(k).iter_mut().zip(z.iter().zip(&params.bm)) {
            *o = zi + bi;
        }
    }
    Ok(logits)
}

/// Sentence representations with pair bookkeeping: clean rows 0..N are
/// aligned with noisy rows N..2N sharing the same example ids.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    rows: Matrix,
    origin: Vec<(u64, Side)>,
    pairs: Vec<usize>,
}

impl EmbeddingBatch {
    /// Stack N clean rows on top of their N aligned noisy rows.
    pub fn paired(clean: &Matrix, noisy: &Matrix, ids: &[u64]) -> Result<Self> {
        let n = clean.rows();
        if noisy.rows() != n {
            return Err(Error::ShapeMismatch(alloc::format!(
                "clean side has {n} rows, noisy side {}",
                noisy.rows()
            )));
        }
        if ids.len() != n {
            return Err(Error::LengthMismatch(ids.len(), n));
        }
        let rows = clean.vstack(noisy)?;
        let mut origin = Vec::with_capacity(2 * n);
        let mut pairs = Vec::with_capacity(2 * n);
        for (i, &id) in ids.iter().enumerate() {
            origin.push((id, Side::Clean));
            pairs.push(n + i);
        }
        for (i, &id) in ids.iter().enumerate() {
            origin.push((id, Side::Noisy));
            pairs.push(i);
        }
        Ok(Self { rows, origin, pairs })
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    /// Number of aligned pairs N; total row count is 2N.
    pub fn num_pairs(&self) -> usize {
        self.origin.len() / 2
    }

    /// Row index of row i's positive partner.
    pub fn pair(&self, i: usize) -> usize {
        self.pairs[i]
    }

    pub fn origin(&self) -> &[(u64, Side)] {
        &self.origin
    }

    /// Split a gradient over the stacked rows back into (clean, noisy)
    /// halves matching the two encode calls.
    pub fn split_row_grads(&self, grads: &Matrix) -> Result<(Matrix, Matrix)> {
        let n = self.num_pairs();
        if grads.rows() != 2 * n || grads.cols() != self.rows.cols() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "gradient is {}x{}, expected {}x{}",
                grads.rows(),
                grads.cols(),
                2 * n,
                self.rows.cols()
            )));
        }
        let mut clean = Matrix::zeros(n, grads.cols());
        let mut noisy = Matrix::zeros(n, grads.cols());
        for i in 0..n {
            clean.row_mut(i).copy_from_slice(grads.row(i));
            noisy.row_mut(i).copy_from_slice(grads.row(n + i));
        }
        Ok((clean, noisy))
    }
}

/// Gradients with respect to every parameter array, same shapes as
/// [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub(crate) emb: Matrix,
    pub(crate) w1: Matrix,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Matrix,
    pub(crate) b2: Vec<f64>,
    pub(crate) wc: Matrix,
    pub(crate) bc: Vec<f64>,
    pub(crate) wm: Matrix,
    pub(crate) bm: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            emb: Matrix::zeros(params.vocab_size, params.d),
            w1: Matrix::zeros(params.d, params.d),
            b1: vec![0.0; params.d],
            w2: Matrix::zeros(params.d_out, params.d),
            b2: vec![0.0; params.d_out],
            wc: Matrix::zeros(params.num_classes, params.d_out),
            bc: vec![0.0; params.num_classes],
            wm: Matrix::zeros(params.vocab_size, params.d_out),
            bm: vec![0.0; params.vocab_size],
        }
    }

    /// self += a * other.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.emb.axpy(a, &other.emb);
        self.w1.axpy(a, &other.w1);
        self.w2.axpy(a, &other.w2);
        self.wc.axpy(a, &other.wc);
        self.wm.axpy(a, &other.wm);
        for (dst, src) in [
            (&mut self.b1, &other.b1),
            (&mut self.b2, &other.b2),
            (&mut self.bc, &other.bc),
            (&mut self.bm, &other.bm),
        ] {
            for (x, &y) in dst.iter_mut().zip(src) {
                *x += a * y;
            }
        }
    }

    /// Same flat layout as [`ModelParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.emb.data());
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(self.wc.data());
        out.extend_from_slice(&self.bc);
        out.extend_from_slice(self.wm.data());
        out.extend_from_slice(&self.bm);
        out
    }
}

/// Upstream loss gradients entering the backward pass. Any subset may be
/// present; all must refer to the same forward pass.
#[derive(Default)]
pub struct Upstream<'a> {
    /// d(loss)/d(representation rows), M x d_out.
    pub rows: Option<&'a Matrix>,
    /// d(loss)/d(class logits), M x num_classes.
    pub logits: Option<&'a Matrix>,
    /// Mask targets and d(loss)/d(mlm logits), one |V|-row per target.
    pub mlm: Option<(&'a [MaskTarget], &'a Matrix)>,
}

/// Exact chain-rule gradients for all parameters given upstream gradients
/// on representations, class logits, and/or MLM logits.
pub fn backward(
    params: &ModelParams,
    tokens: &TokenRows,
    forward: &Forward,
    upstream: &Upstream,
) -> Result<ParamGrads> {
    let m = tokens.rows();
    let mut grads = ParamGrads::zeros_like(params);

    // Accumulate d(loss)/d(h) from every head before walking the body.
    let mut g_rows = Matrix::zeros(m, params.d_out);
    if let Some(rows) = upstream.rows {
        if rows.rows() != m || rows.cols() != params.d_out {
            return Err(Error::ShapeMismatch(alloc::format!(
                "row gradient is {}x{}, expected {}x{}",
                rows.rows(),
                rows.cols(),
                m,
                params.d_out
            )));
        }
        g_rows.axpy(1.0, rows);
    }
    if let Some(logits) = upstream.logits {
        if logits.rows() != m || logits.cols() != params.num_classes {
            return Err(Error::ShapeMismatch(alloc::format!(
                "logit gradient is {}x{}, expected {}x{}",
                logits.rows(),
                logits.cols(),
                m,
                params.num_classes
            )));
        }
        let mut back = vec![0.0; params.d_out];
        for r in 0..m {
            let g = logits.row(r);
            grads.wc.add_outer(1.0, g, forward.rows.row(r));
            for (b, &gi) in grads.bc.iter_mut().zip(g) {
                *b += gi;
            }
            params.wc.mul_vec_transposed(g, &mut back);
            for (o, &bi) in g_rows.row_mut(r).iter_mut().zip(&back) {
                *o += bi;
            }
        }
    }
    if let Some((targets, mlm_grads)) = upstream.mlm {
        if mlm_grads.rows() != targets.len() || mlm_grads.cols() != params.vocab_size {
            return Err(Error::ShapeMismatch(alloc::format!(
                "mlm gradient is {}x{}, expected {}x{}",
                mlm_grads.rows(),
                mlm_grads.cols(),
                targets.len(),
                params.vocab_size
            )));
        }
        let mut back = vec![0.0; params.d_out];
        for (k, t) in targets.iter().enumerate() {
            if t.row >= m {
                return Err(Error::PositionOutOfRange {
                    row: t.row,
                    col: t.pos,
                });
            }
            let g = mlm_grads.row(k);
            grads.wm.add_outer(1.0, g, forward.rows.row(t.row));
            for (b, &gi) in grads.bm.iter_mut().zip(g) {
                *b += gi;
            }
            params.wm.mul_vec_transposed(g, &mut back);
            for (o, &bi) in g_rows.row_mut(t.row).iter_mut().zip(&back) {
                *o += bi;
            }
        }
    }

    // Body: h = W2 tanh(W1 x + b1) + b2, x = mean of token embeddings.
    let mut g_hidden = vec![0.0; params.d];
    let mut g_pooled = vec![0.0; params.d];
    for r in 0..m {
        let g_h = g_rows.row(r);
        grads.w2.add_outer(1.0, g_h, forward.hidden.row(r));
        for (b, &gi) in grads.b2.iter_mut().zip(g_h) {
            *b += gi;
        }
        params.w2.mul_vec_transposed(g_h, &mut g_hidden);
        // tanh' = 1 - tanh^2, using the stored activation.
        for (g, &t) in g_hidden.iter_mut().zip(forward.hidden.row(r)) {
            *g *= 1.0 - t * t;
        }
        grads.w1.add_outer(1.0, &g_hidden, forward.pooled.row(r));
        for (b, &gi) in grads.b1.iter_mut().zip(&g_hidden) {
            *b += gi;
        }
        params.w1.mul_vec_transposed(&g_hidden, &mut g_pooled);
        let inv = 1.0 / forward.token_counts[r] as f64;
        for &id in tokens.row(r) {
            if id == PAD_ID {
                continue;
            }
            for (e, &gi) in grads.emb.row_mut(id).iter_mut().zip(&g_pooled) {
                *e += gi * inv;
            }
        }
    }
    Ok(grads)
}
