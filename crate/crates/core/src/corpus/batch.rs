//! Pair-aligned batching and MLM masking.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{tokenize, Vocab, CLS_ID, MASK_ID, PAD_ID};
use super::Corpus;
use crate::seed::{stream, stream_seed};
use crate::{Error, Result};

/// A rectangular matrix of token ids, right-padded with PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRows {
    ids: Vec<usize>,
    rows: usize,
    cols: usize,
}

impl TokenRows {
    /// Pad ragged rows to the longest row with PAD.
    pub fn from_unpadded(rows: &[Vec<usize>]) -> Self {
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            ids.extend_from_slice(row);
            ids.resize(ids.len() + (cols - row.len()), PAD_ID);
        }
        Self {
            ids,
            rows: rows.len(),
            cols,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.ids[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, id: usize) {
        self.ids[i * self.cols + j] = id;
    }
}

/// One training batch of N aligned pairs: clean row i and noisy row i carry
/// the same example id and label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub clean: TokenRows,
    pub noisy: TokenRows,
    pub labels: Vec<usize>,
    pub example_ids: Vec<u64>,
}

impl Batch {
    pub fn pairs(&self) -> usize {
        self.labels.len()
    }
}

/// Split the corpus into batches of `batch_size_pairs` under a shuffle keyed
/// by (seed, epoch). A trailing batch keeps its place unless it has fewer
/// than 2 pairs (the contrastive losses need in-batch negatives), in which
/// case it is dropped.
pub fn make_batches(
    corpus: &Corpus,
    vocab: &Vocab,
    max_len: usize,
    batch_size_pairs: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if batch_size_pairs < 2 {
        return Err(Error::BatchTooSmall {
            got: batch_size_pairs,
            need: 2,
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let shuffle_seed = stream_seed(stream_seed(seed, stream::SHUFFLE), epoch);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size_pairs) {
        if chunk.len() < 2 {
            continue;
        }
        let mut clean_rows = Vec::with_capacity(chunk.len());
        let mut noisy_rows = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        let mut example_ids = Vec::with_capacity(chunk.len());
        for &idx in chunk {
            let ex = &corpus.examples()[idx];
            clean_rows.push(tokenize(&ex.clean, vocab, max_len));
            noisy_rows.push(tokenize(&ex.noisy, vocab, max_len));
            labels.push(ex.label);
            example_ids.push(ex.id);
        }
        batches.push(Batch {
            clean: TokenRows::from_unpadded(&clean_rows),
            noisy: TokenRows::from_unpadded(&noisy_rows),
            labels,
            example_ids,
        });
    }
    if batches.is_empty() {
        return Err(Error::BatchTooSmall {
            got: corpus.len(),
            need: 2,
        });
    }
    Ok(batches)
}

/// Mask one token sequence for MLM. Every non-CLS, non-PAD position is
/// independently replaced with MASK with probability `ratio`; if that
/// selects nothing and the row has at least one maskable position, one
/// uniform maskable position is forced so the MLM loss is always defined.
/// Returns (masked sequence, target positions, original target ids).
pub fn mask_tokens<R: Rng>(
    tokens: &[usize],
    ratio: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    assert!((0.0..=1.0).contains(&ratio), "mask ratio outside [0, 1]");
    let mut masked = tokens.to_vec();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    let mut maskable = Vec::new();
    for (pos, &id) in tokens.iter().enumerate() {
        if pos == 0 && id == CLS_ID {
            continue;
        }
        if id == PAD_ID {
            continue;
        }
        maskable.push(pos);
        if rng.random::<f64>() < ratio {
            masked[pos] = MASK_ID;
            positions.push(pos);
            targets.push(id);
        }
    }
    if positions.is_empty() && !maskable.is_empty() {
        let pos = maskable[rng.random_range(0..maskable.len())];
        masked[pos] = MASK_ID;
        positions.push(pos);
        targets.push(tokens[pos]);
    }
    (masked, positions, targets)
}

/// Row index plus masked position plus the original token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskTarget {
    pub row: usize,
    pub pos: usize,
    pub token: usize,
}

/// Apply [`mask_tokens`] to every row of a batch matrix.
pub fn mask_rows<R: Rng>(rows: &TokenRows, ratio: f64, rng: &mut R) -> (TokenRows, Vec<MaskTarget>) {
    let mut out = rows.clone();
    let mut all_targets = Vec::new();
    for r in 0..rows.rows() {
        let (masked, positions, targets) = mask_tokens(rows.row(r), ratio, rng);
        for (j, &id) in masked.iter().enumerate() {
            out.set(r, j, id);
        }
        for (&pos, &token) in positions.iter().zip(&targets) {
            all_targets.push(MaskTarget { row: r, pos, token });
        }
    }
    (out, all_targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, synthesize_corpus, NoiseConfig};
    use alloc::vec;

    fn corpus_of(n_pairs: usize) -> Corpus {
        // max_classes * per_class pairs, trimmed by construction params.
        let per_class = n_pairs.div_ceil(2);
        let corpus = synthesize_corpus(2, per_class, &NoiseConfig::silent(), 3).unwrap();
        assert!(corpus.len() >= n_pairs);
        Corpus::new(
            corpus.examples()[..n_pairs].to_vec(),
            corpus.num_classes(),
            corpus.class_names().to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn batch_sizes_follow_drop_rule() {
        let corpus = corpus_of(10);
        let vocab = build_vocab(&corpus, 1).unwrap();
        let batches = make_batches(&corpus, &vocab, 16, 4, 7, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Batch::pairs).collect();
        assert_eq!(sizes, vec![4, 4, 2]);

        let corpus9 = corpus_of(9);
        let batches = make_batches(&corpus9, &vocab, 16, 4, 7, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Batch::pairs).collect();
        assert_eq!(sizes, vec![4, 4]);
    }

    #[test]
    fn shuffle_keyed_by_seed_and_epoch() {
        let corpus = corpus_of(12);
        let vocab = build_vocab(&corpus, 1).unwrap();
        let a = make_batches(&corpus, &vocab, 16, 4, 7, 0).unwrap();
        let b = make_batches(&corpus, &vocab, 16, 4, 7, 0).unwrap();
        assert_eq!(a, b);
        let c = make_batches(&corpus, &vocab, 16, 4, 7, 1).unwrap();
        let ids = |bs: &[Batch]| -> Vec<u64> {
            bs.iter().flat_map(|b| b.example_ids.clone()).collect()
        };
        assert_ne!(ids(&a), ids(&c), "epoch must re-key the shuffle");
        let mut sa = ids(&a);
        let mut sc = ids(&c);
        sa.sort_unstable();
        sc.sort_unstable();
        assert_eq!(sa, sc, "same multiset of examples");
    }

    #[test]
    fn alignment_and_padding() {
        let noise = NoiseConfig::new(0.3, 0.1, 0.1, 0.0, Default::default(), 0.0).unwrap();
        let corpus = synthesize_corpus(3, 4, &noise, 5).unwrap();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let batches = make_batches(&corpus, &vocab, 16, 4, 7, 0).unwrap();
        for batch in &batches {
            assert_eq!(batch.clean.rows(), batch.noisy.rows());
            assert_eq!(batch.clean.rows(), batch.labels.len());
            assert_eq!(batch.labels.len(), batch.example_ids.len());
            for i in 0..batch.pairs() {
                let ex = corpus
                    .examples()
                    .iter()
                    .find(|e| e.id == batch.example_ids[i])
                    .unwrap();
                assert_eq!(batch.labels[i], ex.label);
                let expect = tokenize(&ex.clean, &vocab, 16);
                assert_eq!(&batch.clean.row(i)[..expect.len()], &expect[..]);
                assert!(batch.clean.row(i)[expect.len()..]
                    .iter()
                    .all(|&id| id == PAD_ID));
            }
        }
    }

    #[test]
    fn tiny_configs_rejected() {
        let corpus = corpus_of(4);
        let vocab = build_vocab(&corpus, 1).unwrap();
        assert_eq!(
            make_batches(&corpus, &vocab, 16, 1, 7, 0),
            Err(Error::BatchTooSmall { got: 1, need: 2 })
        );
        let single = corpus_of(1);
        assert_eq!(
            make_batches(&single, &vocab, 16, 4, 7, 0),
            Err(Error::BatchTooSmall { got: 1, need: 2 })
        );
    }

    #[test]
    fn mask_ratio_zero_forces_one_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tokens = [CLS_ID, 5, 6, 7, 8, 9, 10, 11, 12, 13];
        let (masked, positions, targets) = mask_tokens(&tokens, 0.0, &mut rng);
        assert_eq!(positions.len(), 1);
        assert_eq!(targets.len(), 1);
        let pos = positions[0];
        assert!(pos >= 1, "[CLS] must never be masked");
        assert_eq!(masked[pos], MASK_ID);
        assert_eq!(targets[0], tokens[pos]);
        // All other positions untouched.
        for (i, (&m, &t)) in masked.iter().zip(&tokens).enumerate() {
            if i != pos {
                assert_eq!(m, t);
            }
        }
    }

    #[test]
    fn mask_ratio_one_masks_everything_maskable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tokens = [CLS_ID, 5, 6, PAD_ID, PAD_ID];
        let (masked, positions, targets) = mask_tokens(&tokens, 1.0, &mut rng);
        assert_eq!(masked, vec![CLS_ID, MASK_ID, MASK_ID, PAD_ID, PAD_ID]);
        assert_eq!(positions, vec![1, 2]);
        assert_eq!(targets, vec![5, 6]);
    }

    #[test]
    fn cls_only_row_has_no_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (masked, positions, targets) = mask_tokens(&[CLS_ID], 0.5, &mut rng);
        assert_eq!(masked, vec![CLS_ID]);
        assert!(positions.is_empty());
        assert!(targets.is_empty());
    }

    #[test]
    fn mask_count_matches_binomial_oracle() {
        let mut tokens = vec![CLS_ID];
        tokens.resize(10_001, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (_, positions, _) = mask_tokens(&tokens, 0.15, &mut rng);
        let mean = 10_000.0 * 0.15;
        let sigma = libm::sqrt(10_000.0 * 0.15 * 0.85);
        let count = positions.len() as f64;
        assert!(
            (count - mean).abs() <= 3.0 * sigma,
            "count {count} outside {mean} +- 3*{sigma}"
        );
    }

    #[test]
    fn mask_rows_collects_per_row_targets() {
        let rows = TokenRows::from_unpadded(&[
            vec![CLS_ID, 5, 6],
            vec![CLS_ID, 7],
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (masked, targets) = mask_rows(&rows, 1.0, &mut rng);
        assert_eq!(targets.len(), 3);
        assert!(targets.iter().any(|t| t.row == 0 && t.pos == 1 && t.token == 5));
        assert!(targets.iter().any(|t| t.row == 0 && t.pos == 2 && t.token == 6));
        assert!(targets.iter().any(|t| t.row == 1 && t.pos == 1 && t.token == 7));
        assert_eq!(masked.get(1, 2), PAD_ID, "padding survives masking");
    }
}
