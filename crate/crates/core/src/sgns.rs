//! Skip-gram with negative sampling: the task model whose loss the
//! adversarial term is added to.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{keep_probability, NegativeTable, Vocabulary};
use crate::linalg::{axpy, dot, sigmoid, Matrix};
use crate::{Error, Result};

/// Lower clamp applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-12;

/// Input (center) vectors, which are the published embeddings, and the
/// context vectors used only by the skip-gram objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embeddings {
    input: Matrix,
    context: Matrix,
}

impl Embeddings {
    pub fn new(input: Matrix, context: Matrix) -> Result<Self> {
        if input.rows() != context.rows() || input.cols() != context.cols() {
            return Err(Error::invalid("input and context matrices differ in shape"));
        }
        if input.cols() == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        Ok(Embeddings { input, context })
    }

    /// Wraps a published embedding matrix with an all-zero context matrix.
    pub fn from_input(input: Matrix) -> Result<Self> {
        let context = Matrix::zeros(input.rows(), input.cols());
        Embeddings::new(input, context)
    }

    pub fn vocab_size(&self) -> usize {
        self.input.rows()
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    pub fn input_mut(&mut self) -> &mut Matrix {
        &mut self.input
    }

    pub fn context(&self) -> &Matrix {
        &self.context
    }

    pub fn context_mut(&mut self) -> &mut Matrix {
        &mut self.context
    }

    pub fn is_finite(&self) -> bool {
        self.input.is_finite() && self.context.is_finite()
    }
}

/// Input vectors uniform in `[-scale/dim, scale/dim]`, context vectors zero.
pub fn init_embeddings<R: Rng + ?Sized>(
    vocab_size: usize,
    dim: usize,
    scale: f64,
    rng: &mut R,
) -> Result<Embeddings> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be at least 1"));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid("init scale must be positive"));
    }
    let bound = scale / dim as f64;
    let data = (0..vocab_size * dim)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Embeddings::from_input(Matrix::from_vec(vocab_size, dim, data))
}

/// One skip-gram example: a center word, its observed context and the
/// sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub center: u32,
    pub context: u32,
    pub negatives: Vec<u32>,
}

#[inline]
fn neg_log(p: f64) -> f64 {
    -p.max(LOG_FLOOR).ln()
}

/// `-log s(u_c . v_w) - sum_n log s(-u_n . v_w)`
pub fn sgns_loss(emb: &Embeddings, pair: &TrainingPair) -> f64 {
    let v = emb.input.row(pair.center as usize);
    let mut loss = neg_log(sigmoid(dot(emb.context.row(pair.context as usize), v)));
    for &n in &pair.negatives {
        loss += neg_log(sigmoid(-dot(emb.context.row(n as usize), v)));
    }
    loss
}

/// Per-occurrence gradient of [`sgns_loss`] for one pair.
///
/// `context_rows[0]` belongs to the observed context, the remaining
/// entries to the negatives in sampling order. Repeated negatives keep
/// separate entries.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient {
    pub center: usize,
    pub center_grad: Vec<f64>,
    pub context_rows: Vec<(usize, Vec<f64>)>,
}

impl PairGradient {
    pub fn row_count(&self) -> usize {
        1 + self.context_rows.len()
    }
}

pub fn sgns_gradients(emb: &Embeddings, pair: &TrainingPair) -> PairGradient {
    let c = pair.center as usize;
    let v = emb.input.row(c);
    let mut center_grad = vec![0.0; v.len()];
    let mut context_rows = Vec::with_capacity(1 + pair.negatives.len());

    let targets = std::iter::once((pair.context, 1.0)).chain(pair.negatives.iter().map(|&n| (n, 0.0)));
    for (row, label) in targets {
        let u = emb.context.row(row as usize);
        let g = sigmoid(dot(u, v)) - label;
        axpy(g, u, &mut center_grad);
        context_rows.push((row as usize, v.iter().map(|x| g * x).collect()));
    }
    PairGradient {
        center: c,
        center_grad,
        context_rows,
    }
}

/// Both embedding matrices viewed as relaxed atomics, for in-place SGD.
///
/// Concurrent workers may overwrite each other's updates (lost updates are
/// tolerated) but never race in the data-race sense. From a single thread
/// the updates are fully deterministic.
pub(crate) struct SharedEmbeddings<'a> {
    input: &'a [AtomicU64],
    context: &'a [AtomicU64],
    dim: usize,
}

const _: () = assert!(
    std::mem::size_of::<AtomicU64>() == std::mem::size_of::<f64>()
        && std::mem::align_of::<AtomicU64>() == std::mem::align_of::<f64>()
);

fn as_atomic(data: &mut [f64]) -> &[AtomicU64] {
    // SAFETY: same size and alignment (asserted above), and the exclusive
    // borrow keeps every other access out for the returned lifetime
    unsafe { &*(data as *mut [f64] as *const [AtomicU64]) }
}

impl<'a> SharedEmbeddings<'a> {
    pub(crate) fn new(emb: &'a mut Embeddings) -> Self {
        let dim = emb.dim();
        SharedEmbeddings {
            input: as_atomic(emb.input.as_mut_slice()),
            context: as_atomic(emb.context.as_mut_slice()),
            dim,
        }
    }

    fn load(&self, m: &[AtomicU64], row: usize, out: &mut [f64]) {
        let cells = &m[row * self.dim..(row + 1) * self.dim];
        for (o, c) in out.iter_mut().zip(cells) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn add(&self, m: &[AtomicU64], row: usize, alpha: f64, x: &[f64]) {
        let cells = &m[row * self.dim..(row + 1) * self.dim];
        for (c, xi) in cells.iter().zip(x) {
            let v = f64::from_bits(c.load(Ordering::Relaxed)) + alpha * xi;
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }
}

/// Reusable row buffers for [`sgd_pair`].
#[derive(Clone, Debug)]
pub(crate) struct PairScratch {
    v: Vec<f64>,
    u: Vec<f64>,
    grad: Vec<f64>,
}

impl PairScratch {
    pub(crate) fn new(dim: usize) -> Self {
        PairScratch {
            v: vec![0.0; dim],
            u: vec![0.0; dim],
            grad: vec![0.0; dim],
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.v.len()
    }
}

/// One SGD update on a single pair, in the usual skip-gram order: each
/// context row is updated as soon as its score is known, and the center
/// row receives the accumulated gradient at the end. Returns the loss of
/// the pair before the update.
pub(crate) fn sgd_pair(
    emb: &SharedEmbeddings<'_>,
    pair: &TrainingPair,
    lr: f64,
    scratch: &mut PairScratch,
) -> f64 {
    let PairScratch { v, u, grad } = scratch;
    emb.load(emb.input, pair.center as usize, v);
    grad.iter_mut().for_each(|g| *g = 0.0);

    let mut loss = 0.0;
    let targets = std::iter::once((pair.context, true)).chain(pair.negatives.iter().map(|&n| (n, false)));
    for (row, positive) in targets {
        emb.load(emb.context, row as usize, u);
        let score = dot(u, v);
        let s = sigmoid(score);
        let g = if positive {
            loss += neg_log(s);
            s - 1.0
        } else {
            loss += neg_log(sigmoid(-score));
            s
        };
        axpy(g, u, grad);
        emb.add(emb.context, row as usize, -lr * g, v);
    }
    emb.add(emb.input, pair.center as usize, -lr, grad);
    loss
}

/// Generates skip-gram pairs from one sentence.
///
/// Tokens are first subsampled with threshold `t` (skipped when `t <= 0`).
/// Each kept position then draws a window radius uniformly from
/// `1..=window` and pairs with every kept token inside it. Negatives that
/// collide with the observed context are redrawn.
#[allow(clippy::too_many_arguments)]
pub fn generate_pairs<R: Rng + ?Sized>(
    sentence: &[u32],
    vocab: &Vocabulary,
    window: usize,
    neg_table: &NegativeTable,
    negatives: usize,
    t: f64,
    rng: &mut R,
    out: &mut Vec<TrainingPair>,
) -> Result<()> {
    if window < 1 || negatives < 1 {
        return Err(Error::invalid("window and negatives must be at least 1"));
    }
    let retained = vocab.retained_tokens() as f64;
    let kept: Vec<u32> = if t > 0.0 {
        sentence
            .iter()
            .copied()
            .filter(|&w| {
                let p = keep_probability(vocab.count(w as usize) as f64 / retained, t);
                p >= 1.0 || rng.gen::<f64>() < p
            })
            .collect()
    } else {
        sentence.to_vec()
    };

    for (pos, &center) in kept.iter().enumerate() {
        let radius = rng.gen_range(1..=window);
        let lo = pos.saturating_sub(radius);
        let hi = (pos + radius).min(kept.len() - 1);
        for (cpos, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
            if cpos == pos {
                continue;
            }
            out.push(TrainingPair {
                center,
                context,
                negatives: draw_negatives(neg_table, context, negatives, vocab.len(), rng),
            });
        }
    }
    Ok(())
}

fn draw_negatives<R: Rng + ?Sized>(
    table: &NegativeTable,
    context: u32,
    k: usize,
    vocab_len: usize,
    rng: &mut R,
) -> Vec<u32> {
    let mut negs = Vec::with_capacity(k);
    // a one-word vocabulary cannot avoid the context
    if vocab_len < 2 {
        negs.resize(k, context);
        return negs;
    }
    while negs.len() < k {
        let n = table.sample(rng);
        if n != context {
            negs.push(n);
        }
    }
    negs
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::{build_negative_table, build_vocabulary};

    fn emb_from(input: &[&[f64]], context: &[&[f64]]) -> Embeddings {
        Embeddings::new(Matrix::from_rows(input), Matrix::from_rows(context)).unwrap()
    }

    #[test]
    fn init_range_and_zero_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e = init_embeddings(50, 1, 0.5, &mut rng).unwrap();
        assert!(e.input().as_slice().iter().all(|x| x.abs() <= 0.5));
        assert!(e.context().as_slice().iter().all(|&x| x == 0.0));
        let e = init_embeddings(10, 300, 0.5, &mut rng).unwrap();
        assert!(e.input().as_slice().iter().all(|x| x.abs() <= 0.5 / 300.0));
    }

    #[test]
    fn init_mean_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let e = init_embeddings(n, 1, 0.5, &mut rng).unwrap();
        let mean: f64 = e.input().as_slice().iter().sum::<f64>() / n as f64;
        // uniform on [-a, a] has variance a^2 / 3
        let sigma = (0.25f64 / 3.0).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
    }

    #[test]
    fn init_rejects_bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_embeddings(3, 0, 0.5, &mut rng).is_err());
        assert!(init_embeddings(3, 2, 0.0, &mut rng).is_err());
    }

    #[test]
    fn loss_at_zero_dots() {
        let e = emb_from(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]], &[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        let pair = TrainingPair { center: 0, context: 1, negatives: vec![2, 2] };
        assert!((sgns_loss(&e, &pair) - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_at_saturated_dots() {
        let e = emb_from(&[&[1.0], &[0.0], &[0.0]], &[&[0.0], &[10.0], &[-10.0]]);
        let pair = TrainingPair { center: 0, context: 1, negatives: vec![2, 2] };
        let expected = -3.0 * sigmoid(10.0).ln();
        assert!((sgns_loss(&e, &pair) - expected).abs() < 1e-15);
        assert!((sgns_loss(&e, &pair) - 1.3620e-4).abs() < 1e-7);
    }

    #[test]
    fn zero_vectors_give_zero_gradient() {
        let e = Embeddings::from_input(Matrix::zeros(4, 3)).unwrap();
        let pair = TrainingPair { center: 0, context: 1, negatives: vec![2, 3] };
        let g = sgns_gradients(&e, &pair);
        assert_eq!(g.row_count(), 4);
        assert!(g.center_grad.iter().all(|&x| x == 0.0));
        assert!(g.context_rows.iter().all(|(_, r)| r.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn sgd_pair_with_distinct_rows_is_a_gradient_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut e = init_embeddings(6, 5, 5.0, &mut rng).unwrap();
        for x in e.context_mut().as_mut_slice() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let pair = TrainingPair { center: 2, context: 4, negatives: vec![1, 5] };
        let before = e.clone();
        let g = sgns_gradients(&before, &pair);
        let lr = 0.3;
        let loss = sgd_pair(&SharedEmbeddings::new(&mut e), &pair, lr, &mut PairScratch::new(5));
        assert!((loss - sgns_loss(&before, &pair)).abs() < 1e-12);
        for (k, (a, b)) in e.input().row(2).iter().zip(before.input().row(2)).enumerate() {
            assert!((a - (b - lr * g.center_grad[k])).abs() < 1e-14);
        }
        for (r, grad) in &g.context_rows {
            for (k, (a, b)) in e.context().row(*r).iter().zip(before.context().row(*r)).enumerate() {
                assert!((a - (b - lr * grad[k])).abs() < 1e-14);
            }
        }
        assert_eq!(e.input().row(0), before.input().row(0));
    }

    #[test]
    fn two_word_sentence_pairs_both_ways() {
        let vocab = build_vocabulary("a b".split_whitespace(), 1).unwrap();
        let table = build_negative_table(&vocab, 0.75, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::new();
        generate_pairs(&[0, 1], &vocab, 1, &table, 1, 0.0, &mut rng, &mut out).unwrap();
        let pairs: Vec<(u32, u32)> = out.iter().map(|p| (p.center, p.context)).collect();
        assert_eq!(pairs, [(0, 1), (1, 0)]);
        for p in &out {
            assert_eq!(p.negatives.len(), 1);
            assert!(!p.negatives.contains(&p.context));
        }
    }

    #[test]
    fn negatives_never_hit_context() {
        let vocab = build_vocabulary("a a a a b c".split_whitespace(), 1).unwrap();
        let table = build_negative_table(&vocab, 0.75, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut out = Vec::new();
        generate_pairs(&[0, 1, 2, 0, 1], &vocab, 2, &table, 7, 0.0, &mut rng, &mut out).unwrap();
        assert!(!out.is_empty());
        for p in &out {
            assert_eq!(p.negatives.len(), 7);
            assert!(!p.negatives.contains(&p.context));
        }
    }

    #[test]
    fn rejects_zero_window() {
        let vocab = build_vocabulary("a b".split_whitespace(), 1).unwrap();
        let table = build_negative_table(&vocab, 0.75, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::new();
        assert!(generate_pairs(&[0, 1], &vocab, 0, &table, 1, 0.0, &mut rng, &mut out).is_err());
    }
}
